//! Dataset-level first principal direction of spatial tokens and the
//! per-token saliency / foreground split derived from it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embeddings::TokenEmbeddingSet;
use crate::exec::Exec;

pub const DEFAULT_THETA: f64 = 0.05;

/// Tokens per block when accumulating the covariance.
const COV_BLOCK: usize = 512;

#[derive(Debug, Error, PartialEq)]
pub enum SaliencyError {
    #[error("need at least 2 tokens for a principal direction, got {0}")]
    TooFewTokens(usize),
    #[error("all tokens are identical; covariance is zero")]
    Degenerate,
    #[error("power iteration did not converge in {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("dimension mismatch: model has {expected}, input has {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct PcaOptions {
    /// Relative residual `‖Cv − λv‖ / λ` at which iteration stops.
    pub tol: f64,
    pub max_iters: usize,
    /// Seeds the power-iteration start vector.
    pub seed: u64,
    /// Negate the oriented direction.
    pub flip: bool,
    pub exec: Exec,
}

impl Default for PcaOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iters: 10_000,
            seed: 0,
            flip: false,
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyModel {
    /// Unit-norm first principal direction `u1`.
    pub direction: Vec<f64>,
    /// Centering vector subtracted before projection.
    pub mean: Vec<f64>,
    pub theta: f64,
    /// Multiplier applied to the raw power-iteration vector (+1 or -1).
    pub sign: i8,
    pub eigenvalue: f64,
    pub iterations: usize,
    pub residual: f64,
}

impl SaliencyModel {
    pub fn dim(&self) -> usize {
        self.direction.len()
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta = theta;
        self
    }

    /// `u1ᵀ(z − mean)`.
    pub fn project(&self, token: &[f32]) -> f64 {
        token
            .iter()
            .zip(&self.mean)
            .zip(&self.direction)
            .map(|((&z, m), u)| (z as f64 - m) * u)
            .sum()
    }
}

/// Mean over all `N·L` tokens.
pub fn token_mean(set: &TokenEmbeddingSet, exec: Exec) -> Vec<f64> {
    let d = set.dim();
    let partials = exec.chunked(set.num_tokens(), COV_BLOCK, |range| {
        let mut acc = vec![0.0f64; d];
        for t in range {
            for (a, &z) in acc.iter_mut().zip(set.flat_token(t)) {
                *a += z as f64;
            }
        }
        acc
    });
    let mut mean = vec![0.0f64; d];
    for p in partials {
        for (m, x) in mean.iter_mut().zip(p) {
            *m += x;
        }
    }
    let n = set.num_tokens() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

/// Empirical covariance `(1/(N·L)) Σ (z − mean)(z − mean)ᵀ` as a dense
/// row-major `d×d` matrix.
///
/// Each matrix row is accumulated over tokens in index order, so parallel
/// and sequential runs are bit-identical.
pub fn covariance(set: &TokenEmbeddingSet, mean: &[f64], exec: Exec) -> Vec<f64> {
    let d = set.dim();
    let total = set.num_tokens();
    let mut cov = vec![0.0f64; d * d];
    let mut block = vec![0.0f64; COV_BLOCK * d];
    let mut start = 0;
    while start < total {
        let end = (start + COV_BLOCK).min(total);
        let rows = end - start;
        for (r, t) in (start..end).enumerate() {
            for ((c, &z), m) in block[r * d..(r + 1) * d]
                .iter_mut()
                .zip(set.flat_token(t))
                .zip(mean)
            {
                *c = z as f64 - m;
            }
        }
        let centered = &block[..rows * d];
        exec.for_each_chunk_mut(&mut cov, d, |a, row| {
            for tok in centered.chunks_exact(d) {
                let ca = tok[a];
                if ca == 0.0 {
                    continue;
                }
                for (dst, &cb) in row[a..].iter_mut().zip(&tok[a..]) {
                    *dst += ca * cb;
                }
            }
        });
        start = end;
    }
    let n = total as f64;
    for a in 0..d {
        for b in a..d {
            let v = cov[a * d + b] / n;
            cov[a * d + b] = v;
            cov[b * d + a] = v;
        }
    }
    cov
}

fn mat_vec(m: &[f64], v: &[f64], out: &mut [f64]) {
    let d = v.len();
    for (o, row) in out.iter_mut().zip(m.chunks_exact(d)) {
        *o = row.iter().zip(v).map(|(a, b)| a * b).sum();
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Dominant eigenpair of a symmetric positive semi-definite matrix by power
/// iteration from a seeded Gaussian start.
///
/// Returns `(vector, eigenvalue, iterations, residual)`.
pub fn power_iteration(
    matrix: &[f64],
    dim: usize,
    tol: f64,
    max_iters: usize,
    seed: u64,
) -> Result<(Vec<f64>, f64, usize, f64), SaliencyError> {
    if (0..dim).all(|i| matrix[i * dim + i] <= 0.0) {
        return Err(SaliencyError::Degenerate);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let n0 = norm(&v);
    v.iter_mut().for_each(|x| *x /= n0);

    let mut w = vec![0.0; dim];
    let mut residual = f64::INFINITY;
    for iter in 0..=max_iters {
        mat_vec(matrix, &v, &mut w);
        let lambda: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        let wn = norm(&w);
        if wn == 0.0 || lambda <= 0.0 {
            // Start vector orthogonal to the range; restart on the largest
            // diagonal axis.
            let axis = (0..dim)
                .max_by(|&a, &b| matrix[a * dim + a].total_cmp(&matrix[b * dim + b]))
                .unwrap();
            v.iter_mut().for_each(|x| *x = 0.0);
            v[axis] = 1.0;
            continue;
        }
        residual = w
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - lambda * b).powi(2))
            .sum::<f64>()
            .sqrt()
            / lambda;
        if residual <= tol {
            return Ok((v, lambda, iter, residual));
        }
        if iter == max_iters {
            break;
        }
        for (x, y) in v.iter_mut().zip(&w) {
            *x = y / wn;
        }
    }
    Err(SaliencyError::NoConvergence {
        iterations: max_iters,
        residual,
    })
}

/// Fits the dataset's first principal direction over mean-centered tokens.
///
/// Orientation: the direction is signed so that the tokens in the top decile
/// of raw L2 norm have non-negative mean saliency, then negated if
/// `opts.flip` is set.
pub fn fit_pc1(set: &TokenEmbeddingSet, opts: &PcaOptions) -> Result<SaliencyModel, SaliencyError> {
    let total = set.num_tokens();
    if total < 2 {
        return Err(SaliencyError::TooFewTokens(total));
    }
    let d = set.dim();
    let mean = token_mean(set, opts.exec);
    let cov = covariance(set, &mean, opts.exec);
    let (mut direction, eigenvalue, iterations, residual) =
        power_iteration(&cov, d, opts.tol, opts.max_iters, opts.seed)?;

    let mut model = SaliencyModel {
        direction: direction.clone(),
        mean,
        theta: DEFAULT_THETA,
        sign: 1,
        eigenvalue,
        iterations,
        residual,
    };
    let mut sign: i8 = if top_decile_mean_saliency(set, &model, opts.exec) < 0.0 {
        -1
    } else {
        1
    };
    if opts.flip {
        sign = -sign;
    }
    if sign < 0 {
        direction.iter_mut().for_each(|x| *x = -*x);
    }
    model.direction = direction;
    model.sign = sign;
    Ok(model)
}

fn top_decile_mean_saliency(set: &TokenEmbeddingSet, model: &SaliencyModel, exec: Exec) -> f64 {
    let total = set.num_tokens();
    let take = total.div_ceil(10).max(1);
    let mut norms: Vec<(f64, usize)> = exec.map(total, |t| {
        let n = set
            .flat_token(t)
            .iter()
            .map(|&z| (z as f64) * (z as f64))
            .sum::<f64>();
        (n, t)
    });
    // Largest norm first, lowest index breaks ties.
    let cmp = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    if take < total {
        norms.select_nth_unstable_by(take - 1, cmp);
    }
    norms[..take]
        .iter()
        .map(|&(_, t)| model.project(set.flat_token(t)))
        .sum::<f64>()
        / take as f64
}

/// Per-token saliency, `L` consecutive values per image.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyScores {
    tokens_per_image: usize,
    values: Vec<f64>,
}

impl SaliencyScores {
    pub fn from_values(tokens_per_image: usize, values: Vec<f64>) -> Self {
        assert!(tokens_per_image > 0 && values.len().is_multiple_of(tokens_per_image));
        Self {
            tokens_per_image,
            values,
        }
    }

    pub fn num_images(&self) -> usize {
        self.values.len() / self.tokens_per_image
    }

    pub fn tokens_per_image(&self) -> usize {
        self.tokens_per_image
    }

    pub fn image(&self, i: usize) -> &[f64] {
        &self.values[i * self.tokens_per_image..(i + 1) * self.tokens_per_image]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

pub fn saliency_scores(
    set: &TokenEmbeddingSet,
    model: &SaliencyModel,
    exec: Exec,
) -> Result<SaliencyScores, SaliencyError> {
    if model.dim() != set.dim() {
        return Err(SaliencyError::DimensionMismatch {
            expected: model.dim(),
            found: set.dim(),
        });
    }
    let l = set.tokens_per_image();
    let mut values = vec![0.0; set.num_tokens()];
    exec.for_each_chunk_mut(&mut values, l, |i, out| {
        for (j, s) in out.iter_mut().enumerate() {
            *s = model.project(set.token(i, j));
        }
    });
    Ok(SaliencyScores::from_values(l, values))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForegroundMask {
    pub mask: Vec<bool>,
    pub fg_count: usize,
}

impl ForegroundMask {
    pub fn from_scores(scores: &[f64], theta: f64) -> Self {
        let mask: Vec<bool> = scores.iter().map(|&s| s > theta).collect();
        let fg_count = mask.iter().filter(|&&m| m).count();
        Self { mask, fg_count }
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    /// `(L − L_fg) / L`.
    pub fn bg_ratio(&self) -> f64 {
        (self.mask.len() - self.fg_count) as f64 / self.mask.len() as f64
    }

    /// `'1'` for foreground, `'0'` for background.
    pub fn bit_string(&self) -> String {
        self.mask
            .iter()
            .map(|&m| if m { '1' } else { '0' })
            .collect()
    }
}

/// Foreground is `score > theta`; ties at `theta` are background.
pub fn foreground_mask(scores: &SaliencyScores, theta: f64) -> Vec<ForegroundMask> {
    (0..scores.num_images())
        .map(|i| ForegroundMask::from_scores(scores.image(i), theta))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set_from(tokens: &[Vec<f32>], l: usize) -> TokenEmbeddingSet {
        let d = tokens[0].len();
        let n = tokens.len() / l;
        TokenEmbeddingSet::new(
            l,
            d,
            tokens.concat(),
            (0..n).map(|i| format!("img{i}")).collect(),
        )
        .unwrap()
    }

    #[test]
    fn two_antipodal_tokens_give_axis() {
        let set = set_from(&[vec![1.0, 0.0, 0.0], vec![-1.0, 0.0, 0.0]], 1);
        let m = fit_pc1(&set, &PcaOptions::default()).unwrap();
        assert_eq!(m.direction[0].abs(), 1.0);
        assert_eq!(m.direction[1], 0.0);
        assert_eq!(m.direction[2], 0.0);
        // Equal norms: the lower-index token (+e1) decides the orientation.
        assert_eq!(m.direction[0], 1.0);
    }

    #[test]
    fn identical_tokens_are_degenerate() {
        let set = set_from(&[vec![2.0, 3.0], vec![2.0, 3.0], vec![2.0, 3.0]], 3);
        assert_eq!(
            fit_pc1(&set, &PcaOptions::default()),
            Err(SaliencyError::Degenerate)
        );
        let one = set_from(&[vec![2.0, 3.0]], 1);
        assert_eq!(
            fit_pc1(&one, &PcaOptions::default()),
            Err(SaliencyError::TooFewTokens(1))
        );
    }

    #[test]
    fn non_convergence_reports_residual() {
        let set = set_from(
            &[
                vec![1.0, 0.0],
                vec![-1.0, 0.0],
                vec![0.0, 0.99],
                vec![0.0, -0.99],
            ],
            2,
        );
        let opts = PcaOptions {
            max_iters: 2,
            tol: 1e-14,
            ..Default::default()
        };
        match fit_pc1(&set, &opts) {
            Err(SaliencyError::NoConvergence {
                iterations,
                residual,
            }) => {
                assert_eq!(iterations, 2);
                assert!(residual > 1e-14);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    fn model(direction: Vec<f64>, mean: Vec<f64>) -> SaliencyModel {
        SaliencyModel {
            direction,
            mean,
            theta: DEFAULT_THETA,
            sign: 1,
            eigenvalue: 1.0,
            iterations: 0,
            residual: 0.0,
        }
    }

    #[test]
    fn projection_anchors() {
        let m = model(vec![0.6, 0.8], vec![1.0, 2.0]);
        assert_eq!(m.project(&[1.0, 2.0]), 0.0);
        assert!((m.project(&[1.6, 2.8]) - 1.0).abs() < 1e-7);
    }

    #[test]
    fn dimension_mismatch() {
        let set = set_from(&[vec![1.0, 0.0, 0.0]], 1);
        let m = model(vec![1.0, 0.0], vec![0.0, 0.0]);
        assert_eq!(
            saliency_scores(&set, &m, Exec::Sequential),
            Err(SaliencyError::DimensionMismatch {
                expected: 2,
                found: 3
            })
        );
    }

    #[test]
    fn mask_threshold_is_strict() {
        let s = SaliencyScores::from_values(4, vec![0.1, 0.04, 0.06, -0.2]);
        let m = &foreground_mask(&s, 0.05)[0];
        assert_eq!(m.mask, vec![true, false, true, false]);
        assert_eq!(m.bg_ratio(), 0.5);
        assert_eq!(m.bit_string(), "1010");

        let ties = SaliencyScores::from_values(3, vec![0.05; 3]);
        let m = &foreground_mask(&ties, 0.05)[0];
        assert_eq!(m.fg_count, 0);
        assert_eq!(m.bg_ratio(), 1.0);

        let all = SaliencyScores::from_values(3, vec![1.0; 3]);
        assert_eq!(foreground_mask(&all, 0.05)[0].bg_ratio(), 0.0);
    }

    #[test]
    fn covariance_modes_identical() {
        let tokens: Vec<Vec<f32>> = (0..1500)
            .map(|i| {
                (0..5)
                    .map(|k| ((i * 7 + k * 13) as f32 * 0.1).sin())
                    .collect()
            })
            .collect();
        let set = set_from(&tokens, 3);
        let mean = token_mean(&set, Exec::Sequential);
        assert_eq!(mean, token_mean(&set, Exec::Parallel));
        assert_eq!(
            covariance(&set, &mean, Exec::Sequential),
            covariance(&set, &mean, Exec::Parallel)
        );
    }
}
