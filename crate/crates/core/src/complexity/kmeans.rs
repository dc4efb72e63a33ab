//! k-means prototypes: k-means++ seeding, full-batch Lloyd or mini-batch
//! updates, farthest-point repair of empty clusters, and the `.protos.bin`
//! centroid dump.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ComplexityError;
use crate::embeddings::FormatError;
use crate::exec::Exec;

pub const PROTO_MAGIC: &[u8; 7] = b"PROTO01";

/// Row-major `n×d` matrix of `f64` points.
#[derive(Debug, Clone, PartialEq)]
pub struct Points {
    dim: usize,
    data: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self, ComplexityError> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(ComplexityError::Argument(format!(
                "{} values do not form rows of width {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, ComplexityError> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(ComplexityError::Argument("ragged rows".into()));
        }
        Self::new(dim, rows.concat())
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, Copy)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Mini-batch size; `None` runs full-batch Lloyd iterations.
    pub batch: Option<usize>,
    /// Stop once no centroid moves farther than this.
    pub tol: f64,
    pub exec: Exec,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            max_iters: 300,
            batch: None,
            tol: 1e-6,
            exec: Exec::default(),
        }
    }

    /// Mini-batches of 4096 above 50 000 points, full-batch below.
    pub fn default_batch(n: usize) -> Option<usize> {
        (n > 50_000).then_some(4096)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeModel {
    pub centroids: Points,
    pub iterations: usize,
    /// Sum of squared distances to the assigned centroid after the final
    /// assignment.
    pub inertia: f64,
    /// Inertia after every assignment step, starting with the seeding.
    pub inertia_history: Vec<f64>,
    pub converged: bool,
    pub seed: u64,
    pub batch: Option<usize>,
}

impl PrototypeModel {
    pub fn from_centroids(centroids: Points) -> Self {
        Self {
            centroids,
            iterations: 0,
            inertia: f64::NAN,
            inertia_history: Vec::new(),
            converged: false,
            seed: 0,
            batch: None,
        }
    }

    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn dim(&self) -> usize {
        self.centroids.dim()
    }

    /// Index of the nearest centroid (lowest index on ties) and the squared
    /// distance to it.
    pub fn nearest(&self, x: &[f64]) -> (usize, f64) {
        nearest(&self.centroids, x)
    }
}

fn nearest(centroids: &Points, x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.rows().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn assign(points: &Points, centroids: &Points, exec: Exec) -> (Vec<usize>, Vec<f64>) {
    exec.map(points.len(), |i| nearest(centroids, points.row(i)))
        .into_iter()
        .unzip()
}

fn kmeans_pp(points: &Points, k: usize, rng: &mut ChaCha8Rng, exec: Exec) -> Points {
    let n = points.len();
    let mut chosen = Vec::with_capacity(k);
    let first = rng.random_range(0..n);
    chosen.push(first);
    let mut d2: Vec<f64> = exec.map(n, |i| sq_dist(points.row(i), points.row(first)));
    while chosen.len() < k {
        let total = exec.sum(n, |i| d2[i]);
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                acc += w;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
            pick.expect("positive total has a positive weight")
        } else {
            // Every point coincides with a chosen centre.
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(first)
        };
        chosen.push(pick);
        let c = points.row(pick);
        let updated: Vec<f64> = exec.map(n, |i| d2[i].min(sq_dist(points.row(i), c)));
        d2 = updated;
    }
    let mut data = Vec::with_capacity(k * points.dim());
    for &i in &chosen {
        data.extend_from_slice(points.row(i));
    }
    Points::new(points.dim(), data).unwrap()
}

/// Moves every empty centroid onto the point farthest from its current
/// centroid, visiting empty clusters in index order. Returns how many were
/// moved.
fn repair_empty(
    centroids: &mut Points,
    counts: &[usize],
    points: &Points,
    d2: &mut [f64],
) -> usize {
    let mut moved = 0;
    for (k, &count) in counts.iter().enumerate() {
        if count > 0 {
            continue;
        }
        let mut far = 0;
        for i in 1..d2.len() {
            if d2[i] > d2[far] {
                far = i;
            }
        }
        centroids.row_mut(k).copy_from_slice(points.row(far));
        d2[far] = 0.0;
        moved += 1;
    }
    moved
}

fn max_shift(a: &Points, b: &Points) -> f64 {
    a.rows()
        .zip(b.rows())
        .map(|(x, y)| sq_dist(x, y).sqrt())
        .fold(0.0, f64::max)
}

fn check_config(points: &Points, cfg: &KMeansConfig) -> Result<(), ComplexityError> {
    let n = points.len();
    if cfg.k == 0 {
        return Err(ComplexityError::Argument("K must be at least 1".into()));
    }
    if n < cfg.k {
        return Err(ComplexityError::Argument(format!(
            "k-means needs at least K = {} points, got {n}",
            cfg.k
        )));
    }
    if let Some(0) = cfg.batch {
        return Err(ComplexityError::Argument(
            "mini-batch size must be positive".into(),
        ));
    }
    Ok(())
}

/// The k-means++ starting centroids `fit_prototypes` uses for this
/// configuration.
pub fn initial_centroids(points: &Points, cfg: &KMeansConfig) -> Result<Points, ComplexityError> {
    check_config(points, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok(kmeans_pp(points, cfg.k, &mut rng, cfg.exec))
}

/// Fits `cfg.k` prototypes to `points`. Deterministic for fixed inputs,
/// seed and batch size, independent of worker count.
pub fn fit_prototypes(
    points: &Points,
    cfg: &KMeansConfig,
) -> Result<PrototypeModel, ComplexityError> {
    check_config(points, cfg)?;
    let n = points.len();
    let exec = cfg.exec;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut centroids = kmeans_pp(points, cfg.k, &mut rng, exec);
    let (mut labels, mut d2) = assign(points, &centroids, exec);
    let mut history = vec![exec.sum(n, |i| d2[i])];
    let mut iterations = 0;
    let mut converged = false;

    match cfg.batch {
        None => {
            while iterations < cfg.max_iters {
                iterations += 1;
                let mut next = Points::new(points.dim(), vec![0.0; cfg.k * points.dim()]).unwrap();
                let mut counts = vec![0usize; cfg.k];
                for (i, &c) in labels.iter().enumerate() {
                    counts[c] += 1;
                    for (s, x) in next.row_mut(c).iter_mut().zip(points.row(i)) {
                        *s += x;
                    }
                }
                for (k, &count) in counts.iter().enumerate() {
                    if count > 0 {
                        next.row_mut(k).iter_mut().for_each(|s| *s /= count as f64);
                    }
                }
                let repaired = repair_empty(&mut next, &counts, points, &mut d2);
                let shift = max_shift(&centroids, &next);
                centroids = next;
                (labels, d2) = assign(points, &centroids, exec);
                history.push(exec.sum(n, |i| d2[i]));
                if shift < cfg.tol && repaired == 0 {
                    converged = true;
                    break;
                }
            }
        }
        Some(batch) => {
            let mut seen = vec![0u64; cfg.k];
            while iterations < cfg.max_iters {
                iterations += 1;
                let before = centroids.clone();
                let sample: Vec<usize> = (0..batch).map(|_| rng.random_range(0..n)).collect();
                let nearest_in_batch = exec.map(sample.len(), |b| {
                    nearest(&centroids, points.row(sample[b])).0
                });
                for (&i, &c) in sample.iter().zip(&nearest_in_batch) {
                    seen[c] += 1;
                    let eta = 1.0 / seen[c] as f64;
                    for (m, x) in centroids.row_mut(c).iter_mut().zip(points.row(i)) {
                        *m += eta * (x - *m);
                    }
                }
                if max_shift(&before, &centroids) < cfg.tol {
                    converged = true;
                    break;
                }
            }
            (labels, d2) = assign(points, &centroids, exec);
            history.push(exec.sum(n, |i| d2[i]));
        }
    }

    // A final repair pass leaves no empty clusters behind.
    for _ in 0..cfg.k {
        let mut counts = vec![0usize; cfg.k];
        labels.iter().for_each(|&c| counts[c] += 1);
        if repair_empty(&mut centroids, &counts, points, &mut d2) == 0 {
            break;
        }
        (labels, d2) = assign(points, &centroids, exec);
        history.push(exec.sum(n, |i| d2[i]));
    }

    Ok(PrototypeModel {
        centroids,
        iterations,
        inertia: *history.last().unwrap(),
        inertia_history: history,
        converged,
        seed: cfg.seed,
        batch: cfg.batch,
    })
}

/// `"PROTO01"`, then `K` and `d` as little-endian u32, then `K·d`
/// little-endian f32 centroid coordinates.
pub fn write_prototypes<W: Write>(model: &PrototypeModel, mut sink: W) -> Result<(), FormatError> {
    let mut buf = Vec::with_capacity(15 + 4 * model.centroids.as_slice().len());
    buf.extend_from_slice(PROTO_MAGIC);
    buf.extend_from_slice(&(model.k() as u32).to_le_bytes());
    buf.extend_from_slice(&(model.dim() as u32).to_le_bytes());
    for &x in model.centroids.as_slice() {
        buf.extend_from_slice(&(x as f32).to_le_bytes());
    }
    sink.write_all(&buf)
        .and_then(|_| sink.flush())
        .map_err(|source| FormatError::Write { offset: 0, source })
}

/// Reads a centroid dump. Coordinates come back widened from f32.
pub fn read_prototypes<R: Read>(mut source: R) -> Result<Points, FormatError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    if bytes.len() < 15 {
        return Err(FormatError::Truncated {
            expected: 15,
            actual: bytes.len() as u64,
        });
    }
    if &bytes[..7] != PROTO_MAGIC {
        return Err(FormatError::BadMagic {
            found: String::from_utf8_lossy(&bytes[..7]).into_owned(),
            expected: String::from_utf8_lossy(PROTO_MAGIC).into_owned(),
        });
    }
    let k = u32::from_le_bytes(bytes[7..11].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[11..15].try_into().unwrap()) as usize;
    if k == 0 || d == 0 {
        return Err(FormatError::Shape(format!("K={k}, d={d}")));
    }
    let expected = 15 + 4 * k as u64 * d as u64;
    if bytes.len() as u64 != expected {
        return Err(if (bytes.len() as u64) < expected {
            FormatError::Truncated {
                expected,
                actual: bytes.len() as u64,
            }
        } else {
            FormatError::TrailingBytes {
                extra: bytes.len() as u64 - expected,
            }
        });
    }
    let data: Vec<f64> = bytes[15..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    if let Some(p) = data.iter().position(|x| !x.is_finite()) {
        return Err(FormatError::NonFinite {
            image: p / d,
            token: 0,
            dim: p % d,
        });
    }
    Ok(Points { dim: d, data })
}
