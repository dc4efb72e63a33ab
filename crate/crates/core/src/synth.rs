//! Seeded synthetic token sets with a planted foreground direction, used as
//! test fixtures and by `warmup synth`.
//!
//! Each image belongs to one planted cluster. Every token of an image sits
//! at `cluster_center + jitter + noise`, and foreground tokens are further
//! shifted by `offset·e_axis`. Cluster centers have no component along
//! `e_axis`, so the foreground contrast lies entirely on the planted axis.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embeddings::{FormatError, TokenEmbeddingSet};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    Argument(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("truth sidecar: {0}")]
    Io(#[from] std::io::Error),
    #[error("truth sidecar line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_images: usize,
    pub tokens_per_image: usize,
    pub dim: usize,
    pub clusters: usize,
    /// Planted foreground fraction; the lower bound when `fg_fraction_max`
    /// is set.
    pub fg_fraction: f64,
    /// When set, each image draws its fraction uniformly from
    /// `[fg_fraction, fg_fraction_max]`.
    #[serde(default)]
    pub fg_fraction_max: Option<f64>,
    /// Foreground shift along the planted axis.
    #[serde(default = "default_offset")]
    pub offset: f64,
    /// Standard deviation of the isotropic token noise.
    #[serde(default = "default_noise")]
    pub noise: f64,
    /// Norm of each cluster center; centers are orthogonal to the planted
    /// axis.
    #[serde(default = "default_cluster_scale")]
    pub cluster_scale: f64,
    /// Per-coordinate standard deviation of an image's offset from its
    /// cluster center.
    #[serde(default = "default_jitter")]
    pub jitter: f64,
    #[serde(default)]
    pub direction_axis: usize,
}

fn default_offset() -> f64 {
    10.0
}
fn default_noise() -> f64 {
    1.0
}
fn default_cluster_scale() -> f64 {
    3.0
}
fn default_jitter() -> f64 {
    0.5
}

impl SyntheticSpec {
    pub fn new(
        num_images: usize,
        tokens_per_image: usize,
        dim: usize,
        clusters: usize,
        fg_fraction: f64,
    ) -> Self {
        Self {
            num_images,
            tokens_per_image,
            dim,
            clusters,
            fg_fraction,
            fg_fraction_max: None,
            offset: default_offset(),
            noise: default_noise(),
            cluster_scale: default_cluster_scale(),
            jitter: default_jitter(),
            direction_axis: 0,
        }
    }

    fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Argument(m.to_owned()));
        if self.num_images == 0 {
            return bad("num_images must be at least 1");
        }
        if self.clusters == 0 {
            return bad("clusters must be at least 1");
        }
        if self.tokens_per_image == 0 || self.dim == 0 {
            return bad("tokens_per_image and dim must be at least 1");
        }
        if self.direction_axis >= self.dim {
            return bad("direction_axis must be below dim");
        }
        let hi = self.fg_fraction_max.unwrap_or(self.fg_fraction);
        if !(0.0..=1.0).contains(&self.fg_fraction) || !(self.fg_fraction..=1.0).contains(&hi) {
            return bad("foreground fractions must satisfy 0 ≤ fg_fraction ≤ fg_fraction_max ≤ 1");
        }
        for (name, v) in [
            ("offset", self.offset),
            ("noise", self.noise),
            ("cluster_scale", self.cluster_scale),
            ("jitter", self.jitter),
        ] {
            if !v.is_finite() || v < 0.0 {
                return bad(&format!("{name} must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthImage {
    pub image_id: String,
    pub cluster: usize,
    /// `'1'` marks a planted foreground token.
    pub mask: String,
    pub r_bg: f64,
}

impl TruthImage {
    pub fn mask_bits(&self) -> Vec<bool> {
        self.mask.chars().map(|c| c == '1').collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TruthHeader {
    direction: Vec<f64>,
    spec: SyntheticSpec,
    seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTruth {
    pub direction: Vec<f64>,
    pub spec: SyntheticSpec,
    pub seed: u64,
    pub images: Vec<TruthImage>,
}

pub fn generate_synthetic(
    spec: &SyntheticSpec,
    seed: u64,
) -> Result<(TokenEmbeddingSet, SyntheticTruth), SynthError> {
    spec.validate()?;
    let (n, l, d) = (spec.num_images, spec.tokens_per_image, spec.dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };

    // Centers live off the planted axis and have norm `cluster_scale`.
    let centers: Vec<Vec<f64>> = (0..spec.clusters)
        .map(|_| {
            let mut c: Vec<f64> = (0..d)
                .map(|k| {
                    if k == spec.direction_axis {
                        0.0
                    } else {
                        gauss(&mut rng)
                    }
                })
                .collect();
            let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                c.iter_mut().for_each(|x| *x *= spec.cluster_scale / norm);
            }
            c
        })
        .collect();

    let width = n.to_string().len();
    let mut data = Vec::with_capacity(n * l * d);
    let mut images = Vec::with_capacity(n);
    let mut order: Vec<usize> = (0..l).collect();
    for i in 0..n {
        let cluster = i % spec.clusters;
        let frac = match spec.fg_fraction_max {
            Some(hi) if hi > spec.fg_fraction => rng.random_range(spec.fg_fraction..=hi),
            _ => spec.fg_fraction,
        };
        let fg = ((frac * l as f64).round() as usize).min(l);
        order.shuffle(&mut rng);
        let mut mask = vec![false; l];
        for &j in &order[..fg] {
            mask[j] = true;
        }
        // Image content is shared by every token; only foreground tokens
        // carry the offset along the planted axis.
        let image_center: Vec<f64> = centers[cluster]
            .iter()
            .enumerate()
            .map(|(k, c)| {
                if k == spec.direction_axis {
                    0.0
                } else {
                    c + gauss(&mut rng) * spec.jitter
                }
            })
            .collect();
        for &is_fg in &mask {
            for (k, c) in image_center.iter().enumerate() {
                let shift = if is_fg && k == spec.direction_axis {
                    spec.offset
                } else {
                    0.0
                };
                data.push((c + shift + gauss(&mut rng) * spec.noise) as f32);
            }
        }
        images.push(TruthImage {
            image_id: format!("synth/{i:0width$}"),
            cluster,
            mask: mask.iter().map(|&m| if m { '1' } else { '0' }).collect(),
            r_bg: (l - fg) as f64 / l as f64,
        });
    }

    let mut direction = vec![0.0; d];
    direction[spec.direction_axis] = 1.0;
    let ids = images.iter().map(|t| t.image_id.clone()).collect();
    let set = TokenEmbeddingSet::new(l, d, data, ids)?;
    Ok((
        set,
        SyntheticTruth {
            direction,
            spec: spec.clone(),
            seed,
            images,
        },
    ))
}

/// Writes the `.truth.jsonl` sidecar: a header line with the planted
/// direction, then one line per image.
pub fn write_truth<W: Write>(truth: &SyntheticTruth, mut sink: W) -> Result<(), SynthError> {
    let header = TruthHeader {
        direction: truth.direction.clone(),
        spec: truth.spec.clone(),
        seed: truth.seed,
    };
    let line = |e| SynthError::Json { line: 0, source: e };
    serde_json::to_writer(&mut sink, &header).map_err(line)?;
    sink.write_all(b"\n")?;
    for img in &truth.images {
        serde_json::to_writer(&mut sink, img).map_err(line)?;
        sink.write_all(b"\n")?;
    }
    sink.flush()?;
    Ok(())
}

pub fn read_truth<R: BufRead>(source: R) -> Result<SyntheticTruth, SynthError> {
    let mut lines = source.lines().enumerate();
    let (_, first) = lines
        .next()
        .ok_or_else(|| SynthError::Argument("empty truth sidecar".into()))?;
    let header: TruthHeader =
        serde_json::from_str(&first?).map_err(|source| SynthError::Json { line: 1, source })?;
    let mut images = Vec::new();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        images.push(
            serde_json::from_str(&line).map_err(|source| SynthError::Json {
                line: i + 1,
                source,
            })?,
        );
    }
    Ok(SyntheticTruth {
        direction: header.direction,
        spec: header.spec,
        seed: header.seed,
        images,
    })
}
