//! Per-image complexity: foreground dominance, foreground typicality against
//! k-means prototypes, their product, and the within-cluster min-max
//! normalisation that feeds the sampler.

mod kmeans;

pub use kmeans::{
    fit_prototypes, initial_centroids, read_prototypes, write_prototypes, KMeansConfig, Points,
    PrototypeModel, PROTO_MAGIC,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embeddings::TokenEmbeddingSet;
use crate::exec::Exec;
use crate::saliency::ForegroundMask;

pub const DEFAULT_KAPPA: f64 = 12.0;
pub const DEFAULT_V_MIN: f64 = 0.002;
pub const DEFAULT_K: usize = 1000;

#[derive(Debug, Error, PartialEq)]
pub enum ComplexityError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// Steepness and floor of the background-ratio sigmoid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DominanceParams {
    kappa: f64,
    v_min: f64,
}

impl Default for DominanceParams {
    fn default() -> Self {
        Self {
            kappa: DEFAULT_KAPPA,
            v_min: DEFAULT_V_MIN,
        }
    }
}

impl DominanceParams {
    pub fn new(kappa: f64, v_min: f64) -> Result<Self, ComplexityError> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(ComplexityError::Argument(format!(
                "kappa must be positive, got {kappa}"
            )));
        }
        if !(v_min > 0.0 && v_min < 0.5) {
            return Err(ComplexityError::Argument(format!(
                "v_min must lie in (0, 0.5), got {v_min}"
            )));
        }
        Ok(Self { kappa, v_min })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn v_min(&self) -> f64 {
        self.v_min
    }

    /// Logit of `v_min`, the sigmoid's offset.
    pub fn alpha(&self) -> f64 {
        (self.v_min / (1.0 - self.v_min)).ln()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Foreground dominance `σ(κ·r_bg + α)`, equal to `v_min` at `r_bg = 0`.
pub fn dominance(r_bg: f64, params: &DominanceParams) -> Result<f64, ComplexityError> {
    if !(0.0..=1.0).contains(&r_bg) {
        return Err(ComplexityError::Argument(format!(
            "background ratio must lie in [0, 1], got {r_bg}"
        )));
    }
    Ok(sigmoid(params.kappa * r_bg + params.alpha()))
}

/// Mean foreground token per image, or the mean of all tokens when an image
/// has no foreground.
pub fn mean_foreground(
    set: &TokenEmbeddingSet,
    masks: &[ForegroundMask],
    exec: Exec,
) -> Result<Points, ComplexityError> {
    if masks.len() != set.num_images() {
        return Err(ComplexityError::DimensionMismatch {
            expected: set.num_images(),
            found: masks.len(),
        });
    }
    let l = set.tokens_per_image();
    if let Some(bad) = masks.iter().find(|m| m.len() != l) {
        return Err(ComplexityError::DimensionMismatch {
            expected: l,
            found: bad.len(),
        });
    }
    let d = set.dim();
    let mut data = vec![0.0f64; set.num_images() * d];
    exec.for_each_chunk_mut(&mut data, d, |i, out| {
        let mask = &masks[i];
        let use_all = mask.fg_count == 0;
        let mut count = 0usize;
        for j in 0..l {
            if use_all || mask.mask[j] {
                for (o, &z) in out.iter_mut().zip(set.token(i, j)) {
                    *o += z as f64;
                }
                count += 1;
            }
        }
        out.iter_mut().for_each(|o| *o /= count as f64);
    });
    Ok(Points::new(d, data).expect("shape checked above"))
}

/// Nearest prototype and the Euclidean distance to it.
pub fn typicality(vector: &[f64], model: &PrototypeModel) -> Result<(usize, f64), ComplexityError> {
    if vector.len() != model.dim() {
        return Err(ComplexityError::DimensionMismatch {
            expected: model.dim(),
            found: vector.len(),
        });
    }
    let (k, d2) = model.nearest(vector);
    Ok((k, d2.sqrt()))
}

/// Scores before the product and normalisation are filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct DraftRecord {
    pub image_id: String,
    pub r_bg: f64,
    pub omega_dom: f64,
    pub omega_prot: f64,
    pub cluster_id: usize,
}

/// One line of a `.scores.jsonl` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexityRecord {
    pub image_id: String,
    pub r_bg: f64,
    pub omega_dom: f64,
    pub omega_prot: f64,
    pub cluster_id: usize,
    pub omega: f64,
    pub omega_norm: f64,
}

/// Min-max rescales `values` within each cluster. Clusters whose values are
/// all equal (singletons included) map to 0.
pub fn normalize_within_clusters(values: &[f64], clusters: &[usize]) -> Vec<f64> {
    assert_eq!(values.len(), clusters.len());
    let k = clusters.iter().max().map_or(0, |m| m + 1);
    let mut lo = vec![f64::INFINITY; k];
    let mut hi = vec![f64::NEG_INFINITY; k];
    for (&v, &c) in values.iter().zip(clusters) {
        lo[c] = lo[c].min(v);
        hi[c] = hi[c].max(v);
    }
    values
        .iter()
        .zip(clusters)
        .map(|(&v, &c)| {
            let span = hi[c] - lo[c];
            if span > 0.0 {
                ((v - lo[c]) / span).clamp(0.0, 1.0)
            } else {
                0.0
            }
        })
        .collect()
}

/// `Ω = Ω_dom·Ω_prot`, then `Ω̃` by within-cluster min-max.
pub fn combine_and_normalize(drafts: Vec<DraftRecord>) -> Vec<ComplexityRecord> {
    let omegas: Vec<f64> = drafts.iter().map(|r| r.omega_dom * r.omega_prot).collect();
    let clusters: Vec<usize> = drafts.iter().map(|r| r.cluster_id).collect();
    let norms = normalize_within_clusters(&omegas, &clusters);
    drafts
        .into_iter()
        .zip(omegas.into_iter().zip(norms))
        .map(|(r, (omega, omega_norm))| ComplexityRecord {
            image_id: r.image_id,
            r_bg: r.r_bg,
            omega_dom: r.omega_dom,
            omega_prot: r.omega_prot,
            cluster_id: r.cluster_id,
            omega,
            omega_norm,
        })
        .collect()
}
