use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{open_reader, HarnessError};
use crate::complexity::{DominanceParams, DEFAULT_KAPPA, DEFAULT_V_MIN};
use crate::saliency::DEFAULT_THETA;
use crate::scheduler::{AnnealCurve, InitialSize, WarmupSchedule};

/// The JSON run configuration. Keys follow the documented schema
/// (`T_w`, `D0`, `D0_is_fraction`, `inverse`, `seed`, `recompute_stride`,
/// `theta`, `kappa`, `v_min`, `K`) plus a few tuning knobs; every key is
/// optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WarmupConfig {
    #[serde(rename = "T_w", default = "default_warmup")]
    pub warmup_iters: u64,
    /// Initial effective size; `None` means one tenth of the dataset.
    #[serde(rename = "D0", default)]
    pub initial_size: Option<f64>,
    #[serde(rename = "D0_is_fraction", default)]
    pub initial_is_fraction: bool,
    #[serde(default)]
    pub inverse: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_stride")]
    pub recompute_stride: u64,
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default = "default_v_min")]
    pub v_min: f64,
    /// Prototype count; `None` uses `min(1000, ⌊N/10⌋)`, at least 1.
    #[serde(rename = "K", default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub curve: AnnealCurve,
    /// Negate the saliency direction after orientation.
    #[serde(default)]
    pub flip_saliency: bool,
    #[serde(default = "default_pca_tol")]
    pub pca_tol: f64,
    #[serde(default = "default_pca_iters")]
    pub pca_max_iters: usize,
    #[serde(default = "default_kmeans_iters")]
    pub kmeans_max_iters: usize,
    /// Mini-batch size; `None` picks 4096 above 50 000 images.
    #[serde(default)]
    pub kmeans_batch: Option<usize>,
}

fn default_warmup() -> u64 {
    200_000
}
fn default_stride() -> u64 {
    1
}
fn default_theta() -> f64 {
    DEFAULT_THETA
}
fn default_kappa() -> f64 {
    DEFAULT_KAPPA
}
fn default_v_min() -> f64 {
    DEFAULT_V_MIN
}
fn default_pca_tol() -> f64 {
    1e-9
}
fn default_pca_iters() -> usize {
    10_000
}
fn default_kmeans_iters() -> usize {
    300
}

impl Default for WarmupConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl WarmupConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let cfg: Self = serde_json::from_reader(open_reader("config", path)?)
            .map_err(|e| HarnessError::config("config", format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::config("config", m));
        if self.warmup_iters == 0 {
            return bad("T_w must be at least 1".into());
        }
        if self.recompute_stride == 0 {
            return bad("recompute_stride must be at least 1".into());
        }
        if !self.theta.is_finite() {
            return bad(format!("theta must be finite, got {}", self.theta));
        }
        if let Some(0) = self.k {
            return bad("K must be at least 1".into());
        }
        if let Some(0) = self.kmeans_batch {
            return bad("kmeans_batch must be at least 1".into());
        }
        if let Some(d0) = self.initial_size {
            if !d0.is_finite() || d0 <= 0.0 {
                return bad(format!("D0 must be positive, got {d0}"));
            }
        }
        if self.pca_tol.is_nan() || self.pca_tol <= 0.0 || self.pca_max_iters == 0 {
            return bad("pca_tol must be positive and pca_max_iters at least 1".into());
        }
        self.dominance()?;
        Ok(())
    }

    pub fn dominance(&self) -> Result<DominanceParams, HarnessError> {
        DominanceParams::new(self.kappa, self.v_min)
            .map_err(|e| HarnessError::config("config", e.to_string()))
    }

    pub fn initial(&self) -> InitialSize {
        match self.initial_size {
            None => InitialSize::default(),
            Some(f) if self.initial_is_fraction => InitialSize::Fraction(f),
            Some(x) => InitialSize::Absolute(x),
        }
    }

    pub fn schedule(&self, dataset_size: usize) -> Result<WarmupSchedule, HarnessError> {
        let err =
            |e: crate::scheduler::ScheduleError| HarnessError::config("config", e.to_string());
        WarmupSchedule::new(dataset_size, self.warmup_iters, self.initial())
            .map_err(err)?
            .with_curve(self.curve)
            .with_inverse(self.inverse)
            .with_seed(self.seed)
            .with_recompute_stride(self.recompute_stride)
            .map_err(err)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_keys_parse() {
        let cfg: WarmupConfig = serde_json::from_str(
            r#"{"T_w": 500, "D0": 0.2, "D0_is_fraction": true, "inverse": true,
                "seed": 9, "recompute_stride": 2, "theta": 0.1, "kappa": 10,
                "v_min": 0.02, "K": 7}"#,
        )
        .unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.warmup_iters, 500);
        assert_eq!(cfg.initial(), InitialSize::Fraction(0.2));
        assert_eq!(cfg.k, Some(7));
        let s = cfg.schedule(1000).unwrap();
        assert_eq!(s.initial_size(), 200.0);
        assert!(s.inverse);
    }

    #[test]
    fn defaults() {
        let cfg = WarmupConfig::default();
        assert_eq!(cfg.theta, 0.05);
        assert_eq!(cfg.kappa, 12.0);
        assert_eq!(cfg.v_min, 0.002);
        assert_eq!(cfg.k, None);
        assert_eq!(cfg.recompute_stride, 1);
        assert_eq!(cfg.initial(), InitialSize::Fraction(0.1));
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(serde_json::from_str::<WarmupConfig>(r#"{"Tw": 5}"#).is_err());
        let cfg: WarmupConfig = serde_json::from_str(r#"{"v_min": 0.7}"#).unwrap();
        assert!(cfg.validate().is_err());
        let cfg: WarmupConfig = serde_json::from_str(r#"{"K": 0}"#).unwrap();
        assert!(cfg.validate().is_err());
    }
}
