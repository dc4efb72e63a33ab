use serde::{Deserialize, Serialize};

use super::{max_effective_size, ScheduleError};

/// How the effective size grows from its initial value to the maximum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnealCurve {
    /// `1 - (1 - t/T_w)²`
    #[default]
    Power2,
    /// `t/T_w`, for ablations.
    Linear,
}

impl AnnealCurve {
    /// Fraction of the way from the initial to the maximum size at
    /// `progress = t/T_w`, clamped to `[0, 1]`.
    pub fn fraction(self, progress: f64) -> f64 {
        let rest = (1.0 - progress).clamp(0.0, 1.0);
        match self {
            AnnealCurve::Power2 => 1.0 - rest * rest,
            AnnealCurve::Linear => 1.0 - rest,
        }
    }

    /// `d0 + (d_max - d0)·fraction(progress)`.
    pub fn target(self, progress: f64, d0: f64, d_max: f64) -> f64 {
        d0 + (d_max - d0) * self.fraction(progress)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialSize {
    Absolute(f64),
    /// Fraction of the dataset size.
    Fraction(f64),
}

impl InitialSize {
    pub fn resolve(self, n: usize) -> f64 {
        match self {
            InitialSize::Absolute(x) => x,
            InitialSize::Fraction(f) => f * n as f64,
        }
    }
}

impl Default for InitialSize {
    fn default() -> Self {
        InitialSize::Fraction(0.1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Warmup,
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarmupSchedule {
    dataset_size: usize,
    warmup_iters: u64,
    initial_size: f64,
    max_size: f64,
    curve: AnnealCurve,
    pub inverse: bool,
    pub seed: u64,
    pub recompute_stride: u64,
}

impl WarmupSchedule {
    pub fn new(
        dataset_size: usize,
        warmup_iters: u64,
        initial: InitialSize,
    ) -> Result<Self, ScheduleError> {
        if dataset_size == 0 {
            return Err(ScheduleError::Argument(
                "dataset size must be at least 1".into(),
            ));
        }
        if warmup_iters == 0 {
            return Err(ScheduleError::Argument("T_w must be at least 1".into()));
        }
        let max_size = max_effective_size(dataset_size);
        let initial_size = initial.resolve(dataset_size);
        if !(initial_size >= 1.0 && initial_size <= max_size) {
            return Err(ScheduleError::Argument(format!(
                "initial effective size {initial_size} must lie in [1, {max_size}]"
            )));
        }
        Ok(Self {
            dataset_size,
            warmup_iters,
            initial_size,
            max_size,
            curve: AnnealCurve::Power2,
            inverse: false,
            seed: 0,
            recompute_stride: 1,
        })
    }

    pub fn with_curve(mut self, curve: AnnealCurve) -> Self {
        self.curve = curve;
        self
    }

    pub fn with_inverse(mut self, inverse: bool) -> Self {
        self.inverse = inverse;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_recompute_stride(mut self, stride: u64) -> Result<Self, ScheduleError> {
        if stride == 0 {
            return Err(ScheduleError::Argument(
                "recompute_stride must be at least 1".into(),
            ));
        }
        self.recompute_stride = stride;
        Ok(self)
    }

    pub fn dataset_size(&self) -> usize {
        self.dataset_size
    }

    pub fn warmup_iters(&self) -> u64 {
        self.warmup_iters
    }

    pub fn initial_size(&self) -> f64 {
        self.initial_size
    }

    pub fn max_size(&self) -> f64 {
        self.max_size
    }

    pub fn curve(&self) -> AnnealCurve {
        self.curve
    }

    pub fn phase(&self, t: u64) -> Phase {
        if t > self.warmup_iters {
            Phase::Uniform
        } else {
            Phase::Warmup
        }
    }

    /// Scheduled effective size at iteration `t`. Exactly the initial size
    /// at 0 and exactly the maximum from `T_w` on.
    pub fn target(&self, t: u64) -> f64 {
        if t >= self.warmup_iters {
            return self.max_size;
        }
        let progress = t as f64 / self.warmup_iters as f64;
        self.curve
            .target(progress, self.initial_size, self.max_size)
            .min(self.max_size)
    }
}
