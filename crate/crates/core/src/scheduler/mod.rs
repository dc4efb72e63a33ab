//! Temperature-controlled sampling over normalised complexity scores.
//!
//! The sampler draws image `i` with probability proportional to
//! `exp(-score_i / tau)`. Rather than scheduling `tau` directly, the warmup
//! schedules the *effective dataset size*, the expected number of distinct
//! images in `N` draws with replacement, and recovers `tau` from it.

mod sampler;
mod schedule;

pub use sampler::{CumulativeTable, SamplerState};
pub use schedule::{AnnealCurve, InitialSize, Phase, WarmupSchedule};

use thiserror::Error;

use crate::exec::Exec;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("target effective size {target} outside the feasible interval [{min}, {max}]")]
    Range { target: f64, min: f64, max: f64 },
    #[error("temperature search for target {target} stalled at effective size {achieved}")]
    NoConvergence { target: f64, achieved: f64 },
}

/// Softmax temperature. `Infinite` is the exact uniform limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Temperature {
    Finite(f64),
    Infinite,
}

impl Temperature {
    pub fn is_infinite(self) -> bool {
        matches!(self, Temperature::Infinite)
    }

    pub fn value(self) -> f64 {
        match self {
            Temperature::Finite(t) => t,
            Temperature::Infinite => f64::INFINITY,
        }
    }
}

impl std::fmt::Display for Temperature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Temperature::Finite(t) => write!(f, "{t}"),
            Temperature::Infinite => f.write_str("inf"),
        }
    }
}

fn check_scores(scores: &[f64]) -> Result<(), ScheduleError> {
    if scores.is_empty() {
        return Err(ScheduleError::Argument("empty score vector".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(ScheduleError::Argument("non-finite score".into()));
    }
    Ok(())
}

fn min_score(scores: &[f64]) -> f64 {
    scores.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Unnormalised weights `exp(-(s_i - s_min)/tau)`; the minimum maps to 1.
fn softmax_weights(scores: &[f64], tau: f64, exec: Exec) -> Vec<f64> {
    let lo = min_score(scores);
    exec.map(scores.len(), |i| (-(scores[i] - lo) / tau).exp())
}

pub fn sampling_probs(scores: &[f64], tau: Temperature) -> Result<Vec<f64>, ScheduleError> {
    sampling_probs_with(scores, tau, Exec::default())
}

pub fn sampling_probs_with(
    scores: &[f64],
    tau: Temperature,
    exec: Exec,
) -> Result<Vec<f64>, ScheduleError> {
    check_scores(scores)?;
    let tau = match tau {
        Temperature::Infinite => return Ok(vec![1.0 / scores.len() as f64; scores.len()]),
        Temperature::Finite(t) if t > 0.0 && !t.is_nan() => t,
        Temperature::Finite(t) => {
            return Err(ScheduleError::Argument(format!(
                "temperature must be positive, got {t}"
            )))
        }
    };
    let mut w = softmax_weights(scores, tau, exec);
    let total = exec.sum(w.len(), |i| w[i]);
    w.iter_mut().for_each(|x| *x /= total);
    Ok(w)
}

/// `1 - (1 - p)^n`, evaluated without cancellation for small `p`.
#[inline]
fn seen_probability(p: f64, n: f64) -> f64 {
    -(n * (-p).ln_1p()).exp_m1()
}

/// Expected number of distinct indices in `N = probs.len()` draws with
/// replacement.
pub fn effective_size(probs: &[f64]) -> f64 {
    effective_size_with(probs, Exec::default())
}

pub fn effective_size_with(probs: &[f64], exec: Exec) -> f64 {
    let n = probs.len() as f64;
    exec.sum(probs.len(), |i| seen_probability(probs[i], n))
}

/// Effective size of the uniform distribution over `n` items,
/// `n·(1 - (1 - 1/n)^n)`.
pub fn max_effective_size(n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    nf * seen_probability(1.0 / nf, nf)
}

/// Limit of the effective size as `tau → 0⁺`: uniform over the scores tied
/// at the minimum.
pub fn min_effective_size(scores: &[f64]) -> f64 {
    let lo = min_score(scores);
    let m = scores.iter().filter(|&&s| s == lo).count() as f64;
    m * seen_probability(1.0 / m, scores.len() as f64)
}

fn effective_size_at(scores: &[f64], tau: f64, exec: Exec) -> f64 {
    let w = softmax_weights(scores, tau, exec);
    let total = exec.sum(w.len(), |i| w[i]);
    let n = scores.len() as f64;
    exec.sum(w.len(), |i| seen_probability(w[i] / total, n))
}

/// Acceptance band for a recovered temperature: 0.5 images or 1e-6
/// relative, whichever is looser.
pub fn solve_tolerance(target: f64) -> f64 {
    (1e-6 * target.abs()).max(0.5)
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub exec: Exec,
    /// Previous solution; the search brackets around it first.
    pub hint: Option<f64>,
    pub max_iters: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            exec: Exec::default(),
            hint: None,
            max_iters: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemperatureSolution {
    pub tau: Temperature,
    /// Effective size at `tau`.
    pub achieved: f64,
    /// Set when all scores are equal and the effective size does not depend
    /// on `tau`.
    pub flat: bool,
    pub evaluations: usize,
}

pub fn solve_temperature(
    scores: &[f64],
    target: f64,
) -> Result<TemperatureSolution, ScheduleError> {
    solve_temperature_with(scores, target, &SolveOptions::default())
}

/// Finds `tau` whose effective size matches `target`.
///
/// Bracketed search on `ln tau` using the Illinois variant of regula falsi,
/// with plain bisection whenever the interpolated point fails to shrink the
/// bracket. The effective size is non-decreasing in `tau`.
pub fn solve_temperature_with(
    scores: &[f64],
    target: f64,
    opts: &SolveOptions,
) -> Result<TemperatureSolution, ScheduleError> {
    check_scores(scores)?;
    let exec = opts.exec;
    let d_max = max_effective_size(scores.len());
    let lo_score = min_score(scores);
    if scores.iter().all(|&s| s == lo_score) {
        return Ok(TemperatureSolution {
            tau: Temperature::Infinite,
            achieved: d_max,
            flat: true,
            evaluations: 0,
        });
    }
    let s_min = min_effective_size(scores);
    if !(target >= s_min * (1.0 - 1e-12) && target <= d_max * (1.0 + 1e-12)) {
        return Err(ScheduleError::Range {
            target,
            min: s_min,
            max: d_max,
        });
    }
    let uniform = TemperatureSolution {
        tau: Temperature::Infinite,
        achieved: d_max,
        flat: false,
        evaluations: 0,
    };
    if target >= d_max * (1.0 - 1e-12) {
        return Ok(uniform);
    }

    let stop = 1e-9 * target.max(1.0);
    let mut evals = 0usize;
    let mut f = |x: f64| {
        evals += 1;
        effective_size_at(scores, x.exp(), exec) - target
    };

    // Bracket [a, b] in ln(tau) with f(a) <= 0 <= f(b).
    let (mut a, mut b) = match opts.hint {
        Some(h) if h.is_finite() && h > 0.0 => (h.ln() - 0.5, h.ln() + 0.5),
        _ => (1e-6f64.ln(), 1e6f64.ln()),
    };
    const LN_MIN: f64 = -690.0;
    const LN_MAX: f64 = 690.0;
    let mut fb = f(b);
    let mut step = 1.0;
    while fb < 0.0 {
        if b >= LN_MAX {
            // Effective size indistinguishable from the uniform limit.
            return if -fb <= solve_tolerance(target) {
                Ok(TemperatureSolution {
                    evaluations: evals,
                    ..uniform
                })
            } else {
                Err(ScheduleError::NoConvergence {
                    target,
                    achieved: fb + target,
                })
            };
        }
        a = b;
        b = (b + step).min(LN_MAX);
        step *= 2.0;
        fb = f(b);
    }
    let mut fa = f(a);
    step = 1.0;
    while fa > 0.0 {
        if a <= LN_MIN {
            let achieved = fa + target;
            return if fa <= solve_tolerance(target) {
                Ok(TemperatureSolution {
                    tau: Temperature::Finite(a.exp()),
                    achieved,
                    flat: false,
                    evaluations: evals,
                })
            } else {
                Err(ScheduleError::NoConvergence { target, achieved })
            };
        }
        b = a;
        fb = fa;
        a = (a - step).max(LN_MIN);
        step *= 2.0;
        fa = f(a);
    }

    let mut best = if fa.abs() <= fb.abs() {
        (a, fa)
    } else {
        (b, fb)
    };
    let mut side = 0i8;
    for _ in 0..opts.max_iters {
        if best.1.abs() <= stop || b - a <= 1e-14 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        let mut x = if fb != fa {
            b - fb * (b - a) / (fb - fa)
        } else {
            0.5 * (a + b)
        };
        // Fall back to bisection when interpolation lands on or outside the
        // bracket edges.
        if !(x > a && x < b) {
            x = 0.5 * (a + b);
        }
        let fx = f(x);
        if fx.abs() < best.1.abs() {
            best = (x, fx);
        }
        if fx > 0.0 {
            b = x;
            fb = fx;
            if side == 1 {
                fa *= 0.5;
            }
            side = 1;
        } else {
            a = x;
            fa = fx;
            if side == -1 {
                fb *= 0.5;
            }
            side = -1;
        }
    }
    let achieved = best.1 + target;
    if best.1.abs() > solve_tolerance(target) {
        return Err(ScheduleError::NoConvergence { target, achieved });
    }
    Ok(TemperatureSolution {
        tau: Temperature::Finite(best.0.exp()),
        achieved,
        flat: false,
        evaluations: evals,
    })
}

/// Reflects normalised scores, `1 - s`, so the same sampler favours the
/// most complex images first.
pub fn inverse_scores(scores: &[f64]) -> Vec<f64> {
    scores.iter().map(|s| 1.0 - s).collect()
}
