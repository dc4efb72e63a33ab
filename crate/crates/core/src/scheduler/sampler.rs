use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::schedule::{Phase, WarmupSchedule};
use super::{
    inverse_scores, max_effective_size, min_effective_size, sampling_probs_with,
    solve_temperature_with, ScheduleError, SolveOptions, Temperature,
};
use crate::exec::Exec;

/// Inverse-CDF sampler over a fixed probability vector: O(N) to build,
/// O(log N) per draw.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulativeTable {
    cumulative: Vec<f64>,
}

impl CumulativeTable {
    pub fn new(probs: &[f64]) -> Self {
        let mut acc = 0.0;
        let cumulative = probs
            .iter()
            .map(|&p| {
                acc += p;
                acc
            })
            .collect();
        Self { cumulative }
    }

    pub fn len(&self) -> usize {
        self.cumulative.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cumulative.is_empty()
    }

    /// Index whose cumulative interval contains `u ∈ [0, 1)`.
    pub fn index_for(&self, u: f64) -> usize {
        let total = *self.cumulative.last().expect("non-empty table");
        let x = u * total;
        self.cumulative
            .partition_point(|&c| c <= x)
            .min(self.cumulative.len() - 1)
    }

    pub fn draw<R: Rng>(&self, rng: &mut R) -> usize {
        self.index_for(rng.random::<f64>())
    }
}

/// Mutable sampling state for one simulated training run.
///
/// Randomness comes from ChaCha8 seeded with the schedule seed, so a fixed
/// seed reproduces the draw sequence exactly.
#[derive(Debug, Clone)]
pub struct SamplerState {
    scores: Vec<f64>,
    schedule: WarmupSchedule,
    rng: ChaCha8Rng,
    exec: Exec,
    t: u64,
    tau: Temperature,
    target: f64,
    achieved: f64,
    probs: Vec<f64>,
    table: Option<CumulativeTable>,
    last_refresh: Option<u64>,
    log: Option<Vec<usize>>,
}

impl SamplerState {
    /// `scores` are the normalised complexities in dataset order. In inverse
    /// mode they are reflected before use. Fails when the schedule's initial
    /// size lies below the smallest reachable effective size.
    pub fn new(
        scores: &[f64],
        schedule: WarmupSchedule,
        exec: Exec,
    ) -> Result<Self, ScheduleError> {
        if scores.len() != schedule.dataset_size() {
            return Err(ScheduleError::Argument(format!(
                "{} scores for a schedule over {} images",
                scores.len(),
                schedule.dataset_size()
            )));
        }
        if scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(ScheduleError::Argument(
                "normalised scores must lie in [0, 1]".into(),
            ));
        }
        let scores = if schedule.inverse {
            inverse_scores(scores)
        } else {
            scores.to_vec()
        };
        let flat = scores.iter().all(|&s| s == scores[0]);
        let s_min = min_effective_size(&scores);
        if !flat && schedule.initial_size() < s_min * (1.0 - 1e-12) {
            return Err(ScheduleError::Range {
                target: schedule.initial_size(),
                min: s_min,
                max: max_effective_size(scores.len()),
            });
        }
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(schedule.seed),
            scores,
            schedule,
            exec,
            t: 0,
            tau: Temperature::Infinite,
            target: f64::NAN,
            achieved: f64::NAN,
            probs: Vec::new(),
            table: None,
            last_refresh: None,
            log: None,
        })
    }

    /// Keep every drawn index.
    pub fn with_log(mut self) -> Self {
        self.log = Some(Vec::new());
        self
    }

    pub fn iteration(&self) -> u64 {
        self.t
    }

    pub fn temperature(&self) -> Temperature {
        self.tau
    }

    pub fn target(&self) -> f64 {
        self.target
    }

    /// Effective size of the distribution currently in use.
    pub fn achieved(&self) -> f64 {
        self.achieved
    }

    pub fn phase(&self) -> Phase {
        self.schedule.phase(self.t)
    }

    pub fn schedule(&self) -> &WarmupSchedule {
        &self.schedule
    }

    /// Scores the sampler actually uses (reflected in inverse mode).
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// `P(·|t)`; empty until the first refresh and during the uniform phase.
    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    pub fn draw_log(&self) -> Option<&[usize]> {
        self.log.as_deref()
    }

    /// Moves to iteration `t + 1` and refreshes the distribution if due.
    pub fn advance(&mut self) -> Result<(), ScheduleError> {
        self.set_iteration(self.t + 1)
    }

    pub fn set_iteration(&mut self, t: u64) -> Result<(), ScheduleError> {
        self.t = t;
        self.refresh_if_due()
    }

    fn refresh_if_due(&mut self) -> Result<(), ScheduleError> {
        let t = self.t;
        if self.schedule.phase(t) == Phase::Uniform {
            if self.table.is_some() || self.last_refresh.is_none() {
                self.table = None;
                self.probs.clear();
                self.tau = Temperature::Infinite;
                self.target = self.schedule.max_size();
                self.achieved = self.target;
                self.last_refresh = Some(t);
            }
            return Ok(());
        }
        let due = match self.last_refresh {
            None => true,
            Some(last) => t < last || t - last >= self.schedule.recompute_stride,
        };
        if !due {
            return Ok(());
        }
        let target = self.schedule.target(t);
        let hint = match self.tau {
            Temperature::Finite(x) => Some(x),
            Temperature::Infinite => None,
        };
        let solved = solve_temperature_with(
            &self.scores,
            target,
            &SolveOptions {
                exec: self.exec,
                hint,
                ..Default::default()
            },
        )?;
        self.probs = sampling_probs_with(&self.scores, solved.tau, self.exec)?;
        self.table = Some(CumulativeTable::new(&self.probs));
        self.tau = solved.tau;
        self.target = target;
        self.achieved = solved.achieved;
        self.last_refresh = Some(t);
        Ok(())
    }

    /// `batch_size` independent draws with replacement from `P(·|t)`.
    pub fn sample_batch(&mut self, batch_size: usize) -> Result<Vec<usize>, ScheduleError> {
        if batch_size == 0 {
            return Err(ScheduleError::Argument(
                "batch size must be at least 1".into(),
            ));
        }
        if self.last_refresh.is_none() {
            self.refresh_if_due()?;
        }
        let n = self.scores.len();
        let batch: Vec<usize> = match &self.table {
            Some(table) => (0..batch_size).map(|_| table.draw(&mut self.rng)).collect(),
            None => (0..batch_size)
                .map(|_| self.rng.random_range(0..n))
                .collect(),
        };
        if let Some(log) = &mut self.log {
            log.extend_from_slice(&batch);
        }
        Ok(batch)
    }
}
