use std::fmt;
use std::io::Write;
use std::path::PathBuf;

use super::{create_writer, open_reader, ErrorKind, HarnessError, WarmupConfig};
use crate::exec::Exec;
use crate::scheduler::{SamplerState, ScheduleError, Temperature};
use crate::scorefile::read_scores;

pub const TRACE_HEADER: &str =
    "t,tau,target_effective_size,realized_effective_size,distinct_seen_cumulative";

/// Number of warmup bins in the difficulty profile (one per 1%).
pub const PROFILE_BINS: usize = 100;

/// Rows flushed to the trace sink at a time.
const FLUSH_EVERY: u64 = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: u64,
    pub tau: Temperature,
    pub target: f64,
    /// Distinct images among the most recent `N` draws; `None` until `N`
    /// draws have been made.
    pub realized: Option<f64>,
    pub distinct_cumulative: usize,
}

impl TraceRow {
    fn write_csv<W: Write + ?Sized>(&self, w: &mut W) -> std::io::Result<()> {
        let realized = self.realized.map(|r| r.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{}",
            self.t, self.tau, self.target, realized, self.distinct_cumulative
        )
    }
}

/// Mean sampled normalised score over one 1% slice of the warmup.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileBin {
    pub bin: usize,
    pub t_start: u64,
    pub t_end: u64,
    pub draws: u64,
    pub mean_omega_norm: f64,
}

#[derive(Debug, Clone)]
pub struct SimulationReport {
    pub rows: Vec<TraceRow>,
    pub profile: Vec<ProfileBin>,
    /// Mean Ω̃ of images drawn in the first 5% of the warmup.
    pub early_mean: f64,
    /// Mean Ω̃ of images drawn in the last 5% of the warmup.
    pub late_mean: f64,
    pub total_draws: u64,
    pub distinct_seen: usize,
    pub dataset_size: usize,
    pub warmup_iters: u64,
}

impl SimulationReport {
    pub fn write_profile_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "bin,t_start,t_end,draws,mean_omega_norm")?;
        for b in &self.profile {
            writeln!(
                w,
                "{},{},{},{},{}",
                b.bin, b.t_start, b.t_end, b.draws, b.mean_omega_norm
            )?;
        }
        w.flush()
    }
}

impl fmt::Display for SimulationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "iterations: {}  draws: {}  distinct seen: {} of {}",
            self.rows.len(),
            self.total_draws,
            self.distinct_seen,
            self.dataset_size
        )?;
        writeln!(
            f,
            "mean sampled omega_norm: first 5% of warmup {:.4}, last 5% {:.4}",
            self.early_mean, self.late_mean
        )?;
        writeln!(f, "cumulative distinct (every 10% of the run):")?;
        let n = self.rows.len();
        for k in 1..=10 {
            if let Some(row) = n
                .checked_sub(1)
                .map(|last| &self.rows[(k * n / 10).saturating_sub(1).min(last)])
            {
                writeln!(f, "  t={:<10} {}", row.t, row.distinct_cumulative)?;
            }
        }
        writeln!(f, "mean sampled omega_norm per 10% of warmup:")?;
        for chunk in self.profile.chunks(10) {
            let draws: u64 = chunk.iter().map(|b| b.draws).sum();
            if draws == 0 {
                continue;
            }
            let mean = chunk
                .iter()
                .filter(|b| b.draws > 0)
                .map(|b| b.mean_omega_norm * b.draws as f64)
                .sum::<f64>()
                / draws as f64;
            writeln!(
                f,
                "  t={}..{}: {:.4}",
                chunk[0].t_start,
                chunk[chunk.len() - 1].t_end,
                mean
            )?;
        }
        Ok(())
    }
}

/// Runs the curriculum for `iterations` steps of `batch_size` draws over
/// the normalised scores, writing one trace row per step to `trace`.
pub fn simulate(
    omega_norm: &[f64],
    cfg: &WarmupConfig,
    iterations: u64,
    batch_size: usize,
    mut trace: Option<&mut dyn Write>,
    exec: Exec,
) -> Result<SimulationReport, HarnessError> {
    cfg.validate()?;
    if batch_size == 0 || iterations == 0 {
        return Err(HarnessError::config(
            "simulate",
            "iterations and batch size must be at least 1",
        ));
    }
    let n = omega_norm.len();
    let schedule = cfg.schedule(n)?;
    let t_w = schedule.warmup_iters();
    let mut state = SamplerState::new(omega_norm, schedule, exec)
        .map_err(|e| HarnessError::new(ErrorKind::Config, "schedule", e))?;

    let trace_err = |e: std::io::Error| HarnessError::new(ErrorKind::Io, "trace", e);
    if let Some(w) = trace.as_deref_mut() {
        writeln!(w, "{TRACE_HEADER}").map_err(trace_err)?;
    }

    let early_end = (t_w / 20).max(1);
    let late_start = t_w - early_end + 1;
    let (mut early_sum, mut early_draws) = (0.0, 0u64);
    let (mut late_sum, mut late_draws) = (0.0, 0u64);
    let mut bin_sums = vec![(0.0f64, 0u64); PROFILE_BINS];

    let mut seen = vec![false; n];
    let mut distinct = 0usize;
    let mut window = vec![0usize; n];
    let mut window_counts = vec![0u32; n];
    let mut window_distinct = 0usize;
    let mut draws = 0u64;
    let mut rows = Vec::with_capacity(iterations.min(1 << 24) as usize);

    for t in 1..=iterations {
        state.advance().map_err(|e| {
            let kind = match e {
                ScheduleError::NoConvergence { .. } => ErrorKind::Numeric,
                _ => ErrorKind::Config,
            };
            HarnessError::new(kind, "schedule", e)
        })?;
        let batch = state
            .sample_batch(batch_size)
            .map_err(|e| HarnessError::new(ErrorKind::Config, "sample", e))?;

        let batch_sum: f64 = batch.iter().map(|&i| omega_norm[i]).sum();
        if t <= t_w {
            let bin = ((t - 1) as u128 * PROFILE_BINS as u128 / t_w as u128) as usize;
            bin_sums[bin].0 += batch_sum;
            bin_sums[bin].1 += batch.len() as u64;
            if t <= early_end {
                early_sum += batch_sum;
                early_draws += batch.len() as u64;
            }
            if t >= late_start {
                late_sum += batch_sum;
                late_draws += batch.len() as u64;
            }
        }

        for &i in &batch {
            if !seen[i] {
                seen[i] = true;
                distinct += 1;
            }
            let slot = (draws % n as u64) as usize;
            if draws >= n as u64 {
                let old = window[slot];
                window_counts[old] -= 1;
                if window_counts[old] == 0 {
                    window_distinct -= 1;
                }
            }
            window[slot] = i;
            window_counts[i] += 1;
            if window_counts[i] == 1 {
                window_distinct += 1;
            }
            draws += 1;
        }

        let row = TraceRow {
            t,
            tau: state.temperature(),
            target: state.target(),
            realized: (draws >= n as u64).then_some(window_distinct as f64),
            distinct_cumulative: distinct,
        };
        if let Some(w) = trace.as_deref_mut() {
            row.write_csv(w).map_err(trace_err)?;
            if t % FLUSH_EVERY == 0 {
                w.flush().map_err(trace_err)?;
            }
        }
        rows.push(row);
    }
    if let Some(w) = trace {
        w.flush().map_err(trace_err)?;
    }

    let profile = bin_sums
        .iter()
        .enumerate()
        .map(|(bin, &(sum, count))| {
            let t_start = (bin as u128 * t_w as u128).div_ceil(PROFILE_BINS as u128) as u64 + 1;
            let t_end = ((bin as u128 + 1) * t_w as u128).div_ceil(PROFILE_BINS as u128) as u64;
            ProfileBin {
                bin,
                t_start,
                t_end,
                draws: count,
                mean_omega_norm: if count > 0 {
                    sum / count as f64
                } else {
                    f64::NAN
                },
            }
        })
        .collect();
    let mean = |s: f64, c: u64| if c > 0 { s / c as f64 } else { f64::NAN };

    Ok(SimulationReport {
        rows,
        profile,
        early_mean: mean(early_sum, early_draws),
        late_mean: mean(late_sum, late_draws),
        total_draws: draws,
        distinct_seen: distinct,
        dataset_size: n,
        warmup_iters: t_w,
    })
}

#[derive(Debug, Clone)]
pub struct SimulateOptions {
    pub scores: PathBuf,
    pub config: WarmupConfig,
    pub iterations: u64,
    pub batch_size: usize,
    /// Defaults to `trace.csv` next to the score file.
    pub trace: Option<PathBuf>,
    /// Defaults to `profile.csv` next to the score file.
    pub profile: Option<PathBuf>,
    pub exec: Exec,
}

/// Loads a score file, simulates the curriculum and writes the trace and
/// warmup-profile CSVs.
pub fn cmd_simulate(
    opts: &SimulateOptions,
) -> Result<(SimulationReport, PathBuf, PathBuf), HarnessError> {
    opts.config.validate()?;
    let dir = opts.scores.parent().map(PathBuf::from).unwrap_or_default();
    let trace_path = opts.trace.clone().unwrap_or_else(|| dir.join("trace.csv"));
    let profile_path = opts
        .profile
        .clone()
        .unwrap_or_else(|| dir.join("profile.csv"));

    let records = read_scores(open_reader("scores", &opts.scores)?).map_err(|e| {
        let kind = match e {
            crate::scorefile::ScoreFileError::Io(_) => ErrorKind::Io,
            _ => ErrorKind::Data,
        };
        HarnessError::new(kind, "scores", e)
    })?;
    let omega_norm: Vec<f64> = records.iter().map(|r| r.omega_norm).collect();

    let mut trace = create_writer("trace", &trace_path)?;
    let report = simulate(
        &omega_norm,
        &opts.config,
        opts.iterations,
        opts.batch_size,
        Some(&mut trace),
        opts.exec,
    )?;
    report
        .write_profile_csv(create_writer("profile", &profile_path)?)
        .map_err(|e| HarnessError::io("profile", &profile_path, e))?;
    Ok((report, trace_path, profile_path))
}
