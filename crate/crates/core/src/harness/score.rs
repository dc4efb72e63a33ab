use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::Serialize;

use super::stats::quantile;
use super::{create_writer, open_reader, ErrorKind, HarnessError, WarmupConfig};
use crate::complexity::{
    combine_and_normalize, dominance, fit_prototypes, mean_foreground, typicality,
    write_prototypes, ComplexityError, ComplexityRecord, DraftRecord, KMeansConfig, PrototypeModel,
    DEFAULT_K,
};
use crate::embeddings::{read_embeddings, TokenEmbeddingSet};
use crate::exec::Exec;
use crate::saliency::{
    fit_pc1, foreground_mask, saliency_scores, ForegroundMask, PcaOptions, SaliencyError,
    SaliencyModel,
};
use crate::scorefile::{write_masks, write_scores};

pub const SCORES_FILE: &str = "scores.jsonl";
pub const PROTOS_FILE: &str = "protos.bin";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MASKS_FILE: &str = "masks.jsonl";

/// Prototype count: the configured value, or `min(1000, ⌊N/10⌋)` clamped
/// to at least 1 when unset.
pub fn resolve_k(configured: Option<usize>, n: usize) -> usize {
    configured.unwrap_or_else(|| DEFAULT_K.min(n / 10).max(1))
}

fn saliency_err(e: SaliencyError) -> HarnessError {
    let kind = match e {
        SaliencyError::DimensionMismatch { .. } => ErrorKind::Data,
        _ => ErrorKind::Numeric,
    };
    HarnessError::new(kind, "saliency", e)
}

fn complexity_err(stage: &'static str) -> impl Fn(ComplexityError) -> HarnessError {
    move |e| {
        let kind = match e {
            ComplexityError::Argument(_) => ErrorKind::Config,
            ComplexityError::DimensionMismatch { .. } => ErrorKind::Data,
        };
        HarnessError::new(kind, stage, e)
    }
}

/// Everything the scoring pipeline produces in memory.
#[derive(Debug, Clone)]
pub struct ScoredDataset {
    pub saliency: SaliencyModel,
    pub masks: Vec<ForegroundMask>,
    pub prototypes: PrototypeModel,
    pub records: Vec<ComplexityRecord>,
    pub timings: Vec<(&'static str, Duration)>,
}

/// Runs saliency, masks, dominance, foreground means, prototypes,
/// typicality and normalisation over an in-memory set.
pub fn score_embeddings(
    set: &TokenEmbeddingSet,
    cfg: &WarmupConfig,
    exec: Exec,
) -> Result<ScoredDataset, HarnessError> {
    cfg.validate()?;
    let params = cfg.dominance()?;
    let mut timings = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |name: &'static str, timings: &mut Vec<(&'static str, Duration)>| {
        timings.push((name, clock.elapsed()));
        clock = Instant::now();
    };

    let saliency = fit_pc1(
        set,
        &PcaOptions {
            tol: cfg.pca_tol,
            max_iters: cfg.pca_max_iters,
            seed: cfg.seed,
            flip: cfg.flip_saliency,
            exec,
        },
    )
    .map_err(saliency_err)?
    .with_theta(cfg.theta);
    lap("pca", &mut timings);

    let scores = saliency_scores(set, &saliency, exec).map_err(saliency_err)?;
    let masks = foreground_mask(&scores, cfg.theta);
    lap("masks", &mut timings);

    let omega_dom = masks
        .iter()
        .map(|m| dominance(m.bg_ratio(), &params))
        .collect::<Result<Vec<f64>, _>>()
        .map_err(complexity_err("dominance"))?;
    lap("dominance", &mut timings);

    let fg_means = mean_foreground(set, &masks, exec).map_err(complexity_err("foreground"))?;
    lap("foreground", &mut timings);

    let n = set.num_images();
    let kcfg = KMeansConfig {
        max_iters: cfg.kmeans_max_iters,
        batch: cfg.kmeans_batch.or(KMeansConfig::default_batch(n)),
        exec,
        ..KMeansConfig::new(resolve_k(cfg.k, n), cfg.seed)
    };
    let prototypes = fit_prototypes(&fg_means, &kcfg).map_err(complexity_err("prototypes"))?;
    lap("prototypes", &mut timings);

    let assigned = exec.map(n, |i| typicality(fg_means.row(i), &prototypes));
    let drafts = assigned
        .into_iter()
        .enumerate()
        .map(|(i, res)| {
            let (cluster_id, omega_prot) = res?;
            Ok(DraftRecord {
                image_id: set.image_ids()[i].clone(),
                r_bg: masks[i].bg_ratio(),
                omega_dom: omega_dom[i],
                omega_prot,
                cluster_id,
            })
        })
        .collect::<Result<Vec<_>, ComplexityError>>()
        .map_err(complexity_err("typicality"))?;
    lap("typicality", &mut timings);

    let records = combine_and_normalize(drafts);
    lap("normalize", &mut timings);

    Ok(ScoredDataset {
        saliency,
        masks,
        prototypes,
        records,
        timings,
    })
}

/// Deterministic digest written next to the scores.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreSummary {
    pub images: usize,
    pub clusters: usize,
    /// Ω at the 0%, 10%, …, 100% quantiles.
    pub omega_deciles: Vec<f64>,
    /// Counts of Ω̃ in [0, 0.1), [0.1, 0.2), …, [0.9, 1.0].
    pub omega_norm_histogram: Vec<usize>,
    pub cluster_sizes: Vec<usize>,
    pub mean_bg_ratio: f64,
    pub pca_eigenvalue: f64,
    pub pca_iterations: usize,
    pub kmeans_iterations: usize,
    pub kmeans_inertia: f64,
}

impl ScoreSummary {
    pub fn from_scored(scored: &ScoredDataset) -> Self {
        let records = &scored.records;
        let mut omegas: Vec<f64> = records.iter().map(|r| r.omega).collect();
        omegas.sort_by(f64::total_cmp);
        let omega_deciles = (0..=10)
            .map(|q| quantile(&omegas, q as f64 / 10.0))
            .collect();
        let mut hist = vec![0usize; 10];
        for r in records {
            hist[((r.omega_norm * 10.0) as usize).min(9)] += 1;
        }
        let mut cluster_sizes = vec![0usize; scored.prototypes.k()];
        for r in records {
            cluster_sizes[r.cluster_id] += 1;
        }
        Self {
            images: records.len(),
            clusters: scored.prototypes.k(),
            omega_deciles,
            omega_norm_histogram: hist,
            cluster_sizes,
            mean_bg_ratio: records.iter().map(|r| r.r_bg).sum::<f64>() / records.len() as f64,
            pca_eigenvalue: scored.saliency.eigenvalue,
            pca_iterations: scored.saliency.iterations,
            kmeans_iterations: scored.prototypes.iterations,
            kmeans_inertia: scored.prototypes.inertia,
        }
    }
}

impl fmt::Display for ScoreSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "images: {}  clusters: {}", self.images, self.clusters)?;
        writeln!(f, "mean background ratio: {:.4}", self.mean_bg_ratio)?;
        writeln!(
            f,
            "pca: eigenvalue {:.6e} after {} iterations; k-means: inertia {:.6e} after {} iterations",
            self.pca_eigenvalue, self.pca_iterations, self.kmeans_inertia, self.kmeans_iterations
        )?;
        write!(f, "omega deciles:")?;
        for d in &self.omega_deciles {
            write!(f, " {d:.4}")?;
        }
        writeln!(f)?;
        write!(f, "omega_norm histogram:")?;
        for c in &self.omega_norm_histogram {
            write!(f, " {c}")?;
        }
        writeln!(f)?;
        let nonempty = self.cluster_sizes.iter().filter(|&&c| c > 0).count();
        let largest = self.cluster_sizes.iter().max().copied().unwrap_or(0);
        let smallest = self.cluster_sizes.iter().min().copied().unwrap_or(0);
        writeln!(
            f,
            "cluster sizes: {nonempty} non-empty, smallest {smallest}, largest {largest}"
        )
    }
}

#[derive(Debug, Clone)]
pub struct ScoreOptions {
    pub input: PathBuf,
    pub out_dir: PathBuf,
    pub config: WarmupConfig,
    pub dump_masks: bool,
    pub exec: Exec,
}

#[derive(Debug, Clone)]
pub struct ScoreOutcome {
    pub scored: ScoredDataset,
    pub summary: ScoreSummary,
    pub scores_path: PathBuf,
    pub protos_path: PathBuf,
    pub summary_path: PathBuf,
    pub masks_path: Option<PathBuf>,
    pub wall_clock: Duration,
}

fn write_err(path: &Path, e: impl fmt::Display) -> HarnessError {
    HarnessError::new(ErrorKind::Io, "write", format!("{}: {e}", path.display()))
}

struct PendingOutputs {
    files: Vec<(PathBuf, PathBuf)>,
    committed: bool,
}

impl PendingOutputs {
    fn stage(&mut self, dir: &Path, name: &str) -> PathBuf {
        let tmp = dir.join(format!(".{name}.partial"));
        self.files.push((tmp.clone(), dir.join(name)));
        tmp
    }

    fn commit(&mut self) -> Result<(), HarnessError> {
        for (tmp, dst) in &self.files {
            fs::rename(tmp, dst).map_err(|e| HarnessError::io("write", dst, e))?;
        }
        self.committed = true;
        Ok(())
    }
}

impl Drop for PendingOutputs {
    fn drop(&mut self) {
        if !self.committed {
            for (tmp, _) in &self.files {
                let _ = fs::remove_file(tmp);
            }
        }
    }
}

/// Scores a `.tokemb` file and writes `scores.jsonl`, `protos.bin` and
/// `summary.json` (plus `masks.jsonl` on request) into the output
/// directory. Nothing is left behind on failure.
pub fn cmd_score(opts: &ScoreOptions) -> Result<ScoreOutcome, HarnessError> {
    let started = Instant::now();
    opts.config.validate()?;
    if !opts.input.is_file() {
        return Err(HarnessError::io(
            "input",
            &opts.input,
            std::io::Error::new(std::io::ErrorKind::NotFound, "not a readable file"),
        ));
    }
    fs::create_dir_all(&opts.out_dir).map_err(|e| HarnessError::io("output", &opts.out_dir, e))?;

    let set = read_embeddings(open_reader("load", &opts.input)?).map_err(|e| {
        let kind = match e {
            crate::embeddings::FormatError::Read(_) => ErrorKind::Io,
            _ => ErrorKind::Data,
        };
        HarnessError::new(kind, "load", e)
    })?;
    let scored = score_embeddings(&set, &opts.config, opts.exec)?;
    let summary = ScoreSummary::from_scored(&scored);

    let dir = &opts.out_dir;
    let mut pending = PendingOutputs {
        files: Vec::new(),
        committed: false,
    };
    let tmp = pending.stage(dir, SCORES_FILE);
    write_scores(&scored.records, create_writer("write", &tmp)?).map_err(|e| write_err(&tmp, e))?;
    let tmp = pending.stage(dir, PROTOS_FILE);
    write_prototypes(&scored.prototypes, create_writer("write", &tmp)?)
        .map_err(|e| write_err(&tmp, e))?;
    let tmp = pending.stage(dir, SUMMARY_FILE);
    let mut json = serde_json::to_vec_pretty(&summary).map_err(|e| write_err(&tmp, e))?;
    json.push(b'\n');
    fs::write(&tmp, json).map_err(|e| write_err(&tmp, e))?;
    let masks_path = if opts.dump_masks {
        let tmp = pending.stage(dir, MASKS_FILE);
        write_masks(
            set.image_ids(),
            &scored.masks,
            create_writer("write", &tmp)?,
        )
        .map_err(|e| write_err(&tmp, e))?;
        Some(dir.join(MASKS_FILE))
    } else {
        None
    };
    pending.commit()?;

    Ok(ScoreOutcome {
        scored,
        summary,
        scores_path: dir.join(SCORES_FILE),
        protos_path: dir.join(PROTOS_FILE),
        summary_path: dir.join(SUMMARY_FILE),
        masks_path,
        wall_clock: started.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_resolution() {
        assert_eq!(resolve_k(None, 1), 1);
        assert_eq!(resolve_k(None, 100), 10);
        assert_eq!(resolve_k(None, 1_000_000), 1000);
        assert_eq!(resolve_k(Some(3), 1), 3);
    }
}
