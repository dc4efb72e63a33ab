use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use super::{open_reader, ErrorKind, HarnessError};
use crate::complexity::ComplexityRecord;
use crate::scorefile::{read_scores, ScoreFileError};

/// Exemplars kept at each end of a cluster.
pub const EXEMPLARS: usize = 20;

const QUANTILES: [f64; 7] = [0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0];

/// Linearly interpolated quantile of an ascending slice (NaN when empty).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let h = q.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

/// Pearson correlation; NaN when either input has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    if x.is_empty() {
        return f64::NAN;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return f64::NAN;
    }
    sxy / (sxx * syy).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterExemplars {
    pub cluster_id: usize,
    pub count: usize,
    /// `(image_id, Ω)` in ascending order of Ω.
    pub lowest: Vec<(String, f64)>,
    /// `(image_id, Ω)` in descending order of Ω.
    pub highest: Vec<(String, f64)>,
}

#[derive(Debug, Clone)]
pub struct StatsReport {
    pub images: usize,
    /// `(q, value)` pairs for Ω.
    pub omega_quantiles: Vec<(f64, f64)>,
    pub omega_dom_quantiles: Vec<(f64, f64)>,
    pub omega_prot_quantiles: Vec<(f64, f64)>,
    pub dom_prot_correlation: f64,
    pub clusters: Vec<ClusterExemplars>,
}

impl StatsReport {
    pub fn from_records(records: &[ComplexityRecord]) -> Self {
        let quantiles = |f: fn(&ComplexityRecord) -> f64| {
            let mut v: Vec<f64> = records.iter().map(f).collect();
            v.sort_by(f64::total_cmp);
            QUANTILES
                .iter()
                .map(|&q| (q, quantile(&v, q)))
                .collect::<Vec<_>>()
        };
        let dom: Vec<f64> = records.iter().map(|r| r.omega_dom).collect();
        let prot: Vec<f64> = records.iter().map(|r| r.omega_prot).collect();

        let mut by_cluster: BTreeMap<usize, Vec<&ComplexityRecord>> = BTreeMap::new();
        for r in records {
            by_cluster.entry(r.cluster_id).or_default().push(r);
        }
        let clusters = by_cluster
            .into_iter()
            .map(|(cluster_id, mut members)| {
                // Stable sort keeps file order among ties.
                members.sort_by(|a, b| a.omega.total_cmp(&b.omega));
                let pick = |r: &&ComplexityRecord| (r.image_id.clone(), r.omega);
                ClusterExemplars {
                    cluster_id,
                    count: members.len(),
                    lowest: members.iter().take(EXEMPLARS).map(pick).collect(),
                    highest: members.iter().rev().take(EXEMPLARS).map(pick).collect(),
                }
            })
            .collect();

        Self {
            images: records.len(),
            omega_quantiles: quantiles(|r| r.omega),
            omega_dom_quantiles: quantiles(|r| r.omega_dom),
            omega_prot_quantiles: quantiles(|r| r.omega_prot),
            dom_prot_correlation: pearson(&dom, &prot),
            clusters,
        }
    }

    /// One row per exemplar: `cluster_id,kind,rank,image_id,omega`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "cluster_id,kind,rank,image_id,omega")?;
        for c in &self.clusters {
            for (kind, list) in [("lowest", &c.lowest), ("highest", &c.highest)] {
                for (rank, (id, omega)) in list.iter().enumerate() {
                    writeln!(
                        w,
                        "{},{kind},{},{},{omega}",
                        c.cluster_id,
                        rank + 1,
                        csv_field(id)
                    )?;
                }
            }
        }
        w.flush()
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

impl fmt::Display for StatsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "images: {}  clusters: {}",
            self.images,
            self.clusters.len()
        )?;
        writeln!(
            f,
            "{:<12}{:>12}{:>12}{:>12}",
            "quantile", "omega", "omega_dom", "omega_prot"
        )?;
        for (i, q) in QUANTILES.iter().enumerate() {
            writeln!(
                f,
                "{:<12}{:>12.6}{:>12.6}{:>12.6}",
                q,
                self.omega_quantiles[i].1,
                self.omega_dom_quantiles[i].1,
                self.omega_prot_quantiles[i].1
            )?;
        }
        writeln!(
            f,
            "corr(omega_dom, omega_prot): {:.4}",
            self.dom_prot_correlation
        )?;
        for c in &self.clusters {
            let show = |list: &[(String, f64)]| {
                list.iter()
                    .take(3)
                    .map(|(id, o)| format!("{id} ({o:.4})"))
                    .collect::<Vec<_>>()
                    .join(", ")
            };
            writeln!(
                f,
                "cluster {} ({} images): low [{}] high [{}]",
                c.cluster_id,
                c.count,
                show(&c.lowest),
                show(&c.highest)
            )?;
        }
        Ok(())
    }
}

pub fn cmd_stats(path: &Path) -> Result<StatsReport, HarnessError> {
    let records = read_scores(open_reader("stats", path)?).map_err(|e| {
        let kind = match e {
            ScoreFileError::Io(_) => ErrorKind::Io,
            _ => ErrorKind::Data,
        };
        HarnessError::new(kind, "stats", e)
    })?;
    Ok(StatsReport::from_records(&records))
}
