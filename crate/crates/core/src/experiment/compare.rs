use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::pipeline::{read_cumulative, read_summary, Manifest};
use super::ExperimentError;
use crate::control::Mode;

const STAGE: &str = "compare";

/// Table 1-style row: medians over seeds of one mode in one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub run: String,
    pub mode: String,
    pub seeds: usize,
    pub att_completed: f64,
    pub att_inclusive: f64,
    pub throughput: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareOutput {
    /// Seeds present in both runs.
    pub seeds: Vec<u64>,
    /// Per second: gap `N_A(t) - N_B(t)` for each seed, then the median over seeds.
    pub gap: Vec<(u64, Vec<i64>, f64)>,
    pub table: Vec<TableRow>,
}

/// Median, averaging the middle pair for even counts.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn read_manifest(dir: &Path) -> Result<Manifest, ExperimentError> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| ExperimentError::stage(STAGE, format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| ExperimentError::stage(STAGE, format!("{}: {e}", path.display())))
}

fn table_rows(dir: &Path, label: &str) -> Result<Vec<TableRow>, ExperimentError> {
    let mut by_mode: BTreeMap<String, Vec<(f64, f64, f64)>> = BTreeMap::new();
    for r in read_summary(dir)? {
        by_mode.entry(r.mode).or_default().push((r.att_completed, r.att_inclusive, r.throughput as f64));
    }
    Ok(by_mode
        .into_iter()
        .map(|(mode, v)| TableRow {
            run: label.into(),
            mode,
            seeds: v.len(),
            att_completed: median(&v.iter().map(|x| x.0).collect::<Vec<_>>()),
            att_inclusive: median(&v.iter().map(|x| x.1).collect::<Vec<_>>()),
            throughput: median(&v.iter().map(|x| x.2).collect::<Vec<_>>()),
        })
        .collect())
}

/// Cumulative-throughput gap of `mode_a` in run `a` over `mode_b` in run `b`, plus a summary table
/// of both runs. Writes `gap.csv` and `table.csv` into `out` when given.
pub fn compare(a: &Path, b: &Path, mode_a: Mode, mode_b: Mode, out: Option<&Path>) -> Result<CompareOutput, ExperimentError> {
    let (ma, mb) = (read_manifest(a)?, read_manifest(b)?);
    if ma.roadnet_sha256 != mb.roadnet_sha256 || ma.flows_sha256 != mb.flows_sha256 || ma.total_s != mb.total_s {
        return Err(ExperimentError::stage(STAGE, "runs use different scenarios or horizons"));
    }
    for (m, mode, dir) in [(&ma, mode_a, a), (&mb, mode_b, b)] {
        if !m.modes.iter().any(|x| x == mode.as_str()) {
            return Err(ExperimentError::stage(STAGE, format!("{} has no `{mode}` results", dir.display())));
        }
    }
    let seeds: Vec<u64> = ma.seeds.iter().copied().filter(|s| mb.seeds.contains(s)).collect();
    if seeds.is_empty() {
        return Err(ExperimentError::stage(STAGE, "runs share no seeds"));
    }
    let mut per_seed = Vec::with_capacity(seeds.len());
    for &s in &seeds {
        let (ca, cb) = (read_cumulative(a, mode_a, s)?, read_cumulative(b, mode_b, s)?);
        if ca.len() != cb.len() {
            return Err(ExperimentError::stage(STAGE, format!("seed {s}: series lengths differ")));
        }
        per_seed.push(ca.iter().zip(&cb).map(|(x, y)| *x as i64 - *y as i64).collect::<Vec<i64>>());
    }
    let len = per_seed[0].len();
    let gap: Vec<(u64, Vec<i64>, f64)> = (0..len)
        .map(|t| {
            let g: Vec<i64> = per_seed.iter().map(|s| s[t]).collect();
            let med = median(&g.iter().map(|&x| x as f64).collect::<Vec<_>>());
            (t as u64, g, med)
        })
        .collect();
    let label = |p: &Path| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| p.display().to_string());
    let mut table = table_rows(a, &label(a))?;
    if a != b {
        table.extend(table_rows(b, &label(b))?);
    }

    if let Some(dir) = out {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["time_s".to_string()];
        header.extend(seeds.iter().map(|s| format!("s{s}")));
        header.push("median".into());
        let werr = |e: csv::Error| ExperimentError::stage(STAGE, e);
        w.write_record(&header).map_err(werr)?;
        for (t, g, m) in &gap {
            let mut rec = vec![t.to_string()];
            rec.extend(g.iter().map(i64::to_string));
            rec.push(m.to_string());
            w.write_record(&rec).map_err(werr)?;
        }
        let bytes = w.into_inner().map_err(|e| ExperimentError::stage(STAGE, e))?;
        crate::io_util::write_atomic(&dir.join("gap.csv"), &bytes).map_err(|e| ExperimentError::stage(STAGE, e))?;
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &table {
            w.serialize(r).map_err(werr)?;
        }
        let bytes = w.into_inner().map_err(|e| ExperimentError::stage(STAGE, e))?;
        crate::io_util::write_atomic(&dir.join("table.csv"), &bytes).map_err(|e| ExperimentError::stage(STAGE, e))?;
    }
    Ok(CompareOutput { seeds, gap, table })
}
