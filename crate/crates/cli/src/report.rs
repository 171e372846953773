//! Aggregation of run files into accuracy tables, neighbor-selection
//! scores and communication heatmaps.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context};
use pens_core::metrics::{
    accuracy_summary, block_mass_ratio, display_order, heatmap, mean_ci, precision_recall, SeedAccuracies, Summary,
};
use pens_core::{Regime, Rotation, RunResult};
use serde::Serialize;

use crate::commands::find_run_files;
use crate::fsutil::write_atomic;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeighborScores {
    /// `None` when no client selected any neighbor in any seed.
    pub precision: Option<Summary>,
    pub recall: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeReport {
    pub regime: Regime,
    pub seeds: Vec<u64>,
    pub accuracy: Summary,
    /// Percent with one decimal, e.g. "57.8 ± 0.4".
    pub accuracy_text: String,
    /// Keyed by rotation in degrees.
    pub per_rotation: BTreeMap<String, Summary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub neighbor_selection: Option<NeighborScores>,
    /// Within-rotation over cross-rotation communication, from counts
    /// summed over seeds. Absent for regimes that exchange nothing.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub block_mass_ratio: Option<f64>,
    #[serde(skip)]
    pub heatmap: Option<Heatmap>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    /// Client ids in display order.
    pub order: Vec<usize>,
    pub rotations: Vec<Rotation>,
    /// Normalized, rows and columns in display order.
    pub values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub regimes: Vec<RegimeReport>,
}

pub fn load_runs(dir: &Path) -> anyhow::Result<Vec<(PathBuf, RunResult)>> {
    let files = find_run_files(dir)?;
    if files.is_empty() {
        bail!("no run_seed_*.json files under {}", dir.display());
    }
    files
        .into_iter()
        .map(|p| {
            let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
            let r: RunResult = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            Ok((p, r))
        })
        .collect()
}

fn summed_counts(runs: &[&RunResult]) -> anyhow::Result<Vec<Vec<u64>>> {
    let k = runs[0].counts.len();
    let mut sum = vec![vec![0u64; k]; k];
    for r in runs {
        ensure!(r.rotations == runs[0].rotations, "runs of {} disagree on client rotations", r.regime);
        ensure!(r.counts.len() == k, "runs of {} disagree on the number of clients", r.regime);
        for (srow, row) in sum.iter_mut().zip(&r.counts) {
            ensure!(row.len() == k, "count matrix of {} seed {} is not square", r.regime, r.seed);
            for (s, c) in srow.iter_mut().zip(row) {
                *s += c;
            }
        }
    }
    Ok(sum)
}

fn regime_report(regime: Regime, runs: &[&RunResult]) -> anyhow::Result<RegimeReport> {
    let seeds: Vec<SeedAccuracies<'_>> = runs
        .iter()
        .map(|r| SeedAccuracies {
            accuracies: &r.accuracies,
            rotations: &r.rotations,
        })
        .collect();
    let acc = accuracy_summary(&seeds)?;
    let neighbor_selection = if regime == Regime::Pens {
        let mut precisions = Vec::new();
        let mut recalls = Vec::new();
        for r in runs {
            let pr = precision_recall(&r.neighbor_lists, &r.rotations)?;
            precisions.extend(pr.precision);
            recalls.push(pr.recall);
        }
        Some(NeighborScores {
            precision: if precisions.is_empty() { None } else { Some(mean_ci(&precisions)?) },
            recall: mean_ci(&recalls)?,
        })
    } else {
        None
    };
    let counts = summed_counts(runs)?;
    let (ratio, map) = if counts.iter().flatten().any(|&c| c > 0) {
        let rotations = &runs[0].rotations;
        let order = display_order(rotations);
        let values = heatmap(&counts, rotations)?;
        let ordered_rot: Vec<Rotation> = order.iter().map(|&i| rotations[i]).collect();
        let ratio = block_mass_ratio(&values, &ordered_rot)?;
        (
            Some(ratio),
            Some(Heatmap {
                order,
                rotations: ordered_rot,
                values,
            }),
        )
    } else {
        (None, None)
    };
    Ok(RegimeReport {
        regime,
        seeds: runs.iter().map(|r| r.seed).collect(),
        accuracy_text: acc.overall.to_percent_string(),
        accuracy: acc.overall,
        per_rotation: acc
            .per_rotation
            .into_iter()
            .map(|(r, s)| (r.degrees().to_string(), s))
            .collect(),
        neighbor_selection,
        block_mass_ratio: ratio,
        heatmap: map,
    })
}

/// Groups runs by regime (one row per regime, seeds ascending).
pub fn build_report(runs: &[(PathBuf, RunResult)]) -> anyhow::Result<Report> {
    let mut by_regime: BTreeMap<Regime, BTreeMap<u64, (&PathBuf, &RunResult)>> = BTreeMap::new();
    for (path, r) in runs {
        if let Some((other, _)) = by_regime.entry(r.regime).or_default().insert(r.seed, (path, r)) {
            bail!(
                "duplicate {} run for seed {}: {} and {}",
                r.regime,
                r.seed,
                other.display(),
                path.display()
            );
        }
    }
    let regimes = by_regime
        .into_iter()
        .map(|(regime, seeds)| {
            let runs: Vec<&RunResult> = seeds.values().map(|(_, r)| *r).collect();
            regime_report(regime, &runs)
        })
        .collect::<anyhow::Result<_>>()?;
    Ok(Report { regimes })
}

fn pct(s: &Summary) -> String {
    s.to_percent_string()
}

pub fn render_tables(report: &Report) -> String {
    let rotations: Vec<String> = {
        let mut all: Vec<&String> = report.regimes.iter().flat_map(|r| r.per_rotation.keys()).collect();
        all.sort_by_key(|k| k.parse::<u16>().unwrap_or(u16::MAX));
        all.dedup();
        all.into_iter().cloned().collect()
    };
    let mut s = String::from("## Test accuracy (%)\n\n| regime | seeds | accuracy |");
    for r in &rotations {
        let _ = write!(s, " r={r} |");
    }
    s.push_str("\n|---|---|---|");
    s.push_str(&"---|".repeat(rotations.len()));
    s.push('\n');
    for reg in &report.regimes {
        let _ = write!(s, "| {} | {} | {} |", reg.regime, reg.seeds.len(), reg.accuracy_text);
        for r in &rotations {
            let cell = reg.per_rotation.get(r).map_or("-".to_string(), pct);
            let _ = write!(s, " {cell} |");
        }
        s.push('\n');
    }
    let with_scores: Vec<&RegimeReport> = report.regimes.iter().filter(|r| r.neighbor_selection.is_some()).collect();
    if !with_scores.is_empty() {
        s.push_str("\n## Neighbor selection (%)\n\n| regime | precision | recall |\n|---|---|---|\n");
        for reg in with_scores {
            let ns = reg.neighbor_selection.as_ref().expect("filtered");
            let p = ns.precision.as_ref().map_or("n/a".to_string(), pct);
            let _ = writeln!(s, "| {} | {} | {} |", reg.regime, p, pct(&ns.recall));
        }
    }
    let with_ratio: Vec<&RegimeReport> = report.regimes.iter().filter(|r| r.block_mass_ratio.is_some()).collect();
    if !with_ratio.is_empty() {
        s.push_str("\n## Communication block structure\n\n| regime | within/cross ratio |\n|---|---|\n");
        for reg in with_ratio {
            let _ = writeln!(s, "| {} | {:.3} |", reg.regime, reg.block_mass_ratio.expect("filtered"));
        }
    }
    s
}

/// Long-format heatmap rows for every regime that exchanged models.
pub fn heatmap_csv(report: &Report) -> String {
    let mut s = String::from("regime,row,col,sender,receiver,sender_rotation,receiver_rotation,value\n");
    for reg in &report.regimes {
        let Some(h) = &reg.heatmap else { continue };
        for (row, vals) in h.values.iter().enumerate() {
            for (col, v) in vals.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{}",
                    reg.regime,
                    row,
                    col,
                    h.order[row],
                    h.order[col],
                    h.rotations[row].degrees(),
                    h.rotations[col].degrees(),
                    v
                );
            }
        }
    }
    s
}

/// Writes `report.json`, `report.md` and `heatmap.csv` into `dir` and
/// returns the rendered tables.
pub fn report(dir: &Path) -> anyhow::Result<(Report, String)> {
    let runs = load_runs(dir)?;
    let report = build_report(&runs)?;
    let mut json = serde_json::to_vec_pretty(&report)?;
    json.push(b'\n');
    write_atomic(&dir.join("report.json"), &json)?;
    let tables = render_tables(&report);
    write_atomic(&dir.join("report.md"), tables.as_bytes())?;
    write_atomic(&dir.join("heatmap.csv"), heatmap_csv(&report).as_bytes())?;
    Ok((report, tables))
}
