use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use pens_core::data::{load_cifar10, load_fashion_mnist, partition};
use pens_core::metrics::precision_recall;
use pens_core::{sim, DatasetKind, Regime, RunResult};

use crate::config::ConfigFile;
use crate::fsutil::{append_line, write_atomic};
use crate::shards::{self, Manifest};

pub const RUN_LOG: &str = "run.log";

pub fn run_file_name(seed: u64) -> String {
    format!("run_seed_{seed}.json")
}

pub fn counts_file_name(seed: u64) -> String {
    format!("counts_seed_{seed}.csv")
}

/// Loads the raw dataset, partitions it and writes the shards.
pub fn prepare(cfg: &ConfigFile) -> anyhow::Result<Manifest> {
    cfg.validate()?;
    let (train, test) = match cfg.dataset {
        DatasetKind::FashionMnist => load_fashion_mnist(&cfg.data_dir()?)?,
        DatasetKind::Cifar10 => load_cifar10(&cfg.data_dir()?)?,
        DatasetKind::Synthetic => cfg.synthetic.generate_split()?,
    };
    let pcfg = cfg.sim_config().partition_config();
    let part = partition(&train, &test, &pcfg)?;
    shards::write_partition(&cfg.shard_dir(), cfg.dataset, &pcfg, &cfg.synthetic, &part)
}

pub fn counts_csv(counts: &[Vec<u64>]) -> String {
    let mut s = String::new();
    for row in counts {
        let cells: Vec<String> = row.iter().map(u64::to_string).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

fn summary_line(r: &RunResult) -> String {
    let stopped = r.stopped_at.iter().filter(|s| s.is_some()).count();
    let mut line = format!(
        "{} seed {}: mean accuracy {:.4}, rounds {}, stopped {}/{}",
        r.regime,
        r.seed,
        r.mean_accuracy(),
        r.rounds,
        stopped,
        r.accuracies.len()
    );
    if r.regime == Regime::Pens {
        if let Ok(pr) = precision_recall(&r.neighbor_lists, &r.rotations) {
            let p = pr.precision.map_or("n/a".to_string(), |p| format!("{p:.3}"));
            line.push_str(&format!(", precision {p}, recall {:.3}", pr.recall));
        }
    }
    line
}

/// Runs every configured seed on the prepared shards, writing
/// `run_seed_N.json` and `counts_seed_N.csv` to the regime's run directory.
/// One summary line per seed goes to `out`.
pub fn run(cfg: &ConfigFile, out: &mut dyn Write) -> anyhow::Result<Vec<RunResult>> {
    let sim_cfg = cfg.sim_config();
    sim_cfg.validate()?;
    let shard_dir = cfg.shard_dir();
    let manifest = shards::read_manifest(&shard_dir)?;
    manifest.check_matches(
        cfg.dataset,
        sim_cfg.model.input_shape,
        &sim_cfg.partition_config(),
        &cfg.synthetic,
    )?;
    let data = shards::load_partition(&shard_dir, &manifest)?;
    let dir = cfg.run_dir();
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut resolved = serde_json::to_vec_pretty(cfg)?;
    resolved.push(b'\n');
    write_atomic(&dir.join("config.json"), &resolved)?;

    let mut results = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let r = sim::run(&sim_cfg, &data, seed)?;
        let mut json = serde_json::to_vec_pretty(&r)?;
        json.push(b'\n');
        write_atomic(&dir.join(run_file_name(seed)), &json)?;
        write_atomic(&dir.join(counts_file_name(seed)), counts_csv(&r.counts).as_bytes())?;
        append_line(
            &dir.join(RUN_LOG),
            &format!("{} seed {} wall_time_s {:.3}", r.regime, seed, r.wall_time.as_secs_f64()),
        )?;
        writeln!(out, "{}", summary_line(&r))?;
        results.push(r);
    }
    Ok(results)
}

/// Every `run_seed_*.json` below `dir`, sorted by path.
pub fn find_run_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.with_context(|| format!("scanning {}", dir.display()))?;
        let name = entry.file_name().to_string_lossy();
        if entry.file_type().is_file() && name.starts_with("run_seed_") && name.ends_with(".json") {
            files.push(entry.into_path());
        }
    }
    Ok(files)
}
