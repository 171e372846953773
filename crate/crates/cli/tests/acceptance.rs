//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.
//!
//! Criteria 6 and 9 need Fashion-MNIST IDX files in `$DFL_DATA_DIR` or
//! `<workspace>/data/fashion_mnist` (see `scripts/fashion_mnist_to_idx.py`).

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use pens_cli::commands::{self, run_file_name};
use pens_cli::config::DATA_DIR_ENV;
use pens_cli::ConfigFile;
use pens_core::data::{parse_cifar10, parse_idx_images, parse_idx_labels, partition, rotate, CIFAR_RECORD_LEN};
use pens_core::metrics::{block_mass_ratio, precision_recall};
use pens_core::nn::{average_models, backward, forward, init_model, loss, Batch, Logits};
use pens_core::protocol::{expected_selection_count, neighbors_from_counts};
use pens_core::rng::StreamRng;
use pens_core::{
    ClientState, Dataset, Error, ModelSpec, ParamVector, PartitionConfig, ProtocolParams, Regime, Rotation,
    RunResult, SyntheticSpec,
};
use rand::{Rng, SeedableRng};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

// ---------------------------------------------------------------- 1

fn numeric_grad(spec: &ModelSpec, p: &[f64], inputs: &[f64], labels: &[usize]) -> Vec<f64> {
    const H: f64 = 1e-5;
    let eval = |v: Vec<f64>| {
        let pv = ParamVector::new(v).unwrap();
        loss(&forward(spec, &pv, inputs).unwrap(), labels).unwrap()
    };
    (0..p.len())
        .map(|i| {
            let mut plus = p.to_vec();
            plus[i] += H;
            let mut minus = p.to_vec();
            minus[i] -= H;
            (eval(plus) - eval(minus)) / (2.0 * H)
        })
        .collect()
}

fn gradient_oracle() -> Check {
    let mut rng = StreamRng::seed_from_u64(7);
    let mut coords = 0;
    let mut worst: f64 = 0.0;
    for case in 0..20 {
        let classes = rng.random_range(2..11);
        let spec = if case % 2 == 0 {
            let side = rng.random_range(2..6);
            ModelSpec::mlp([rng.random_range(1..4), side, side], rng.random_range(2..9), classes)
        } else {
            let side = rng.random_range(8..13);
            ModelSpec::cnn([rng.random_range(1..4), side, side], classes)
                .with_conv_channels(vec![rng.random_range(2..5), rng.random_range(2..5), rng.random_range(2..5)])
                .with_hidden_units(rng.random_range(3..8))
        };
        let params: Vec<f64> = init_model(&spec, rng.random())
            .as_slice()
            .iter()
            .map(|w| 2.0 * w + rng.random_range(-0.05..0.05))
            .collect();
        let n = rng.random_range(1..5);
        let inputs: Vec<f64> = (0..n * spec.input_len()).map(|_| rng.random()).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let pv = ParamVector::new(params.clone()).unwrap();
        let (_, grads) = backward(&spec, &pv, Batch::new(&inputs, &labels)).map_err(|e| e.to_string())?;
        let numeric = numeric_grad(&spec, &params, &inputs, &labels);
        for (i, (a, b)) in grads.as_slice().iter().zip(&numeric).enumerate() {
            let rel = (a - b).abs() / a.abs().max(b.abs()).max(1e-6);
            worst = worst.max(rel);
            ensure(rel <= 1e-4, || format!("case {case} ({:?}) coord {i}: {a} vs {b}", spec.kind))?;
            coords += 1;
        }
    }
    Ok(format!("20 cases, {coords} coordinates, worst relative error {worst:.2e}"))
}

// ---------------------------------------------------------------- 2

fn algebraic_suite() -> Check {
    let mut rng = StreamRng::seed_from_u64(2);
    for _ in 0..200 {
        let len = rng.random_range(1..50);
        let mut v = || ParamVector::new((0..len).map(|_| rng.random_range(-10.0..10.0)).collect()).unwrap();
        let (a, b, c) = (v(), v(), v());
        let avg = |xs: &[&ParamVector]| average_models(xs.iter().copied()).unwrap();
        let close = |x: &ParamVector, y: &ParamVector| {
            x.as_slice().iter().zip(y.as_slice()).all(|(p, q)| (p - q).abs() <= 1e-12 * (1.0 + p.abs()))
        };
        ensure(close(&avg(&[&a, &a, &a]), &a), || "averaging is not idempotent".into())?;
        ensure(avg(&[&a, &b]) == avg(&[&b, &a]), || "averaging is not symmetric".into())?;
        let ab = avg(&[&a, &b]);
        let lhs = avg(&[&ab, &c]);
        let manual = ParamVector::new(
            a.as_slice()
                .iter()
                .zip(b.as_slice())
                .zip(c.as_slice())
                .map(|((x, y), z)| 0.25 * x + 0.25 * y + 0.5 * z)
                .collect(),
        )
        .unwrap();
        ensure(close(&lhs, &manual), || "averaging is not linear".into())?;
    }

    let shape = [2, 5, 5];
    let img: Vec<f64> = (0..50).map(|_| rng.random()).collect();
    for &a in &Rotation::ALL {
        for &b in &Rotation::ALL {
            let two = rotate(&rotate(&img, shape, b).unwrap(), shape, a).unwrap();
            ensure(two == rotate(&img, shape, a.compose(b)).unwrap(), || format!("{a} after {b}"))?;
        }
        ensure(a.compose(a.inverse()) == Rotation::R0, || format!("inverse of {a}"))?;
    }
    let mut four = img.clone();
    for _ in 0..4 {
        four = rotate(&four, shape, Rotation::R90).unwrap();
    }
    ensure(four == img, || "rotating by 90 four times is not the identity".into())?;

    let uniform = Logits {
        values: vec![0.37; 10],
        num_classes: 10,
    };
    let l = loss(&uniform, &[4]).unwrap();
    ensure((l - 10f64.ln()).abs() <= 1e-9, || format!("uniform loss {l}"))?;

    let synth = SyntheticSpec {
        n_train: 1200,
        n_test: 200,
        ..Default::default()
    };
    let (train, test) = synth.generate_split().map_err(|e| e.to_string())?;
    let cfg = PartitionConfig {
        k: 8,
        rotations: vec![Rotation::R0, Rotation::R90, Rotation::R180, Rotation::R270],
        n_train_per_client: 80,
        n_val_per_client: 40,
        seed: 3,
    };
    let part = partition(&train, &test, &cfg).map_err(|e| e.to_string())?;
    let mut seen = HashSet::new();
    for c in &part.clients {
        for &i in c.train.source_indices().iter().chain(c.val.source_indices()) {
            ensure(seen.insert(i), || format!("source sample {i} used twice"))?;
        }
    }
    ensure(seen.len() == 8 * 120, || "wrong number of partitioned samples".into())?;
    Ok("200 averaging cases, 16 rotation compositions, ln(10) loss, 960 disjoint samples".into())
}

// ---------------------------------------------------------------- 3

fn idx_header(magic: u32, dims: &[u32]) -> Vec<u8> {
    let mut b = magic.to_be_bytes().to_vec();
    for d in dims {
        b.extend(d.to_be_bytes());
    }
    b
}

fn format_round_trips() -> Check {
    let mut images = idx_header(0x803, &[2, 2, 3]);
    images.extend([0u8, 51, 102, 153, 204, 255, 255, 0, 0, 0, 0, 255]);
    let (n, rows, cols, px) = parse_idx_images(&images).map_err(|e| e.to_string())?;
    let expected = vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0];
    ensure((n, rows, cols) == (2, 2, 3) && px == expected, || format!("images parsed to {px:?}"))?;
    let mut labels = idx_header(0x801, &[3]);
    labels.extend([9u8, 0, 4]);
    ensure(parse_idx_labels(&labels) == Ok(vec![9, 0, 4]), || "labels".into())?;

    let mut bad = images.clone();
    bad[3] = 0x01;
    ensure(
        parse_idx_images(&bad) == Err(Error::BadMagic { expected: 0x803, found: 0x801 }),
        || "wrong magic not reported".into(),
    )?;
    ensure(
        matches!(parse_idx_images(&images[..images.len() - 1]), Err(Error::Truncated { .. })),
        || "short image body not reported".into(),
    )?;
    ensure(
        matches!(parse_idx_labels(&labels[..6]), Err(Error::Truncated { .. })),
        || "short label header not reported".into(),
    )?;

    let mut cifar = Vec::new();
    for (label, base) in [(3u8, 0u8), (7, 100)] {
        cifar.push(label);
        cifar.extend((0..CIFAR_RECORD_LEN - 1).map(|i| base.wrapping_add((i % 50) as u8)));
    }
    let (px, lbl) = parse_cifar10(&cifar).map_err(|e| e.to_string())?;
    ensure(lbl == vec![3, 7] && px.len() == 2 * 3072, || "cifar shape".into())?;
    ensure(px[0] == 0.0 && px[1] == 1.0 / 255.0 && px[3072] == 100.0 / 255.0, || "cifar pixels".into())?;
    ensure(
        parse_cifar10(&cifar[..CIFAR_RECORD_LEN + 5]) == Err(Error::RecordSize { size: CIFAR_RECORD_LEN + 5, record: CIFAR_RECORD_LEN }),
        || "cifar length not reported".into(),
    )?;
    Ok("IDX images/labels and CIFAR records parse exactly; magic and length errors raised".into())
}

// ---------------------------------------------------------------- 4

fn probe_model(loss_value: f64, tag: f64) -> ParamVector {
    ParamVector::new(vec![tag, 0.0, 0.0, 0.0, 0.0, loss_value.exp_m1().ln()]).unwrap()
}

fn protocol_suite() -> Check {
    let spec = ModelSpec::mlp([1, 1, 1], 1, 2);
    let shard = Dataset::new("probe", [1, 1, 1], vec![0.2, 0.9], vec![0, 0]).unwrap();
    let client = |own: ParamVector| ClientState::new(0, own, shard.clone(), shard.clone(), StreamRng::seed_from_u64(0));
    let pp = |n_peers, n_sampled, m| ProtocolParams {
        n_peers,
        n_sampled,
        m,
        epochs: 0,
        ..Default::default()
    };
    let fill = |v: f64| ParamVector::new(vec![v; 6]).unwrap();
    let e = |x: pens_core::Error| x.to_string();

    let mut c = client(fill(0.0));
    c.on_receive_gossip(&spec, 1, fill(2.0), &pp(2, 10, 2)).map_err(e)?;
    c.on_receive_gossip(&spec, 2, fill(4.0), &pp(2, 10, 2)).map_err(e)?;
    ensure(c.params() == &fill(2.0), || format!("gossip merge gave {:?}", c.params()))?;

    let mut c = client(fill(0.0));
    for s in 1..=6 {
        c.on_receive_gossip(&spec, s, fill(1.0), &pp(20, 10, 2)).map_err(e)?;
    }
    ensure(c.buffer_len() == 6 && c.params() == &fill(0.0), || "gossip below threshold".into())?;

    let mut c = client(fill(0.0));
    for (s, l) in [(1, 0.5), (2, 2.1), (3, 1.0)] {
        c.on_receive_pens(&spec, s, probe_model(l, s as f64), &pp(20, 3, 1)).map_err(e)?;
    }
    ensure(c.selection_counts() == &BTreeMap::from([(1, 1)]), || "argmin selection".into())?;
    ensure(c.params().as_slice()[0] == 0.5, || "merge is not mean(own, best)".into())?;

    let mut c = client(fill(0.0));
    for s in [9, 4] {
        c.on_receive_pens(&spec, s, probe_model(0.8, s as f64), &pp(20, 2, 1)).map_err(e)?;
    }
    ensure(c.selection_counts() == &BTreeMap::from([(4, 1)]), || "tie not broken to sender 4".into())?;

    let mut c = client(fill(0.0));
    c.on_receive_pens(&spec, 5, probe_model(1.2, 0.0), &pp(20, 10, 2)).map_err(e)?;
    let saved = c.buffered_losses();
    ensure(
        saved.len() == 1 && (saved[0].1.unwrap() - 1.2).abs() < 1e-12 && c.selection_counts().is_empty(),
        || "pens below threshold".into(),
    )?;

    ensure(
        neighbors_from_counts(&BTreeMap::from([(1, 10), (2, 1), (3, 1)]), 4) == Ok(vec![1]),
        || "threshold example".into(),
    )?;
    ensure(
        neighbors_from_counts(&BTreeMap::from([(1, 3), (2, 3), (3, 3)]), 4) == Ok(vec![]),
        || "equal counts".into(),
    )?;

    let formula = expected_selection_count(400, 100).map_err(e)?;
    ensure((formula - 400.0 / 99.0).abs() < 1e-12, || format!("formula {formula}"))?;
    let mut rng = StreamRng::seed_from_u64(1);
    let trials = 1_000_000;
    let mut hits = 0u64;
    for _ in 0..trials {
        for _ in 0..200 {
            let a = rng.random_range(0..99u32);
            let mut b = rng.random_range(0..98u32);
            if b >= a {
                b += 1;
            }
            hits += u64::from(a == 0) + u64::from(b == 0);
        }
    }
    let empirical = hits as f64 / trials as f64;
    ensure((empirical - formula).abs() < 0.01 * formula, || format!("monte carlo {empirical} vs {formula}"))?;
    Ok(format!("scripted handlers exact; 400/99 = {formula:.4}, 10^6-trial mean {empirical:.4}"))
}

// ---------------------------------------------------------------- 5, 7, 8

fn config_from(file: &str, out: &Path, sets: &[String]) -> Result<ConfigFile, String> {
    let mut all = vec![format!("out_dir={:?}", out.display().to_string())];
    all.extend(sets.iter().cloned());
    ConfigFile::load(&workspace().join("configs").join(file), &all, None).map_err(|e| format!("{e:#}"))
}

fn run_regimes(file: &str, out: &Path, extra: &[String], regimes: &[Regime]) -> Result<BTreeMap<Regime, Vec<RunResult>>, String> {
    let base = config_from(file, out, extra)?;
    commands::prepare(&base).map_err(|e| format!("{e:#}"))?;
    let mut all = BTreeMap::new();
    for &regime in regimes {
        let mut sets = extra.to_vec();
        sets.push(format!("regime={regime}"));
        let cfg = config_from(file, out, &sets)?;
        let mut sink = Vec::new();
        let runs = commands::run(&cfg, &mut sink).map_err(|e| format!("{e:#}"))?;
        eprint!("{}", String::from_utf8_lossy(&sink));
        all.insert(regime, runs);
    }
    Ok(all)
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn neighbor_discovery(runs: &BTreeMap<Regime, Vec<RunResult>>) -> Check {
    let pens = &runs[&Regime::Pens];
    let mut ps = Vec::new();
    let mut rs = Vec::new();
    for r in pens {
        let pr = precision_recall(&r.neighbor_lists, &r.rotations).map_err(|e| e.to_string())?;
        ps.push(pr.precision.unwrap_or(0.0));
        rs.push(pr.recall);
    }
    let (p, r) = (mean(ps), mean(rs));
    let msg = format!("precision {p:.3} (>= 0.90), recall {r:.3} (>= 0.50) over {} seeds", pens.len());
    if p >= 0.90 && r >= 0.50 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// Block ratio of the count matrix summed over seeds, normalized by its maximum.
fn summed_ratio(runs: &[RunResult]) -> Result<f64, String> {
    let k = runs[0].counts.len();
    let mut sum = vec![vec![0u64; k]; k];
    for r in runs {
        for (srow, row) in sum.iter_mut().zip(&r.counts) {
            for (s, c) in srow.iter_mut().zip(row) {
                *s += c;
            }
        }
    }
    let max = sum.iter().flatten().copied().max().unwrap_or(0).max(1) as f64;
    let normalized: Vec<Vec<f64>> = sum.iter().map(|row| row.iter().map(|&c| c as f64 / max).collect()).collect();
    block_mass_ratio(&normalized, &runs[0].rotations).map_err(|e| e.to_string())
}

fn cross_mass(r: &RunResult) -> u64 {
    let mut s = 0;
    for (i, row) in r.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if r.rotations[i] != r.rotations[j] {
                s += c;
            }
        }
    }
    s
}

fn heatmap_structure(runs: &BTreeMap<Regime, Vec<RunResult>>) -> Check {
    let ratio = |reg| summed_ratio(&runs[&reg]);
    let oracle_cross: u64 = runs[&Regime::Oracle].iter().map(cross_mass).sum();
    let (pens, random) = (ratio(Regime::Pens)?, ratio(Regime::Random)?);
    let msg = format!("oracle cross mass {oracle_cross} (ratio unbounded), pens ratio {pens:.2} (> 5), random ratio {random:.3} (in [0.8, 1.25])");
    if oracle_cross == 0 && pens > 5.0 && (0.8..=1.25).contains(&random) {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn determinism(first: &Path, scratch: &Path, seeds: &[u64]) -> Check {
    run_regimes("synthetic_neighbors.json", scratch, &[], &[Regime::Pens])?;
    for &seed in seeds {
        let name = run_file_name(seed);
        let a = std::fs::read(first.join("pens").join(&name)).map_err(|e| e.to_string())?;
        let b = std::fs::read(scratch.join("pens").join(&name)).map_err(|e| e.to_string())?;
        ensure(a == b, || format!("{name} differs between repeats"))?;
    }
    Ok(format!("{} run files byte-identical across repeats", seeds.len()))
}

// ---------------------------------------------------------------- 6, 9

fn fashion_dir() -> Option<PathBuf> {
    let dir = std::env::var_os(DATA_DIR_ENV)
        .filter(|d| !d.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| workspace().join("data/fashion_mnist"));
    dir.join("train-images-idx3-ubyte").exists().then_some(dir)
}

fn mean_acc(runs: &BTreeMap<Regime, Vec<RunResult>>, r: Regime) -> f64 {
    mean(runs[&r].iter().map(RunResult::mean_accuracy))
}

fn ordinal(runs: &BTreeMap<Regime, Vec<RunResult>>) -> Check {
    let [l, r, p, o] = [Regime::Local, Regime::Random, Regime::Pens, Regime::Oracle].map(|g| mean_acc(runs, g));
    let msg = format!(
        "local {:.2} < random {:.2} < pens {:.2} (margin {:.2} pp >= 0.5), oracle {:.2} (>= pens - 1.0)",
        100.0 * l,
        100.0 * r,
        100.0 * p,
        100.0 * (p - r),
        100.0 * o
    );
    if l < r && r < p && p - r >= 0.005 && o >= p - 0.01 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn central_dominance(runs: &BTreeMap<Regime, Vec<RunResult>>) -> Check {
    let central = mean_acc(runs, Regime::Central);
    let best = [Regime::Local, Regime::Random, Regime::Pens, Regime::Oracle]
        .into_iter()
        .map(|g| (g, mean_acc(runs, g)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("four regimes");
    let msg = format!("central {:.2} vs best distributed {} {:.2}", 100.0 * central, best.0, 100.0 * best.1);
    if central >= best.1 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// ----------------------------------------------------------------

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Check) -> Check {
    let start = Instant::now();
    let out = f();
    let took = start.elapsed();
    let within = limit.is_none_or(|l| took <= l);
    match out {
        Ok(msg) if within => Ok(format!("{msg} [{:.1}s]", took.as_secs_f64())),
        Ok(msg) => Err(format!("{msg} [{:.1}s exceeds {:.0}s]", took.as_secs_f64(), limit.unwrap().as_secs_f64())),
        Err(msg) => Err(format!("{msg} [{:.1}s]", took.as_secs_f64())),
    }
}

fn main() {
    // libtest flags such as --nocapture or a name filter are accepted and ignored
    let mut results: Vec<(u32, &str, Check)> = Vec::new();
    let secs = Duration::from_secs;
    let mut line = |n: u32, name: &'static str, c: Check| {
        match &c {
            Ok(m) => println!("criterion {n} PASS  {name}: {m}"),
            Err(m) => println!("criterion {n} FAIL  {name}: {m}"),
        }
        results.push((n, name, c));
    };

    line(1, "gradient oracle", timed(Some(secs(60)), gradient_oracle));
    line(2, "algebraic suite", timed(Some(secs(10)), algebraic_suite));
    line(3, "format round-trips", timed(Some(secs(1)), format_round_trips));
    line(4, "protocol unit suite", timed(Some(secs(60)), protocol_suite));

    let synth_dir = tempfile::tempdir().expect("tempdir");
    let start = Instant::now();
    let synth = run_regimes(
        "synthetic_neighbors.json",
        synth_dir.path(),
        &[],
        &[Regime::Pens, Regime::Random, Regime::Oracle],
    );
    let synth_time = start.elapsed();
    match &synth {
        Ok(runs) => {
            let took = format!("[{:.1}s for pens, random and oracle]", synth_time.as_secs_f64());
            let check = match neighbor_discovery(runs) {
                Ok(m) if synth_time <= secs(600) => Ok(format!("{m} {took}")),
                Ok(m) => Err(format!("{m} {took} exceeds 600s")),
                Err(m) => Err(format!("{m} {took}")),
            };
            line(5, "neighbor discovery", check);
            line(7, "heatmap structure", heatmap_structure(runs));
            let repeat = tempfile::tempdir().expect("tempdir");
            let seeds: Vec<u64> = runs[&Regime::Pens].iter().map(|r| r.seed).collect();
            line(8, "determinism", determinism(synth_dir.path(), repeat.path(), &seeds));
        }
        Err(e) => {
            for (n, name) in [(5, "neighbor discovery"), (7, "heatmap structure"), (8, "determinism")] {
                line(n, name, Err(format!("synthetic runs failed: {e}")));
            }
        }
    }

    match fashion_dir() {
        Some(dir) => {
            let out = tempfile::tempdir().expect("tempdir");
            let start = Instant::now();
            let sets = [format!("data_dir={:?}", dir.display().to_string())];
            let runs = run_regimes("fashion_mnist_ordinal.json", out.path(), &sets, &Regime::ALL);
            let took = start.elapsed();
            match runs {
                Ok(runs) => {
                    let check = ordinal(&runs).map(|m| format!("{m} [{:.1}s]", took.as_secs_f64()));
                    let check = match check {
                        Ok(m) if took > secs(45 * 60) => Err(format!("{m} exceeds 2700s")),
                        other => other,
                    };
                    line(6, "ordinal ranking", check);
                    line(9, "central dominance", central_dominance(&runs));
                }
                Err(e) => {
                    line(6, "ordinal ranking", Err(e.clone()));
                    line(9, "central dominance", Err(e));
                }
            }
        }
        None => {
            let msg = format!(
                "Fashion-MNIST IDX files not found in ${DATA_DIR_ENV} or data/fashion_mnist; run scripts/fashion_mnist_to_idx.py"
            );
            line(6, "ordinal ranking", Err(msg.clone()));
            line(9, "central dominance", Err(msg));
        }
    }

    let failed: Vec<u32> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
