//! End-to-end acceptance checks. Runs without the libtest harness and prints
//! one PASS/FAIL line per criterion; exits nonzero if any criterion fails.

use std::path::Path;
use std::time::Instant;

use dpsnet::blocks::{correlation_responses, reference_grid, CorrelationMap, DpsNet, DpsTransformer, NetConfig};
use dpsnet::data::{generate_dataset, write_dataset};
use dpsnet::gradcheck::{random_input, suite};
use dpsnet::metrics::{self, MetricsReport};
use dpsnet::nn::{Ctx, ParamStore};
use dpsnet::train::{evaluate, train, Checkpoint, TrainConfig, CHECKPOINT_FILE};
use dpsnet::{rng, Tape, Tensor};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn lib<T>(r: dpsnet::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

// ---- 1: gradient suite ----

const GRADCHECK_SEEDS: u64 = 5;
const GRADCHECK_BUDGET_SECS: f64 = 300.0;

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut checks = 0;
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    for seed in 0..GRADCHECK_SEEDS {
        for report in lib(suite::run(seed))? {
            checks += 1;
            worst = worst.max(report.max_rel_error);
            if report.tolerance != 1e-4 || !report.passed() {
                failures.push(format!("seed {seed}: {report}"));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(failures.is_empty(), || failures.join("; "))?;
    ensure(secs < GRADCHECK_BUDGET_SECS, || format!("took {secs:.0}s"))?;
    Ok(format!("{checks} checks over {GRADCHECK_SEEDS} seeds, max rel. error {worst:.1e}, {secs:.1}s"))
}

// ---- 2: shapes and contracts ----

fn transformer_contract(name: &str, cfg: &NetConfig, spatial: usize, seed: u64) -> Result<(), String> {
    let c = cfg.channels;
    let (np, nr) = (cfg.patch_grid, cfg.ref_grid);
    let mut store = ParamStore::new();
    let dps = DpsTransformer::new(&mut store, &mut rng::seeded(seed), "dps", cfg);
    // random offset weights so the bound is exercised away from zero
    let w = store.get_mut(dps.local.conv2.weight);
    *w = rng::uniform(&w.shape().to_vec(), -2.0, 2.0, &mut rng::seeded(seed + 1));
    let tape = Tape::new();
    let ctx = Ctx::eval(&tape, &store);
    let x = random_input(&[c, spatial, spatial], &mut rng::seeded(seed + 2));
    let out = lib(dps.forward(&ctx, tape.constant(x)))?;
    let shape = |v| tape.shape(v);
    ensure(shape(out.global) == [c, c], || format!("{name}: T_g {:?}", shape(out.global)))?;
    ensure(shape(out.local.templates) == [c, np * np, nr * nr], || {
        format!("{name}: T_l {:?}", shape(out.local.templates))
    })?;
    ensure(shape(out.aggregator.aggregated) == [c, c], || format!("{name}: T_a {:?}", shape(out.aggregator.aggregated)))?;
    ensure(shape(out.output) == [c, spatial, spatial], || format!("{name}: output {:?}", shape(out.output)))?;
    let offsets = tape.to_tensor(out.local.offsets);
    let s = cfg.offset_scale;
    ensure(offsets.data().iter().all(|v| v.abs() < s), || format!("{name}: offset outside (-{s}, {s})"))?;
    ensure(offsets.data().iter().any(|&v| v != 0.0), || format!("{name}: offsets all zero"))?;
    Ok(())
}

fn shape_contracts() -> Outcome {
    let paper = NetConfig::default();
    let desk = NetConfig::desk();
    let toy = NetConfig {
        channels: 8,
        patch_grid: 2,
        ref_grid: 4,
        heads: 2,
        offset_scale: 0.5,
        offset_hidden: 4,
        ..NetConfig::desk()
    };
    ensure(paper.patch_grid == 12 && paper.ref_grid == 3, || "paper defaults changed".into())?;
    // each transformer runs on its configuration's stride-32 map, plus the desk stride-4 map
    transformer_contract("paper", &paper, paper.stage_size(3).0, 1)?;
    transformer_contract("desk", &desk, desk.stage_size(3).0, 2)?;
    transformer_contract("desk/stride4", &desk, desk.stage_size(0).0, 3)?;
    transformer_contract("toy", &toy, 16, 4)?;

    let (net, params) = lib(DpsNet::new(desk.clone(), 0))?;
    let image = rng::uniform(&[3, 96, 96], 0.0, 1.0, &mut rng::seeded(5));
    let (mask, boundary) = lib(net.predict(&params, &image))?;
    ensure(mask.shape() == [1, 96, 96], || format!("mask {:?}", mask.shape()))?;
    let boundary = boundary.ok_or("missing boundary")?;
    ensure(boundary.shape() == [1, 24, 24], || format!("boundary {:?}", boundary.shape()))?;
    Ok("paper (C=64, Np=12, Nr=3), desk (C=32, Np=3, Nr=3) and toy (C=8, Np=2, Nr=4) contracts hold".into())
}

// ---- 3: sampling oracle ----

/// Bilinear read at `(y, x)` in pixel-center coordinates, clamped to the border.
fn bilinear_oracle(x: &Tensor, c: usize, y: f64, xx: f64) -> f64 {
    let (h, w) = (x.shape()[1], x.shape()[2]);
    let y = y.clamp(0.0, (h - 1) as f64);
    let xx = xx.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, xx.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (y - y0 as f64, xx - x0 as f64);
    x.get(&[c, y0, x0]) * (1.0 - fy) * (1.0 - fx)
        + x.get(&[c, y0, x1]) * (1.0 - fy) * fx
        + x.get(&[c, y1, x0]) * fy * (1.0 - fx)
        + x.get(&[c, y1, x1]) * fy * fx
}

fn local_templates(cfg: &NetConfig, x: &Tensor) -> Result<Tensor, String> {
    let mut store = ParamStore::new();
    let dps = DpsTransformer::new(&mut store, &mut rng::seeded(7), "dps", cfg);
    // zero the whole offset encoder output layer
    let conv2 = &dps.local.conv2;
    for id in std::iter::once(conv2.weight).chain(conv2.bias) {
        let t = store.get_mut(id);
        *t = Tensor::zeros(t.shape());
    }
    let tape = Tape::new();
    let out = lib(dps.local.forward(&Ctx::eval(&tape, &store), tape.constant(x.clone())))?;
    Ok(tape.to_tensor(out.templates))
}

fn sampling_oracle() -> Outcome {
    // general grid: 15x15 map, 3x3 patches of 5x5, 2x2 points at fractional positions
    let cfg = NetConfig {
        channels: 4,
        patch_grid: 3,
        ref_grid: 2,
        heads: 2,
        offset_hidden: 4,
        ..NetConfig::desk()
    };
    let x = random_input(&[4, 15, 15], &mut rng::seeded(8));
    let templates = local_templates(&cfg, &x)?;
    let grid = reference_grid(3, 2, 15, 15);
    let mut worst: f64 = 0.0;
    let mut fractional = false;
    for c in 0..4 {
        for k in 0..36 {
            let (y, xx) = (grid.get(&[k, 0]), grid.get(&[k, 1]));
            fractional |= y.fract() != 0.0;
            let got = templates.get(&[c, k / 4, k % 4]);
            worst = worst.max((got - bilinear_oracle(&x, c, y, xx)).abs());
        }
    }
    ensure(fractional, || "grid never falls between pixels".into())?;
    ensure(worst <= 1e-12, || format!("uniform grid error {worst:.2e}"))?;

    // lattice-aligned: 18x18 map, 2x2 patches of 9x9, 3x3 points 3 pixels apart
    let cfg = NetConfig {
        ref_grid: 3,
        patch_grid: 2,
        ..cfg
    };
    let x = random_input(&[4, 18, 18], &mut rng::seeded(9));
    let templates = local_templates(&cfg, &x)?;
    for c in 0..4 {
        for py in 0..2 {
            for px in 0..2 {
                for a in 0..3 {
                    for b in 0..3 {
                        let (y, xx) = (py * 9 + 1 + 3 * a, px * 9 + 1 + 3 * b);
                        let got = templates.get(&[c, py * 2 + px, a * 3 + b]);
                        ensure(got == x.get(&[c, y, xx]), || format!("aligned read ({c},{y},{xx}) = {got}"))?;
                    }
                }
            }
        }
    }
    Ok(format!("uniform grid max error {worst:.1e}; lattice-aligned reads exact"))
}

// ---- 4: correlation identity ----

fn correlation_identity() -> Outcome {
    for (i, &(c, h, w)) in [(6, 7, 5), (32, 24, 24), (8, 1, 1)].iter().enumerate() {
        let x = random_input(&[c, h, w], &mut rng::seeded(20 + i as u64));
        let tape = Tape::new();
        let direct = lib(correlation_responses(&tape, tape.constant(Tensor::eye(c)), tape.constant(x.clone())))?;
        ensure(tape.to_tensor(direct) == x, || format!("C={c} {h}x{w}: responses differ"))?;

        let mut store = ParamStore::new();
        let corr = CorrelationMap::new(&mut store, &mut rng::seeded(1), "corr", c);
        let ctx = Ctx::eval(&tape, &store);
        let (_, branch) = lib(corr.forward(&ctx, tape.constant(Tensor::eye(c)), tape.constant(x.clone())))?;
        ensure(tape.to_tensor(branch) == x, || format!("C={c}: module branch differs"))?;
    }
    Ok("identity templates reproduce the input bit-exactly".into())
}

// ---- 5: metric sanity ----

fn metric_sanity() -> Outcome {
    let gt = Tensor::from_fn(&[16, 16], |i| if (4..10).contains(&i[0]) && (3..12).contains(&i[1]) { 1.0 } else { 0.0 });
    let r = lib(metrics::evaluate(&gt, &gt))?;
    let near = |a: f64, b: f64, tol: f64| (a - b).abs() <= tol;
    ensure(
        r.mae == 0.0 && near(r.s_measure, 1.0, 1e-6) && near(r.e_measure, 1.0, 1e-6) && near(r.weighted_f, 1.0, 1e-6),
        || format!("perfect: {r}"),
    )?;
    let inverted = lib(metrics::evaluate(&gt.map(|v| 1.0 - v), &gt))?;
    ensure(inverted.mae == 1.0, || format!("inverted: {inverted}"))?;

    // 8x8: top half foreground, constant 0.5 prediction; frozen reference values
    let gt = Tensor::from_fn(&[8, 8], |i| if i[0] < 4 { 1.0 } else { 0.0 });
    let g = lib(metrics::evaluate(&Tensor::full(&[8, 8], 0.5), &gt))?;
    let golden = [0.5, 0.5874999999999999, 0.25, 0.5884696305565973];
    let got = [g.mae, g.s_measure, g.e_measure, g.weighted_f];
    ensure(got.iter().zip(&golden).all(|(a, b)| near(*a, *b, 1e-9)), || format!("golden 8x8: {g}"))?;
    Ok(format!("perfect {r}; inverted MAE 1; golden 8x8 matches"))
}

// ---- 6: overfit ----

const OVERFIT_SAMPLES: usize = 16;
const OVERFIT_EPOCHS: usize = 375;
const OVERFIT_LR: f64 = 2e-4;

fn overfit_config(seed: u64, difficulty: f64, epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        lr_start: OVERFIT_LR,
        seed,
        data_seed: seed,
        difficulty,
        net: NetConfig::desk(),
        ..TrainConfig::default()
    }
}

fn overfit(dir: &Path) -> Outcome {
    let config = overfit_config(0, 0.6, OVERFIT_EPOCHS);
    let steps = config.epochs * config.steps_per_epoch(OVERFIT_SAMPLES);
    ensure(steps <= 1500, || format!("{steps} steps"))?;
    let data = lib(generate_dataset(config.data_seed, OVERFIT_SAMPLES, config.net.input_size, config.difficulty))?;
    let start = Instant::now();
    let outcome = lib(train(&config, &data, Some(dir)))?;
    let secs = start.elapsed().as_secs_f64();

    // evaluate through the saved checkpoint
    let ck = lib(Checkpoint::load(dir.join(CHECKPOINT_FILE)))?;
    let (net, params) = lib(ck.network())?;
    let mean = MetricsReport::mean(&lib(evaluate(&net, &params, &data))?).ok_or("no reports")?;

    let losses: Vec<f64> = outcome.epochs.iter().take(10).map(|e| e.mean.total).collect();
    let decreasing = losses.windows(2).all(|w| w[1] < w[0]);
    let summary = format!(
        "{steps} steps in {secs:.0}s; {mean}; first epochs {:?}",
        losses.iter().map(|l| (l * 1e4).round() / 1e4).collect::<Vec<_>>()
    );
    ensure(decreasing && losses.len() == 10, || format!("epoch losses not strictly decreasing: {summary}"))?;
    ensure(mean.weighted_f >= 0.85 && mean.mae <= 0.05, || format!("targets missed: {summary}"))?;
    Ok(summary)
}

// ---- 7: directional ablation ----

const ABLATION_SEEDS: u64 = 3;
const ABLATION_EPOCHS: usize = 100;

fn ablation() -> Outcome {
    let mut finals = [0.0f64; 2];
    let mut lines = Vec::new();
    for seed in 0..ABLATION_SEEDS {
        let base = overfit_config(seed, 0.8, ABLATION_EPOCHS);
        let data = lib(generate_dataset(base.data_seed, OVERFIT_SAMPLES, base.net.input_size, base.difficulty))?;
        for (slot, dps) in [(0, true), (1, false)] {
            let mut config = base.clone();
            config.net.ablation.dps = dps;
            let last = lib(train(&config, &data, None))?.epochs.last().ok_or("no epochs")?.mean.total;
            finals[slot] += last / ABLATION_SEEDS as f64;
            lines.push(format!("{last:.4}"));
        }
    }
    let summary = format!(
        "mean final loss with DPS {:.4}, bypassed {:.4} (per seed on/off: {})",
        finals[0],
        finals[1],
        lines.join(" ")
    );
    ensure(finals[0] < finals[1], || summary.clone())?;
    Ok(summary)
}

// ---- 8: determinism and persistence ----

fn files_equal(a: &Path, b: &Path) -> Result<bool, String> {
    let read = |p: &Path| std::fs::read(p).map_err(|e| format!("{}: {e}", p.display()));
    Ok(read(a)? == read(b)?)
}

fn determinism(overfit_dir: &Path) -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = overfit_config(11, 0.5, 2);
    let data = lib(generate_dataset(config.data_seed, 8, config.net.input_size, config.difficulty))?;
    let dirs = ["a", "b"].map(|n| tmp.path().join(n));
    // different worker counts must not change the result
    for (dir, threads) in dirs.iter().zip([1, 3]) {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| e.to_string())?;
        pool.install(|| lib(train(&config, &data, Some(dir))))?;
    }
    let [a, b] = dirs.map(|d| d.join(CHECKPOINT_FILE));
    ensure(files_equal(&a, &b)?, || "checkpoints from identical runs differ".into())?;

    // save -> load -> save, for a fresh and for the trained overfit checkpoint
    for path in [a.clone(), overfit_dir.join(CHECKPOINT_FILE)] {
        let ck = lib(Checkpoint::load(&path))?;
        let again = tmp.path().join("again.bin");
        lib(ck.save(&again))?;
        ensure(files_equal(&path, &again)?, || format!("{} does not round-trip", path.display()))?;
        let (_, params) = lib(ck.network())?;
        ensure(params.tensors().iter().zip(&ck.params).all(|(t, (_, p))| t == p), || "reload changed weights".into())?;
    }

    let sets = ["d1", "d2"].map(|n| tmp.path().join(n));
    for dir in &sets {
        lib(write_dataset(dir, &lib(generate_dataset(42, 6, (64, 96), 0.7))?))?;
    }
    let mut files = 0;
    for sub in ["images", "masks", "boundaries"] {
        for entry in std::fs::read_dir(sets[0].join(sub)).map_err(|e| e.to_string())? {
            let name = entry.map_err(|e| e.to_string())?.file_name();
            let (p, q) = (sets[0].join(sub).join(&name), sets[1].join(sub).join(&name));
            ensure(files_equal(&p, &q)?, || format!("{} differs", p.display()))?;
            files += 1;
        }
    }
    ensure(files == 18, || format!("{files} dataset files"))?;
    Ok(format!("checkpoints identical across 1 and 3 workers; round trips exact; {files} dataset files identical"))
}

fn main() {
    let overfit_dir = tempfile::tempdir().expect("temp dir");
    let criteria: Vec<(&str, Box<dyn FnOnce() -> Outcome + '_>)> = vec![
        ("gradient suite", Box::new(gradient_suite)),
        ("shape contracts", Box::new(shape_contracts)),
        ("sampling oracle", Box::new(sampling_oracle)),
        ("correlation identity", Box::new(correlation_identity)),
        ("metric sanity", Box::new(metric_sanity)),
        ("overfit", Box::new(|| overfit(overfit_dir.path()))),
        ("directional ablation", Box::new(ablation)),
        ("determinism and persistence", Box::new(|| determinism(overfit_dir.path()))),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let result = run();
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {} {name} ({secs:.1}s): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {} {name} ({secs:.1}s): {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
