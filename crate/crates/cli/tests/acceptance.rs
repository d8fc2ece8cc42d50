//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! Reference values are computed here from first principles (lattice
//! densities, power iteration, pooled means, hand-built pulse trains)
//! rather than taken from the library under test.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use gsp_analysis::classify::per_class_recall;
use gsp_analysis::{
    contrast_curve, default_bins, extract_features, kfold_uar, uar, Bin, Dataset, FeatureExtractor, RatingTable,
    SvmSettings,
};
use gsp_core::log::encode_log;
use gsp_core::{
    replay, AudioBuffer, Emotion, ExperimentConfig, ExperimentState, LatentPoint, SliderGrid, StimulusKind,
};
use gsp_render::{BuiltinRenderer, MemoryStore, Renderer, StimulusCache};
use gsp_sim::oracle::agent_chain_kernel;
use gsp_sim::{
    default_targets, run_validation, simulate, AgentPolicy, EmotionTarget, RatingSettings, Scenario, TargetSet,
    Timing,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

const SENTENCE: &str = "The birch canoe slid on the smooth planks.";

// Gibbs sampler convergence

fn gibbs_stationary() -> Outcome {
    let started = Instant::now();
    let grid = SliderGrid::new(-0.24, 0.38, 8).map_err(|e| e.to_string())?;
    let n = 8;
    let (s0, s1, rho) = (0.15, 0.1, 0.7);
    let mu = [0.05, 0.12];
    let cov = [[s0 * s0, rho * s0 * s1], [rho * s0 * s1, s1 * s1]];
    let target = EmotionTarget {
        emotion: Emotion::Anger,
        mu: mu.to_vec(),
        sigma: 0.1,
        covariance: Some(cov.iter().map(|r| r.to_vec()).collect()),
    };
    let kernel = agent_chain_kernel(&target, &grid, &AgentPolicy::sampler(1.0)).map_err(|e| e.to_string())?;

    // the Gaussian restricted to the 8 x 8 lattice, dimension 0 fastest
    let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
    let prec = [[cov[1][1] / det, -cov[0][1] / det], [-cov[1][0] / det, cov[0][0] / det]];
    let step = (0.38 - -0.24) / (n - 1) as f64;
    let mut lattice: Vec<f64> = (0..n * n)
        .map(|s| {
            let x = [-0.24 + (s % n) as f64 * step - mu[0], -0.24 + (s / n) as f64 * step - mu[1]];
            let q = x[0] * (prec[0][0] * x[0] + prec[0][1] * x[1]) + x[1] * (prec[1][0] * x[0] + prec[1][1] * x[1]);
            (-0.5 * q).exp()
        })
        .collect();
    let z: f64 = lattice.iter().sum();
    lattice.iter_mut().for_each(|p| *p /= z);

    // left fixed point of the library kernel by plain power iteration
    let states = n * n;
    ensure!(kernel.nrows() == states, "kernel has {} states", kernel.nrows());
    let mut pi = vec![1.0 / states as f64; states];
    for _ in 0..100_000 {
        let next: Vec<f64> = (0..states).map(|j| (0..states).map(|i| pi[i] * kernel[(i, j)]).sum()).collect();
        let change: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        pi = next;
        if change < 1e-15 {
            break;
        }
    }
    let tv: f64 = pi.iter().zip(&lattice).map(|(a, b)| (a - b).abs()).sum::<f64>() / 2.0;
    let secs = started.elapsed().as_secs_f64();
    ensure!(tv < 1e-10, "TV {tv:e}");
    ensure!(secs < 5.0, "took {secs:.2} s");
    Ok(format!("TV {tv:.2e} in {secs:.2} s"))
}

// Mode recovery by maximizing agents

fn projected_index(grid: &SliderGrid, m: f64) -> usize {
    let n = grid.n_positions();
    let step = (grid.hi() - grid.lo()) / (n - 1) as f64;
    ((m - grid.lo()) / step).round().clamp(0.0, (n - 1) as f64) as usize
}

fn mode_recovery() -> Outcome {
    let started = Instant::now();
    let config = ExperimentConfig::default();
    let grid = config.slider_grid().map_err(|e| e.to_string())?;
    let targets = default_targets().diagonal();
    let cache = StimulusCache::new(Arc::new(BuiltinRenderer::default()), Arc::new(MemoryStore::new()));
    let (exp, stats) = simulate(config, &targets, &AgentPolicy::maximizer(), &Timing::default(), 1, Some(&cache))
        .map_err(|e| e.to_string())?;
    let state = exp.state();
    let (mut hits, mut total) = (0, 0);
    for chain in state.full_chains() {
        let mu = &targets.get(chain.spec.emotion).map_err(|e| e.to_string())?.mu;
        total += 1;
        let near = mu
            .iter()
            .enumerate()
            .all(|(d, &m)| chain.current_point.index(d).abs_diff(projected_index(&grid, m)) <= 1);
        if near {
            hits += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    let share = hits as f64 / total.max(1) as f64;
    ensure!(total == 45, "{total} full chains, expected 45");
    ensure!(share >= 0.95, "{hits}/{total} chains within one step on every dimension");
    ensure!(secs < 120.0, "took {secs:.1} s");
    Ok(format!("{hits}/{total} chains within one step on all dimensions, {} renders, {secs:.1} s", stats.renders))
}

// Rating contrast over iterations

fn pooled_contrast(state: &ExperimentState, pick: impl Fn(StimulusKind, Option<u32>) -> bool) -> f64 {
    let v = state.validation.as_ref().unwrap();
    let (mut si, mut ni, mut so, mut no) = (0.0, 0usize, 0.0, 0usize);
    for r in &v.ratings {
        let item = &v.items[r.item_id as usize];
        if !pick(item.kind, item.iteration) {
            continue;
        }
        if item.emotion == r.probed_emotion {
            si += r.rating as f64;
            ni += 1;
        } else {
            so += r.rating as f64;
            no += 1;
        }
    }
    si / ni as f64 - so / no as f64
}

fn contrast_trend() -> Outcome {
    let scenario = Scenario::default();
    let targets = scenario.target_set();
    let (mut exp, _) = simulate(
        ExperimentConfig::default(),
        &targets,
        &scenario.policy,
        &scenario.timing,
        scenario.seed,
        None,
    )
    .map_err(|e| e.to_string())?;
    run_validation(&mut exp, &targets, &scenario.rating, scenario.seed, None).map_err(|e| e.to_string())?;
    let state = exp.state();

    let bins: Vec<f64> = (0..5)
        .map(|b| {
            pooled_contrast(state, |k, it| {
                k == StimulusKind::Trajectory && it.is_some_and(|i| (4 * b + 1..=4 * b + 4).contains(&i))
            })
        })
        .collect();
    let transfer = pooled_contrast(state, |k, _| k == StimulusKind::Transfer);
    let random = pooled_contrast(state, |k, _| k == StimulusKind::Random);

    let v = state.validation.as_ref().unwrap();
    let table = RatingTable::from_records(&v.items, &v.ratings).map_err(|e| e.to_string())?;
    let curve = contrast_curve(&table, &default_bins(), 1).map_err(|e| e.to_string())?;
    let library: BTreeMap<String, f64> = curve.iter().filter_map(|b| Some((b.label.clone(), b.contrast?))).collect();
    let ours = ["1-4", "5-8", "9-12", "13-16", "17-20"]
        .iter()
        .zip(&bins)
        .map(|(l, c)| (l.to_string(), *c))
        .chain([("transfer".to_string(), transfer), ("random".to_string(), random)]);
    for (label, c) in ours {
        let lib = library.get(&label).copied().unwrap_or(f64::NAN);
        ensure!((lib - c).abs() < 1e-12, "bin {label}: library {lib} vs pooled {c}");
    }
    ensure!(
        curve.iter().any(|b| b.bin == Bin::Iterations { first: 0, last: 0 }),
        "no iteration-0 bin"
    );

    ensure!(bins.windows(2).all(|w| w[1] > w[0]), "not strictly increasing: {bins:?}");
    ensure!(bins[4] > 1.0, "final bin {:.3}", bins[4]);
    ensure!(transfer > 1.0, "transfer {transfer:.3}");
    ensure!(random.abs() <= 0.25, "random {random:.3}");
    let shown: Vec<String> = bins.iter().map(|c| format!("{c:.2}")).collect();
    Ok(format!("bins [{}], transfer {transfer:.2}, random {random:.2}", shown.join(", ")))
}

// Design and validation-set counts

fn counting() -> Outcome {
    let config = ExperimentConfig::default();
    let targets = default_targets();
    let policy = AgentPolicy::default();

    let (mut exp, _) =
        simulate(config.clone(), &targets, &policy, &Timing::default(), 1, None).map_err(|e| e.to_string())?;
    let mut cells: BTreeMap<(Emotion, String), usize> = BTreeMap::new();
    for c in &exp.state().chains {
        *cells.entry((c.spec.emotion, c.spec.sentence.clone())).or_default() += 1;
    }
    ensure!(exp.state().chains.len() == 45, "{} chains", exp.state().chains.len());
    ensure!(cells.len() == 9 && cells.values().all(|&n| n == 5), "cells {cells:?}");
    let full = exp.state().full_chains().count();
    run_validation(&mut exp, &targets, &RatingSettings::default(), 1, None).map_err(|e| e.to_string())?;
    let v = exp.state().validation.as_ref().unwrap();
    let count = |k| v.items.iter().filter(|i| i.kind == k).count();
    ensure!(count(StimulusKind::Transfer) == 4 * full, "transfer {} for {full} full chains", count(StimulusKind::Transfer));
    ensure!(count(StimulusKind::Random) == 18, "random {}", count(StimulusKind::Random));

    let slow = Timing {
        arrival_interval_secs: 43.2,
        ..Timing::default()
    };
    let (mut exp, stats) = simulate(config, &targets, &policy, &slow, 1, None).map_err(|e| e.to_string())?;
    run_validation(&mut exp, &targets, &RatingSettings::default(), 1, None).map_err(|e| e.to_string())?;
    let v = exp.state().validation.as_ref().unwrap();
    let transfer = v.items.iter().filter(|i| i.kind == StimulusKind::Transfer).count();
    ensure!(stats.full_chains == 39, "{} full chains at the slower arrival rate", stats.full_chains);
    ensure!(transfer == 156, "{transfer} transfer items at the slower arrival rate");
    Ok(format!("45 chains as 3x3x5, {full} full -> {} transfer, 18 random; 39 full -> 156 transfer", 4 * full))
}

// Emotion classifier

fn clusters(n_per_class: usize, spacing: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for i in 0..n_per_class * 3 {
        let class = i % 3;
        x.push((0..3).map(|j| noise.sample(&mut rng) + if j == class { spacing } else { 0.0 }).collect());
        y.push(class);
    }
    let names = (0..3).map(|j| format!("f{j}")).collect();
    let classes = ["anger", "happiness", "sadness"].map(String::from).to_vec();
    Dataset::new(names, classes, x, y).unwrap()
}

fn classifier() -> Outcome {
    let settings = SvmSettings::default();
    let separable = kfold_uar(&clusters(20, 10.0, 1), &settings).map_err(|e| e.to_string())?;
    ensure!(separable.uar == 1.0, "separable UAR {}", separable.uar);

    let mut shuffled = clusters(100, 10.0, 2);
    shuffled.y.shuffle(&mut ChaCha8Rng::seed_from_u64(99));
    let report = kfold_uar(&shuffled, &settings).map_err(|e| e.to_string())?;
    ensure!((report.uar - 1.0 / 3.0).abs() <= 0.07, "shuffled UAR {}", report.uar);

    // UAR is the unweighted mean of per-class recalls
    let truth = &shuffled.y;
    let pred = &report.predictions;
    let recalls: Vec<f64> = (0..3)
        .map(|c| {
            let of_class: Vec<usize> = (0..truth.len()).filter(|&i| truth[i] == c).collect();
            of_class.iter().filter(|&&i| pred[i] == c).count() as f64 / of_class.len() as f64
        })
        .collect();
    let mean = recalls.iter().sum::<f64>() / 3.0;
    ensure!(report.uar == mean, "UAR {} vs mean recall {mean}", report.uar);
    ensure!(uar(truth, pred) == mean, "uar() {} vs {mean}", uar(truth, pred));
    let lib: Vec<f64> = per_class_recall(truth, pred).into_iter().flatten().collect();
    ensure!(lib == recalls, "recalls {lib:?} vs {recalls:?}");
    Ok(format!("separable 1.000, shuffled {:.3}, identities exact", report.uar))
}

// Acoustic features

const SR: u32 = 22_050;

fn pulse_train(secs: f64, f0: impl Fn(f64) -> f64) -> AudioBuffer {
    let n = (secs * SR as f64) as usize;
    let mut phase = 0.0;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let f = f0(i as f64 / SR as f64);
        let harmonics = (4000.0 / f).floor() as usize;
        let s: f64 = (1..=harmonics).map(|h| (h as f64 * phase).cos()).sum();
        out.push((0.5 * s / harmonics as f64) as f32);
        phase += 2.0 * PI * f / SR as f64;
    }
    AudioBuffer::new(out, SR).unwrap()
}

fn features() -> Outcome {
    let steady = extract_features(&pulse_train(1.0, |_| 200.0)).map_err(|e| e.to_string())?;
    let f0 = steady.f0_mean.ok_or("no f0 on a steady pulse train")?;
    let jitter = steady.jitter_ddp.ok_or("no jitter on a steady pulse train")?;
    ensure!((f0 - 200.0).abs() <= 2.0, "f0 {f0}");
    ensure!(jitter < 0.005, "jitter {jitter}");

    let glide = extract_features(&pulse_train(1.0, |t| 100.0 + 100.0 * t)).map_err(|e| e.to_string())?;
    let slope = glide.f0_slope.ok_or("no slope on a glide")?;
    ensure!((slope - 12.0).abs() <= 1.0, "slope {slope}");

    // |(12-10) - (10-12)| / mean(10, 12, 10) = 4 / (32/3)
    let periods = [0.010, 0.012, 0.010];
    let ddp = gsp_analysis::features::jitter_ddp(&periods).ok_or("no ddp for three periods")?;
    ensure!((ddp - 0.375).abs() <= 1e-12, "ddp {ddp}");
    let second: Vec<f64> = periods.windows(3).map(|w| ((w[2] - w[1]) - (w[1] - w[0])).abs()).collect();
    let by_hand = (second.iter().sum::<f64>() / second.len() as f64) / (periods.iter().sum::<f64>() / 3.0);
    ensure!((by_hand - 0.375).abs() <= 1e-12, "hand-computed ddp {by_hand}");
    Ok(format!("f0 {f0:.2} Hz, jitter {jitter:.5}, slope {slope:.2} st/s, ddp {ddp}"))
}

// Determinism and replay

fn determinism() -> Outcome {
    let scenario = Scenario::default();
    let targets: TargetSet = scenario.target_set();
    let run = || -> Result<_, String> {
        let (mut exp, _) = simulate(
            ExperimentConfig::default(),
            &targets,
            &scenario.policy,
            &scenario.timing,
            scenario.seed,
            None,
        )
        .map_err(|e| e.to_string())?;
        run_validation(&mut exp, &targets, &scenario.rating, scenario.seed, None).map_err(|e| e.to_string())?;
        Ok(exp)
    };
    let a = run()?;
    let b = run()?;
    let bytes = encode_log(a.events()).map_err(|e| e.to_string())?;
    ensure!(bytes == encode_log(b.events()).map_err(|e| e.to_string())?, "logs differ between runs");

    let events = a.events();
    let mut state = replay(&events[..1]).map_err(|e| e.to_string())?;
    state.check_invariants().map_err(|e| format!("prefix 1: {e}"))?;
    for (k, e) in events.iter().enumerate().skip(1) {
        state.apply(e).map_err(|err| format!("event {}: {err}", e.seq))?;
        state.check_invariants().map_err(|err| format!("prefix {}: {err}", k + 1))?;
    }
    ensure!(&state == a.state(), "incremental fold differs from the live state");
    let full = replay(events).map_err(|e| e.to_string())?;
    ensure!(&full == a.state(), "replay differs from the live state");
    // a few prefixes rebuilt from scratch agree with the fold
    for cut in [2, events.len() / 3, events.len() / 2, events.len() - 1] {
        let mut fold = replay(&events[..1]).unwrap();
        for e in &events[1..cut] {
            fold.apply(e).unwrap();
        }
        ensure!(replay(&events[..cut]).map_err(|e| e.to_string())? == fold, "prefix {cut} differs");
    }
    Ok(format!("{} events, {} bytes, all prefixes valid", events.len(), bytes.len()))
}

// Builtin renderer

fn renderer() -> Outcome {
    let r = BuiltinRenderer::default();
    let config = ExperimentConfig::default();
    let grid = config.slider_grid().map_err(|e| e.to_string())?;
    let d = config.dimensions;

    let w: Vec<f64> = (0..d).map(|k| grid.position((k * 3) % grid.n_positions())).collect();
    let a = r.render(&w, SENTENCE).map_err(|e| e.to_string())?.audio;
    let b = r.render(&w, SENTENCE).map_err(|e| e.to_string())?.audio;
    let bits = |x: &AudioBuffer| x.samples.iter().map(|s| s.to_bits()).collect::<Vec<_>>();
    ensure!(bits(&a) == bits(&b), "re-render differs");

    let mut max_peak: f32 = 0.0;
    for dim in 0..d {
        for k in [0, grid.n_positions() - 1] {
            let p = LatentPoint::zeros(d, &grid).with_index(dim, k);
            let audio = r.render_point(&p, &grid, SENTENCE).map_err(|e| e.to_string())?;
            ensure!(audio.peak() < 1.0, "dim {dim} index {k}: peak {}", audio.peak());
            max_peak = max_peak.max(audio.peak());
        }
    }

    let pitch = r.mapping().pitch_dimension();
    let extractor = FeatureExtractor::new();
    let mut f0s = Vec::new();
    for k in 0..grid.n_positions() {
        let p = LatentPoint::zeros(d, &grid).with_index(pitch, k);
        let audio = r.render_point(&p, &grid, SENTENCE).map_err(|e| e.to_string())?;
        f0s.push(extractor.extract(&audio).map_err(|e| e.to_string())?.f0_mean.ok_or("unvoiced render")?);
    }
    ensure!(f0s.len() == 32, "{} grid values", f0s.len());
    if let Some(k) = f0s.windows(2).position(|w| w[1] <= w[0]) {
        return Err(format!("F0 not increasing at index {}: {:.2} -> {:.2}", k + 1, f0s[k], f0s[k + 1]));
    }
    Ok(format!(
        "bit-identical, max corner peak {max_peak:.3}, F0 {:.1}..{:.1} Hz over 32 steps",
        f0s[0], f0s[31]
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("gibbs-stationary", gibbs_stationary),
        ("mode-recovery", mode_recovery),
        ("contrast-trend", contrast_trend),
        ("design-counts", counting),
        ("classifier-uar", classifier),
        ("acoustic-features", features),
        ("determinism-replay", determinism),
        ("renderer-invariants", renderer),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(details) => println!("[PASS] {name}: {details}"),
            Err(details) => {
                failed += 1;
                println!("[FAIL] {name}: {details}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
