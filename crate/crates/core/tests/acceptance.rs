//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits non-zero if any criterion fails.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use eegsynth::cvae::diagnostics::{gradient_check_suite, SuiteOptions};
use eegsynth::cvae::{
    condition_tensor, count_parameters, kl_term, load_checkpoint, sample_noise, save_checkpoint, train, Cvae,
    CvaeCheckpoint, CvaeConfig, TrainConfig, REFERENCE_PARAMETER_COUNT,
};
use eegsynth::data::{
    extract_resting_epochs, load_store, save_store, split_train_val, ClassLabel, Epoch, EpochKind, EpochStore,
    Recording, SENSORIMOTOR_CHANNELS,
};
use eegsynth::dsp::{
    average_tfr, bandpower_change, design_butterworth_bandpass, dpss, epoch_tfr, erd_ers, filter_causal, Multitaper,
    SpectrogramParams, TfrMap, ALPHA_HZ, BASELINE_S, BETA_HZ, POST_CUE_INTERVAL_S,
};
use eegsynth::generate::{generate_all_conditions, ArtificialEpochSet};
use eegsynth::nn::{Mode, Tensor};
use eegsynth::synthbench::{evaluate_separability, make_synthetic_dataset, Rhythm, SynthDataset, SynthSpec};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn channel_names() -> Vec<String> {
    SENSORIMOTOR_CHANNELS.iter().map(|s| s.to_string()).collect()
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let suite = gradient_check_suite(&SuiteOptions::default()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    for e in &suite {
        println!("    {:<55} checked {:>5}  max rel err {:.2e}", e.name, e.report.checked, e.report.max_rel_error);
        worst = worst.max(e.report.max_rel_error);
        if !e.report.passed(1e-4) || e.report.checked == 0 {
            failures.push(e.name.clone());
        }
    }
    check(
        failures.is_empty() && elapsed < Duration::from_secs(120),
        format!(
            "{} checks, worst relative error {worst:.2e} (< 1e-4), {:.1} s (< 120 s){}",
            suite.len(),
            elapsed.as_secs_f64(),
            if failures.is_empty() { String::new() } else { format!("; failed: {failures:?}") }
        ),
    )
}

fn shapes_and_parameters() -> Outcome {
    let mut model = Cvae::<f32>::new(CvaeConfig::default(), 0).map_err(|e| e.to_string())?;
    let trace = model.trace_shapes().map_err(|e| e.to_string())?;
    // the table's output dimensions, (maps, height, width)
    let table: [(&str, [usize; 3]); 10] = [
        ("input", [1, 15, 400]),
        ("enc.elu_temporal", [5, 15, 400]),
        ("enc.elu_spatial", [5, 1, 400]),
        ("enc.flatten", [1000, 1, 1]),
        ("enc.mu", [10, 1, 1]),
        ("enc.log_var", [10, 1, 1]),
        ("dec.concat", [13, 1, 1]),
        ("dec.dense", [1000, 1, 1]),
        ("dec.upsample", [5, 1, 400]),
        ("dec.elu_spatial", [5, 15, 400]),
    ];
    let mut mismatches = Vec::new();
    for (name, want) in table {
        match trace.iter().find(|(n, _)| n == name) {
            Some((_, got)) if *got == want => {}
            other => mismatches.push(format!("{name}: {other:?} != {want:?}")),
        }
    }
    let last = trace.last().map(|(_, s)| *s);
    if last != Some([1, 15, 400]) {
        mismatches.push(format!("output: {last:?} != [1, 15, 400]"));
    }
    let count = count_parameters(&CvaeConfig::default()).map_err(|e| e.to_string())?;
    for line in count.to_string().lines() {
        println!("    {line}");
    }
    let within = count.relative_delta.abs() < 0.05;
    check(
        mismatches.is_empty() && within && count.variants.len() > 1,
        format!(
            "all {} table dimensions match{}; {} trainable vs {REFERENCE_PARAMETER_COUNT} ({:+.2}%, limit 5%)",
            table.len() + 1,
            if mismatches.is_empty() { String::new() } else { format!(" EXCEPT {mismatches:?}") },
            count.trainable,
            100.0 * count.relative_delta
        ),
    )
}

/// Monte Carlo KL(q || N(0, I)) with `n` draws from q.
fn kl_monte_carlo(mu: &[f64], lv: &[f64], n: usize, rng: &mut ChaCha8Rng) -> f64 {
    let mut acc = 0.0;
    for _ in 0..n {
        let mut log_ratio = 0.0;
        for (&m, &l) in mu.iter().zip(lv) {
            let e: f64 = rng.sample(StandardNormal);
            let z = m + (0.5 * l).exp() * e;
            // log q(z) - log p(z); the 2π terms cancel
            log_ratio += -0.5 * e * e - 0.5 * l + 0.5 * z * z;
        }
        acc += log_ratio;
    }
    acc / n as f64
}

fn loss_terms() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let d = 10;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let mu: Vec<f64> = (0..d).map(|_| rng.random_range(-0.5..0.5)).collect();
        let lv: Vec<f64> = (0..d).map(|_| rng.random_range(-0.5..0.5)).collect();
        let closed = kl_term(
            &Tensor::from_vec([1, d, 1, 1], mu.clone()).unwrap(),
            &Tensor::from_vec([1, d, 1, 1], lv.clone()).unwrap(),
        )
        .map_err(|e| e.to_string())?;
        worst = worst.max((closed - kl_monte_carlo(&mu, &lv, 1_000_000, &mut rng)).abs());
    }
    let zeros = Tensor::<f64>::zeros([4, d, 1, 1]);
    let kl0 = kl_term(&zeros, &zeros).map_err(|e| e.to_string())?;

    let mut model = Cvae::<f64>::new(CvaeConfig::default(), 4).map_err(|e| e.to_string())?;
    let mut exact = true;
    for seed in 0..5u64 {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let x = sample_noise::<f64, _>(&mut r, 2 * 6000, 1).reshape([2, 1, 15, 400]).unwrap();
        let eps = sample_noise::<f64, _>(&mut r, 2, d);
        let c = condition_tensor(&[ClassLabel::Right.condition(), ClassLabel::Feet.condition()], true).unwrap();
        let p = model.forward_loss(&x, &c, &eps, Mode::Train, false).map_err(|e| e.to_string())?.loss;
        exact &= p.total == p.recon + p.kl;
    }
    check(
        worst < 0.01 && kl0 == 0.0 && exact,
        format!("max |closed form - MC(1e6)| = {worst:.4} (< 0.01) over 20 draws; kl(0,0) = {kl0}; total == recon + kl: {exact}"),
    )
}

fn filter() -> Outcome {
    let f = design_butterworth_bandpass(3, 4.0, 30.0, 160.0).map_err(|e| e.to_string())?;
    let lo = f.magnitude_db(4.0);
    let hi = f.magnitude_db(30.0);
    let nulls = (f.magnitude(0.0), f.magnitude(80.0));
    let (a1, a60) = (f.magnitude_db(1.0), f.magnitude_db(60.0));
    // dense oracle: the DFT of the impulse response against the design's
    // analytic response on a 0.01 Hz grid
    let n = 1 << 16;
    let mut impulse = vec![0.0; n];
    impulse[0] = 1.0;
    let h = filter_causal(&f, &impulse);
    let mut dense_err: f64 = 0.0;
    let mut passband_ok = true;
    for k in 0..=8000 {
        let hz = k as f64 * 0.01;
        let w = 2.0 * PI * hz / 160.0;
        let (mut re, mut im) = (0.0, 0.0);
        for (t, &v) in h.iter().enumerate().take(4096) {
            re += v * (w * t as f64).cos();
            im -= v * (w * t as f64).sin();
        }
        let r = f.response(hz);
        dense_err = dense_err.max(((re - r.re).powi(2) + (im - r.im).powi(2)).sqrt());
        if hz > 4.0 && hz < 30.0 {
            passband_ok &= f.magnitude_db(hz) > -3.02;
        }
    }
    // causality: perturbing the input from sample m on leaves outputs
    // before m bit-identical
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x: Vec<f64> = (0..2000).map(|_| rng.sample(StandardNormal)).collect();
    let mut causal = true;
    for m in [1, 17, 500, 1999] {
        let mut x2 = x.clone();
        for v in &mut x2[m..] {
            *v += 1e3;
        }
        let (y, y2) = (filter_causal(&f, &x), filter_causal(&f, &x2));
        causal &= y[..m].iter().zip(&y2[..m]).all(|(a, b)| a.to_bits() == b.to_bits());
        causal &= y[m] != y2[m];
    }
    let edges_ok = (lo + 3.01).abs() <= 0.01 && (hi + 3.01).abs() <= 0.01;
    check(
        edges_ok && nulls == (0.0, 0.0) && a1 < -20.0 && a60 < -20.0 && dense_err < 1e-9 && passband_ok && causal,
        format!(
            "edges {lo:.4} / {hi:.4} dB (-3.01 ± 0.01); |H(0)| = {}, |H(80)| = {}; {a1:.1} dB at 1 Hz, {a60:.1} dB at 60 Hz (< -20); dense response error {dense_err:.1e}; causal bit-exact: {causal}",
            nulls.0, nulls.1
        ),
    )
}

fn spectral() -> Outcome {
    let t = dpss(80, 1.5, 2).map_err(|e| e.to_string())?;
    let mut ortho: f64 = 0.0;
    for (i, a) in t.tapers().iter().enumerate() {
        for (j, b) in t.tapers().iter().enumerate() {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            ortho = ortho.max((dot - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    let conc = t.concentrations();
    let descending = conc.windows(2).all(|w| w[0] > w[1]);

    // 10 Hz rhythm halved at the cue over a stationary 25 Hz beta rhythm
    let mt = Multitaper::new(160.0, SpectrogramParams::default()).map_err(|e| e.to_string())?;
    let x: Vec<f64> = (0..400)
        .map(|i| {
            let s = i as f64 / 160.0;
            let a = if i < 80 { 1.0 } else { 0.5 };
            a * (2.0 * PI * 10.0 * s).sin() + 0.5 * (2.0 * PI * 25.0 * s + 0.3).sin()
        })
        .collect();
    let map = erd_ers(&mt.power(&x).map_err(|e| e.to_string())?, BASELINE_S, "Cz").map_err(|e| e.to_string())?;
    let alpha = bandpower_change(&map, [10.0, 10.0], POST_CUE_INTERVAL_S).map_err(|e| e.to_string())?;
    let beta = bandpower_change(&map, BETA_HZ, POST_CUE_INTERVAL_S).map_err(|e| e.to_string())?;
    let grid = (map.n_freqs(), map.n_frames());
    check(
        ortho < 1e-8 && descending && (alpha + 75.0).abs() <= 10.0 && beta.abs() <= 10.0 && grid == (27, 41),
        format!(
            "DPSS orthonormality error {ortho:.1e}, concentrations {conc:?}; ERD {alpha:.1}% at 10 Hz (-75 ± 10), {beta:.1}% in beta (0 ± 10); grid {}x{}",
            grid.0, grid.1
        ),
    )
}

fn pipeline_counts() -> Outcome {
    let names = channel_names();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let samples: Vec<Vec<f64>> = (0..15).map(|_| (0..60 * 160).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let rec = Recording::new(160.0, names.clone(), samples, "S001").map_err(|e| e.to_string())?;
    let resting = extract_resting_epochs(&rec).map_err(|e| e.to_string())?;

    // 6300 labelled trials from 100 subjects; the split only reads labels
    let mut trials = Vec::with_capacity(6300);
    for s in 0..100 {
        for label in ClassLabel::ALL {
            for _ in 0..21 {
                trials.push(Epoch::new(vec![0.0], 1, 1, Some(label), format!("S{s:03}"), EpochKind::CueAligned).unwrap());
            }
        }
    }
    let big = EpochStore::new(160.0, vec!["Cz".into()], 1, trials).map_err(|e| e.to_string())?;
    let (tr, va) = split_train_val(&big, 900.0 / 6300.0, 0).map_err(|e| e.to_string())?;
    let per_class_val: Vec<usize> = ClassLabel::ALL
        .iter()
        .map(|&l| va.epochs().iter().filter(|e| e.label() == Some(l)).count())
        .collect();

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let store = EpochStore::new(160.0, names, 400, resting.clone()).map_err(|e| e.to_string())?;
    save_store(&store, dir.path().join("store")).map_err(|e| e.to_string())?;
    let back = load_store(dir.path().join("store")).map_err(|e| e.to_string())?;
    let store_exact = back.len() == store.len()
        && back.channel_names() == store.channel_names()
        && back.epochs().iter().zip(store.epochs()).all(|(a, b)| {
            a.label() == b.label()
                && a.subject_id == b.subject_id
                && a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits())
        });

    let model = Cvae::<f32>::new(CvaeConfig::default(), 9).map_err(|e| e.to_string())?;
    let ckpt = CvaeCheckpoint::from_model(&model, TrainConfig::default(), Default::default());
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&ckpt, &path).map_err(|e| e.to_string())?;
    let loaded = load_checkpoint(&path).map_err(|e| e.to_string())?;
    let ckpt_exact = loaded.to_bytes().map_err(|e| e.to_string())? == ckpt.to_bytes().map_err(|e| e.to_string())?
        && loaded
            .params
            .iter()
            .zip(&ckpt.params)
            .all(|(a, b)| a.values.iter().zip(&b.values).all(|(p, q)| p.to_bits() == q.to_bits()));

    check(
        resting.len() == 20 && tr.len() == 5400 && va.len() == 900 && per_class_val == [300, 300, 300] && store_exact && ckpt_exact,
        format!(
            "60 s resting -> {} epochs; 6300 -> {}/{} (validation per class {per_class_val:?}); store round trip exact: {store_exact}; checkpoint round trip exact: {ckpt_exact}",
            resting.len(),
            tr.len(),
            va.len()
        ),
    )
}

struct DeskRun {
    log: String,
    best_val: f64,
    initial_val: f64,
    sets: Vec<ArtificialEpochSet>,
    elapsed: Duration,
}

const DESK_SEED: u64 = 2024;

fn desk_run(ds: &SynthDataset) -> Result<DeskRun, String> {
    let start = Instant::now();
    let (tr, va) = split_train_val(&ds.trials, 1.0 / 7.0, DESK_SEED).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        seed: DESK_SEED,
        ..TrainConfig::default()
    };
    let mut log = Vec::new();
    let ckpt = train(&tr, &va, &CvaeConfig::default(), &cfg, Some(&mut log)).map_err(|e| e.to_string())?;
    let sets = generate_all_conditions(&ckpt, &ds.resting, DESK_SEED).map_err(|e| e.to_string())?;
    Ok(DeskRun {
        log: String::from_utf8(log).map_err(|e| e.to_string())?,
        best_val: ckpt.history.best_val,
        initial_val: ckpt.history.initial_val.total,
        sets,
        elapsed: start.elapsed(),
    })
}

fn averaged_map(set: &EpochStore, channel: &str) -> Result<TfrMap, String> {
    let mt = Multitaper::new(set.sample_rate_hz(), SpectrogramParams::default()).map_err(|e| e.to_string())?;
    let c = set.channel_names().iter().position(|n| n == channel).ok_or("channel")?;
    let maps: Vec<TfrMap> = set
        .epochs()
        .iter()
        .map(|e| epoch_tfr(&mt, e, set.channel_names()).map(|mut v| v.swap_remove(c)))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    average_tfr(&maps).map_err(|e| e.to_string())
}

fn end_to_end(ds: &SynthDataset, run: &DeskRun) -> Outcome {
    let refs: Vec<&[Epoch]> = run.sets.iter().map(|s| s.store.epochs()).collect();
    let sep = evaluate_separability(&refs, ds.trials.channel_names(), ds.trials.sample_rate_hz()).map_err(|e| e.to_string())?;
    let spec = SynthSpec::default();
    let mut erd_ok = true;
    let mut erd_detail = Vec::new();
    for (set, label) in run.sets.iter().zip(ClassLabel::ALL) {
        for rule in spec.rules.iter().filter(|r| r.label == label) {
            for ch in &rule.channels {
                let m = averaged_map(&set.store, ch)?;
                let a = bandpower_change(&m, ALPHA_HZ, POST_CUE_INTERVAL_S).map_err(|e| e.to_string())?;
                let b = bandpower_change(&m, BETA_HZ, POST_CUE_INTERVAL_S).map_err(|e| e.to_string())?;
                erd_ok &= a < 0.0 || b < 0.0;
                let target = match rule.rhythm {
                    Rhythm::Alpha => a,
                    Rhythm::Beta => b,
                };
                erd_detail.push(format!("{} {ch} alpha {a:.1}% beta {b:.1}% (target {} {target:.1}%)", label.name(), rule.rhythm.name()));
            }
        }
    }
    for d in &erd_detail {
        println!("    {d}");
    }
    check(
        run.best_val < run.initial_val && sep.accuracy >= 0.6 && erd_ok && run.elapsed <= Duration::from_secs(15 * 60),
        format!(
            "best validation {:.1} < initial {:.1}; separability {:.3} (>= 0.6, chance 0.333); negative ERD at every target channel: {erd_ok}; {:.0} s (<= 900 s)",
            run.best_val,
            run.initial_val,
            sep.accuracy,
            run.elapsed.as_secs_f64()
        ),
    )
}

/// The training log without its wall-clock column.
fn reproducible_log(log: &str) -> String {
    log.lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head))
        .collect::<Vec<_>>()
        .join("\n")
}

fn determinism(a: &DeskRun, b: &DeskRun) -> Outcome {
    let log_same = reproducible_log(&a.log) == reproducible_log(&b.log);
    let stores_same = a.sets.len() == b.sets.len()
        && a.sets.iter().zip(&b.sets).all(|(x, y)| {
            x.provenance == y.provenance
                && x.store.len() == y.store.len()
                && x.store.epochs().iter().zip(y.store.epochs()).all(|(p, q)| {
                    p.data().iter().zip(q.data()).all(|(u, v)| u.to_bits() == v.to_bits())
                })
        });
    check(
        log_same && stores_same,
        format!(
            "training log identical (wall-clock column excluded): {log_same}; {} generated stores bit-identical: {stores_same}",
            a.sets.len()
        ),
    )
}

fn report(n: usize, title: &str, outcome: &Outcome) -> bool {
    match outcome {
        Ok(d) => println!("criterion {n} PASS  {title}: {d}"),
        Err(d) => println!("criterion {n} FAIL  {title}: {d}"),
    }
    outcome.is_ok()
}

fn main() {
    let mut all = true;
    all &= report(1, "gradient integrity", &gradients());
    all &= report(2, "shape fidelity and parameter count", &shapes_and_parameters());
    all &= report(3, "loss correctness", &loss_terms());
    all &= report(4, "filter correctness", &filter());
    all &= report(5, "spectral analysis", &spectral());
    all &= report(6, "pipeline counts and round trips", &pipeline_counts());

    let ds = make_synthetic_dataset(&SynthSpec::default()).expect("default synthetic spec is valid");
    let first = desk_run(&ds);
    let c7 = match &first {
        Ok(run) => end_to_end(&ds, run),
        Err(e) => Err(e.clone()),
    };
    all &= report(7, "desk-scale conditioning", &c7);
    let c8 = match (&first, &desk_run(&ds)) {
        (Ok(a), Ok(b)) => determinism(a, b),
        (Err(e), _) | (_, Err(e)) => Err(e.clone()),
    };
    all &= report(8, "determinism", &c8);

    if !all {
        std::process::exit(1);
    }
}
