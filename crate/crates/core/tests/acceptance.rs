//! Acceptance criteria AC1-AC9. Prints one PASS/FAIL line per criterion.
//!
//! Exit status is 0 unless `SAQM_STRICT_ACCEPTANCE=1` is set, in which case
//! any FAIL makes the run fail.

mod common;

use std::time::Instant;

use common::{
    attention_oracle, correlation_case, end_to_end_check, grl_decomposition, mixed_batch, op_suite, overfit,
    overfit_loss, rng, run_case, uniform,
};
use saqm::data::synth;
use saqm::eval::{evaluate, EvalSplit};
use saqm::model::{attention, checkpoint, BranchNet, LOCATIONS, PATCH};
use saqm::train::{labeled_references, train, train_prepared, RunLog, TrainData, TrainPatch};
use saqm::{plcc, srocc, ConfigId, Domain, Sample, SaqmParams, Split, SynthSpec, Tape, Tensor, TrainConfig};

/// Trunk width of the scaled end-to-end runs.
const CHANNELS: usize = 16;

struct Outcome {
    pass: bool,
    summary: String,
}

fn outcome(pass: bool, summary: impl Into<String>) -> Outcome {
    Outcome { pass, summary: summary.into() }
}

fn ac1() -> Outcome {
    let start = Instant::now();
    let mut bad = Vec::new();
    let mut n_ops = 0;
    let mut min_probes = usize::MAX;
    for (i, mut case) in op_suite().into_iter().enumerate() {
        let check = run_case(&mut case, 24, 1000 + i as u64);
        min_probes = min_probes.min(check.probes);
        n_ops += 1;
        if !check.passed() {
            bad.push(format!("{} ({})", case.name, check.detail));
        }
    }
    let e2e = end_to_end_check(25, 42);
    if !e2e.passed() {
        bad.push(format!("end-to-end ({})", e2e.detail));
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = bad.is_empty() && min_probes >= 20 && secs < 120.0;
    let mut s = format!(
        "gradient oracles: {n_ops} op cases x {min_probes} probes, end-to-end C=16 on {} params (worst ratio {:.3}), {secs:.1}s",
        e2e.probes, e2e.worst
    );
    if !bad.is_empty() {
        s.push_str(&format!("; failing: {}", bad.join(", ")));
    }
    outcome(pass, s)
}

fn ac2() -> Outcome {
    const TABLE: [usize; 8] = [3584, 295168, 590080, 590080, 1180160, 2359808, 2359808, 262656];
    let value = BranchNet::<f32>::init(512, 512, &mut rng(0));
    let qk = BranchNet::<f32>::init(512, 64, &mut rng(0));
    let counts_ok = value.param_counts() == TABLE;
    let qk_ok = *qk.param_counts().last().unwrap() == 32_832;
    let model = SaqmParams::<f32>::build(0, 512).unwrap();
    let tape = Tape::new();
    let bound = model.bind(&tape, false);
    let fwd = bound.forward(tape.constant(Tensor::full(&[3, PATCH, PATCH], 0.5))).unwrap();
    let shape_ok = fwd.value.shape() == [512, 64] && LOCATIONS == 64;
    outcome(
        counts_ok && qk_ok && shape_ok,
        format!(
            "value branch counts {:?}, Q/K head {}, features {:?}",
            value.param_counts(),
            qk.param_counts().last().unwrap(),
            fwd.value.shape()
        ),
    )
}

fn ac3() -> Outcome {
    let x = uniform(&[33], -5.0, 5.0, &mut rng(30));
    let tape = Tape::new();
    let a = tape.leaf(x.clone(), true);
    let y = a.grad_reverse(1.0);
    let forward_ok = y.value().data().iter().zip(x.data()).all(|(p, q)| p.to_bits() == q.to_bits());
    let w = uniform(&[33], -1.0, 1.0, &mut rng(31));
    y.mul(tape.constant(w.clone())).unwrap().sum().backward().unwrap();
    let backward_ok = a.grad().unwrap() == w.map(|v| -v);

    let mut model = SaqmParams::<f64>::build(11, CHANNELS).unwrap();
    model.gamma = Tensor::scalar(0.3);
    let patches = mixed_batch(12);
    let batch: Vec<&TrainPatch<f64>> = patches.iter().collect();
    let [full, q_only, d_unrev] = grl_decomposition(&model, &batch);
    let mut worst: f64 = 0.0;
    for (name, ((f, q), d)) in model.names().iter().zip(full.iter().zip(&q_only).zip(&d_unrev)) {
        let head = name.starts_with("domain.");
        for ((&f, &q), &d) in f.data().iter().zip(q.data()).zip(d.data()) {
            worst = worst.max((f - if head { q + d } else { q - d }).abs());
        }
    }
    outcome(
        forward_ok && backward_ok && worst < 1e-6,
        format!("forward bit-identical: {forward_ok}, backward exact negation: {backward_ok}, decomposition max error {worst:.2e}"),
    )
}

fn ac4() -> Outcome {
    let mut model = SaqmParams::<f64>::build(40, CHANNELS).unwrap();
    model.gamma = Tensor::scalar(0.7);
    let patch = uniform(&[3, PATCH, PATCH], 0.0, 1.0, &mut rng(41));
    let trace = model.attention_trace(&patch).unwrap();
    let row_err = trace
        .attention
        .data()
        .chunks(LOCATIONS)
        .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);

    model.gamma = Tensor::scalar(0.0);
    let tape = Tape::new();
    let bound = model.bind(&tape, false);
    let fwd = bound.forward(tape.constant(patch)).unwrap();
    let bypass = fwd.attention.output.value() == fwd.value.value();

    let mut r = rng(42);
    let mut oracle_err: f64 = 0.0;
    for trial in 0..50 {
        let q = uniform(&[2, 4], -2.0, 2.0, &mut r);
        let k = uniform(&[2, 4], -2.0, 2.0, &mut r);
        let v = uniform(&[3, 4], -1.0, 1.0, &mut r);
        let gamma = trial as f64 / 25.0 - 1.0;
        let rows = |t: &Tensor<f64>| t.data().chunks(4).map(<[f64]>::to_vec).collect::<Vec<_>>();
        let want = attention_oracle(&rows(&q), &rows(&k), &rows(&v), gamma);
        let tape = Tape::new();
        let got = attention(tape.constant(q), tape.constant(k), tape.constant(v), tape.constant(Tensor::scalar(gamma)))
            .unwrap();
        for (g, w) in [
            (got.attention.value(), want.attention.concat()),
            (got.output.value(), want.output.concat()),
            (got.pooled.value(), want.pooled.clone()),
        ] {
            for (a, b) in g.data().iter().zip(&w) {
                oracle_err = oracle_err.max((a - b).abs());
            }
        }
    }
    outcome(
        row_err < 1e-6 && bypass && oracle_err < 1e-6,
        format!("row-sum error {row_err:.2e}, gamma=0 output equals value: {bypass}, N=4 oracle error {oracle_err:.2e}"),
    )
}

fn ac5() -> Outcome {
    let start = Instant::now();
    let (losses, model) = overfit(200, 5e-4, 0, CHANNELS);
    let final_bce = overfit_loss(&model);
    let (again, _) = overfit(200, 5e-4, 0, CHANNELS);
    let deterministic = losses.iter().map(|l| l.to_bits()).eq(again.iter().map(|l| l.to_bits()));
    // Both runs count toward the budget, so halve for one run.
    let secs = start.elapsed().as_secs_f64() / 2.0;
    outcome(
        final_bce < 0.05 && deterministic && secs < 60.0,
        format!("8 patches, 200 steps at lr 5e-4: final BCE {final_bce:.4}, deterministic: {deterministic}, {secs:.1}s per run"),
    )
}

fn scaled_cfg(id: ConfigId) -> TrainConfig {
    let mut cfg = TrainConfig::new(id);
    cfg.channels = CHANNELS;
    cfg.epochs = 30;
    cfg.seed = 0;
    cfg
}

fn ac6() -> Outcome {
    let start = Instant::now();
    let samples = synth::samples::<f32>(&SynthSpec::new(25, 5, 64, 0, Domain::Source)).unwrap();
    let cfg = scaled_cfg(ConfigId::SourceSupervised);
    let mut model = SaqmParams::<f32>::build(cfg.seed, cfg.channels).unwrap();
    let log = train(&cfg, Some(&samples), None, &mut model).unwrap();
    let report = evaluate(&model, "synthetic-source", &samples, EvalSplit::Test, cfg.stride).unwrap();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        log.epochs.len() == 30 && report.srocc >= 0.8 && report.plcc >= 0.7 && secs < 1200.0,
        format!(
            "config 2, 25x5 refs at 64x64, 30 epochs, C={CHANNELS}: test SROCC {:.3}, PLCC {:.3} (n={}), {secs:.0}s",
            report.srocc, report.plcc, report.n
        ),
    )
}

fn target_srocc(model: &SaqmParams<f32>, target: &[Sample<f32>]) -> Result<f64, String> {
    evaluate(model, "synthetic-target", target, EvalSplit::Test, 32).map(|r| r.srocc).map_err(|e| e.to_string())
}

fn fmt_srocc(r: &Result<f64, String>) -> String {
    match r {
        Ok(v) => format!("{v:.3}"),
        Err(e) => format!("undefined ({e})"),
    }
}

fn ac7() -> Outcome {
    let start = Instant::now();
    let source = synth::samples::<f32>(&SynthSpec::new(25, 5, 64, 0, Domain::Source)).unwrap();
    let target = synth::samples::<f32>(&SynthSpec::new(12, 5, 64, 0, Domain::Target)).unwrap();

    let adapt = |lambda_grl: f64| -> (RunLog, SaqmParams<f32>) {
        let mut cfg = scaled_cfg(ConfigId::UnsupervisedDa);
        cfg.lambda_grl = lambda_grl;
        let data = TrainData::prepare(&cfg, Some(&source), Some(&target)).unwrap();
        let mut model = SaqmParams::<f32>::build(cfg.seed, cfg.channels).unwrap();
        let log = train_prepared(&cfg, &data, &mut model, |_| {}).unwrap();
        (log, model)
    };
    let (log3, model3) = adapt(1.0);
    let (log_unrev, _) = adapt(-1.0);
    let acc3 = log3.last().and_then(|e| e.domain_acc).unwrap_or(f64::NAN);
    let acc_unrev = log_unrev.last().and_then(|e| e.domain_acc).unwrap_or(f64::NAN);

    // Config 1 on 10% of the target train references (at least one).
    let train_refs: Vec<String> =
        target.iter().filter(|s| s.split == Split::Train).map(|s| s.reference.clone()).collect();
    let n_refs = train_refs.iter().collect::<std::collections::BTreeSet<_>>().len();
    let keep = labeled_references(&train_refs, f64::max(0.1, 1.0 / n_refs as f64), 0);
    let subset: Vec<Sample<f32>> =
        target.iter().filter(|s| s.split == Split::Test || keep.contains(&s.reference)).cloned().collect();
    let cfg1 = scaled_cfg(ConfigId::TargetSupervised);
    let mut model1 = SaqmParams::<f32>::build(cfg1.seed, cfg1.channels).unwrap();
    train(&cfg1, None, Some(&subset), &mut model1).unwrap();

    let s3 = target_srocc(&model3, &target);
    let s1 = target_srocc(&model1, &target);
    let a = log3.epochs.len() == 30;
    let b = acc3 < 0.70 && acc_unrev > 0.85;
    let c = matches!((&s3, &s1), (Ok(x), Ok(y)) if x >= y);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        a && b && c,
        format!(
            "(a) {} epochs: {}; (b) domain acc config 3 {acc3:.3} vs unreversed {acc_unrev:.3}: {}; \
             (c) target SROCC config 3 {} vs config 1 on {} of {n_refs} refs {}: {}; {secs:.0}s",
            log3.epochs.len(),
            pf(a),
            pf(b),
            fmt_srocc(&s3),
            keep.len(),
            fmt_srocc(&s1),
            pf(c),
        ),
    )
}

fn ac8() -> Outcome {
    let mut r = rng(80);
    let (mut worst, mut ties, mut mismatched_errors) = (0.0f64, 0, 0);
    for _ in 0..1000 {
        let (x, y) = correlation_case(&mut r);
        let mut sorted = x.clone();
        sorted.sort_by(f64::total_cmp);
        ties += sorted.windows(2).any(|w| w[0] == w[1]) as usize;
        for (got, want) in [
            (plcc(&x, &y).ok(), common::pearson_oracle(&x, &y)),
            (srocc(&x, &y).ok(), common::spearman_oracle(&x, &y)),
        ] {
            match (got, want) {
                (Some(g), Some(w)) => worst = worst.max((g - w).abs()),
                (None, None) => {}
                _ => mismatched_errors += 1,
            }
        }
    }
    let (x, y) = ([1.0, 2.0, 3.0, 4.0], [1.0, 3.0, 2.0, 4.0]);
    let closed = plcc(&x, &y).unwrap() == 0.8 && srocc(&x, &y).unwrap() == 0.8;
    let lin: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
    let neg: Vec<f64> = x.iter().map(|v| -v).collect();
    let perfect = plcc(&x, &lin).unwrap() == 1.0 && plcc(&x, &neg).unwrap() == -1.0;
    outcome(
        worst < 1e-12 && mismatched_errors == 0 && closed && perfect,
        format!(
            "1000 cases ({ties} with ties): max error {worst:.2e}, error mismatches {mismatched_errors}; 0.8 example exact: {closed}; +-1 cases exact: {perfect}"
        ),
    )
}

fn ac9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let model = SaqmParams::<f32>::build(90, CHANNELS).unwrap();
    let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    checkpoint::save(&model, &a).unwrap();
    checkpoint::save(&checkpoint::load(&a).unwrap(), &b).unwrap();
    let bytes_ok = std::fs::read(&a).unwrap() == std::fs::read(&b).unwrap();

    let toy = |domain, seed| synth::samples::<f32>(&SynthSpec::new(4, 2, 32, seed, domain)).unwrap();
    let (src, tgt) = (toy(Domain::Source, 91), toy(Domain::Target, 92));
    let toy_cfg = |id| {
        let mut cfg = TrainConfig::new(id);
        cfg.channels = 8;
        cfg.epochs = 2;
        cfg.batch_size = 4;
        cfg
    };
    let run = |cfg: &TrainConfig, s: Option<&[Sample<f32>]>| {
        let mut m = SaqmParams::<f32>::build(cfg.seed, cfg.channels).unwrap();
        train(cfg, s, Some(&tgt), &mut m).unwrap();
        checkpoint::encode(&m)
    };
    let c1 = toy_cfg(ConfigId::TargetSupervised);
    let repro = run(&c1, None) == run(&c1, None);
    let c3 = toy_cfg(ConfigId::UnsupervisedDa);
    let mut c4 = toy_cfg(ConfigId::SemiSupervisedDa);
    c4.labeled_target_fraction = 0.0;
    let same = run(&c3, Some(&src)) == run(&c4, Some(&src));
    outcome(
        bytes_ok && repro && same,
        format!("save-load-save byte-identical: {bytes_ok}; config 1 bitwise reproducible: {repro}; config 4 at fraction 0 equals config 3: {same}"),
    )
}

fn pf(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn main() {
    // libtest-style arguments (filters, --list) are ignored except --list.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 9] =
        [("AC1", ac1), ("AC2", ac2), ("AC3", ac3), ("AC4", ac4), ("AC5", ac5), ("AC6", ac6), ("AC7", ac7), ("AC8", ac8), ("AC9", ac9)];
    let mut failed = 0;
    for (id, run) in criteria {
        let o = run();
        failed += !o.pass as usize;
        println!("{id} {} {}", pf(o.pass), o.summary);
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    let strict = std::env::var("SAQM_STRICT_ACCEPTANCE").is_ok_and(|v| v == "1");
    if strict && failed > 0 {
        std::process::exit(1);
    }
}
