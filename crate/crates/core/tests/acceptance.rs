//! Acceptance suite. Every criterion runs at its stated tolerance and prints one
//! PASS/FAIL line; the process fails if any criterion fails.

mod common;

use std::time::{Duration, Instant};

use common::{
    certifiable_system, certificate_holds, random_system, reference, uniform_series, Kind, KINDS,
};
use lmnctl::controller::{model_in_loop_tracking, synthesize};
use lmnctl::experiment::{
    execute, ControllerKind, ExperimentConfig, StructureConfig, VariantConfig,
};
use lmnctl::io::ModelStore;
use lmnctl::lmn::{LocalLinearModel, LocalModelNetwork};
use lmnctl::narx::{
    build_regressors, free_run_simulate, DelayConfig, NarxModel, Regressors, TimeSeriesDataset,
};
use lmnctl::plant::{PlantKind, PlantSpec};
use lmnctl::stability::{
    certify_bibo, certify_system, inverse_system_matrices, linear_controller_poles,
    transformation_sides, validity_transform, LmiOptions, Verdict, CERT_EPS,
};
use lmnctl::state_space::LpvStateSpace;
use lmnctl::training::{
    fine_tune_for_certifiability, lolimot_fit, nrmse, FineTuneConfig, LolimotConfig, Sign,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;

fn check(cond: bool, ok: String, fail: String) -> Outcome {
    if cond {
        Ok(ok)
    } else {
        Err(fail)
    }
}

fn within(start: Instant, limit: Duration, what: &str) -> Result<(), String> {
    let took = start.elapsed();
    if took > limit {
        Err(format!("{what} took {took:.2?}, limit {limit:?}"))
    } else {
        Ok(())
    }
}

/// `y(k+1) = b₂u(k-1) + c₁y(k) + c₂y(k-1)`, a single linear local model.
///
/// The controller transfer function has a zero at `-c₁` that cancels the pole there,
/// so a step only excites the unstable mode through rounding. With `b₂ = 0.8` and
/// `c₂ = 0.37` the arithmetic is inexact and the mode grows; with values such as
/// `b₂ = 1`, `c₂ = 0.3` the steady state is hit exactly and `u` stays bounded.
fn counterexample(c1: f64) -> NarxModel {
    let delays = DelayConfig::siso([2], [1, 2], [], []).unwrap();
    let net =
        LocalModelNetwork::single(LocalLinearModel::new(0.0, vec![0.8, c1, 0.37]), 0).unwrap();
    NarxModel::new(net, delays, 0).unwrap()
}

fn step_response_peak(
    model: &NarxModel,
    steps: usize,
    stop_above: f64,
) -> Result<(f64, usize), String> {
    let ss = LpvStateSpace::from_models(std::slice::from_ref(model)).map_err(|e| e.to_string())?;
    let mut ctrl = synthesize(&ss).map_err(|e| e.to_string())?;
    ctrl.reset(&[0.0], &[]).map_err(|e| e.to_string())?;
    let mut peak = 0.0f64;
    for k in 0..steps {
        match ctrl.step(&[1.0], &[]) {
            Ok(u) => peak = peak.max(u[0].abs()),
            Err(_) => return Ok((f64::INFINITY, k)),
        }
        if peak > stop_above {
            return Ok((peak, k + 1));
        }
    }
    Ok((peak, steps))
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    for c1 in [1.5, 0.5, -0.5, -1.5, 0.0] {
        let poles = linear_controller_poles(&counterexample(c1)).map_err(|e| e.to_string())?;
        let mut got: Vec<(f64, f64)> = poles.iter().map(|z| (z.re, z.im)).collect();
        got.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut want = vec![(0.0, 0.0), (-c1, 0.0)];
        want.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let err = got
            .iter()
            .zip(&want)
            .map(|(g, w)| (g.0 - w.0).hypot(g.1 - w.1))
            .fold(0.0, f64::max);
        if got.len() != 2 || err > 1e-9 {
            return Err(format!("c1 = {c1}: poles {got:?}, expected {{0, {}}}", -c1));
        }
    }
    let (peak_unstable, at) = step_response_peak(&counterexample(1.5), 200, 1e6)?;
    if !(peak_unstable > 1e6) {
        return Err(format!(
            "c1 = 1.5: |u| peaked at {peak_unstable:.3e} within 200 steps"
        ));
    }
    let (peak_stable, _) = step_response_peak(&counterexample(0.5), 10_000, f64::INFINITY)?;
    if !(peak_stable < 10.0) {
        return Err(format!(
            "c1 = 0.5: |u| reached {peak_stable:.3e} over 1e4 steps"
        ));
    }
    within(start, Duration::from_secs(1), "criterion 1")?;
    Ok(format!(
        "poles {{0, -c1}} to 1e-9; c1=1.5 exceeds 1e6 after {at} steps; c1=0.5 peak |u| = {peak_stable:.3} over 1e4 steps"
    ))
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut count = 0;
    for kind in KINDS {
        for _ in 0..10 {
            let models = certifiable_system(&mut rng, kind);
            let cert =
                certify_system(&models, &LmiOptions::default()).map_err(|e| e.to_string())?;
            if kind != Kind::Mimo && cert.verdict != Verdict::Certified {
                return Err(format!(
                    "{kind:?} generator produced an uncertified network: {}",
                    cert.reason
                ));
            }
            let ss = LpvStateSpace::from_models(&models).map_err(|e| e.to_string())?;
            let mut ctrl = synthesize(&ss).map_err(|e| e.to_string())?;
            let dy = ss.num_outputs();
            let r = reference(&mut rng, dy, 500);
            let d = uniform_series(&mut rng, ss.num_disturbances(), 500, 1.0);
            let run =
                model_in_loop_tracking(&mut ctrl, &r, &d).map_err(|e| format!("{kind:?}: {e}"))?;
            for e in &run.rmse {
                worst = worst.max(*e);
            }
            count += 1;
        }
    }
    within(start, Duration::from_secs(30), "criterion 2")?;
    check(
        worst < 1e-8,
        format!("{count} random certifiable networks (SISO, disturbance, MIMO), worst tracking RMSE {worst:.2e}"),
        format!("worst model-in-loop tracking RMSE {worst:.3e} >= 1e-8"),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let opts = LmiOptions::default();
    let mut verified = 0;
    // certificates of random networks of several inverse dimensions
    for trial in 0..40 {
        let nu = 2 + trial % 3;
        let k = rng.random_range(1..=4);
        let delays = DelayConfig::siso((1..=nu).collect::<Vec<_>>(), [1], [], [1]).unwrap();
        let models = (0..k)
            .map(|_| {
                let mut g = vec![rng.random_range(0.5..1.5)];
                g.extend((1..nu).map(|_| rng.random_range(-0.6..0.6)));
                g.push(rng.random_range(-0.5..0.5));
                LocalLinearModel::new(0.0, g)
            })
            .collect();
        let vals = (0..k)
            .map(|_| {
                lmnctl::lmn::ValidityFunction::new(vec![rng.random_range(-1.0..1.0)], vec![0.5])
                    .unwrap()
            })
            .collect();
        let net = LocalModelNetwork::new(models, vals, delays.lin_dim(), 1).unwrap();
        let model = NarxModel::new(net, delays, 0).unwrap();
        let report = certify_bibo(&model, &opts).map_err(|e| e.to_string())?;
        if let Some(cert) = report.certificate {
            let mats = inverse_system_matrices(&model)
                .map_err(|e| e.to_string())?
                .matrices;
            if !certificate_holds(&cert.p_matrix(), &mats, CERT_EPS) {
                return Err(format!(
                    "trial {trial}: returned certificate fails verification"
                ));
            }
            verified += 1;
        }
    }
    // scalar sweep: Λ₁Â₁ = [-b₂/b₁]
    let mut sweep = Vec::new();
    for value in [-1.5, -0.99, -0.5, 0.0, 0.5, 0.99, 1.5] {
        let delays = DelayConfig::siso([1, 2], [1], [], []).unwrap();
        let net = LocalModelNetwork::single(LocalLinearModel::new(0.0, vec![1.0, -value, 0.5]), 0)
            .unwrap();
        let model = NarxModel::new(net, delays, 0).unwrap();
        let mats = inverse_system_matrices(&model)
            .map_err(|e| e.to_string())?
            .matrices;
        if (mats[0][(0, 0)] - value).abs() > 1e-15 {
            return Err(format!(
                "inverse matrix {} for value {value}",
                mats[0][(0, 0)]
            ));
        }
        let report = certify_bibo(&model, &opts).map_err(|e| e.to_string())?;
        let feasible = report.verdict == Verdict::Certified;
        if feasible != (f64::abs(value) < 1.0) {
            return Err(format!("scalar {value}: verdict {:?}", report.verdict));
        }
        if let Some(cert) = &report.certificate {
            if !certificate_holds(&cert.p_matrix(), &mats, CERT_EPS) {
                return Err(format!("scalar {value}: certificate fails verification"));
            }
        }
        sweep.push(format!(
            "{value}:{}",
            if feasible { "feasible" } else { "infeasible" }
        ));
    }
    check(
        verified > 0,
        format!(
            "{verified} certificates independently verified; scalar sweep {}",
            sweep.join(" ")
        ),
        "no certificate was produced to verify".into(),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_identity = 0.0f64;
    let mut worst_simplex = 0.0f64;
    for _ in 0..1000 {
        let k = rng.random_range(1..=6);
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
        let sum: f64 = raw.iter().sum();
        let phi: Vec<f64> = raw.iter().map(|v| v / sum).collect();
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let b1: Vec<f64> = (0..k).map(|_| sign * rng.random_range(0.1..3.0)).collect();
        let theta: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
        // left side by direct evaluation
        let num: f64 = phi.iter().zip(&theta).map(|(p, t)| p * t).sum();
        let den: f64 = phi.iter().zip(&b1).map(|(p, b)| p * b).sum();
        let lhs = num / den;
        let bar = validity_transform(&phi, &b1).map_err(|e| e.to_string())?;
        let rhs: f64 = bar
            .iter()
            .zip(&b1)
            .zip(&theta)
            .map(|((f, b), t)| f / b * t)
            .sum();
        let (l2, r2) = transformation_sides(&phi, &b1, &theta).map_err(|e| e.to_string())?;
        worst_identity = worst_identity
            .max((lhs - rhs).abs() / lhs.abs().max(1.0))
            .max((l2 - r2).abs() / l2.abs().max(1.0));
        let total: f64 = bar.iter().sum();
        worst_simplex = worst_simplex.max((total - 1.0).abs());
        if bar.iter().any(|v| *v < 0.0) {
            return Err(format!("negative transformed validity {bar:?}"));
        }
    }
    check(
        worst_identity <= 1e-12 && worst_simplex <= 1e-12,
        format!(
            "1000 draws, identity error {worst_identity:.2e}, simplex error {worst_simplex:.2e}"
        ),
        format!(
            "identity error {worst_identity:.3e}, simplex error {worst_simplex:.3e} (limit 1e-12)"
        ),
    )
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for kind in KINDS {
        for _ in 0..20 {
            let models = random_system(&mut rng, kind);
            let ss = LpvStateSpace::from_models(&models).map_err(|e| e.to_string())?;
            let h = models.iter().map(|m| m.delays.max_delay()).max().unwrap();
            let len = 200 + h - 1;
            let u = uniform_series(&mut rng, ss.num_inputs(), len, 1.0);
            let d = uniform_series(&mut rng, ss.num_disturbances(), len, 1.0);
            let y0 = uniform_series(&mut rng, ss.num_outputs(), h, 0.5);
            let narx = free_run_simulate(&models, &u, &d, &y0).map_err(|e| e.to_string())?;
            let lpv = ss.rollout(&u, &d, &y0).map_err(|e| e.to_string())?;
            if narx.iter().map(Vec::len).sum::<usize>() < 200 * narx.len() {
                return Err(format!("{kind:?}: rollout shorter than 200 steps"));
            }
            for (a, b) in narx.iter().zip(&lpv) {
                if a.len() != b.len() {
                    return Err(format!("{kind:?}: lengths {} vs {}", a.len(), b.len()));
                }
                for (x, y) in a.iter().zip(b) {
                    worst = worst.max((x - y).abs() / x.abs().max(1.0));
                }
            }
        }
    }
    check(
        worst <= 1e-10,
        format!("60 random networks x 200 steps, worst deviation {worst:.2e}"),
        format!("LPV rollout deviates from the NARX recursion by {worst:.3e}"),
    )
}

fn criterion_6() -> Outcome {
    let mut regs = Regressors::default();
    for i in 0..2000 {
        let x = -1.0 + 2.0 * i as f64 / 1999.0;
        regs.push(vec![x], vec![x], x.abs());
    }
    let cfg = LolimotConfig {
        max_models: 16,
        ..Default::default()
    };
    let fit = lolimot_fit(&regs, None, &cfg).map_err(|e| e.to_string())?;
    let pred: Vec<f64> = regs
        .iter()
        .map(|(l, v, _)| fit.net.evaluate(l, v).unwrap())
        .collect();
    let e = nrmse(&pred, &regs.target).map_err(|e| e.to_string())?;
    let monotone = fit.error_history.windows(2).all(|w| w[1] <= w[0]);
    check(
        e < 1e-3 && monotone && fit.net.num_models() <= 16,
        format!(
            "{} local models, NRMSE {e:.2e}, error history non-increasing",
            fit.net.num_models()
        ),
        format!(
            "{} models, NRMSE {e:.3e}, monotone = {monotone}",
            fit.net.num_models()
        ),
    )
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let seeds = 1..=5u64;
    let (mut pred_blind, mut pred_aware, mut track_blind, mut track_aware) =
        (vec![], vec![], vec![], vec![]);
    let mut mimo = [vec![], vec![]];
    let mut indep = [vec![], vec![]];
    for seed in seeds {
        let siso = ExperimentConfig {
            seed,
            certify: false,
            ..Default::default()
        };
        let out = execute(&siso).map_err(|e| e.to_string())?;
        let v = &out.report.variants;
        for r in v {
            if !r.failures.is_empty() {
                return Err(format!("seed {seed}, {}: {:?}", r.name, r.failures));
            }
        }
        pred_blind.push(v[0].prediction_rmse.as_ref().unwrap()[0]);
        pred_aware.push(v[1].prediction_rmse.as_ref().unwrap()[0]);
        track_blind.push(v[0].tracking.as_ref().unwrap().mean[0]);
        track_aware.push(v[1].tracking.as_ref().unwrap().mean[0]);

        let variant = |name: &str, kind| VariantConfig {
            name: name.into(),
            kind,
            structure: StructureConfig::default(),
            lolimot: LolimotConfig {
                max_models: 6,
                ..Default::default()
            },
        };
        let coupled = ExperimentConfig {
            seed,
            certify: false,
            plant: PlantSpec {
                kind: PlantKind::MimoCoupled,
                noise_std: vec![0.01, 0.01],
                ..Default::default()
            },
            variants: vec![
                variant("mimo", ControllerKind::Mimo),
                variant("independent", ControllerKind::IndependentSiso),
            ],
            ..Default::default()
        };
        let out = execute(&coupled).map_err(|e| e.to_string())?;
        let v = &out.report.variants;
        for r in v {
            if !r.failures.is_empty() {
                return Err(format!("seed {seed}, {}: {:?}", r.name, r.failures));
            }
        }
        for j in 0..2 {
            mimo[j].push(v[0].tracking.as_ref().unwrap().mean[j]);
            indep[j].push(v[1].tracking.as_ref().unwrap().mean[j]);
        }
    }
    within(start, Duration::from_secs(300), "criterion 7")?;
    let gain = |blind: &[f64], better: &[f64]| 1.0 - mean(better) / mean(blind);
    let g_pred = gain(&pred_blind, &pred_aware);
    let g_track = gain(&track_blind, &track_aware);
    let g_mimo = [gain(&indep[0], &mimo[0]), gain(&indep[1], &mimo[1])];
    let line = format!(
        "disturbance channel: prediction RMSE {:.4} -> {:.4} ({:.1}%), tracking {:.4} -> {:.4} ({:.1}%); MIMO vs independent SISO: y1 {:.1}%, y2 {:.1}% (5 seeds)",
        mean(&pred_blind),
        mean(&pred_aware),
        100.0 * g_pred,
        mean(&track_blind),
        mean(&track_aware),
        100.0 * g_track,
        100.0 * g_mimo[0],
        100.0 * g_mimo[1]
    );
    check(
        g_pred >= 0.10 && g_track >= 0.10 && g_mimo.iter().all(|g| *g >= 0.05),
        line.clone(),
        line,
    )
}

/// Plant whose input gain changes sign across the output range, so a trained network
/// violates the same-sign condition.
fn sign_violating_data(seed: u64) -> TimeSeriesDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.05).unwrap();
    let n = 3000;
    let mut u = Vec::with_capacity(n);
    let mut level = 0.0;
    for k in 0..n {
        if k % 8 == 0 {
            level = rng.random_range(-1.0..1.0);
        }
        u.push(level);
    }
    let mut y = vec![0.0; n];
    let mut state = 0.0;
    for k in 0..n - 1 {
        let b1 = if state > 0.0 { 1.0 } else { -0.03 };
        let prev = if k > 0 { u[k - 1] } else { 0.0 };
        state = 0.5 * state + b1 * u[k] + 0.01 * prev + 0.2;
        y[k + 1] = state + noise.sample(&mut rng);
    }
    TimeSeriesDataset::new(0.1, vec![u], vec![], vec![y]).unwrap()
}

fn criterion_8() -> Outcome {
    let data = sign_violating_data(8);
    let delays = DelayConfig::siso([1, 2], [1], [], [1]).unwrap();
    let regs = build_regressors(&data, &delays, 0).map_err(|e| e.to_string())?;
    let fit = lolimot_fit(
        &regs,
        None,
        &LolimotConfig {
            max_models: 6,
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let model = NarxModel::new(fit.net, delays, 0).map_err(|e| e.to_string())?;
    let b1: Vec<f64> = model.net.models().iter().map(|m| m.gains[0]).collect();
    if b1.iter().all(|b| *b > 0.0) || b1.iter().all(|b| *b < 0.0) {
        return Err(format!(
            "trained network does not violate the sign condition: b1 = {b1:?}"
        ));
    }
    let cfg = FineTuneConfig {
        sign: Sign::Positive,
        ..Default::default()
    };
    let out = fine_tune_for_certifiability(&model, &regs, &cfg).map_err(|e| e.to_string())?;
    let tuned_b1: Vec<f64> = out.model.net.models().iter().map(|m| m.gains[0]).collect();
    let margin = tuned_b1.iter().copied().fold(f64::INFINITY, f64::min);
    let mats = inverse_system_matrices(&out.model)
        .map_err(|e| e.to_string())?
        .matrices;
    let cert_ok = out.certification.verdict == Verdict::Certified
        && out
            .certification
            .certificate
            .as_ref()
            .is_some_and(|c| certificate_holds(&c.p_matrix(), &mats, CERT_EPS));
    let degradation = (out.mse_after / out.mse_before).sqrt() - 1.0;
    let line = format!(
        "b1 {:?} -> min {margin:.3} (margin {}), certificate {}, prediction RMSE {:.4} -> {:.4} ({:+.1}%)",
        b1.iter().map(|b| format!("{b:.3}")).collect::<Vec<_>>(),
        cfg.sign_margin,
        if cert_ok { "verified" } else { "missing" },
        out.mse_before.sqrt(),
        out.mse_after.sqrt(),
        100.0 * degradation
    );
    check(
        margin >= cfg.sign_margin - 1e-12 && cert_ok && degradation <= 0.25,
        line.clone(),
        line,
    )
}

fn criterion_9() -> Outcome {
    let cfg = ExperimentConfig {
        eval_seeds: vec![1, 2],
        ..Default::default()
    };
    let a = execute(&cfg).map_err(|e| e.to_string())?;
    let b = execute(&cfg).map_err(|e| e.to_string())?;
    let ja = serde_json::to_string(&a.report).map_err(|e| e.to_string())?;
    let jb = serde_json::to_string(&b.report).map_err(|e| e.to_string())?;
    if ja != jb {
        return Err("two runs of one configuration gave different metrics JSON".into());
    }
    let store = a.stores[1].clone().ok_or("no model store")?;
    let back = ModelStore::from_json(&store.to_json().map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (m0, m1) = (&store.models[0], &back.models[0]);
    for _ in 0..1000 {
        let lin: Vec<f64> = (0..m0.net.lin_dim())
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        let val: Vec<f64> = (0..m0.net.val_dim())
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        let p0 = m0.net.evaluate(&lin, &val).map_err(|e| e.to_string())?;
        let p1 = m1.net.evaluate(&lin, &val).map_err(|e| e.to_string())?;
        if p0.to_bits() != p1.to_bits() {
            return Err(format!("round-trip prediction differs: {p0} vs {p1}"));
        }
    }
    Ok(format!(
        "identical metrics JSON ({} bytes); model store round-trip bit-identical on 1000 inputs",
        ja.len()
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("counterexample reproduction", criterion_1),
        ("model-inversion exactness", criterion_2),
        ("BIBO certificate soundness", criterion_3),
        ("validity transformation identity", criterion_4),
        ("LPV transform equivalence", criterion_5),
        ("LOLIMOT quality", criterion_6),
        ("disturbance and MIMO benefit", criterion_7),
        ("fine-tuning efficacy", criterion_8),
        ("determinism and persistence", criterion_9),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let took = start.elapsed();
        match outcome {
            Ok(msg) => println!("PASS criterion {} ({name}): {msg} [{took:.2?}]", i + 1),
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {} ({name}): {msg} [{took:.2?}]", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
