//! Penalty-based fine-tuning of local model parameters toward a certifiable network.
//!
//! The objective is the one-step prediction MSE plus a squared hinge on the critical
//! input gains `s·b₁⁽ⁱ⁾ ≥ ε_sign`. Once all signs are right, a second penalty pushes the
//! inverse-system matrices toward contraction in the metric of the best Lyapunov
//! candidate found so far. Validities stay frozen. Penalty weights double at every
//! check that fails, so the constraints eventually dominate the data term.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::narx::{NarxModel, Regressors, Signal};
use crate::stability::lmi::{self, LmiOptions};
use crate::stability::{
    certify_bibo, gain_index, inverse_system_matrices, CertificationReport, Verdict, CERT_EPS,
};

pub use crate::stability::Sign;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FineTuneConfig {
    pub sign: Sign,
    /// Required `s·b₁⁽ⁱ⁾` for every local model.
    pub sign_margin: f64,
    pub max_iterations: usize,
    /// Initial weight of both penalties.
    pub penalty_weight: f64,
    /// Target gap below zero for the Lyapunov residual penalty.
    pub contraction_margin: f64,
    /// Iterations between certification attempts.
    pub check_every: usize,
    pub lmi: LmiOptions,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        Self {
            sign: Sign::Positive,
            sign_margin: 0.05,
            max_iterations: 500,
            penalty_weight: 1.0,
            contraction_margin: 1e-2,
            check_every: 5,
            lmi: LmiOptions {
                max_iterations: 400,
                restarts: 1,
                seed: 0x5eed,
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct FineTuneOutcome {
    pub model: NarxModel,
    pub certification: CertificationReport,
    pub iterations: usize,
    pub mse_before: f64,
    pub mse_after: f64,
}

struct Problem<'a> {
    regs: &'a Regressors,
    phi: Vec<Vec<f64>>,
    /// `gain_index` of input delays `1..=nu` (None when absent).
    input_index: Vec<Option<usize>>,
    sign: f64,
    /// Hinge target for `s·b₁`; slightly above the required margin so that a finite
    /// penalty weight already meets the requirement.
    sign_target: f64,
    contraction_margin: f64,
    sign_margin: f64,
    /// Parameters per local model: offset and gains.
    width: usize,
}

/// One squared penalty term `h²` with the gradient of `h` over the flat parameters.
struct Term {
    h: f64,
    dh: Vec<(usize, f64)>,
}

impl Problem<'_> {
    fn features(&self, x: &[f64], phi: &[f64]) -> Vec<f64> {
        let mut z = Vec::with_capacity(phi.len() * self.width);
        for w in phi {
            z.push(*w);
            z.extend(x.iter().map(|v| w * v));
        }
        z
    }

    fn mse_and_grad(&self, p: &DVector<f64>) -> (f64, DVector<f64>) {
        let n = self.regs.len() as f64;
        let mut grad = DVector::zeros(p.len());
        let mut sse = 0.0;
        for ((x, t), phi) in self.regs.lin.iter().zip(&self.regs.target).zip(&self.phi) {
            let z = DVector::from_vec(self.features(x, phi));
            let e = t - z.dot(p);
            sse += e * e;
            grad.axpy(-2.0 * e / n, &z, 1.0);
        }
        (sse / n, grad)
    }

    fn mse_hessian(&self, dim: usize) -> DMatrix<f64> {
        let n = self.regs.len() as f64;
        let mut h = DMatrix::zeros(dim, dim);
        for (x, phi) in self.regs.lin.iter().zip(&self.phi) {
            let z = DVector::from_vec(self.features(x, phi));
            h.syger(2.0 / n, &z, &z, 1.0);
        }
        h
    }

    fn index(&self, model: usize, delay: usize) -> Option<usize> {
        self.input_index[delay - 1].map(|j| model * self.width + 1 + j)
    }

    fn b(&self, p: &DVector<f64>, model: usize, delay: usize) -> f64 {
        self.index(model, delay).map_or(0.0, |i| p[i])
    }

    fn num_models(&self, p: &DVector<f64>) -> usize {
        p.len() / self.width
    }

    fn hinge_terms(&self, p: &DVector<f64>, out: &mut Vec<Term>) {
        for i in 0..self.num_models(p) {
            let viol = self.sign_target - self.sign * self.b(p, i, 1);
            if viol > 0.0 {
                out.push(Term {
                    h: viol,
                    dh: vec![(self.index(i, 1).unwrap(), -self.sign)],
                });
            }
        }
    }

    /// Terms `max(0, λ_max(MᵢᵀPMᵢ - P) + τ)` for a fixed `P`.
    fn contraction_terms(&self, p: &DVector<f64>, pm: &DMatrix<f64>, out: &mut Vec<Term>) {
        let nu = self.input_index.len();
        let n = nu - 1;
        if n == 0 {
            return;
        }
        for i in 0..self.num_models(p) {
            let b1 = self.b(p, i, 1);
            let mut m = DMatrix::zeros(n, n);
            for r in 0..n - 1 {
                m[(r, r + 1)] = 1.0;
            }
            for c in 0..n {
                m[(n - 1, c)] = -self.b(p, i, nu - c) / b1;
            }
            let res = m.transpose() * pm * &m - pm;
            let res = (&res + res.transpose()) * 0.5;
            let eig = nalgebra::SymmetricEigen::new(res);
            let (k, lam) = eig
                .eigenvalues
                .iter()
                .copied()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            let h = lam + self.contraction_margin;
            if h <= 0.0 {
                continue;
            }
            let v = eig.eigenvectors.column(k).into_owned();
            let pmv = pm * (&m * &v);
            let i1 = self.index(i, 1).unwrap();
            let mut dh = Vec::new();
            for c in 0..n {
                // dλ/dM[n-1][c]
                let dl = 2.0 * pmv[n - 1] * v[c];
                let delay = nu - c;
                if let Some(j) = self.index(i, delay) {
                    dh.push((j, -dl / b1));
                }
                dh.push((i1, dl * self.b(p, i, delay) / (b1 * b1)));
            }
            out.push(Term { h, dh });
        }
    }

    fn terms(&self, p: &DVector<f64>, lyap: &DMatrix<f64>, contraction: bool) -> Vec<Term> {
        let mut out = Vec::new();
        self.hinge_terms(p, &mut out);
        if contraction && self.signs_ok(p) {
            self.contraction_terms(p, lyap, &mut out);
        }
        out
    }

    fn signs_ok(&self, p: &DVector<f64>) -> bool {
        (0..self.num_models(p)).all(|i| self.sign * self.b(p, i, 1) >= self.sign_margin)
    }
}

fn flatten(model: &NarxModel) -> DVector<f64> {
    DVector::from_iterator(
        model.net.num_models() * (model.delays.lin_dim() + 1),
        model
            .net
            .models()
            .iter()
            .flat_map(|m| std::iter::once(m.offset).chain(m.gains.iter().copied())),
    )
}

fn with_params(model: &NarxModel, p: &DVector<f64>, width: usize) -> NarxModel {
    let mut out = model.clone();
    for (i, m) in out.net.models_mut().iter_mut().enumerate() {
        m.offset = p[i * width];
        m.gains
            .copy_from_slice(&p.as_slice()[i * width + 1..(i + 1) * width]);
    }
    out
}

fn certified(model: &NarxModel, opts: &LmiOptions) -> Option<CertificationReport> {
    certify_bibo(model, opts)
        .ok()
        .filter(|r| r.verdict == Verdict::Certified)
}

/// Tunes local model parameters until the critical gains share the requested sign
/// with margin and the BIBO certificate of the inverse dynamics is feasible.
///
/// Each iteration is a damped Gauss-Newton step on the prediction MSE plus the
/// weighted squared penalties, followed by a backtracking line search.
pub fn fine_tune_for_certifiability(
    model: &NarxModel,
    regs: &Regressors,
    cfg: &FineTuneConfig,
) -> Result<FineTuneOutcome> {
    if model.delays.num_inputs() != 1 || model.delays.num_outputs() != 1 {
        return Err(Error::Unsupported(
            "fine-tuning covers single-input single-output models".into(),
        ));
    }
    if !model.delays.inputs[0].val.is_empty() {
        return Err(Error::Unsupported(
            "delayed inputs in the validity space".into(),
        ));
    }
    if !(cfg.sign_margin > 0.0) {
        return Err(Error::Config("sign_margin must be positive".into()));
    }
    if regs.is_empty() {
        return Err(Error::InsufficientData { needed: 0, got: 0 });
    }
    let nu = model.delays.inputs[0].max_delay();
    let input_index: Vec<Option<usize>> = (1..=nu)
        .map(|d| gain_index(model, Signal::Input, 0, d))
        .collect();
    if input_index.first().copied().flatten().is_none() {
        return Err(Error::Assumption(
            "u(k) is not a regressor; relative degree is not one".into(),
        ));
    }
    let phi = regs
        .val
        .iter()
        .map(|v| model.net.validity_weights(v))
        .collect::<Result<Vec<_>>>()?;
    let width = model.delays.lin_dim() + 1;
    let prob = Problem {
        regs,
        phi,
        input_index,
        sign: cfg.sign.value(),
        sign_target: cfg.sign_margin * 1.1,
        contraction_margin: cfg.contraction_margin,
        sign_margin: cfg.sign_margin,
        width,
    };

    let mut p = flatten(model);
    let dim = p.len();
    let (mse_before, _) = prob.mse_and_grad(&p);
    if prob.signs_ok(&p) {
        if let Some(rep) = certified(model, &cfg.lmi) {
            return Ok(FineTuneOutcome {
                model: model.clone(),
                certification: rep,
                iterations: 0,
                mse_before,
                mse_after: mse_before,
            });
        }
    }

    let h_mse = prob.mse_hessian(dim);
    let damping = 1e-9 * h_mse.diagonal().max().max(1e-12);
    let mut weight = cfg.penalty_weight;
    let n = nu - 1;
    let mut lyap = DMatrix::<f64>::identity(n, n);
    let mut use_contraction = false;
    let mut best_penalty = f64::INFINITY;

    let objective = |p: &DVector<f64>, w: f64, lyap: &DMatrix<f64>, contr: bool| {
        let (mse, _) = prob.mse_and_grad(p);
        let pen: f64 = prob.terms(p, lyap, contr).iter().map(|t| t.h * t.h).sum();
        (mse + w * pen, pen)
    };

    for it in 1..=cfg.max_iterations {
        let (mse, mut grad) = prob.mse_and_grad(&p);
        let terms = prob.terms(&p, &lyap, use_contraction);
        let pen: f64 = terms.iter().map(|t| t.h * t.h).sum();
        best_penalty = best_penalty.min(pen);
        let f = mse + weight * pen;
        let mut hess = h_mse.clone();
        for t in &terms {
            let mut j = DVector::zeros(dim);
            for (idx, v) in &t.dh {
                j[*idx] += v;
            }
            grad.axpy(2.0 * weight * t.h, &j, 1.0);
            hess.syger(2.0 * weight, &j, &j, 1.0);
        }
        for d in 0..dim {
            hess[(d, d)] += damping;
        }
        let dir = match hess.cholesky() {
            Some(ch) => ch.solve(&grad),
            None => grad.clone(),
        };
        let mut s = 1.0;
        while s > 1e-12 {
            let cand = &p - &dir * s;
            if objective(&cand, weight, &lyap, use_contraction).0 <= f {
                p = cand;
                break;
            }
            s *= 0.5;
        }

        if it % cfg.check_every == 0 || it == cfg.max_iterations {
            if prob.signs_ok(&p) {
                let cand = with_params(model, &p, width);
                if let Some(rep) = certified(&cand, &cfg.lmi) {
                    let (mse_after, _) = prob.mse_and_grad(&p);
                    return Ok(FineTuneOutcome {
                        model: cand,
                        certification: rep,
                        iterations: it,
                        mse_before,
                        mse_after,
                    });
                }
                if n > 0 {
                    let mats = inverse_system_matrices(&cand)?.matrices;
                    lyap = lmi::common_lyapunov(&mats, CERT_EPS, &cfg.lmi).best_p;
                    use_contraction = true;
                }
            }
            weight *= 2.0;
        }
    }
    Err(Error::CertifiabilityUnreached {
        iterations: cfg.max_iterations,
        best_penalty,
    })
}
