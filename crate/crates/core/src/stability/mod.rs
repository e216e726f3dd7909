//! Relative degree, the same-sign condition, the validity transformation and the
//! common-Lyapunov BIBO certificate of the inverse (controller) dynamics.

pub mod lmi;

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::narx::{check_system, NarxModel, Signal};
use crate::state_space::{LpvStateSpace, StateLayout};

pub use lmi::LmiOptions;

/// Strictness margin of the certificate inequalities.
pub const CERT_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Positive,
    Negative,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Positive => 1.0,
            Sign::Negative => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDegree {
    pub output: usize,
    pub input: usize,
    pub delta: usize,
    pub well_defined: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeDegreeReport {
    /// Input-output pairs where the input enters the model at all.
    pub pairs: Vec<PairDegree>,
    /// Common relative degree when well defined.
    pub delta: Option<usize>,
    pub well_defined: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub system_order: usize,
    pub zero_dynamics: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SignCheck {
    Consistent {
        sign: Sign,
        margin: f64,
    },
    Violation {
        zero: Vec<usize>,
        positive: Vec<usize>,
        negative: Vec<usize>,
    },
}

impl SignCheck {
    pub fn sign(&self) -> Option<Sign> {
        match self {
            SignCheck::Consistent { sign, .. } => Some(*sign),
            SignCheck::Violation { .. } => None,
        }
    }
}

/// Position of `(signal, channel, delay)` among the linear regressors.
pub(crate) fn gain_index(model: &NarxModel, sig: Signal, ch: usize, delay: usize) -> Option<usize> {
    model
        .delays
        .lin_layout()
        .iter()
        .position(|e| *e == (sig, ch, delay))
}

/// Per-model gains of input `ch` at `delay` (zeros when the delay is not a regressor).
pub fn input_gains(model: &NarxModel, ch: usize, delay: usize) -> Vec<f64> {
    match gain_index(model, Signal::Input, ch, delay) {
        Some(j) => model.net.models().iter().map(|m| m.gains[j]).collect(),
        None => vec![0.0; model.net.num_models()],
    }
}

/// Common sign of a set of parameters, with the smallest magnitude as margin.
pub fn same_sign(values: &[f64]) -> SignCheck {
    let pick = |f: fn(&f64) -> bool| {
        values
            .iter()
            .enumerate()
            .filter(|(_, v)| f(v))
            .map(|(i, _)| i)
            .collect::<Vec<_>>()
    };
    let zero = pick(|v| *v == 0.0 || !v.is_finite());
    let positive = pick(|v| *v > 0.0 && v.is_finite());
    let negative = pick(|v| *v < 0.0 && v.is_finite());
    if !values.is_empty() && zero.is_empty() && (positive.is_empty() || negative.is_empty()) {
        let margin = values.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
        let sign = if negative.is_empty() {
            Sign::Positive
        } else {
            Sign::Negative
        };
        SignCheck::Consistent { sign, margin }
    } else {
        SignCheck::Violation {
            zero,
            positive,
            negative,
        }
    }
}

/// Same-sign condition on the gains of the first input at `delay` over all local models.
pub fn same_sign_check(model: &NarxModel, delay: usize) -> SignCheck {
    same_sign(&input_gains(model, 0, delay))
}

fn pair_degree(model: &NarxModel, input: usize) -> Option<PairDegree> {
    let s = &model.delays.inputs[input];
    let delta = s.lin.iter().chain(&s.val).copied().min()?;
    let mut pd = PairDegree {
        output: model.output,
        input,
        delta,
        well_defined: true,
        reason: None,
    };
    if !s.val.contains(&delta) {
        if let SignCheck::Violation {
            zero,
            positive,
            negative,
        } = same_sign(&input_gains(model, input, delta))
        {
            pd.well_defined = false;
            pd.reason = Some(format!(
                "gains of u{}(k-{}) on y{} are not of one nonzero sign (zero: {zero:?}, positive: {positive:?}, negative: {negative:?})",
                input + 1,
                delta - 1,
                model.output + 1,
            ));
        }
    }
    Some(pd)
}

/// Relative degree of a single-output model.
pub fn relative_degree(model: &NarxModel) -> RelativeDegreeReport {
    relative_degree_system(std::slice::from_ref(model)).unwrap_or_else(|e| RelativeDegreeReport {
        pairs: vec![],
        delta: None,
        well_defined: false,
        reason: Some(e.to_string()),
        system_order: 0,
        zero_dynamics: false,
    })
}

/// Relative degree of a system of models, one per output, requiring one common value
/// over every input-output pair with an influence.
pub fn relative_degree_system(models: &[NarxModel]) -> Result<RelativeDegreeReport> {
    let (du, _, _) = check_system(models)?;
    let system_order = StateLayout::from_models(models)?.dim();
    let mut pairs = Vec::new();
    let mut reason = None;
    for m in models {
        let own: Vec<PairDegree> = (0..du).filter_map(|j| pair_degree(m, j)).collect();
        if own.is_empty() && reason.is_none() {
            reason = Some(format!(
                "output y{} is not influenced by any input",
                m.output + 1
            ));
        }
        pairs.extend(own);
    }
    if reason.is_none() {
        reason = pairs.iter().find_map(|p| p.reason.clone());
    }
    let delta = pairs.first().map(|p| p.delta);
    if reason.is_none() && pairs.iter().any(|p| Some(p.delta) != delta) {
        reason = Some("input-output pairs have different relative degrees".into());
    }
    let well_defined = reason.is_none();
    let delta = if well_defined { delta } else { None };
    Ok(RelativeDegreeReport {
        zero_dynamics: delta.is_some_and(|d| d < system_order),
        pairs,
        delta,
        well_defined,
        reason,
        system_order,
    })
}

/// `φ̄_i = b_i φ_i / Σ_j b_j φ_j` for same-signed `b`.
pub fn validity_transform(phi: &[f64], b1: &[f64]) -> Result<Vec<f64>> {
    check_len("critical gains", b1.len(), phi.len())?;
    if let SignCheck::Violation { .. } = same_sign(b1) {
        return Err(Error::Assumption(format!(
            "critical gains {b1:?} are not of one nonzero sign"
        )));
    }
    let denom: f64 = phi.iter().zip(b1).map(|(p, b)| p * b).sum();
    Ok(phi.iter().zip(b1).map(|(p, b)| p * b / denom).collect())
}

/// Inverse-system data of a relative-degree-one single-input model.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseSystem {
    /// `Λ_i Â_i` per local model; `nu - 1` square.
    pub matrices: Vec<DMatrix<f64>>,
    /// `λ_i = -1 / b₁⁽ⁱ⁾`.
    pub lambdas: Vec<f64>,
    pub sign: Sign,
}

impl InverseSystem {
    pub fn dim(&self) -> usize {
        self.matrices.first().map_or(0, |m| m.nrows())
    }
}

fn require_single_input(model: &NarxModel) -> Result<()> {
    if model.delays.num_inputs() != 1 || model.delays.num_outputs() != 1 {
        return Err(Error::Unsupported(
            "the stability certificate covers single-input single-output models".into(),
        ));
    }
    if !model.delays.inputs[0].val.is_empty() {
        return Err(Error::Unsupported(
            "delayed inputs in the validity space make the inverse implicit".into(),
        ));
    }
    Ok(())
}

pub fn inverse_system_matrices(model: &NarxModel) -> Result<InverseSystem> {
    require_single_input(model)?;
    let report = relative_degree(model);
    if report.delta != Some(1) {
        return Err(Error::Assumption(match report.reason {
            Some(r) => format!("relative degree one required: {r}"),
            None => format!("relative degree one required, got {:?}", report.delta),
        }));
    }
    let sign = same_sign_check(model, 1)
        .sign()
        .ok_or_else(|| Error::Assumption("critical input gains change sign".into()))?;
    let nu = model.delays.inputs[0].max_delay();
    let n = nu - 1;
    let b: Vec<Vec<f64>> = (1..=nu).map(|i| input_gains(model, 0, i)).collect();
    let mut matrices = Vec::with_capacity(model.net.num_models());
    let mut lambdas = Vec::with_capacity(model.net.num_models());
    for i in 0..model.net.num_models() {
        let lambda = -1.0 / b[0][i];
        let mut m = DMatrix::zeros(n, n);
        for r in 0..n.saturating_sub(1) {
            m[(r, r + 1)] = 1.0;
        }
        if n > 0 {
            // slot c holds u(k-n+c), weighted by b_{nu-c}
            for c in 0..n {
                m[(n - 1, c)] = lambda * b[nu - c - 1][i];
            }
        }
        matrices.push(m);
        lambdas.push(lambda);
    }
    Ok(InverseSystem {
        matrices,
        lambdas,
        sign,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Certified,
    /// A local inverse system is not Schur stable; no common `P` can exist.
    Infeasible,
    /// The search budget ran out; the criterion is only sufficient.
    NotCertified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiboCertificate {
    /// Rows of `P`; empty when the inverse dynamics have no state.
    pub p: Vec<Vec<f64>>,
    pub margin: f64,
    pub p_eigenvalues: Vec<f64>,
    pub residual_eigenvalues: Vec<Vec<f64>>,
}

impl BiboCertificate {
    pub fn p_matrix(&self) -> DMatrix<f64> {
        let n = self.p.len();
        DMatrix::from_fn(n, n, |r, c| self.p[r][c])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub verdict: Verdict,
    pub certificate: Option<BiboCertificate>,
    pub spectral_radii: Vec<f64>,
    pub reason: String,
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// BIBO certificate of the feedforward controller of a relative-degree-one model.
pub fn certify_bibo(model: &NarxModel, opts: &LmiOptions) -> Result<CertificationReport> {
    let inv = inverse_system_matrices(model)?;
    certify_matrices(&inv.matrices, opts)
}

/// Common-Lyapunov certificate for a set of inverse-system matrices.
pub fn certify_matrices(mats: &[DMatrix<f64>], opts: &LmiOptions) -> Result<CertificationReport> {
    let n = mats.first().map_or(0, |m| m.nrows());
    for m in mats {
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::Shape {
                what: "inverse-system matrix",
                got: m.nrows(),
                expected: n,
            });
        }
    }
    if n == 0 {
        return Ok(CertificationReport {
            verdict: Verdict::Certified,
            certificate: Some(BiboCertificate {
                p: vec![],
                margin: f64::MAX,
                p_eigenvalues: vec![],
                residual_eigenvalues: vec![vec![]; mats.len()],
            }),
            spectral_radii: vec![0.0; mats.len()],
            reason: "controller has no internal input dynamics".into(),
        });
    }
    let radii: Vec<f64> = mats.iter().map(spectral_radius).collect();
    if let Some((i, r)) = radii.iter().enumerate().find(|(_, r)| **r >= 1.0) {
        return Ok(CertificationReport {
            verdict: Verdict::Infeasible,
            certificate: None,
            reason: format!("local inverse system {i} has spectral radius {r:.6} >= 1"),
            spectral_radii: radii,
        });
    }
    let search = lmi::common_lyapunov(mats, CERT_EPS, opts);
    Ok(match search.solution {
        Some(v) => CertificationReport {
            verdict: Verdict::Certified,
            certificate: Some(BiboCertificate {
                p: v.p
                    .row_iter()
                    .map(|r| r.iter().copied().collect())
                    .collect(),
                margin: v.margin,
                p_eigenvalues: v.p_eigenvalues,
                residual_eigenvalues: v.residual_eigenvalues,
            }),
            spectral_radii: radii,
            reason: "common quadratic Lyapunov function verified".into(),
        },
        None => CertificationReport {
            verdict: Verdict::NotCertified,
            certificate: None,
            spectral_radii: radii,
            reason: format!(
                "no common Lyapunov matrix found (best normalized objective {:.3e})",
                search.best_value
            ),
        },
    })
}

/// Stability verdict for the feedforward controller of a whole model system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemCertification {
    pub verdict: Verdict,
    pub relative_degree: Option<usize>,
    /// Result of the common-Lyapunov search when it applies.
    pub report: Option<CertificationReport>,
    /// Controller poles `(re, im)` of a single-model network.
    pub poles: Option<Vec<(f64, f64)>>,
    pub reason: String,
}

/// Certifies the controller of `models`. Relative degree one uses the common-Lyapunov
/// criterion; a single linear model of higher relative degree falls back to its exact
/// pole locations. Everything else is reported as not certified.
pub fn certify_system(models: &[NarxModel], opts: &LmiOptions) -> Result<SystemCertification> {
    let rd = relative_degree_system(models)?;
    let not_certified = |reason: String, delta: Option<usize>, poles| SystemCertification {
        verdict: Verdict::NotCertified,
        relative_degree: delta,
        report: None,
        poles,
        reason,
    };
    if !rd.well_defined {
        return Ok(not_certified(rd.reason.unwrap_or_default(), None, None));
    }
    let delta = rd.delta;
    let single =
        models.len() == 1 && models[0].net.num_models() == 1 && models[0].delays.num_inputs() == 1;
    let poles = if single {
        Some(
            linear_controller_poles(&models[0])?
                .iter()
                .map(|z| (z.re, z.im))
                .collect::<Vec<_>>(),
        )
    } else {
        None
    };
    if models.len() > 1 {
        return Ok(not_certified(
            "no stability criterion for coupled multi-output controllers".into(),
            delta,
            poles,
        ));
    }
    if delta == Some(1) {
        return Ok(match certify_bibo(&models[0], opts) {
            Ok(report) => SystemCertification {
                verdict: report.verdict,
                relative_degree: delta,
                reason: report.reason.clone(),
                report: Some(report),
                poles,
            },
            Err(e @ (Error::Unsupported(_) | Error::Assumption(_))) => {
                not_certified(e.to_string(), delta, poles)
            }
            Err(e) => return Err(e),
        });
    }
    match poles {
        Some(p) => {
            let worst = p.iter().map(|(re, im)| re.hypot(*im)).fold(0.0, f64::max);
            let verdict = if worst < 1.0 {
                Verdict::Certified
            } else {
                Verdict::Infeasible
            };
            Ok(SystemCertification {
                verdict,
                relative_degree: delta,
                report: None,
                reason: format!("largest controller pole magnitude {worst:.6}"),
                poles: Some(p),
            })
        }
        None => Ok(not_certified(
            format!(
                "relative degree {} > 1 with several local models is outside the criterion",
                delta.unwrap_or(0)
            ),
            delta,
            None,
        )),
    }
}

/// Poles of the feedforward controller of a single-model (linear) network.
///
/// With `α₀ = cᵀA^{δ-1}b` and `α_m` the coefficient of `u(k-m)` in `cᵀA^δ x(k)`, the
/// controller denominator is `z · Σ_m α_m z^{nu-1-m}`.
pub fn linear_controller_poles(model: &NarxModel) -> Result<Vec<Complex<f64>>> {
    if model.net.num_models() != 1 {
        return Err(Error::Unsupported(format!(
            "pole analysis needs a single local model, got {}",
            model.net.num_models()
        )));
    }
    if model.delays.num_inputs() != 1 || model.delays.num_outputs() != 1 {
        return Err(Error::Unsupported(
            "pole analysis is single-input single-output".into(),
        ));
    }
    let ss = LpvStateSpace::from_models(std::slice::from_ref(model))?;
    let m = ss.assemble(&[vec![1.0]])?;
    let n = ss.dim();
    let c = ss.output_matrix().row(0).transpose();
    let b = m.b.column(0).into_owned();
    let scale = m.a.norm().max(b.norm()).max(1.0);
    let mut ak_b = b.clone();
    let mut delta = None;
    for d in 1..=n + 1 {
        if c.dot(&ak_b).abs() > 1e-14 * scale.powi(d as i32) {
            delta = Some(d);
            break;
        }
        ak_b = &m.a * ak_b;
    }
    let delta =
        delta.ok_or_else(|| Error::RelativeDegree("input never reaches the output".into()))?;
    let alpha0 = c.dot(&ak_b);
    let mut a_delta = DMatrix::<f64>::identity(n, n);
    for _ in 0..delta {
        a_delta = &m.a * a_delta;
    }
    let row = c.transpose() * a_delta;
    let nu = ss.layout().input_max_delay(0);
    let mut coeffs = vec![alpha0];
    for k in 1..nu {
        let slot = ss
            .layout()
            .slot(Signal::Input, 0, k + 1)
            .expect("input slot");
        coeffs.push(row[slot]);
    }
    let mut poles = vec![Complex::new(0.0, 0.0)];
    poles.extend(polynomial_roots(&coeffs));
    Ok(poles)
}

/// Roots of `c₀ zⁿ + c₁ zⁿ⁻¹ + … + cₙ` from the companion matrix.
pub fn polynomial_roots(coeffs: &[f64]) -> Vec<Complex<f64>> {
    let deg = coeffs.len().saturating_sub(1);
    if deg == 0 {
        return vec![];
    }
    let mut comp = DMatrix::<f64>::zeros(deg, deg);
    for j in 0..deg {
        comp[(0, j)] = -coeffs[j + 1] / coeffs[0];
    }
    for i in 1..deg {
        comp[(i, i - 1)] = 1.0;
    }
    comp.complex_eigenvalues().iter().copied().collect()
}

/// `Σ φ_i θ_i / Σ φ_i b_i` and `Σ (φ̄_i / b_i) θ_i`, both sides of the transformation
/// identity (exposed for diagnostics and tests).
pub fn transformation_sides(phi: &[f64], b1: &[f64], theta: &[f64]) -> Result<(f64, f64)> {
    check_len("parameters", theta.len(), phi.len())?;
    let bar = validity_transform(phi, b1)?;
    let lhs = phi.iter().zip(theta).map(|(p, t)| p * t).sum::<f64>()
        / phi.iter().zip(b1).map(|(p, b)| p * b).sum::<f64>();
    let rhs = bar
        .iter()
        .zip(b1)
        .zip(theta)
        .map(|((p, b), t)| p / b * t)
        .sum();
    Ok((lhs, rhs))
}
