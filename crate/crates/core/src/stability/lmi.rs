//! Common quadratic Lyapunov function search.
//!
//! Finds a symmetric `P` with `P ≻ ε I` and `MᵢᵀPMᵢ - P ≺ -ε I` for every `Mᵢ`. The
//! constraints are homogeneous in `P`, so the search runs on the slice `tr P = n` and
//! minimizes the largest eigenvalue over all constraint blocks (including `-P`). A
//! log-sum-exp smoothing of that maximum is descended with Armijo backtracking; the
//! temperature is lowered whenever progress stalls. Candidates from the individual
//! discrete Lyapunov equations are tried first. Whatever the search returns is only
//! accepted after an independent eigenvalue verification.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmiOptions {
    /// Descent iterations per start.
    pub max_iterations: usize,
    /// Random starts in addition to the Lyapunov-equation candidates.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for LmiOptions {
    fn default() -> Self {
        Self {
            max_iterations: 3000,
            restarts: 4,
            seed: 0x5eed,
        }
    }
}

/// Verified solution.
#[derive(Debug, Clone, PartialEq)]
pub struct Verified {
    pub p: DMatrix<f64>,
    /// `min(λ_min(P), min_i -λ_max(MᵢᵀPMᵢ - P))`.
    pub margin: f64,
    pub p_eigenvalues: Vec<f64>,
    /// Sorted eigenvalues of every `MᵢᵀPMᵢ - P`.
    pub residual_eigenvalues: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct LmiSearch {
    pub solution: Option<Verified>,
    /// Best value of the normalized objective `max(λ_max(MᵢᵀPMᵢ - P), -λ_min(P))`
    /// at `tr P = n`; negative means strictly feasible up to scaling.
    pub best_value: f64,
    pub best_p: DMatrix<f64>,
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn sorted_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let e = SymmetricEigen::new(sym(m));
    let mut idx: Vec<usize> = (0..e.eigenvalues.len()).collect();
    idx.sort_by(|a, b| e.eigenvalues[*a].total_cmp(&e.eigenvalues[*b]));
    let vals = idx.iter().map(|i| e.eigenvalues[*i]).collect();
    let vecs = DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| e.eigenvectors[(r, idx[c])]);
    (vals, vecs)
}

fn residual(m: &DMatrix<f64>, p: &DMatrix<f64>) -> DMatrix<f64> {
    sym(&(m.transpose() * p * m - p))
}

/// Checks the strict inequalities with margin `eps` and returns the eigenvalue data.
pub fn verify(p: &DMatrix<f64>, mats: &[DMatrix<f64>], eps: f64) -> Option<Verified> {
    let p = sym(p);
    let (p_eig, _) = sorted_eigen(&p);
    let residuals: Vec<Vec<f64>> = mats
        .iter()
        .map(|m| sorted_eigen(&residual(m, &p)).0)
        .collect();
    let p_min = p_eig.first().copied().unwrap_or(f64::INFINITY);
    let worst = residuals
        .iter()
        .filter_map(|r| r.last().copied())
        .fold(f64::NEG_INFINITY, f64::max);
    let margin = p_min.min(-worst);
    (margin > eps).then_some(Verified {
        p,
        margin,
        p_eigenvalues: p_eig,
        residual_eigenvalues: residuals,
    })
}

/// Scales a strictly feasible direction so that the margin exceeds `eps`, then verifies.
fn scale_and_verify(p: &DMatrix<f64>, mats: &[DMatrix<f64>], eps: f64) -> Option<Verified> {
    let p = sym(p);
    let norm = p.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return None;
    }
    let p = p / norm;
    let v = objective(&p, mats);
    // Require the gap to be well above rounding noise before trusting the direction.
    if !(v < -1e-11) {
        return None;
    }
    let s = (4.0 * eps / -v).max(1.0);
    verify(&(p * s), mats, eps)
}

/// `max(λ_max(MᵢᵀPMᵢ - P), -λ_min(P))`.
pub fn objective(p: &DMatrix<f64>, mats: &[DMatrix<f64>]) -> f64 {
    let mut v = -sorted_eigen(p).0[0];
    for m in mats {
        v = v.max(*sorted_eigen(&residual(m, p)).0.last().unwrap());
    }
    v
}

/// Smoothed objective and its gradient (projected onto `tr = 0`).
fn smoothed(p: &DMatrix<f64>, mats: &[DMatrix<f64>], t: f64) -> (f64, DMatrix<f64>) {
    let n = p.nrows();
    // (eigenvalue, gradient direction) pairs of every block
    let mut terms: Vec<(f64, DMatrix<f64>)> = Vec::new();
    let (pv, pe) = sorted_eigen(p);
    for (k, lam) in pv.iter().enumerate() {
        let v = pe.column(k);
        terms.push((-lam, -(v * v.transpose())));
    }
    for m in mats {
        let (rv, re) = sorted_eigen(&residual(m, p));
        for (k, lam) in rv.iter().enumerate() {
            let v = re.column(k).into_owned();
            let mv = m * &v;
            terms.push((*lam, &mv * mv.transpose() - &v * v.transpose()));
        }
    }
    let max = terms.iter().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = terms.iter().map(|(l, _)| ((l - max) / t).exp()).collect();
    let z: f64 = weights.iter().sum();
    let value = max + t * z.ln();
    let mut g = DMatrix::zeros(n, n);
    for ((_, d), w) in terms.iter().zip(&weights) {
        g += d * (w / z);
    }
    let tr = g.trace() / n as f64;
    for i in 0..n {
        g[(i, i)] -= tr;
    }
    (value, sym(&g))
}

fn normalize(p: &DMatrix<f64>) -> DMatrix<f64> {
    let n = p.nrows() as f64;
    let tr = p.trace();
    if tr > 0.0 {
        sym(p) * (n / tr)
    } else {
        DMatrix::identity(p.nrows(), p.ncols())
    }
}

/// Solution of `P = MᵀPM + I` by the doubling iteration; `None` if it does not converge.
pub fn discrete_lyapunov(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = m.nrows();
    let mut p = DMatrix::<f64>::identity(n, n);
    let mut a = m.clone();
    for _ in 0..64 {
        let next = &p + a.transpose() * &p * &a;
        a = &a * &a;
        let delta = (&next - &p).amax();
        p = next;
        if !p.iter().all(|v| v.is_finite()) || !delta.is_finite() {
            return None;
        }
        if delta <= 1e-15 * p.amax() || a.amax() < 1e-300 {
            return Some(sym(&p));
        }
    }
    None
}

fn descend(
    start: DMatrix<f64>,
    mats: &[DMatrix<f64>],
    eps: f64,
    iterations: usize,
    best: &mut (f64, DMatrix<f64>),
) -> Option<Verified> {
    let mut p = normalize(&start);
    let mut t = (0.1 * objective(&p, mats).abs()).max(1e-3);
    let mut step = 1.0;
    for _ in 0..iterations {
        let exact = objective(&p, mats);
        if exact < best.0 {
            *best = (exact, p.clone());
        }
        if exact < 0.0 {
            if let Some(v) = scale_and_verify(&p, mats, eps) {
                return Some(v);
            }
        }
        let (f, g) = smoothed(&p, mats, t);
        let gn2 = g.norm_squared();
        if gn2 < 1e-24 {
            t *= 0.5;
            if t < 1e-12 {
                break;
            }
            continue;
        }
        let mut accepted = false;
        let mut s = step;
        while s > 1e-14 {
            let cand = normalize(&(&p - &g * s));
            if sorted_eigen(&cand).0[0] > -1e3 {
                let (fc, _) = smoothed(&cand, mats, t);
                if fc <= f - 1e-4 * s * gn2 {
                    p = cand;
                    accepted = true;
                    break;
                }
            }
            s *= 0.5;
        }
        if accepted {
            step = (s * 2.0).min(1e3);
        } else {
            t *= 0.5;
            step = 1.0;
            if t < 1e-12 {
                break;
            }
        }
    }
    None
}

/// Searches a common quadratic Lyapunov matrix for all `mats`.
pub fn common_lyapunov(mats: &[DMatrix<f64>], eps: f64, opts: &LmiOptions) -> LmiSearch {
    let n = mats.first().map_or(0, |m| m.nrows());
    let mut best = (f64::INFINITY, DMatrix::identity(n, n));
    if n == 0 {
        return LmiSearch {
            solution: None,
            best_value: f64::NEG_INFINITY,
            best_p: best.1,
        };
    }
    let mut candidates: Vec<DMatrix<f64>> = Vec::new();
    let lyap: Vec<DMatrix<f64>> = mats.iter().filter_map(discrete_lyapunov).collect();
    if !lyap.is_empty() {
        let sum = lyap
            .iter()
            .fold(DMatrix::zeros(n, n), |acc, p| acc + normalize(p));
        candidates.push(sum);
    }
    candidates.extend(lyap);
    candidates.push(DMatrix::identity(n, n));

    for c in &candidates {
        let v = objective(&normalize(c), mats);
        if v < best.0 {
            best = (v, normalize(c));
        }
        if let Some(ok) = scale_and_verify(c, mats, eps) {
            return LmiSearch {
                solution: Some(ok),
                best_value: v,
                best_p: normalize(c),
            };
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut starts = vec![best.1.clone()];
    for _ in 0..opts.restarts {
        let r = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        starts.push(&r * r.transpose() + DMatrix::identity(n, n) * 0.1);
    }
    for s in starts {
        if let Some(ok) = descend(s, mats, eps, opts.max_iterations, &mut best) {
            let v = objective(&normalize(&ok.p), mats);
            return LmiSearch {
                solution: Some(ok),
                best_value: v,
                best_p: best.1,
            };
        }
    }
    LmiSearch {
        solution: None,
        best_value: best.0,
        best_p: best.1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_lyapunov_closed_form() {
        let m = DMatrix::from_element(1, 1, 0.5);
        let p = discrete_lyapunov(&m).unwrap();
        assert!((p[(0, 0)] - 1.0 / 0.75).abs() < 1e-12);
        assert!(discrete_lyapunov(&DMatrix::from_element(1, 1, 1.5)).is_none());
    }

    #[test]
    fn verify_rejects_indefinite_p() {
        let m = DMatrix::from_element(1, 1, 0.1);
        assert!(verify(
            &DMatrix::from_element(1, 1, -1.0),
            std::slice::from_ref(&m),
            1e-8
        )
        .is_none());
        assert!(verify(&DMatrix::from_element(1, 1, 1.0), &[m], 1e-8).is_some());
    }

    #[test]
    fn pair_needing_non_identity_metric_is_found() {
        // `a` is not a contraction in the Euclidean norm, so P = I fails.
        let a = DMatrix::from_row_slice(2, 2, &[0.2, 1.2, 0.0, 0.3]);
        let b = DMatrix::from_row_slice(2, 2, &[0.3, 0.0, 0.5, 0.2]);
        assert!(a.norm() > 1.0);
        let search = common_lyapunov(&[a.clone(), b.clone()], 1e-8, &LmiOptions::default());
        let sol = search.solution.expect("feasible pair");
        for m in [&a, &b] {
            let r = m.transpose() * &sol.p * m - &sol.p;
            assert!(SymmetricEigen::new(r).eigenvalues.max() < -1e-8);
        }
    }

    #[test]
    fn switching_pair_without_common_function_is_rejected() {
        // Both Schur stable, but the product has spectral radius > 1, so no common
        // quadratic Lyapunov function exists.
        let a =
            DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 0.0, 0.0]) + DMatrix::identity(2, 2) * 0.5;
        let b = a.transpose();
        let prod = &a * &b;
        assert!(prod.complex_eigenvalues().iter().any(|z| z.norm() > 1.0));
        let opts = LmiOptions {
            max_iterations: 300,
            restarts: 1,
            seed: 1,
        };
        let s = common_lyapunov(&[a, b], 1e-8, &opts);
        assert!(s.solution.is_none());
        assert!(s.best_value >= 0.0);
    }
}
