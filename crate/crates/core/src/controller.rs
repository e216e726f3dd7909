//! Feedforward controllers obtained by inverting a local model network.
//!
//! At every step the controller rebuilds the desired state `x_des(k)` from its own past
//! inputs, the measured disturbances and the desired outputs, propagates it `δ` steps
//! through the LPV realization (affinely in `u(k)`), and solves
//! `y_des(k+δ) = C x(k+δ)` for `u(k)`. Future validities use desired outputs in place
//! of measurements and hold the latest disturbance constant. The reference is delayed
//! by `δ + 1` samples to make the law causal.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::narx::{rmse, Signal};
use crate::plant::{closed_loop, LpvPlant};
use crate::stability::relative_degree_system;
use crate::state_space::{LpvKind, LpvStateSpace};

/// Below this magnitude the instantaneous gain counts as singular.
const SINGULAR_TOL: f64 = 1e-12;

/// Delay between the reference and the desired output: `y_des(k) = ṽ(k - δ - 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceShift(usize);

impl ReferenceShift {
    pub fn for_relative_degree(delta: usize) -> Self {
        Self(delta + 1)
    }

    pub fn samples(self) -> usize {
        self.0
    }
}

/// Bounded history of one scalar signal; times before the first sample read as `warm`.
#[derive(Debug, Clone)]
struct Trail {
    buf: VecDeque<f64>,
    cap: usize,
    warm: f64,
    /// Time of the next pushed sample.
    next: i64,
}

impl Trail {
    fn new(cap: usize, warm: f64) -> Self {
        Self {
            buf: VecDeque::with_capacity(cap),
            cap,
            warm,
            next: 0,
        }
    }

    fn push(&mut self, v: f64) {
        if self.buf.len() == self.cap {
            self.buf.pop_front();
        }
        self.buf.push_back(v);
        self.next += 1;
    }

    fn at(&self, t: i64) -> f64 {
        if t < 0 {
            return self.warm;
        }
        let first = self.next - self.buf.len() as i64;
        assert!(t >= first && t < self.next, "sample {t} not retained");
        self.buf[(t - first) as usize]
    }
}

#[derive(Debug, Clone)]
pub struct FeedforwardController {
    ss: LpvStateSpace,
    delta: usize,
    shift: ReferenceShift,
    capacity: usize,
    u: Vec<Trail>,
    d: Vec<Trail>,
    v: Vec<Trail>,
    k: i64,
    started: bool,
}

/// Builds the controller for a realization whose relative degree is well defined.
pub fn synthesize(ss: &LpvStateSpace) -> Result<FeedforwardController> {
    let models: Vec<_> = ss.models().cloned().collect();
    if models
        .iter()
        .any(|m| m.delays.inputs.iter().any(|s| !s.val.is_empty()))
    {
        return Err(Error::Unsupported(
            "inputs in the validity space make the inverse implicit".into(),
        ));
    }
    let report = relative_degree_system(&models)?;
    let delta = match report.delta {
        Some(d) if report.well_defined => d,
        _ => {
            return Err(Error::RelativeDegree(
                report.reason.unwrap_or_else(|| "not well defined".into()),
            ))
        }
    };
    let shift = ReferenceShift::for_relative_degree(delta);
    let max_delay = models
        .iter()
        .map(|m| m.delays.max_delay())
        .max()
        .unwrap_or(1);
    let capacity = max_delay + delta + shift.samples() + 2;
    Ok(FeedforwardController {
        delta,
        shift,
        capacity,
        u: vec![Trail::new(capacity, 0.0); ss.num_inputs()],
        d: vec![Trail::new(capacity, 0.0); ss.num_disturbances()],
        v: vec![Trail::new(capacity, 0.0); ss.num_outputs()],
        k: 0,
        started: false,
        ss: ss.clone(),
    })
}

/// Solves `G u = rhs`; exact when `G` has full row rank, least squares with minimum
/// norm otherwise allowed only when there are more outputs than inputs.
fn solve_gain(g: &DMatrix<f64>, rhs: &DVector<f64>) -> std::result::Result<DVector<f64>, String> {
    if g.nrows() == 1 && g.ncols() == 1 {
        let b = g[(0, 0)];
        if !(b.abs() > SINGULAR_TOL) {
            return Err(format!("instantaneous gain {b:e}"));
        }
        return Ok(DVector::from_element(1, rhs[0] / b));
    }
    let svd = g.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = SINGULAR_TOL.max(1e-10 * smax);
    let rank = svd.singular_values.iter().filter(|s| **s > tol).count();
    if g.nrows() <= g.ncols() && rank < g.nrows() {
        return Err(format!(
            "gain matrix has rank {rank} < {} (singular values {:?})",
            g.nrows(),
            svd.singular_values.as_slice()
        ));
    }
    svd.solve(rhs, tol).map_err(|e| e.to_string())
}

impl FeedforwardController {
    pub fn delta(&self) -> usize {
        self.delta
    }

    pub fn shift(&self) -> ReferenceShift {
        self.shift
    }

    pub fn kind(&self) -> LpvKind {
        self.ss.kind()
    }

    pub fn state_space(&self) -> &LpvStateSpace {
        &self.ss
    }

    /// Steady-state input of the model for constant outputs `r` and disturbance `d`,
    /// or zeros when it cannot be solved.
    pub fn steady_state_input(&self, r: &[f64], d: &[f64]) -> Vec<f64> {
        let du = self.ss.num_inputs();
        let eval = |u: &[f64]| -> Vec<f64> {
            let mut y = vec![0.0; self.ss.num_outputs()];
            for m in self.ss.models() {
                y[m.output] = m.predict_with(|sig, j, _| match sig {
                    Signal::Input => u[j],
                    Signal::Disturbance => d[j],
                    Signal::Output => r[j],
                });
            }
            y
        };
        let zero = vec![0.0; du];
        let y0 = eval(&zero);
        let mut g = DMatrix::zeros(y0.len(), du);
        for m in 0..du {
            let mut e = zero.clone();
            e[m] = 1.0;
            let ym = eval(&e);
            for j in 0..y0.len() {
                g[(j, m)] = ym[j] - y0[j];
            }
        }
        let rhs = DVector::from_iterator(y0.len(), r.iter().zip(&y0).map(|(a, b)| a - b));
        match solve_gain(&g, &rhs) {
            Ok(u) if u.iter().all(|v| v.is_finite()) => u.iter().copied().collect(),
            _ => zero,
        }
    }

    /// Clears the history and treats all past references, disturbances and inputs as
    /// the constants `r0`, `d0` and the matching steady-state input, which is returned.
    pub fn reset(&mut self, r0: &[f64], d0: &[f64]) -> Result<Vec<f64>> {
        check_len("reference", r0.len(), self.ss.num_outputs())?;
        check_len("disturbance", d0.len(), self.ss.num_disturbances())?;
        let u0 = self.steady_state_input(r0, d0);
        let cap = self.capacity;
        self.u = u0.iter().map(|v| Trail::new(cap, *v)).collect();
        self.d = d0.iter().map(|v| Trail::new(cap, *v)).collect();
        self.v = r0.iter().map(|v| Trail::new(cap, *v)).collect();
        self.k = 0;
        self.started = true;
        Ok(u0)
    }

    fn y_des(&self, j: usize, t: i64) -> f64 {
        self.v[j].at(t - self.shift.samples() as i64)
    }

    /// Control input `u(k)` for reference sample `ṽ(k)` and measured disturbance `d(k)`.
    pub fn step(&mut self, reference: &[f64], disturbance: &[f64]) -> Result<Vec<f64>> {
        check_len("reference", reference.len(), self.ss.num_outputs())?;
        check_len("disturbance", disturbance.len(), self.ss.num_disturbances())?;
        if !self.started {
            self.reset(reference, disturbance)?;
        }
        for (t, v) in self.v.iter_mut().zip(reference) {
            t.push(*v);
        }
        for (t, v) in self.d.iter_mut().zip(disturbance) {
            t.push(*v);
        }
        let k = self.k;
        let layout = self.ss.layout();
        let n = self.ss.dim();
        let du = self.ss.num_inputs();

        let x_des = layout.state_from(|sig, ch, back| {
            let t = k - back as i64;
            match sig {
                Signal::Input => self.u[ch].at(t),
                Signal::Disturbance => self.d[ch].at(t),
                Signal::Output => self.y_des(ch, t),
            }
        });
        let d_at = |ch: usize, t: i64| self.d[ch].at(t.min(k));
        let mut x0 = x_des;
        let mut x1 = DMatrix::<f64>::zeros(n, du);
        let mut phi_first = Vec::new();
        for j in 0..self.delta as i64 {
            let phi = self.ss.validities_with(|sig, ch, delay| {
                let t = k + j - delay as i64 + 1;
                match sig {
                    Signal::Output => self.y_des(ch, t),
                    Signal::Disturbance => d_at(ch, t),
                    // excluded at synthesis
                    Signal::Input => 0.0,
                }
            });
            let m = self.ss.assemble(&phi)?;
            let dj = DVector::from_iterator(
                self.ss.num_disturbances(),
                (0..self.ss.num_disturbances()).map(|c| d_at(c, k + j)),
            );
            x0 = &m.a * &x0 + &m.bd * dj + &m.offset;
            x1 = if j == 0 {
                &m.a * &x1 + &m.b
            } else {
                &m.a * &x1
            };
            if j == 0 {
                phi_first = phi;
            }
        }
        let c = self.ss.output_matrix();
        let g = c * &x1;
        let target = DVector::from_iterator(
            self.ss.num_outputs(),
            (0..self.ss.num_outputs()).map(|j| self.y_des(j, k + self.delta as i64)),
        );
        let rhs = target - c * &x0;
        let u = solve_gain(&g, &rhs).map_err(|reason| Error::Singular {
            reason,
            validities: phi_first,
        })?;
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: k as usize });
        }
        for (t, v) in self.u.iter_mut().zip(u.iter()) {
            t.push(*v);
        }
        self.k += 1;
        Ok(u.iter().copied().collect())
    }
}

/// Trajectories of one closed-loop run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingRun {
    /// `u_j(0..L)` per input channel.
    pub inputs: Vec<Vec<f64>>,
    /// `y_j(1..=L)` per output channel.
    pub outputs: Vec<Vec<f64>>,
    /// Reference delay in samples.
    pub shift: usize,
    /// Per-output RMSE of `y(t)` against `ṽ(t - shift)` over `t ∈ [shift + skip, L]`.
    pub rmse: Vec<f64>,
}

/// Per-channel RMSE of `y(t)` against `r(t - shift)` for `t ≥ shift + skip`.
pub fn shifted_rmse(
    outputs: &[Vec<f64>],
    reference: &[Vec<f64>],
    shift: usize,
    skip: usize,
) -> Result<Vec<f64>> {
    outputs
        .iter()
        .zip(reference)
        .map(|(y, r)| {
            let len = y.len();
            let start = shift + skip;
            if start > len {
                return Err(Error::InsufficientData {
                    needed: start,
                    got: len,
                });
            }
            // y[i] holds time i + 1
            let yy: Vec<f64> = (start..=len).map(|t| y[t - 1]).collect();
            let rr: Vec<f64> = (start..=len).map(|t| r[t - shift]).collect();
            rmse(&yy, &rr)
        })
        .collect()
}

/// Runs the controller against the model it was synthesized from.
pub fn model_in_loop_tracking(
    ctrl: &mut FeedforwardController,
    reference: &[Vec<f64>],
    disturbance: &[Vec<f64>],
) -> Result<TrackingRun> {
    let mut plant = LpvPlant::new(ctrl.state_space().clone());
    closed_loop(ctrl, &mut plant, reference, disturbance, 0)
}
