//! Exact LPV state-space realization of NARX local model networks.
//!
//! The state holds, oldest first, the delayed inputs `u_j(k-nu_j+1..k-1)` of every
//! input channel, then the delayed disturbances `d_j(k-nd_j+1..k-1)`, then the outputs
//! `y_j(k-ny_j+1..k)`. The single-input, disturbance and multi-output realizations are
//! all instances of this layout; they differ only in the number of channels.
//!
//! Each output channel owns one group of per-model matrices. Within a group the
//! matrices share the parameter-free shift rows and differ only in the update row of
//! that output, so for a validity vector on the simplex the convex combination equals
//! the shift structure plus the validity-weighted update row.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::narx::{check_system, required_history, NarxModel, Signal};

const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpvKind {
    Siso,
    SisoDisturbance,
    Mimo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Block {
    start: usize,
    width: usize,
    max_delay: usize,
}

/// Which state slot holds which delayed signal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateLayout {
    inputs: Vec<Block>,
    disturbances: Vec<Block>,
    outputs: Vec<Block>,
    n: usize,
}

impl StateLayout {
    pub fn from_models(models: &[NarxModel]) -> Result<Self> {
        let (du, dd, dy) = check_system(models)?;
        let max_over = |sig: Signal, j: usize| {
            models
                .iter()
                .map(|m| {
                    let s = match sig {
                        Signal::Input => &m.delays.inputs[j],
                        Signal::Disturbance => &m.delays.disturbances[j],
                        Signal::Output => &m.delays.outputs[j],
                    };
                    s.max_delay()
                })
                .max()
                .unwrap_or(0)
        };
        let mut n = 0;
        let mut push = |width: usize, max_delay: usize| {
            let b = Block {
                start: n,
                width,
                max_delay,
            };
            n += width;
            b
        };
        let inputs = (0..du)
            .map(|j| {
                let nu = max_over(Signal::Input, j);
                push(nu.saturating_sub(1), nu)
            })
            .collect();
        let disturbances = (0..dd)
            .map(|j| {
                let nd = max_over(Signal::Disturbance, j);
                push(nd.saturating_sub(1), nd)
            })
            .collect();
        // Every predicted output keeps at least its current sample in the state.
        let outputs = (0..dy)
            .map(|j| {
                let ny = max_over(Signal::Output, j).max(1);
                push(ny, ny)
            })
            .collect();
        Ok(Self {
            inputs,
            disturbances,
            outputs,
            n,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn num_inputs(&self) -> usize {
        self.inputs.len()
    }

    pub fn num_disturbances(&self) -> usize {
        self.disturbances.len()
    }

    pub fn num_outputs(&self) -> usize {
        self.outputs.len()
    }

    /// Largest delay of each input channel across all models.
    pub fn input_max_delay(&self, j: usize) -> usize {
        self.inputs[j].max_delay
    }

    pub fn output_max_delay(&self, j: usize) -> usize {
        self.outputs[j].max_delay
    }

    pub fn disturbance_max_delay(&self, j: usize) -> usize {
        self.disturbances[j].max_delay
    }

    /// State slot holding the value at `k - delay + 1`; `None` for the current input or
    /// disturbance sample, which enters through the input matrices.
    pub fn slot(&self, sig: Signal, channel: usize, delay: usize) -> Option<usize> {
        match sig {
            Signal::Input | Signal::Disturbance => {
                let b = if sig == Signal::Input {
                    self.inputs[channel]
                } else {
                    self.disturbances[channel]
                };
                (delay >= 2 && delay <= b.max_delay).then(|| b.start + b.max_delay - delay)
            }
            Signal::Output => {
                let b = self.outputs[channel];
                (delay >= 1 && delay <= b.width).then(|| b.start + b.width - delay)
            }
        }
    }

    /// Slot of the newest stored sample of channel `channel` (`y_j(k)`, `u_j(k-1)`, ...).
    pub fn newest_slot(&self, sig: Signal, channel: usize) -> Option<usize> {
        let b = match sig {
            Signal::Input => self.inputs[channel],
            Signal::Disturbance => self.disturbances[channel],
            Signal::Output => self.outputs[channel],
        };
        (b.width > 0).then(|| b.start + b.width - 1)
    }

    pub fn output_row(&self, channel: usize) -> usize {
        let b = self.outputs[channel];
        b.start + b.width - 1
    }

    /// State at time `k` from a sample lookup `value(signal, channel, time_offset)` with
    /// `time_offset = delay - 1` steps into the past.
    pub fn state_from<F>(&self, mut value: F) -> DVector<f64>
    where
        F: FnMut(Signal, usize, usize) -> f64,
    {
        let mut x = DVector::zeros(self.n);
        for (sig, blocks) in [
            (Signal::Input, &self.inputs),
            (Signal::Disturbance, &self.disturbances),
            (Signal::Output, &self.outputs),
        ] {
            for (j, b) in blocks.iter().enumerate() {
                for s in 0..b.width {
                    // slot start + s holds offset (width - s) for u/d and (width - 1 - s) for y
                    let back = if sig == Signal::Output {
                        b.width - 1 - s
                    } else {
                        b.width - s
                    };
                    x[b.start + s] = value(sig, j, back);
                }
            }
        }
        x
    }
}

/// Constant matrices of one local model.
#[derive(Debug, Clone, PartialEq)]
pub struct PerModelMatrices {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub bd: DMatrix<f64>,
    pub offset: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputGroup {
    pub model: NarxModel,
    /// State row receiving this output's update.
    pub row: usize,
    pub per_model: Vec<PerModelMatrices>,
}

/// `(A, B, B_d, o)` at one validity vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Assembled {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub bd: DMatrix<f64>,
    pub offset: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpvStateSpace {
    kind: LpvKind,
    layout: StateLayout,
    groups: Vec<OutputGroup>,
    shift: Assembled,
    c: DMatrix<f64>,
}

/// Convex combination `Σ φ_i (A_i, B_i, B_d,i, o_i)`.
pub fn assemble(phi: &[f64], per_model: &[PerModelMatrices]) -> Result<Assembled> {
    check_len("validity vector", phi.len(), per_model.len())?;
    check_simplex(phi)?;
    let first = per_model
        .first()
        .ok_or_else(|| Error::Config("no per-model matrices".into()))?;
    let mut out = Assembled {
        a: DMatrix::zeros(first.a.nrows(), first.a.ncols()),
        b: DMatrix::zeros(first.b.nrows(), first.b.ncols()),
        bd: DMatrix::zeros(first.bd.nrows(), first.bd.ncols()),
        offset: DVector::zeros(first.offset.len()),
    };
    for (p, m) in phi.iter().zip(per_model) {
        out.a += &m.a * *p;
        out.b += &m.b * *p;
        out.bd += &m.bd * *p;
        out.offset += &m.offset * *p;
    }
    Ok(out)
}

pub(crate) fn check_simplex(phi: &[f64]) -> Result<()> {
    let sum: f64 = phi.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL
        || phi
            .iter()
            .any(|p| !p.is_finite() || *p < -SIMPLEX_TOL || *p > 1.0 + SIMPLEX_TOL)
    {
        return Err(Error::NotOnSimplex(format!("{phi:?} (sum {sum})")));
    }
    Ok(())
}

impl LpvStateSpace {
    /// General realization for any number of channels.
    pub fn from_models(models: &[NarxModel]) -> Result<Self> {
        let layout = StateLayout::from_models(models)?;
        let (du, dd, dy) = (
            layout.num_inputs(),
            layout.num_disturbances(),
            layout.num_outputs(),
        );
        let n = layout.dim();

        let mut shift = Assembled {
            a: DMatrix::zeros(n, n),
            b: DMatrix::zeros(n, du),
            bd: DMatrix::zeros(n, dd),
            offset: DVector::zeros(n),
        };
        for j in 0..du {
            shift_block(&mut shift.a, &layout.inputs[j]);
            if let Some(s) = layout.newest_slot(Signal::Input, j) {
                shift.b[(s, j)] = 1.0;
            }
        }
        for j in 0..dd {
            shift_block(&mut shift.a, &layout.disturbances[j]);
            if let Some(s) = layout.newest_slot(Signal::Disturbance, j) {
                shift.bd[(s, j)] = 1.0;
            }
        }
        for j in 0..dy {
            // The newest output slot is the update row; only the older slots shift.
            let b = layout.outputs[j];
            for s in 0..b.width.saturating_sub(1) {
                shift.a[(b.start + s, b.start + s + 1)] = 1.0;
            }
        }

        let mut ordered: Vec<&NarxModel> = models.iter().collect();
        ordered.sort_by_key(|m| m.output);
        let groups = ordered
            .into_iter()
            .map(|model| {
                let row = layout.output_row(model.output);
                let lin = model.delays.lin_layout();
                let per_model = model
                    .net
                    .models()
                    .iter()
                    .map(|llm| {
                        let mut m = PerModelMatrices {
                            a: shift.a.clone(),
                            b: shift.b.clone(),
                            bd: shift.bd.clone(),
                            offset: DVector::zeros(n),
                        };
                        m.offset[row] = llm.offset;
                        for (&(sig, j, delay), w) in lin.iter().zip(&llm.gains) {
                            match (sig, layout.slot(sig, j, delay)) {
                                (_, Some(s)) => m.a[(row, s)] += w,
                                (Signal::Input, None) => m.b[(row, j)] += w,
                                (Signal::Disturbance, None) => m.bd[(row, j)] += w,
                                (Signal::Output, None) => unreachable!("output delays are >= 1"),
                            }
                        }
                        m
                    })
                    .collect();
                OutputGroup {
                    model: model.clone(),
                    row,
                    per_model,
                }
            })
            .collect();

        let mut c = DMatrix::zeros(dy, n);
        for j in 0..dy {
            c[(j, layout.output_row(j))] = 1.0;
        }
        let has_dist = models.iter().any(|m| m.delays.has_disturbance());
        let kind = if du == 1 && dy == 1 {
            if has_dist {
                LpvKind::SisoDisturbance
            } else {
                LpvKind::Siso
            }
        } else {
            LpvKind::Mimo
        };
        Ok(Self {
            kind,
            layout,
            groups,
            shift,
            c,
        })
    }

    pub fn kind(&self) -> LpvKind {
        self.kind
    }

    pub fn layout(&self) -> &StateLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn groups(&self) -> &[OutputGroup] {
        &self.groups
    }

    pub fn models(&self) -> impl Iterator<Item = &NarxModel> {
        self.groups.iter().map(|g| &g.model)
    }

    pub fn output_matrix(&self) -> &DMatrix<f64> {
        &self.c
    }

    /// Parameter-free shift structure (all rows except the output update rows).
    pub fn shift_structure(&self) -> &Assembled {
        &self.shift
    }

    pub fn num_inputs(&self) -> usize {
        self.layout.num_inputs()
    }

    pub fn num_disturbances(&self) -> usize {
        self.layout.num_disturbances()
    }

    pub fn num_outputs(&self) -> usize {
        self.layout.num_outputs()
    }

    /// Per-output validity vectors from the state and the current input/disturbance.
    pub fn validities(&self, x: &DVector<f64>, u: &[f64], d: &[f64]) -> Vec<Vec<f64>> {
        self.validities_with(
            |sig, j, delay| match (sig, self.layout.slot(sig, j, delay)) {
                (_, Some(s)) => x[s],
                (Signal::Input, None) => u[j],
                (Signal::Disturbance, None) => d[j],
                (Signal::Output, None) => unreachable!("output delays are >= 1"),
            },
        )
    }

    /// Per-output validity vectors from an arbitrary sample lookup
    /// `(signal, channel, delay) -> value at k - delay + 1`.
    pub fn validities_with<F>(&self, mut sample: F) -> Vec<Vec<f64>>
    where
        F: FnMut(Signal, usize, usize) -> f64,
    {
        self.groups
            .iter()
            .map(|g| {
                let x_val = g.model.validity_inputs(&mut sample);
                g.model.net.validity_weights_unchecked(&x_val)
            })
            .collect()
    }

    /// `(A(φ), B(φ), B_d(φ), o(φ))` for one validity vector per output group.
    pub fn assemble(&self, phi: &[Vec<f64>]) -> Result<Assembled> {
        check_len("validity groups", phi.len(), self.groups.len())?;
        let mut out = self.shift.clone();
        for (g, p) in self.groups.iter().zip(phi) {
            let combined = assemble(p, &g.per_model)?;
            out.a.set_row(g.row, &combined.a.row(g.row));
            out.b.set_row(g.row, &combined.b.row(g.row));
            out.bd.set_row(g.row, &combined.bd.row(g.row));
            out.offset[g.row] = combined.offset[g.row];
        }
        Ok(out)
    }

    /// `x(k+1)` from `x(k)`, `u(k)` and `d(k)`.
    pub fn step(&self, x: &DVector<f64>, u: &[f64], d: &[f64]) -> Result<DVector<f64>> {
        check_len("state", x.len(), self.dim())?;
        check_len("input", u.len(), self.num_inputs())?;
        check_len("disturbance", d.len(), self.num_disturbances())?;
        let phi = self.validities(x, u, d);
        let m = self.assemble(&phi)?;
        Ok(&m.a * x
            + &m.b * DVector::from_column_slice(u)
            + &m.bd * DVector::from_column_slice(d)
            + &m.offset)
    }

    pub fn output(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.c * x
    }

    /// Rollout with the same conventions as [`crate::narx::free_run_simulate`]: series
    /// cover times `0..L`, `initial_outputs[j]` holds `y_j(0..h)`, and the returned
    /// outputs are `y_j(h..=L)`.
    pub fn rollout(
        &self,
        inputs: &[Vec<f64>],
        disturbances: &[Vec<f64>],
        initial_outputs: &[Vec<f64>],
    ) -> Result<Vec<Vec<f64>>> {
        let dd = self.num_disturbances();
        check_len("input channels", inputs.len(), self.num_inputs())?;
        check_len(
            "initial output channels",
            initial_outputs.len(),
            self.num_outputs(),
        )?;
        if disturbances.len() < dd {
            return Err(Error::Shape {
                what: "disturbance channels",
                got: disturbances.len(),
                expected: dd,
            });
        }
        let h = self
            .models()
            .map(|m| required_history(&m.delays))
            .max()
            .unwrap_or(1);
        let len = inputs[0].len();
        if len < h || initial_outputs.iter().any(|y| y.len() != h) {
            return Err(Error::InsufficientData {
                needed: h - 1,
                got: len,
            });
        }
        let k0 = h - 1;
        let mut x = self.layout.state_from(|sig, j, back| {
            let t = k0 - back;
            match sig {
                Signal::Input => inputs[j][t],
                Signal::Disturbance => disturbances[j][t],
                Signal::Output => initial_outputs[j][t],
            }
        });
        let mut out = vec![Vec::with_capacity(len - k0); self.num_outputs()];
        for k in k0..len {
            let u: Vec<f64> = inputs.iter().map(|c| c[k]).collect();
            let d: Vec<f64> = disturbances[..dd].iter().map(|c| c[k]).collect();
            x = self.step(&x, &u, &d)?;
            let y = self.output(&x);
            for (o, v) in out.iter_mut().zip(y.iter()) {
                o.push(*v);
            }
        }
        Ok(out)
    }
}

fn shift_block(a: &mut DMatrix<f64>, b: &Block) {
    for s in 0..b.width.saturating_sub(1) {
        a[(b.start + s, b.start + s + 1)] = 1.0;
    }
}

/// Single-input single-output realization without disturbance.
pub fn to_lpv_siso(model: &NarxModel) -> Result<LpvStateSpace> {
    if model.delays.num_inputs() != 1 || model.delays.num_outputs() != 1 {
        return Err(Error::WrongKind(
            "expected one input and one output channel".into(),
        ));
    }
    if model.delays.has_disturbance() || model.delays.disturbances.iter().any(|s| !s.val.is_empty())
    {
        return Err(Error::WrongKind(
            "model uses disturbance delays; use the disturbance realization".into(),
        ));
    }
    LpvStateSpace::from_models(std::slice::from_ref(model))
}

/// Single-input single-output realization with measured disturbance input(s).
pub fn to_lpv_disturbance(model: &NarxModel) -> Result<LpvStateSpace> {
    if model.delays.num_inputs() != 1 || model.delays.num_outputs() != 1 {
        return Err(Error::WrongKind(
            "expected one input and one output channel".into(),
        ));
    }
    if !model.delays.has_disturbance() {
        return Err(Error::WrongKind("no disturbance delays configured".into()));
    }
    LpvStateSpace::from_models(std::slice::from_ref(model))
}

/// Multi-input multi-output realization from one model per output channel.
pub fn to_lpv_mimo(models: &[NarxModel], inputs: usize, outputs: usize) -> Result<LpvStateSpace> {
    let (du, _, dy) = check_system(models)?;
    if du != inputs || dy != outputs {
        return Err(Error::Config(format!(
            "models have {du} inputs / {dy} outputs, expected {inputs} / {outputs}"
        )));
    }
    LpvStateSpace::from_models(models)
}
