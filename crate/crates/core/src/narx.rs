//! NARX wrapper around a local model network.
//!
//! Time is 0-based. A delay `i` on signal `s` means the sample `s(k - i + 1)` when
//! predicting `y(k + 1)`, so delay 1 is the current sample. Regressors are ordered
//! input blocks, then disturbance blocks, then output blocks; blocks follow channel
//! index and each block lists its delays in ascending order.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::lmn::LocalModelNetwork;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Signal {
    Input,
    Disturbance,
    Output,
}

/// Linear and validity delay sets of one signal channel.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalDelays {
    #[serde(default)]
    pub lin: Vec<usize>,
    #[serde(default)]
    pub val: Vec<usize>,
}

impl SignalDelays {
    pub fn new(lin: impl Into<Vec<usize>>, val: impl Into<Vec<usize>>) -> Self {
        let mut lin = lin.into();
        let mut val = val.into();
        lin.sort_unstable();
        lin.dedup();
        val.sort_unstable();
        val.dedup();
        Self { lin, val }
    }

    pub fn none() -> Self {
        Self::default()
    }

    /// Largest delay in use, 0 when the channel is unused.
    pub fn max_delay(&self) -> usize {
        self.lin.iter().chain(&self.val).copied().max().unwrap_or(0)
    }

    fn normalized(&self) -> Self {
        Self::new(self.lin.clone(), self.val.clone())
    }
}

/// Delay sets of every channel of a NARX model.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelayConfig {
    pub inputs: Vec<SignalDelays>,
    #[serde(default)]
    pub disturbances: Vec<SignalDelays>,
    pub outputs: Vec<SignalDelays>,
}

impl DelayConfig {
    /// Single input, single output, no disturbance.
    pub fn siso(
        input_lin: impl Into<Vec<usize>>,
        output_lin: impl Into<Vec<usize>>,
        input_val: impl Into<Vec<usize>>,
        output_val: impl Into<Vec<usize>>,
    ) -> Result<Self> {
        Self::new(
            vec![SignalDelays::new(input_lin, input_val)],
            vec![],
            vec![SignalDelays::new(output_lin, output_val)],
        )
    }

    /// Adds one measured disturbance channel to a single-input configuration.
    pub fn with_disturbance(
        mut self,
        dist_lin: impl Into<Vec<usize>>,
        dist_val: impl Into<Vec<usize>>,
    ) -> Result<Self> {
        self.disturbances
            .push(SignalDelays::new(dist_lin, dist_val));
        self.validate()?;
        Ok(self)
    }

    pub fn new(
        inputs: Vec<SignalDelays>,
        disturbances: Vec<SignalDelays>,
        outputs: Vec<SignalDelays>,
    ) -> Result<Self> {
        let cfg = Self {
            inputs: inputs.iter().map(SignalDelays::normalized).collect(),
            disturbances: disturbances.iter().map(SignalDelays::normalized).collect(),
            outputs: outputs.iter().map(SignalDelays::normalized).collect(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.is_empty() || self.outputs.is_empty() {
            return Err(Error::Config(
                "delay configuration needs at least one input and one output channel".into(),
            ));
        }
        for (name, sets) in [
            ("input", &self.inputs),
            ("disturbance", &self.disturbances),
            ("output", &self.outputs),
        ] {
            for (j, s) in sets.iter().enumerate() {
                if s.lin.contains(&0) || s.val.contains(&0) {
                    return Err(Error::Config(format!(
                        "{name} {j}: delays must be at least 1"
                    )));
                }
                if let Some(v) = s.val.iter().find(|v| !s.lin.contains(v)) {
                    return Err(Error::Config(format!(
                        "{name} {j}: validity delay {v} is not among the linear delays"
                    )));
                }
            }
        }
        Ok(())
    }

    fn channels(&self, signal: Signal) -> &[SignalDelays] {
        match signal {
            Signal::Input => &self.inputs,
            Signal::Disturbance => &self.disturbances,
            Signal::Output => &self.outputs,
        }
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

    pub fn lin_dim(&self) -> usize {
        self.blocks().map(|(_, _, s)| s.lin.len()).sum()
    }

    pub fn val_dim(&self) -> usize {
        self.blocks().map(|(_, _, s)| s.val.len()).sum()
    }

    /// `nu` of the first input channel.
    pub fn nu(&self) -> usize {
        self.inputs.first().map_or(0, SignalDelays::max_delay)
    }

    /// `nd` of the first disturbance channel, 0 without disturbance.
    pub fn nd(&self) -> usize {
        self.disturbances.first().map_or(0, SignalDelays::max_delay)
    }

    /// `ny` of the first output channel.
    pub fn ny(&self) -> usize {
        self.outputs.first().map_or(0, SignalDelays::max_delay)
    }

    pub fn max_delay(&self) -> usize {
        self.blocks()
            .map(|(_, _, s)| s.max_delay())
            .max()
            .unwrap_or(0)
    }

    pub fn has_disturbance(&self) -> bool {
        self.disturbances.iter().any(|s| !s.lin.is_empty())
    }

    pub fn has_input_validity(&self) -> bool {
        self.inputs.iter().any(|s| !s.val.is_empty())
    }

    pub(crate) fn blocks(&self) -> impl Iterator<Item = (Signal, usize, &SignalDelays)> {
        [Signal::Input, Signal::Disturbance, Signal::Output]
            .into_iter()
            .flat_map(move |sig| {
                self.channels(sig)
                    .iter()
                    .enumerate()
                    .map(move |(j, s)| (sig, j, s))
            })
    }

    /// `(signal, channel, delay)` for every linear regressor entry, in regressor order.
    pub fn lin_layout(&self) -> Vec<(Signal, usize, usize)> {
        self.blocks()
            .flat_map(|(sig, j, s)| s.lin.iter().map(move |&i| (sig, j, i)))
            .collect()
    }

    /// `(signal, channel, delay)` for every validity regressor entry.
    pub fn val_layout(&self) -> Vec<(Signal, usize, usize)> {
        self.blocks()
            .flat_map(|(sig, j, s)| s.val.iter().map(move |&i| (sig, j, i)))
            .collect()
    }
}

/// An LMN used as a one-step-ahead NARX predictor of output channel `output`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NarxModel {
    pub net: LocalModelNetwork,
    pub delays: DelayConfig,
    #[serde(default)]
    pub output: usize,
}

impl NarxModel {
    pub fn new(net: LocalModelNetwork, delays: DelayConfig, output: usize) -> Result<Self> {
        delays.validate()?;
        check_len("network linear inputs", net.lin_dim(), delays.lin_dim())?;
        check_len("network validity inputs", net.val_dim(), delays.val_dim())?;
        if output >= delays.num_outputs() {
            return Err(Error::Config(format!(
                "output index {output} out of range for {} output channels",
                delays.num_outputs()
            )));
        }
        Ok(Self {
            net,
            delays,
            output,
        })
    }

    /// Assembles `(x_lin, x_val)`; `sample(signal, channel, delay)` returns the value
    /// at `k - delay + 1`.
    pub fn regressors<F>(&self, mut sample: F) -> (Vec<f64>, Vec<f64>)
    where
        F: FnMut(Signal, usize, usize) -> f64,
    {
        let mut lin = Vec::with_capacity(self.net.lin_dim());
        let mut val = Vec::with_capacity(self.net.val_dim());
        for (sig, j, s) in self.delays.blocks() {
            lin.extend(s.lin.iter().map(|&i| sample(sig, j, i)));
        }
        for (sig, j, s) in self.delays.blocks() {
            val.extend(s.val.iter().map(|&i| sample(sig, j, i)));
        }
        (lin, val)
    }

    pub fn validity_inputs<F>(&self, mut sample: F) -> Vec<f64>
    where
        F: FnMut(Signal, usize, usize) -> f64,
    {
        self.delays
            .blocks()
            .flat_map(|(sig, j, s)| s.val.iter().map(move |&i| (sig, j, i)))
            .map(|(sig, j, i)| sample(sig, j, i))
            .collect()
    }

    pub fn predict_with<F>(&self, sample: F) -> f64
    where
        F: FnMut(Signal, usize, usize) -> f64,
    {
        let (lin, val) = self.regressors(sample);
        let phi = self.net.validity_weights_unchecked(&val);
        self.net.evaluate_with_weights(&lin, &phi)
    }

    /// One-step prediction `ŷ(k+1)` from a window whose last sample is time `k`.
    pub fn one_step_predict(&self, window: &SignalWindow) -> Result<f64> {
        window.check_covers(&self.delays)?;
        let (lin, val) = self.regressors(|sig, j, i| window.lag(sig, j, i));
        self.net.evaluate(&lin, &val)
    }
}

/// Recent samples of every channel, oldest first; the last entry is time `k`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SignalWindow {
    pub inputs: Vec<Vec<f64>>,
    pub disturbances: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
}

impl SignalWindow {
    fn channel(&self, sig: Signal, j: usize) -> &[f64] {
        match sig {
            Signal::Input => &self.inputs[j],
            Signal::Disturbance => &self.disturbances[j],
            Signal::Output => &self.outputs[j],
        }
    }

    fn lag(&self, sig: Signal, j: usize, delay: usize) -> f64 {
        let c = self.channel(sig, j);
        c[c.len() - delay]
    }

    fn check_covers(&self, delays: &DelayConfig) -> Result<()> {
        for (sig, j, s) in delays.blocks() {
            let have = match sig {
                Signal::Input => self.inputs.get(j),
                Signal::Disturbance => self.disturbances.get(j),
                Signal::Output => self.outputs.get(j),
            };
            let need = s.max_delay();
            let got = have.map_or(0, Vec::len);
            if need > 0 && got < need {
                return Err(Error::InsufficientData {
                    needed: need - 1,
                    got,
                });
            }
        }
        Ok(())
    }
}

/// Equally sampled input, disturbance and output channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesDataset {
    pub sample_period: f64,
    pub inputs: Vec<Vec<f64>>,
    #[serde(default)]
    pub disturbances: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
}

impl TimeSeriesDataset {
    pub fn new(
        sample_period: f64,
        inputs: Vec<Vec<f64>>,
        disturbances: Vec<Vec<f64>>,
        outputs: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let ds = Self {
            sample_period,
            inputs,
            disturbances,
            outputs,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_period > 0.0) {
            return Err(Error::Schema("sample period must be positive".into()));
        }
        if self.inputs.is_empty() || self.outputs.is_empty() {
            return Err(Error::Schema(
                "dataset needs input and output channels".into(),
            ));
        }
        let len = self.inputs[0].len();
        for c in self.channels() {
            if c.len() != len {
                return Err(Error::Schema(format!(
                    "ragged channels: lengths {} and {len}",
                    c.len()
                )));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::Schema("non-finite sample".into()));
            }
        }
        Ok(())
    }

    fn channels(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.inputs
            .iter()
            .chain(&self.disturbances)
            .chain(&self.outputs)
    }

    pub fn len(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn check_arity(&self, delays: &DelayConfig) -> Result<()> {
        if delays.num_inputs() != self.inputs.len()
            || delays.num_outputs() != self.outputs.len()
            || delays.num_disturbances() > self.disturbances.len()
        {
            return Err(Error::Arity(format!(
                "dataset has {}/{}/{} input/disturbance/output channels, model expects {}/{}/{}",
                self.inputs.len(),
                self.disturbances.len(),
                self.outputs.len(),
                delays.num_inputs(),
                delays.num_disturbances(),
                delays.num_outputs()
            )));
        }
        Ok(())
    }

    fn at(&self, sig: Signal, j: usize, t: usize) -> f64 {
        match sig {
            Signal::Input => self.inputs[j][t],
            Signal::Disturbance => self.disturbances[j][t],
            Signal::Output => self.outputs[j][t],
        }
    }

    /// Samples `[start, end)` of every channel.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        let cut = |c: &Vec<Vec<f64>>| c.iter().map(|s| s[start..end].to_vec()).collect();
        Self {
            sample_period: self.sample_period,
            inputs: cut(&self.inputs),
            disturbances: cut(&self.disturbances),
            outputs: cut(&self.outputs),
        }
    }
}

/// Regressor triples `(x_lin, x_val) -> target` built from a dataset.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Regressors {
    pub lin: Vec<Vec<f64>>,
    pub val: Vec<Vec<f64>>,
    pub target: Vec<f64>,
}

impl Regressors {
    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    pub fn lin_dim(&self) -> usize {
        self.lin.first().map_or(0, Vec::len)
    }

    pub fn val_dim(&self) -> usize {
        self.val.first().map_or(0, Vec::len)
    }

    pub fn push(&mut self, lin: Vec<f64>, val: Vec<f64>, target: f64) {
        self.lin.push(lin);
        self.val.push(val);
        self.target.push(target);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], &[f64], f64)> {
        self.lin
            .iter()
            .zip(&self.val)
            .zip(&self.target)
            .map(|((l, v), t)| (l.as_slice(), v.as_slice(), *t))
    }
}

/// History length needed before the first prediction: `max(nu, nd, ny)` over all
/// channels, at least 1.
pub fn required_history(delays: &DelayConfig) -> usize {
    delays.max_delay().max(1)
}

/// Builds the training triples for output channel `output`.
pub fn build_regressors(
    data: &TimeSeriesDataset,
    delays: &DelayConfig,
    output: usize,
) -> Result<Regressors> {
    data.check_arity(delays)?;
    if output >= data.outputs.len() {
        return Err(Error::Config(format!("no output channel {output}")));
    }
    let m = required_history(delays);
    let len = data.len();
    if len <= m {
        return Err(Error::InsufficientData {
            needed: m,
            got: len,
        });
    }
    let lin_layout = delays.lin_layout();
    let val_layout = delays.val_layout();
    let mut out = Regressors::default();
    for k in (m - 1)..(len - 1) {
        let pick = |&(sig, j, i): &(Signal, usize, usize)| data.at(sig, j, k + 1 - i);
        out.push(
            lin_layout.iter().map(pick).collect(),
            val_layout.iter().map(pick).collect(),
            data.outputs[output][k + 1],
        );
    }
    Ok(out)
}

/// Checks that `models` jointly predict each output channel exactly once and share
/// the same signal arity. Returns `(inputs, disturbances, outputs)`.
pub fn check_system(models: &[NarxModel]) -> Result<(usize, usize, usize)> {
    let first = models
        .first()
        .ok_or_else(|| Error::Config("no models given".into()))?;
    let du = first.delays.num_inputs();
    let dd = first.delays.num_disturbances();
    let dy = first.delays.num_outputs();
    if models.len() != dy {
        return Err(Error::Config(format!(
            "{} models given for {dy} output channels",
            models.len()
        )));
    }
    let mut seen = vec![false; dy];
    for m in models {
        if m.delays.num_inputs() != du
            || m.delays.num_disturbances() != dd
            || m.delays.num_outputs() != dy
        {
            return Err(Error::Config(
                "models disagree on the number of input/disturbance/output channels".into(),
            ));
        }
        if std::mem::replace(&mut seen[m.output], true) {
            return Err(Error::Config(format!(
                "output channel {} is predicted by more than one model",
                m.output
            )));
        }
    }
    Ok((du, dd, dy))
}

/// Free-run (parallel) simulation: predictions are fed back as delayed outputs.
///
/// `inputs` and `disturbances` cover times `0..L`; `initial_outputs[j]` holds the
/// measured `y_j(0..h)` with `h = max required history over all models`. Returns the
/// predicted `y_j(h..=L)` for every output channel.
pub fn free_run_simulate(
    models: &[NarxModel],
    inputs: &[Vec<f64>],
    disturbances: &[Vec<f64>],
    initial_outputs: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    let (du, dd, dy) = check_system(models)?;
    check_len("input channels", inputs.len(), du)?;
    if disturbances.len() < dd {
        return Err(Error::Shape {
            what: "disturbance channels",
            got: disturbances.len(),
            expected: dd,
        });
    }
    check_len("initial output channels", initial_outputs.len(), dy)?;
    let h = models
        .iter()
        .map(|m| required_history(&m.delays))
        .max()
        .unwrap_or(1);
    let len = inputs[0].len();
    for c in inputs.iter().chain(&disturbances[..dd]) {
        if c.len() != len {
            return Err(Error::Shape {
                what: "input/disturbance series length",
                got: c.len(),
                expected: len,
            });
        }
    }
    for y0 in initial_outputs {
        if y0.len() != h {
            return Err(Error::Shape {
                what: "initial output history",
                got: y0.len(),
                expected: h,
            });
        }
    }
    if len < h {
        return Err(Error::InsufficientData {
            needed: h - 1,
            got: len,
        });
    }
    let mut y: Vec<Vec<f64>> = initial_outputs.to_vec();
    for k in (h - 1)..len {
        let next: Vec<f64> = {
            let mut next = vec![0.0; dy];
            for m in models {
                next[m.output] = m.predict_with(|sig, j, i| {
                    let t = k + 1 - i;
                    match sig {
                        Signal::Input => inputs[j][t],
                        Signal::Disturbance => disturbances[j][t],
                        Signal::Output => y[j][t],
                    }
                });
            }
            next
        };
        for (yj, v) in y.iter_mut().zip(next) {
            yj.push(v);
        }
    }
    Ok(y.into_iter().map(|c| c[h..].to_vec()).collect())
}

/// Free-run prediction over a dataset, aligned with the measured outputs from index
/// `h` on. Returns `(h, predictions)` with predictions covering `y(h..L)`.
pub fn predict_dataset(
    models: &[NarxModel],
    data: &TimeSeriesDataset,
) -> Result<(usize, Vec<Vec<f64>>)> {
    for m in models {
        data.check_arity(&m.delays)?;
    }
    let h = models
        .iter()
        .map(|m| required_history(&m.delays))
        .max()
        .unwrap_or(1);
    if data.len() <= h {
        return Err(Error::InsufficientData {
            needed: h,
            got: data.len(),
        });
    }
    let init: Vec<Vec<f64>> = data.outputs.iter().map(|y| y[..h].to_vec()).collect();
    let mut pred = free_run_simulate(models, &data.inputs, &data.disturbances, &init)?;
    for p in &mut pred {
        p.truncate(data.len() - h);
    }
    Ok((h, pred))
}

pub fn rmse(predicted: &[f64], reference: &[f64]) -> Result<f64> {
    check_len("rmse series", predicted.len(), reference.len())?;
    if predicted.is_empty() {
        return Err(Error::InsufficientData { needed: 0, got: 0 });
    }
    let sq: f64 = predicted
        .iter()
        .zip(reference)
        .map(|(p, r)| (p - r) * (p - r))
        .sum();
    Ok((sq / predicted.len() as f64).sqrt())
}

/// Root mean square of a signal.
pub fn rms(series: &[f64]) -> f64 {
    if series.is_empty() {
        return 0.0;
    }
    (series.iter().map(|v| v * v).sum::<f64>() / series.len() as f64).sqrt()
}
