//! Synthetic plants, excitation signals, signal conditioning and closed-loop runs.
//!
//! The valve plant is `y(k+1) = a·y(k) + g(u(k))·(1 + β·d(k))` with a deadzone and a
//! saturation in `g`; the coupled variant adds `κ·g(u_other)` to each channel. The
//! measured disturbance is a slow sinusoid plus lowpass-filtered noise generated at a
//! finer rate and stride-decimated to the model rate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::controller::{shifted_rmse, FeedforwardController, TrackingRun};
use crate::error::{check_len, Error, Result};
use crate::narx::{Signal, TimeSeriesDataset};
use crate::state_space::LpvStateSpace;
use nalgebra::DVector;

/// Random-stream identifiers, so that disturbance, noise and excitation draws made
/// from one seed stay independent of each other.
const STREAM_DISTURBANCE: u64 = 1;
const STREAM_NOISE: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantKind {
    SisoValve,
    MimoCoupled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DisturbanceSpec {
    pub amplitude: f64,
    /// Period of the sinusoid in model samples.
    pub period: f64,
    pub phase: f64,
    /// Standard deviation of the white noise before filtering.
    pub noise_std: f64,
    /// Lowpass time constant of the noise in seconds.
    pub filter_time_constant: f64,
    /// Fine simulation steps per model sample.
    pub oversample: usize,
}

impl Default for DisturbanceSpec {
    fn default() -> Self {
        Self {
            amplitude: 0.8,
            period: 150.0,
            phase: 0.0,
            noise_std: 0.5,
            filter_time_constant: 2.0,
            oversample: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantSpec {
    pub kind: PlantKind,
    pub a: f64,
    pub gain: f64,
    pub deadzone: f64,
    pub saturation: f64,
    pub beta: f64,
    pub kappa: f64,
    /// Measurement noise standard deviation per output channel (missing entries are 0).
    pub noise_std: Vec<f64>,
    pub disturbance: DisturbanceSpec,
    pub sample_period: f64,
}

impl Default for PlantSpec {
    fn default() -> Self {
        Self {
            kind: PlantKind::SisoValve,
            a: 0.7,
            gain: 1.0,
            deadzone: 0.05,
            saturation: 0.8,
            beta: 0.5,
            kappa: 0.4,
            noise_std: vec![0.0],
            disturbance: DisturbanceSpec::default(),
            sample_period: 0.16,
        }
    }
}

impl PlantSpec {
    pub fn channels(&self) -> usize {
        match self.kind {
            PlantKind::SisoValve => 1,
            PlantKind::MimoCoupled => 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a.abs() < 1.0) {
            return Err(Error::Config(format!(
                "plant pole a = {} must satisfy |a| < 1",
                self.a
            )));
        }
        if !(self.deadzone >= 0.0) || !(self.saturation > 0.0) {
            return Err(Error::Config(
                "deadzone must be >= 0 and saturation > 0".into(),
            ));
        }
        if !(self.sample_period > 0.0) {
            return Err(Error::Config("sample period must be positive".into()));
        }
        if self.disturbance.oversample == 0 {
            return Err(Error::Config(
                "disturbance oversample must be at least 1".into(),
            ));
        }
        if !(self.disturbance.period > 0.0) {
            return Err(Error::Config("disturbance period must be positive".into()));
        }
        Ok(())
    }

    /// Valve characteristic: deadzone of half-width `deadzone`, then linear with slope
    /// `gain`, clipped at `±saturation`.
    pub fn valve(&self, u: f64) -> f64 {
        let excess = (u.abs() - self.deadzone).max(0.0);
        u.signum() * (self.gain * excess).min(self.saturation)
    }

    fn noise(&self, j: usize) -> f64 {
        self.noise_std.get(j).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExcitationConfig {
    pub low: f64,
    pub high: f64,
    pub hold_min: usize,
    pub hold_max: usize,
    /// Number of samples.
    pub duration: usize,
    pub seed: u64,
}

impl Default for ExcitationConfig {
    fn default() -> Self {
        Self {
            low: -1.0,
            high: 1.0,
            hold_min: 5,
            hold_max: 20,
            duration: 2000,
            seed: 1,
        }
    }
}

/// Amplitude-modulated pseudo-random multistep signal: uniform random levels held for
/// uniform random durations. The last plateau is cut at `duration`.
pub fn generate_excitation(cfg: &ExcitationConfig) -> Result<Vec<f64>> {
    if cfg.duration == 0 {
        return Err(Error::Config("excitation duration must be positive".into()));
    }
    if cfg.hold_min == 0 || cfg.hold_max < cfg.hold_min {
        return Err(Error::Config(format!(
            "hold range [{}, {}] must satisfy 1 <= min <= max",
            cfg.hold_min, cfg.hold_max
        )));
    }
    if !(cfg.low <= cfg.high) || !cfg.low.is_finite() || !cfg.high.is_finite() {
        return Err(Error::Config(
            "amplitude range must satisfy low <= high".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.duration);
    while out.len() < cfg.duration {
        let level = if cfg.low == cfg.high {
            cfg.low
        } else {
            rng.random_range(cfg.low..=cfg.high)
        };
        let hold = rng.random_range(cfg.hold_min..=cfg.hold_max);
        let n = hold.min(cfg.duration - out.len());
        out.extend(std::iter::repeat_n(level, n));
    }
    Ok(out)
}

/// First-order lowpass `y(k) = y(k-1) + α (x(k) - y(k-1))` with `α = 1 - exp(-Ts/τ)`,
/// started at `y(0) = x(0)`.
pub fn lowpass(series: &[f64], time_constant: f64, sample_period: f64) -> Result<Vec<f64>> {
    if !(time_constant > 0.0) || !(sample_period > 0.0) {
        return Err(Error::Config(
            "time constant and sample period must be positive".into(),
        ));
    }
    let alpha = 1.0 - (-sample_period / time_constant).exp();
    let mut out = Vec::with_capacity(series.len());
    let mut y = match series.first() {
        Some(v) => *v,
        None => return Ok(out),
    };
    for x in series {
        y += alpha * (x - y);
        out.push(y);
    }
    Ok(out)
}

/// Every `stride`-th sample, starting with the first.
pub fn decimate(series: &[f64], stride: usize) -> Result<Vec<f64>> {
    if stride == 0 {
        return Err(Error::Config("decimation stride must be at least 1".into()));
    }
    Ok(series.iter().step_by(stride).copied().collect())
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Measured disturbance at the model rate.
pub fn disturbance_series(spec: &PlantSpec, len: usize, seed: u64) -> Result<Vec<f64>> {
    spec.validate()?;
    let ds = &spec.disturbance;
    let m = ds.oversample;
    let fine_period = spec.sample_period / m as f64;
    let noise = if ds.noise_std > 0.0 {
        let normal = Normal::new(0.0, ds.noise_std).map_err(|e| Error::Config(e.to_string()))?;
        let mut rng = rng_for(seed, STREAM_DISTURBANCE);
        // a leading zero starts the filter at rest
        let white: Vec<f64> = std::iter::once(0.0)
            .chain((0..len * m).map(|_| normal.sample(&mut rng)))
            .collect();
        let filtered = lowpass(&white, ds.filter_time_constant, fine_period)?;
        decimate(&filtered[1..], m)?
    } else {
        vec![0.0; len]
    };
    Ok((0..len)
        .map(|k| {
            let w = 2.0 * std::f64::consts::PI * k as f64 / ds.period + ds.phase;
            ds.amplitude * w.sin() + noise[k]
        })
        .collect())
}

/// A discrete-time system driven sample by sample.
pub trait Plant {
    fn num_inputs(&self) -> usize;
    fn num_outputs(&self) -> usize;
    /// Puts the plant at rest at outputs `y0`, with past inputs `u0` and disturbances `d0`.
    fn initialize(&mut self, y0: &[f64], u0: &[f64], d0: &[f64]);
    /// Applies `u(k)`, `d(k)` and returns the measured `y(k+1)`.
    fn step(&mut self, u: &[f64], d: &[f64]) -> Vec<f64>;
}

/// Valve plant with measurement noise.
#[derive(Debug, Clone)]
pub struct ValvePlant {
    spec: PlantSpec,
    y: Vec<f64>,
    rng: ChaCha8Rng,
    normals: Vec<Option<Normal<f64>>>,
}

impl ValvePlant {
    pub fn new(spec: PlantSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let n = spec.channels();
        let normals = (0..n)
            .map(|j| {
                let s = spec.noise(j);
                (s > 0.0)
                    .then(|| Normal::new(0.0, s).map_err(|e| Error::Config(e.to_string())))
                    .transpose()
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            y: vec![0.0; n],
            rng: rng_for(seed, STREAM_NOISE),
            normals,
            spec,
        })
    }

    /// Noise-free plant output.
    pub fn state(&self) -> &[f64] {
        &self.y
    }

    fn measure(&mut self) -> Vec<f64> {
        let rng = &mut self.rng;
        self.y
            .iter()
            .zip(&self.normals)
            .map(|(y, n)| y + n.map_or(0.0, |n| n.sample(rng)))
            .collect()
    }
}

impl Plant for ValvePlant {
    fn num_inputs(&self) -> usize {
        self.spec.channels()
    }

    fn num_outputs(&self) -> usize {
        self.spec.channels()
    }

    fn initialize(&mut self, y0: &[f64], _u0: &[f64], _d0: &[f64]) {
        self.y.copy_from_slice(y0);
    }

    fn step(&mut self, u: &[f64], d: &[f64]) -> Vec<f64> {
        let s = &self.spec;
        let scale = 1.0 + s.beta * d.first().copied().unwrap_or(0.0);
        let g: Vec<f64> = u.iter().map(|v| s.valve(*v)).collect();
        let next: Vec<f64> = match s.kind {
            PlantKind::SisoValve => vec![s.a * self.y[0] + g[0] * scale],
            PlantKind::MimoCoupled => (0..2)
                .map(|j| s.a * self.y[j] + (g[j] + s.kappa * g[1 - j]) * scale)
                .collect(),
        };
        self.y = next;
        self.measure()
    }
}

/// An LPV realization used as the plant (the model itself).
#[derive(Debug, Clone)]
pub struct LpvPlant {
    ss: LpvStateSpace,
    x: DVector<f64>,
}

impl LpvPlant {
    pub fn new(ss: LpvStateSpace) -> Self {
        let n = ss.dim();
        Self {
            ss,
            x: DVector::zeros(n),
        }
    }
}

impl Plant for LpvPlant {
    fn num_inputs(&self) -> usize {
        self.ss.num_inputs()
    }

    fn num_outputs(&self) -> usize {
        self.ss.num_outputs()
    }

    fn initialize(&mut self, y0: &[f64], u0: &[f64], d0: &[f64]) {
        self.x = self.ss.layout().state_from(|sig, j, _| match sig {
            Signal::Input => u0[j],
            Signal::Disturbance => d0[j],
            Signal::Output => y0[j],
        });
    }

    fn step(&mut self, u: &[f64], d: &[f64]) -> Vec<f64> {
        let dd = self.ss.num_disturbances();
        match self.ss.step(&self.x, u, &d[..dd]) {
            Ok(x) => self.x = x,
            Err(_) => self.x.fill(f64::NAN),
        }
        self.ss.output(&self.x).iter().copied().collect()
    }
}

/// Simulates the valve plant from rest for the given input channels. Returns a dataset
/// with the measured disturbance as its single disturbance channel; `y(0) = 0` plus noise.
pub fn simulate_plant(
    spec: &PlantSpec,
    inputs: &[Vec<f64>],
    seed: u64,
) -> Result<TimeSeriesDataset> {
    check_len("plant input channels", inputs.len(), spec.channels())?;
    let len = inputs[0].len();
    if len == 0 || inputs.iter().any(|c| c.len() != len) {
        return Err(Error::Config(
            "input series must be nonempty and equally long".into(),
        ));
    }
    let d = disturbance_series(spec, len, seed)?;
    let mut plant = ValvePlant::new(spec.clone(), seed)?;
    let mut y: Vec<Vec<f64>> = vec![Vec::with_capacity(len); spec.channels()];
    let first = plant.measure();
    for (c, v) in y.iter_mut().zip(first) {
        c.push(v);
    }
    for k in 0..len - 1 {
        let u: Vec<f64> = inputs.iter().map(|c| c[k]).collect();
        for (c, v) in y.iter_mut().zip(plant.step(&u, &[d[k]])) {
            c.push(v);
        }
    }
    TimeSeriesDataset::new(spec.sample_period, inputs.to_vec(), vec![d], y)
}

/// Runs `ctrl` against `plant` in pure feedforward. `disturbance` holds every
/// disturbance channel the plant sees; the controller receives the first ones it was
/// built for. The first `skip` samples after the reference shift are excluded from RMSE.
pub fn closed_loop(
    ctrl: &mut FeedforwardController,
    plant: &mut dyn Plant,
    reference: &[Vec<f64>],
    disturbance: &[Vec<f64>],
    skip: usize,
) -> Result<TrackingRun> {
    closed_loop_bank(
        std::slice::from_mut(ctrl),
        plant,
        reference,
        disturbance,
        skip,
    )
}

/// Like [`closed_loop`] with several controllers acting side by side: their inputs and
/// outputs are concatenated in order (independent SISO loops are a bank of SISO
/// controllers). All controllers must share the same reference shift.
pub fn closed_loop_bank(
    ctrls: &mut [FeedforwardController],
    plant: &mut dyn Plant,
    reference: &[Vec<f64>],
    disturbance: &[Vec<f64>],
    skip: usize,
) -> Result<TrackingRun> {
    let first = ctrls
        .first()
        .ok_or_else(|| Error::Config("no controllers given".into()))?;
    let shift = first.shift().samples();
    if ctrls.iter().any(|c| c.shift().samples() != shift) {
        return Err(Error::Config(
            "controllers disagree on the reference shift".into(),
        ));
    }
    let du: usize = ctrls.iter().map(|c| c.state_space().num_inputs()).sum();
    let dy: usize = ctrls.iter().map(|c| c.state_space().num_outputs()).sum();
    let dd = ctrls
        .iter()
        .map(|c| c.state_space().num_disturbances())
        .max()
        .unwrap_or(0);
    check_len("reference channels", reference.len(), dy)?;
    check_len("plant inputs", plant.num_inputs(), du)?;
    check_len("plant outputs", plant.num_outputs(), dy)?;
    if disturbance.len() < dd {
        return Err(Error::Shape {
            what: "disturbance channels",
            got: disturbance.len(),
            expected: dd,
        });
    }
    let len = reference[0].len();
    if len <= shift || reference.iter().chain(disturbance).any(|c| c.len() != len) {
        return Err(Error::InsufficientData {
            needed: shift,
            got: len,
        });
    }
    let d_all = |k: usize| disturbance.iter().map(|c| c[k]).collect::<Vec<f64>>();
    let r = |k: usize| reference.iter().map(|c| c[k]).collect::<Vec<f64>>();

    let drive = |ctrls: &mut [FeedforwardController], rk: &[f64], dk: &[f64], reset: bool| {
        let mut u = Vec::with_capacity(du);
        let mut at = 0;
        for c in ctrls.iter_mut() {
            let ny = c.state_space().num_outputs();
            let nd = c.state_space().num_disturbances();
            let part = if reset {
                c.reset(&rk[at..at + ny], &dk[..nd])?
            } else {
                c.step(&rk[at..at + ny], &dk[..nd])?
            };
            u.extend(part);
            at += ny;
        }
        Ok::<_, Error>(u)
    };

    let d0 = d_all(0);
    let r0 = r(0);
    let u0 = drive(ctrls, &r0, &d0, true)?;
    plant.initialize(&r0, &u0, &d0);

    let mut inputs = vec![Vec::with_capacity(len); du];
    let mut outputs = vec![Vec::with_capacity(len); dy];
    for k in 0..len {
        let dk = d_all(k);
        let u = drive(ctrls, &r(k), &dk, false)?;
        let y = plant.step(&u, &dk);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: k });
        }
        for (c, v) in inputs.iter_mut().zip(&u) {
            c.push(*v);
        }
        for (c, v) in outputs.iter_mut().zip(&y) {
            c.push(*v);
        }
    }
    let rmse = shifted_rmse(&outputs, reference, shift, skip)?;
    Ok(TrackingRun {
        inputs,
        outputs,
        shift,
        rmse,
    })
}

/// Closed-loop evaluation on the valve plant with disturbance and noise drawn from `seed`.
pub fn closed_loop_eval(
    spec: &PlantSpec,
    ctrls: &mut [FeedforwardController],
    reference: &[Vec<f64>],
    seed: u64,
    skip: usize,
) -> Result<TrackingRun> {
    let len = reference.first().map_or(0, Vec::len);
    let d = disturbance_series(spec, len, seed)?;
    let mut plant = ValvePlant::new(spec.clone(), seed)?;
    closed_loop_bank(ctrls, &mut plant, reference, &[d], skip)
}
