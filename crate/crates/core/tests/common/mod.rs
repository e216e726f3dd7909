//! Random model generators and independent oracles shared by the integration tests.
#![allow(dead_code)]

use lmnctl::lmn::{LocalLinearModel, LocalModelNetwork, ValidityFunction};
use lmnctl::narx::{DelayConfig, NarxModel, SignalDelays};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Siso,
    Disturbance,
    Mimo,
}

pub const KINDS: [Kind; 3] = [Kind::Siso, Kind::Disturbance, Kind::Mimo];

fn validities(rng: &mut ChaCha8Rng, k: usize, val_dim: usize) -> Vec<ValidityFunction> {
    (0..k)
        .map(|_| {
            let c = (0..val_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w = (0..val_dim).map(|_| rng.random_range(0.3..1.0)).collect();
            ValidityFunction::new(c, w).unwrap()
        })
        .collect()
}

/// Gains in regressor order for one local model.
struct GainSpec {
    /// (delay set, critical gain range, other gain magnitude)
    inputs: Vec<(Vec<usize>, (f64, f64), f64)>,
    disturbances: Vec<Vec<usize>>,
    /// (delay set, bound on the sum of coefficient magnitudes)
    outputs: Vec<(Vec<usize>, f64)>,
}

fn local_gains(rng: &mut ChaCha8Rng, spec: &GainSpec) -> Vec<f64> {
    let mut g = Vec::new();
    for (set, (lo, hi), other) in &spec.inputs {
        for (n, _) in set.iter().enumerate() {
            if n == 0 {
                g.push(rng.random_range(*lo..*hi));
            } else {
                g.push(rng.random_range(-*other..*other));
            }
        }
    }
    for set in &spec.disturbances {
        for _ in set {
            g.push(rng.random_range(-0.5..0.5));
        }
    }
    for (set, total) in &spec.outputs {
        let share = total / set.len().max(1) as f64;
        for _ in set {
            g.push(rng.random_range(-share..share));
        }
    }
    g
}

fn network(
    rng: &mut ChaCha8Rng,
    delays: &DelayConfig,
    spec: &GainSpec,
    k: usize,
) -> LocalModelNetwork {
    let models = (0..k)
        .map(|_| LocalLinearModel::new(rng.random_range(-0.2..0.2), local_gains(rng, spec)))
        .collect();
    LocalModelNetwork::new(
        models,
        validities(rng, k, delays.val_dim()),
        delays.lin_dim(),
        delays.val_dim(),
    )
    .unwrap()
}

/// Random network of the given kind whose controller is certifiable by construction:
/// relative degree one, positive critical gains and `|b₂/b₁| < 0.4` per local model.
/// MIMO systems have a diagonally dominant instantaneous gain.
pub fn certifiable_system(rng: &mut ChaCha8Rng, kind: Kind) -> Vec<NarxModel> {
    let k = rng.random_range(2..=4);
    match kind {
        Kind::Siso | Kind::Disturbance => {
            let mut delays = DelayConfig::siso([1, 2], [1, 2], [], [1]).unwrap();
            let mut dist = vec![];
            if kind == Kind::Disturbance {
                delays = delays.with_disturbance([1, 2], [1]).unwrap();
                dist = vec![vec![1, 2]];
            }
            let spec = GainSpec {
                inputs: vec![(vec![1, 2], (0.5, 1.5), 0.2)],
                disturbances: dist,
                outputs: vec![(vec![1, 2], 0.8)],
            };
            let net = network(rng, &delays, &spec, k);
            vec![NarxModel::new(net, delays, 0).unwrap()]
        }
        Kind::Mimo => (0..2)
            .map(|j| {
                let delays = DelayConfig::new(
                    vec![SignalDelays::new([1], []); 2],
                    vec![],
                    (0..2)
                        .map(|c| {
                            if c == j {
                                SignalDelays::new([1, 2], [1])
                            } else {
                                SignalDelays::new([1], [])
                            }
                        })
                        .collect(),
                )
                .unwrap();
                let spec = GainSpec {
                    inputs: (0..2)
                        .map(|c| {
                            let range = if c == j { (1.0, 1.5) } else { (0.05, 0.3) };
                            (vec![1], range, 0.0)
                        })
                        .collect(),
                    disturbances: vec![],
                    outputs: (0..2)
                        .map(|c| {
                            if c == j {
                                (vec![1, 2], 0.6)
                            } else {
                                (vec![1], 0.2)
                            }
                        })
                        .collect(),
                };
                let net = network(rng, &delays, &spec, k);
                NarxModel::new(net, delays, j).unwrap()
            })
            .collect(),
    }
}

/// Random network of the given kind with validity inputs on every signal class
/// (inputs included); only suitable for simulation.
pub fn random_system(rng: &mut ChaCha8Rng, kind: Kind) -> Vec<NarxModel> {
    let k = rng.random_range(1..=4);
    let nu = rng.random_range(1..=3);
    let ny = rng.random_range(1..=3);
    let iset: Vec<usize> = (1..=nu).collect();
    let oset: Vec<usize> = (1..=ny).collect();
    match kind {
        Kind::Siso | Kind::Disturbance => {
            let mut delays = DelayConfig::siso(iset.clone(), oset.clone(), [1], [1]).unwrap();
            let mut dist = vec![];
            if kind == Kind::Disturbance {
                let nd = rng.random_range(1..=3);
                let dset: Vec<usize> = (1..=nd).collect();
                delays = delays.with_disturbance(dset.clone(), [1]).unwrap();
                dist = vec![dset];
            }
            let spec = GainSpec {
                inputs: vec![(iset, (-1.0, 1.0), 1.0)],
                disturbances: dist,
                outputs: vec![(oset, 0.8)],
            };
            let net = network(rng, &delays, &spec, k);
            vec![NarxModel::new(net, delays, 0).unwrap()]
        }
        Kind::Mimo => (0..2)
            .map(|j| {
                let delays = DelayConfig::new(
                    vec![SignalDelays::new(iset.clone(), [1]); 2],
                    vec![],
                    (0..2)
                        .map(|c| {
                            if c == j {
                                SignalDelays::new(oset.clone(), [1])
                            } else {
                                SignalDelays::new([1], [])
                            }
                        })
                        .collect(),
                )
                .unwrap();
                let spec = GainSpec {
                    inputs: vec![(iset.clone(), (-1.0, 1.0), 1.0); 2],
                    disturbances: vec![],
                    outputs: (0..2)
                        .map(|c| {
                            if c == j {
                                (oset.clone(), 0.6)
                            } else {
                                (vec![1], 0.2)
                            }
                        })
                        .collect(),
                };
                let net = network(rng, &delays, &spec, k);
                NarxModel::new(net, delays, j).unwrap()
            })
            .collect(),
    }
}

/// Smooth bounded reference: a sum of two sinusoids per channel.
pub fn reference(rng: &mut ChaCha8Rng, channels: usize, len: usize) -> Vec<Vec<f64>> {
    (0..channels)
        .map(|_| {
            let (a1, a2) = (rng.random_range(0.2..0.8), rng.random_range(0.1..0.4));
            let (p1, p2) = (rng.random_range(30.0..90.0), rng.random_range(7.0..20.0));
            (0..len)
                .map(|k| {
                    let t = k as f64;
                    a1 * (std::f64::consts::TAU * t / p1).sin()
                        + a2 * (std::f64::consts::TAU * t / p2).cos()
                })
                .collect()
        })
        .collect()
}

pub fn uniform_series(
    rng: &mut ChaCha8Rng,
    channels: usize,
    len: usize,
    amp: f64,
) -> Vec<Vec<f64>> {
    (0..channels)
        .map(|_| (0..len).map(|_| rng.random_range(-amp..amp)).collect())
        .collect()
}

/// Largest eigenvalue of the symmetric part.
pub fn max_eig(m: &DMatrix<f64>) -> f64 {
    let s = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(s).eigenvalues.max()
}

pub fn min_eig(m: &DMatrix<f64>) -> f64 {
    let s = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(s).eigenvalues.min()
}

/// Independent check of a common-Lyapunov certificate.
pub fn certificate_holds(p: &DMatrix<f64>, mats: &[DMatrix<f64>], eps: f64) -> bool {
    if p.nrows() == 0 {
        return true;
    }
    let n = p.nrows();
    min_eig(p) > eps
        && mats
            .iter()
            .all(|m| max_eig(&(m.transpose() * p * m - p + DMatrix::identity(n, n) * eps)) < 0.0)
}
