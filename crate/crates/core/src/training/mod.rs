//! LOLIMOT tree construction with local weighted least squares, and gradient
//! fine-tuning toward certifiable networks.

mod finetune;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::lmn::{LocalLinearModel, LocalModelNetwork, ValidityFunction};
use crate::narx::Regressors;

pub use finetune::{fine_tune_for_certifiability, FineTuneConfig, FineTuneOutcome, Sign};

/// Relative pivot threshold below which an unregularized normal-equation system counts
/// as rank deficient.
const RANK_TOL: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LolimotConfig {
    pub max_models: usize,
    /// Gaussian standard deviation as a fraction of the rectangle half-extent.
    pub width_factor: f64,
    pub ridge: f64,
    /// Minimum validity mass a child model must receive; `0` selects `lin_dim + 1`.
    pub min_points: f64,
}

impl Default for LolimotConfig {
    fn default() -> Self {
        Self {
            max_models: 32,
            width_factor: 1.0 / 3.0,
            ridge: 1e-8,
            min_points: 0.0,
        }
    }
}

impl LolimotConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_models == 0 {
            return Err(Error::Config("max_models must be at least 1".into()));
        }
        if !(self.width_factor > 0.0) || !self.width_factor.is_finite() {
            return Err(Error::Config("width_factor must be positive".into()));
        }
        if !(self.ridge >= 0.0) || !self.ridge.is_finite() {
            return Err(Error::Config("ridge must be nonnegative".into()));
        }
        if !(self.min_points >= 0.0) {
            return Err(Error::Config("min_points must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Axis-aligned hyperrectangle in validity-input space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Rect {
    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| 0.5 * (l + u))
            .collect()
    }

    pub fn volume(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| u - l)
            .product()
    }

    fn split(&self, dim: usize) -> (Rect, Rect) {
        let mid = 0.5 * (self.lower[dim] + self.upper[dim]);
        let mut a = self.clone();
        let mut b = self.clone();
        a.upper[dim] = mid;
        b.lower[dim] = mid;
        (a, b)
    }

    fn validity(&self, width_factor: f64) -> ValidityFunction {
        let widths = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| {
                let half = 0.5 * (u - l);
                // Degenerate (constant) dimensions keep a tiny positive width.
                (width_factor * half).max(1e-12 * (1.0 + 0.5 * (l.abs() + u.abs())))
            })
            .collect();
        ValidityFunction {
            centers: self.center(),
            widths,
        }
    }
}

/// One rectangle per local model, in network order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub rects: Vec<Rect>,
}

impl Partition {
    pub fn validities(&self, width_factor: f64) -> Vec<ValidityFunction> {
        self.rects
            .iter()
            .map(|r| r.validity(width_factor))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct LolimotFit {
    pub net: LocalModelNetwork,
    pub partition: Partition,
    /// Global training MSE after the initial fit and after every accepted split.
    pub error_history: Vec<f64>,
}

/// Weighted ridge least squares for one affine local model:
/// `argmin Σ w_n (t_n - offset - gains·x_n)² + ridge ‖gains‖²`.
pub fn local_wls(
    rows: &[Vec<f64>],
    targets: &[f64],
    weights: &[f64],
    ridge: f64,
) -> Result<LocalLinearModel> {
    check_len("targets", targets.len(), rows.len())?;
    check_len("weights", weights.len(), rows.len())?;
    if rows.is_empty() {
        return Err(Error::InsufficientData { needed: 0, got: 0 });
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::Config(
            "weights must be finite and nonnegative".into(),
        ));
    }
    if !weights.iter().any(|w| *w > 0.0) {
        return Err(Error::Config("all weights are zero".into()));
    }
    if !(ridge >= 0.0) {
        return Err(Error::Config("ridge must be nonnegative".into()));
    }
    let p = rows[0].len();
    for r in rows {
        check_len("regressor row", r.len(), p)?;
    }
    let m = p + 1;
    let mut gram = DMatrix::<f64>::zeros(m, m);
    let mut rhs = DVector::<f64>::zeros(m);
    let mut xt = vec![0.0; m];
    for ((row, t), w) in rows.iter().zip(targets).zip(weights) {
        if *w == 0.0 {
            continue;
        }
        xt[0] = 1.0;
        xt[1..].copy_from_slice(row);
        for a in 0..m {
            let wa = w * xt[a];
            rhs[a] += wa * t;
            for b in a..m {
                gram[(a, b)] += wa * xt[b];
            }
        }
    }
    for a in 0..m {
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
    }
    let scale = (0..m).map(|i| gram[(i, i)]).fold(0.0, f64::max);
    for i in 1..m {
        gram[(i, i)] += ridge;
    }
    let chol = gram.clone().cholesky().ok_or_else(|| {
        Error::RankDeficient(format!(
            "{m}x{m} normal equations are not positive definite"
        ))
    })?;
    if ridge == 0.0 {
        let l = chol.l_dirty();
        let min_pivot = (0..m)
            .map(|i| l[(i, i)] * l[(i, i)])
            .fold(f64::INFINITY, f64::min);
        if min_pivot <= RANK_TOL * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::RankDeficient(format!(
                "smallest pivot {min_pivot:.3e} relative to scale {scale:.3e}"
            )));
        }
    }
    let theta = chol.solve(&rhs);
    Ok(LocalLinearModel::new(
        theta[0],
        theta.iter().skip(1).copied().collect(),
    ))
}

/// Normalized root mean squared error `rmse / std(target)`; plain RMSE for a constant
/// target.
pub fn nrmse(predicted: &[f64], target: &[f64]) -> Result<f64> {
    let e = crate::narx::rmse(predicted, target)?;
    let mean = target.iter().sum::<f64>() / target.len() as f64;
    let var = target.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / target.len() as f64;
    Ok(if var > 0.0 { e / var.sqrt() } else { e })
}

/// Bounding box of the validity inputs.
pub fn bounding_box(regs: &Regressors) -> Result<Rect> {
    let first = regs
        .val
        .first()
        .ok_or(Error::InsufficientData { needed: 0, got: 0 })?;
    let mut lower = first.clone();
    let mut upper = first.clone();
    for v in &regs.val {
        for (d, x) in v.iter().enumerate() {
            lower[d] = lower[d].min(*x);
            upper[d] = upper[d].max(*x);
        }
    }
    Ok(Rect { lower, upper })
}

struct Workspace<'a> {
    regs: &'a Regressors,
    cfg: &'a LolimotConfig,
    min_points: f64,
}

impl Workspace<'_> {
    /// Validity matrix, one row per sample.
    fn validities(&self, rects: &[Rect]) -> Vec<Vec<f64>> {
        let vfs: Vec<ValidityFunction> = rects
            .iter()
            .map(|r| r.validity(self.cfg.width_factor))
            .collect();
        self.regs
            .val
            .iter()
            .map(|x| {
                let logs: Vec<f64> = vfs.iter().map(|v| v.log_membership(x)).collect();
                let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
                let s: f64 = w.iter().sum();
                w.iter_mut().for_each(|v| *v /= s);
                w
            })
            .collect()
    }

    fn fit(&self, phi: &[Vec<f64>], i: usize) -> Result<Option<LocalLinearModel>> {
        let w: Vec<f64> = phi.iter().map(|p| p[i]).collect();
        if w.iter().sum::<f64>() < self.min_points {
            return Ok(None);
        }
        local_wls(&self.regs.lin, &self.regs.target, &w, self.cfg.ridge).map(Some)
    }

    fn residuals(&self, phi: &[Vec<f64>], models: &[LocalLinearModel]) -> Vec<f64> {
        self.regs
            .lin
            .iter()
            .zip(&self.regs.target)
            .zip(phi)
            .map(|((x, t), p)| {
                let y: f64 = models.iter().zip(p).map(|(m, w)| w * m.predict(x)).sum();
                t - y
            })
            .collect()
    }
}

fn mse(res: &[f64]) -> f64 {
    res.iter().map(|r| r * r).sum::<f64>() / res.len() as f64
}

/// Greedy LOLIMOT: split the worst local model at the midpoint of its rectangle along
/// the axis giving the lowest global error, refitting only the two children.
pub fn lolimot_fit(
    regs: &Regressors,
    bounds: Option<&Rect>,
    config: &LolimotConfig,
) -> Result<LolimotFit> {
    config.validate()?;
    if regs.is_empty() {
        return Err(Error::InsufficientData { needed: 0, got: 0 });
    }
    let val_dim = regs.val_dim();
    let lin_dim = regs.lin_dim();
    if val_dim == 0 && config.max_models > 1 {
        return Err(Error::CannotSplit(
            "no validity inputs to partition; use max_models = 1".into(),
        ));
    }
    let root = match bounds {
        Some(b) => {
            check_len("bounding box", b.lower.len(), val_dim)?;
            check_len("bounding box", b.upper.len(), val_dim)?;
            b.clone()
        }
        None => bounding_box(regs)?,
    };
    let ws = Workspace {
        regs,
        cfg: config,
        min_points: if config.min_points > 0.0 {
            config.min_points
        } else {
            (lin_dim + 1) as f64
        },
    };

    let mut rects = vec![root];
    let mut phi = ws.validities(&rects);
    let mut models = vec![local_wls(
        &regs.lin,
        &regs.target,
        &vec![1.0; regs.len()],
        config.ridge,
    )?];
    let mut res = ws.residuals(&phi, &models);
    let mut history = vec![mse(&res)];

    while models.len() < config.max_models {
        let worst = (0..models.len())
            .map(|i| {
                let loss: f64 = phi.iter().zip(&res).map(|(p, r)| p[i] * r * r).sum();
                (i, loss)
            })
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);

        let mut best: Option<(
            f64,
            Vec<Rect>,
            Vec<Vec<f64>>,
            Vec<LocalLinearModel>,
            Vec<f64>,
        )> = None;
        for dim in 0..val_dim {
            let r = &rects[worst];
            if !(r.upper[dim] > r.lower[dim]) {
                continue;
            }
            let (a, b) = r.split(dim);
            let mut cand_rects = rects.clone();
            cand_rects[worst] = a;
            cand_rects.push(b);
            let cand_phi = ws.validities(&cand_rects);
            let (Some(ma), Some(mb)) =
                (ws.fit(&cand_phi, worst)?, ws.fit(&cand_phi, models.len())?)
            else {
                continue;
            };
            let mut cand_models = models.clone();
            cand_models[worst] = ma;
            cand_models.push(mb);
            let cand_res = ws.residuals(&cand_phi, &cand_models);
            let e = mse(&cand_res);
            if best.as_ref().is_none_or(|b| e < b.0) {
                best = Some((e, cand_rects, cand_phi, cand_models, cand_res));
            }
        }
        let current = *history.last().unwrap();
        match best {
            Some((e, r, p, m, re)) if e < current => {
                rects = r;
                phi = p;
                models = m;
                res = re;
                history.push(e);
            }
            _ => break,
        }
    }

    let partition = Partition { rects };
    let net = LocalModelNetwork::new(
        models,
        partition.validities(config.width_factor),
        lin_dim,
        val_dim,
    )?;
    Ok(LolimotFit {
        net,
        partition,
        error_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn regs_1d(xs: &[f64], f: impl Fn(f64) -> f64) -> Regressors {
        let mut r = Regressors::default();
        for x in xs {
            r.push(vec![*x], vec![*x], f(*x));
        }
        r
    }

    /// Normal equations by explicit inversion of `Xᵀ W X + R`.
    fn oracle(rows: &[Vec<f64>], t: &[f64], w: &[f64], ridge: f64) -> Vec<f64> {
        let m = rows[0].len() + 1;
        let x = DMatrix::from_fn(
            rows.len(),
            m,
            |i, j| if j == 0 { 1.0 } else { rows[i][j - 1] },
        );
        let wd = DMatrix::from_diagonal(&DVector::from_column_slice(w));
        let mut reg = DMatrix::identity(m, m) * ridge;
        reg[(0, 0)] = 0.0;
        let lhs = x.transpose() * &wd * &x + reg;
        let rhs = x.transpose() * &wd * DVector::from_column_slice(t);
        (lhs.try_inverse().unwrap() * rhs).iter().copied().collect()
    }

    #[test]
    fn affine_target_is_interpolated() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 * 0.3 - 1.0]).collect();
        let t: Vec<f64> = rows.iter().map(|r| 3.0 * r[0] + 1.0).collect();
        let m = local_wls(&rows, &t, &[1.0; 10], 0.0).unwrap();
        assert!((m.gains[0] - 3.0).abs() < 1e-10);
        assert!((m.offset - 1.0).abs() < 1e-10);
    }

    #[test]
    fn single_point_weight() {
        let rows = vec![vec![0.0], vec![1.0], vec![2.0]];
        let t = vec![5.0, -1.0, 7.0];
        let w = vec![0.0, 1.0, 0.0];
        let m = local_wls(&rows, &t, &w, 1e-3).unwrap();
        assert!((m.predict(&[1.0]) + 1.0).abs() < 1e-9);
        let loose = local_wls(&rows, &t, &w, 1.0).unwrap();
        assert!(loose.gains[0].abs() <= 1e-12);
        assert!(matches!(
            local_wls(&rows, &t, &w, 0.0),
            Err(Error::RankDeficient(_))
        ));
    }

    #[test]
    fn matches_normal_equation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let t: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..1.0)).collect();
        let m = local_wls(&rows, &t, &w, 1e-6).unwrap();
        let o = oracle(&rows, &t, &w, 1e-6);
        assert!((m.offset - o[0]).abs() < 1e-8);
        for (g, e) in m.gains.iter().zip(&o[1..]) {
            assert!((g - e).abs() < 1e-8);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(local_wls(&[], &[], &[], 0.0).is_err());
        assert!(local_wls(&[vec![1.0]], &[1.0], &[0.0], 0.0).is_err());
        assert!(local_wls(&[vec![1.0]], &[1.0], &[-1.0], 0.0).is_err());
        assert!(local_wls(&[vec![1.0]], &[1.0, 2.0], &[1.0], 0.0).is_err());
    }

    #[test]
    fn single_model_fits_affine_target() {
        let xs: Vec<f64> = (0..200).map(|i| i as f64 / 100.0 - 1.0).collect();
        let regs = regs_1d(&xs, |x| 2.0 - 0.5 * x);
        let cfg = LolimotConfig {
            max_models: 1,
            ..Default::default()
        };
        let fit = lolimot_fit(&regs, None, &cfg).unwrap();
        assert_eq!(fit.net.num_models(), 1);
        let pred: Vec<f64> = xs
            .iter()
            .map(|x| fit.net.evaluate(&[*x], &[*x]).unwrap())
            .collect();
        assert!(nrmse(&pred, &regs.target).unwrap() < 1e-8);
    }

    #[test]
    fn abs_target_is_learned_with_monotone_error() {
        let xs: Vec<f64> = (0..2000).map(|i| -1.0 + 2.0 * i as f64 / 1999.0).collect();
        let regs = regs_1d(&xs, f64::abs);
        let cfg = LolimotConfig {
            max_models: 16,
            ..Default::default()
        };
        let fit = lolimot_fit(&regs, None, &cfg).unwrap();
        assert!(fit.net.num_models() <= 16);
        assert!(fit.error_history.windows(2).all(|w| w[1] <= w[0]));
        let pred: Vec<f64> = xs
            .iter()
            .map(|x| fit.net.evaluate(&[*x], &[*x]).unwrap())
            .collect();
        let e = nrmse(&pred, &regs.target).unwrap();
        assert!(e < 1e-3, "nrmse {e}");
    }

    #[test]
    fn partition_tiles_bounding_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut regs = Regressors::default();
        for _ in 0..400 {
            let a: f64 = rng.random_range(-1.0..1.0);
            let b: f64 = rng.random_range(0.0..2.0);
            regs.push(vec![a, b], vec![a, b], (3.0 * a).sin() * b);
        }
        let cfg = LolimotConfig {
            max_models: 8,
            ..Default::default()
        };
        let fit = lolimot_fit(&regs, None, &cfg).unwrap();
        let bbox = bounding_box(&regs).unwrap();
        let total: f64 = fit.partition.rects.iter().map(Rect::volume).sum();
        assert!((total - bbox.volume()).abs() < 1e-9 * bbox.volume());
        for (r, v) in fit.partition.rects.iter().zip(fit.net.validities()) {
            assert_eq!(r.center(), v.centers);
        }
    }

    #[test]
    fn no_validity_inputs_cannot_split() {
        let mut regs = Regressors::default();
        regs.push(vec![1.0], vec![], 1.0);
        regs.push(vec![2.0], vec![], 2.0);
        assert!(matches!(
            lolimot_fit(&regs, None, &LolimotConfig::default()),
            Err(Error::CannotSplit(_))
        ));
        let one = LolimotConfig {
            max_models: 1,
            ..Default::default()
        };
        assert!(lolimot_fit(&regs, None, &one).is_ok());
        assert!(lolimot_fit(&Regressors::default(), None, &one).is_err());
    }

    proptest! {
        #[test]
        fn uniform_weights_equal_ordinary_least_squares(
            seed in 0u64..1000, n in 6usize..40, p in 1usize..4
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..p).map(|_| rng.random_range(-3.0..3.0)).collect())
                .collect();
            let t: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let m = local_wls(&rows, &t, &vec![1.0; n], 0.0).unwrap();
            let x = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { rows[i][j - 1] });
            let ols = x.svd(true, true).solve(&DVector::from_column_slice(&t), 1e-14).unwrap();
            prop_assert!((m.offset - ols[0]).abs() < 1e-8);
            for (g, e) in m.gains.iter().zip(ols.iter().skip(1)) {
                prop_assert!((g - e).abs() < 1e-8);
            }
        }

        #[test]
        fn lolimot_keeps_simplex_and_monotone_error(seed in 0u64..200, k in 1usize..7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut regs = Regressors::default();
            for _ in 0..150 {
                let x: f64 = rng.random_range(-2.0..2.0);
                regs.push(vec![x], vec![x], x * x * x - x + rng.random_range(-0.05..0.05));
            }
            let cfg = LolimotConfig { max_models: k, ..Default::default() };
            let fit = lolimot_fit(&regs, None, &cfg).unwrap();
            prop_assert!(fit.net.num_models() <= k);
            prop_assert_eq!(fit.error_history.len(), fit.net.num_models());
            prop_assert!(fit.error_history.windows(2).all(|w| w[1] <= w[0]));
            for x in &regs.val {
                let s: f64 = fit.net.validity_weights(x).unwrap().iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }
}
