//! Regression of reduced coefficients on parameters: feature scaling, a sigmoid
//! multilayer perceptron trained by Levenberg-Marquardt, and Gaussian RBF interpolation.

use log::{debug, warn};
use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Standard deviations below this are floored to keep the scaling invertible.
pub const STD_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mu_min: Vec<f64>,
    pub mu_max: Vec<f64>,
    pub out_mean: Vec<f64>,
    pub out_std: Vec<f64>,
}

impl FeatureScaler {
    /// `x`: one parameter vector per sample; `y`: one output vector per sample.
    pub fn fit(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<Self> {
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::Shape(
                "scaler needs matching, nonempty inputs and outputs".into(),
            ));
        }
        let p = x[0].len();
        let q = y[0].len();
        let mut mu_min = vec![f64::INFINITY; p];
        let mut mu_max = vec![f64::NEG_INFINITY; p];
        for v in x {
            for d in 0..p {
                mu_min[d] = mu_min[d].min(v[d]);
                mu_max[d] = mu_max[d].max(v[d]);
            }
        }
        for d in 0..p {
            if !(mu_max[d] > mu_min[d]) {
                // a constant input carries no information; widen to keep the map affine
                mu_max[d] = mu_min[d] + 1.0;
            }
        }
        let n = y.len() as f64;
        let mut out_mean = vec![0.0; q];
        for v in y {
            for o in 0..q {
                out_mean[o] += v[o] / n;
            }
        }
        let mut out_std = vec![0.0; q];
        for v in y {
            for o in 0..q {
                out_std[o] += (v[o] - out_mean[o]).powi(2) / n;
            }
        }
        // one spread for all outputs, so the loss weighs coefficients by their
        // contribution to the field rather than equally
        let pooled = (out_std.iter().sum::<f64>() / q as f64)
            .sqrt()
            .max(STD_FLOOR);
        out_std.iter_mut().for_each(|s| *s = pooled);
        Ok(Self {
            mu_min,
            mu_max,
            out_mean,
            out_std,
        })
    }

    pub fn scale_input(&self, mu: &[f64]) -> Vec<f64> {
        mu.iter()
            .enumerate()
            .map(|(d, v)| 2.0 * (v - self.mu_min[d]) / (self.mu_max[d] - self.mu_min[d]) - 1.0)
            .collect()
    }

    pub fn normalize_output(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .enumerate()
            .map(|(o, v)| (v - self.out_mean[o]) / self.out_std[o])
            .collect()
    }

    pub fn rescale_output(&self, ys: &[f64]) -> Vec<f64> {
        ys.iter()
            .enumerate()
            .map(|(o, v)| v * self.out_std[o] + self.out_mean[o])
            .collect()
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Fully connected network: sigmoid hidden layers, linear output layer.
///
/// Parameters are stored layer by layer (row-major weights, then biases) for the
/// hidden layers, followed by one `[weights, bias]` block per output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub theta: Vec<f64>,
}

struct SampleDerivs {
    /// `d a_L / d theta_hidden`, `H x n_hidden`.
    g: DMatrix<f64>,
    /// Last hidden activation with a trailing 1.
    a_ext: DVector<f64>,
    y: DVector<f64>,
}

impl Mlp {
    pub fn new(inputs: usize, hidden: &[usize], outputs: usize) -> Result<Self> {
        if hidden.is_empty() || hidden.contains(&0) || inputs == 0 || outputs == 0 {
            return Err(Error::Config(
                "network needs at least one nonempty hidden layer".into(),
            ));
        }
        let mut sizes = vec![inputs];
        sizes.extend_from_slice(hidden);
        sizes.push(outputs);
        let mut m = Self {
            sizes,
            theta: Vec::new(),
        };
        m.theta = vec![0.0; m.n_params()];
        Ok(m)
    }

    pub fn n_hidden_params(&self) -> usize {
        let l = self.sizes.len() - 1;
        (0..l - 1)
            .map(|i| (self.sizes[i] + 1) * self.sizes[i + 1])
            .sum()
    }

    pub fn n_params(&self) -> usize {
        self.n_hidden_params() + self.outputs() * (self.last_hidden() + 1)
    }

    pub fn outputs(&self) -> usize {
        *self.sizes.last().expect("sizes")
    }

    fn last_hidden(&self) -> usize {
        self.sizes[self.sizes.len() - 2]
    }

    /// Glorot-uniform initialization, with the usual factor 4 on sigmoid layers so
    /// deep stacks do not start out flat.
    pub fn randomize(&mut self, rng: &mut impl Rng) {
        let mut k = 0;
        let last = self.sizes.len() - 2;
        for l in 0..=last {
            let (fan_in, out) = (self.sizes[l], self.sizes[l + 1]);
            let gain = if l < last { 4.0 } else { 1.0 };
            let r = gain * (6.0 / (fan_in + out) as f64).sqrt();
            for _ in 0..(fan_in + 1) * out {
                self.theta[k] = rng.gen_range(-r..=r);
                k += 1;
            }
        }
    }

    fn output_weight(&self, o: usize, c: usize) -> f64 {
        let h = self.last_hidden();
        self.theta[self.n_hidden_params() + o * (h + 1) + c]
    }

    /// Hidden activations per layer (input included).
    fn hidden_forward(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![x.to_vec()];
        let mut off = 0;
        for l in 0..self.sizes.len() - 2 {
            let (nin, nout) = (self.sizes[l], self.sizes[l + 1]);
            let prev = &acts[l];
            let w = &self.theta[off..off + nin * nout];
            let b = &self.theta[off + nin * nout..off + (nin + 1) * nout];
            let next: Vec<f64> = (0..nout)
                .map(|i| sigmoid(b[i] + (0..nin).map(|j| w[i * nin + j] * prev[j]).sum::<f64>()))
                .collect();
            off += (nin + 1) * nout;
            acts.push(next);
        }
        acts
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let acts = self.hidden_forward(x);
        let a = acts.last().expect("hidden layer");
        let h = self.last_hidden();
        (0..self.outputs())
            .map(|o| {
                self.output_weight(o, h)
                    + (0..h).map(|c| self.output_weight(o, c) * a[c]).sum::<f64>()
            })
            .collect()
    }

    fn sample_derivs(&self, x: &[f64]) -> SampleDerivs {
        let acts = self.hidden_forward(x);
        let nl = self.sizes.len() - 2;
        let h = self.last_hidden();
        let nh = self.n_hidden_params();
        let mut offsets = Vec::with_capacity(nl);
        let mut off = 0;
        for l in 0..nl {
            offsets.push(off);
            off += (self.sizes[l] + 1) * self.sizes[l + 1];
        }
        let mut g = DMatrix::zeros(h, nh);
        for u in 0..h {
            // backpropagate the unit vector e_u from the last hidden layer
            let mut delta: Vec<f64> = (0..h)
                .map(|i| {
                    if i == u {
                        acts[nl][i] * (1.0 - acts[nl][i])
                    } else {
                        0.0
                    }
                })
                .collect();
            for l in (0..nl).rev() {
                let (nin, nout) = (self.sizes[l], self.sizes[l + 1]);
                let o = offsets[l];
                for i in 0..nout {
                    if delta[i] == 0.0 {
                        continue;
                    }
                    for j in 0..nin {
                        g[(u, o + i * nin + j)] = delta[i] * acts[l][j];
                    }
                    g[(u, o + nin * nout + i)] = delta[i];
                }
                if l > 0 {
                    let w = &self.theta[o..o + nin * nout];
                    delta = (0..nin)
                        .map(|j| {
                            let s: f64 = (0..nout).map(|i| w[i * nin + j] * delta[i]).sum();
                            s * acts[l][j] * (1.0 - acts[l][j])
                        })
                        .collect();
                }
            }
        }
        let mut a_ext = DVector::from_element(h + 1, 1.0);
        for c in 0..h {
            a_ext[c] = acts[nl][c];
        }
        let y = DVector::from_fn(self.outputs(), |o, _| {
            (0..=h)
                .map(|c| self.output_weight(o, c) * a_ext[c])
                .sum::<f64>()
        });
        SampleDerivs { g, a_ext, y }
    }

    fn output_matrix(&self) -> DMatrix<f64> {
        let h = self.last_hidden();
        DMatrix::from_fn(self.outputs(), h, |o, c| self.output_weight(o, c))
    }

    /// Jacobian of the outputs with respect to all parameters, `outputs x n_params`.
    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let d = self.sample_derivs(x);
        let wo = self.output_matrix();
        let nh = self.n_hidden_params();
        let h = self.last_hidden();
        let mut j = DMatrix::zeros(self.outputs(), self.n_params());
        let v = &wo * &d.g;
        for o in 0..self.outputs() {
            for c in 0..nh {
                j[(o, c)] = v[(o, c)];
            }
            for c in 0..=h {
                j[(o, nh + o * (h + 1) + c)] = d.a_ext[c];
            }
        }
        j
    }
}

/// Gauss-Newton pieces of the least-squares problem, kept blockwise: hidden
/// parameters, and one identical block per output of the linear output layer.
struct NormalSystem {
    hh: DMatrix<f64>,
    /// `n_hidden x outputs*(H+1)`; block `o` couples hidden parameters to output `o`.
    ho: DMatrix<f64>,
    /// Shared output block `sum a a^T`.
    a: DMatrix<f64>,
    gh: DVector<f64>,
    /// `(H+1) x outputs`.
    go: DMatrix<f64>,
}

fn sum_sq_error(net: &Mlp, x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(xi, yi)| {
            net.forward(xi)
                .iter()
                .zip(yi)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .sum()
}

fn normal_system(net: &Mlp, x: &[Vec<f64>], y: &[Vec<f64>]) -> NormalSystem {
    let n = x.len();
    let h = net.last_hidden();
    let nh = net.n_hidden_params();
    let q = net.outputs();
    let wo = net.output_matrix();
    let m = wo.tr_mul(&wo);
    let factor = if q > h {
        Cholesky::new(m.clone()).map(|c| c.l().transpose())
    } else {
        None
    };
    let rows_per = if factor.is_some() { h } else { q };
    let mut stacked_q = DMatrix::zeros(n * rows_per, nh);
    // rows of G for hidden unit c, one per sample
    let mut g_unit: Vec<DMatrix<f64>> = vec![DMatrix::zeros(n, nh); h];
    let mut a_all = DMatrix::zeros(n, h + 1);
    let mut e_all = DMatrix::zeros(n, q);
    let mut gh = DVector::zeros(nh);
    for (s, (xs, ys)) in x.iter().zip(y).enumerate() {
        let d = net.sample_derivs(xs);
        let qs = match &factor {
            Some(r) => r * &d.g,
            None => &wo * &d.g,
        };
        stacked_q.rows_mut(s * rows_per, rows_per).copy_from(&qs);
        for (c, gu) in g_unit.iter_mut().enumerate() {
            gu.row_mut(s).copy_from(&d.g.row(c));
        }
        for c in 0..=h {
            a_all[(s, c)] = d.a_ext[c];
        }
        let e = DVector::from_fn(q, |o, _| d.y[o] - ys[o]);
        for o in 0..q {
            e_all[(s, o)] = e[o];
        }
        gh += d.g.tr_mul(&wo.tr_mul(&e));
    }
    let hh = stacked_q.transpose() * &stacked_q;
    // block o = sum_c Wo[o, c] G_c^T A
    let k = h + 1;
    let mut units = DMatrix::zeros(nh * k, h);
    for (c, gu) in g_unit.iter().enumerate() {
        let mc = gu.transpose() * &a_all;
        units.column_mut(c).copy_from_slice(mc.as_slice());
    }
    let blocks = units * wo.transpose();
    let mut ho = DMatrix::zeros(nh, q * k);
    for o in 0..q {
        ho.columns_mut(o * k, k)
            .copy_from_slice(blocks.column(o).as_slice());
    }
    let a = a_all.transpose() * &a_all;
    let go = a_all.transpose() * &e_all;
    NormalSystem { hh, ho, a, gh, go }
}

/// Solves `(J^T J + c I) delta = -(J^T e + reg)` through the Schur complement on the hidden block.
fn lm_step(sys: &NormalSystem, c: f64, reg: &[f64], nh: usize, h: usize) -> Option<Vec<f64>> {
    let q = sys.go.ncols();
    let k = h + 1;
    let mut b = sys.a.clone();
    for i in 0..k {
        b[(i, i)] += c;
    }
    let bc = Cholesky::new(b)?;
    let gh = DVector::from_fn(nh, |i, _| sys.gh[i] + reg[i]);
    let go = DMatrix::from_fn(k, q, |i, o| sys.go[(i, o)] + reg[nh + o * k + i]);
    let mut s = sys.hh.clone();
    for i in 0..nh {
        s[(i, i)] += c;
    }
    let mut rhs = -gh;
    // X_o = H_o L^{-T}, so H_o B^{-1} H_o^T = X_o X_o^T
    let l = bc.l();
    let mut x_all = DMatrix::zeros(nh, q * k);
    for o in 0..q {
        let ho = sys.ho.columns(o * k, k);
        let xt = l.solve_lower_triangular(&ho.transpose())?;
        x_all.columns_mut(o * k, k).copy_from(&xt.transpose());
        let binv_go = bc.solve(&go.column(o).into_owned());
        rhs += ho * binv_go;
    }
    s -= &x_all * x_all.transpose();
    let sc = Cholesky::new(s)?;
    let dh = sc.solve(&rhs);
    let mut delta = vec![0.0; nh + q * k];
    delta[..nh].copy_from_slice(dh.as_slice());
    for o in 0..q {
        let ho = sys.ho.columns(o * k, k);
        let r = -(go.column(o).into_owned() + ho.tr_mul(&dh));
        let d = bc.solve(&r);
        delta[nh + o * k..nh + (o + 1) * k].copy_from_slice(d.as_slice());
    }
    Some(delta)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden_layers: usize,
    pub hidden_units: usize,
    pub lm_mu0: f64,
    pub lm_increase: f64,
    pub lm_decrease: f64,
    pub lm_mu_max: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    pub l2: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden_layers: 4,
            hidden_units: 15,
            lm_mu0: 1e-3,
            lm_increase: 10.0,
            lm_decrease: 10.0,
            lm_mu_max: 1e10,
            max_epochs: 1000,
            patience: 6,
            validation_fraction: 0.1,
            l2: 1e-4,
            restarts: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, why: &str| Err(Error::Config(format!("regressor.{f} {why}")));
        if self.hidden_layers == 0 || self.hidden_units == 0 {
            return bad("hidden_layers", "and hidden_units must be positive");
        }
        if self.patience == 0 {
            return bad("patience", "must be at least 1");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction", "must lie in [0, 1)");
        }
        if !(self.lm_mu0 > 0.0) || !(self.lm_increase > 1.0) || !(self.lm_decrease > 1.0) {
            return bad(
                "lm_mu0",
                "must be positive with increase/decrease factors above 1",
            );
        }
        if !(self.l2 >= 0.0) {
            return bad("l2", "must be nonnegative");
        }
        if self.restarts == 0 || self.max_epochs == 0 {
            return bad("restarts", "and max_epochs must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub lm_mu: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub restart: usize,
    pub epochs: Vec<EpochLog>,
    /// Epoch whose weights were kept (0 is the initialization).
    pub best_epoch: usize,
    pub stop_reason: String,
    /// Sample indices held out for validation.
    pub validation: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpRegressor {
    pub net: Mlp,
    pub scaler: FeatureScaler,
    /// Log of the restart that was kept.
    pub log: TrainingLog,
}

impl MlpRegressor {
    pub fn predict(&self, mu: &[f64]) -> Vec<f64> {
        self.scaler
            .rescale_output(&self.net.forward(&self.scaler.scale_input(mu)))
    }
}

fn mse(net: &Mlp, x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    sum_sq_error(net, x, y) / (x.len() * net.outputs()) as f64
}

/// One LM run from a random start; returns the best-validation network and the log.
fn train_once(
    x: &[Vec<f64>],
    y: &[Vec<f64>],
    xv: &[Vec<f64>],
    yv: &[Vec<f64>],
    cfg: &TrainConfig,
    restart: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Mlp, TrainingLog)> {
    let hidden = vec![cfg.hidden_units; cfg.hidden_layers];
    let mut net = Mlp::new(x[0].len(), &hidden, y[0].len())?;
    net.randomize(rng);
    let nh = net.n_hidden_params();
    let h = cfg.hidden_units;
    // Penalty weight l2 on the mean squared weight relative to the mean squared error.
    let rows = (x.len() * net.outputs()) as f64;
    let lam = cfg.l2 * rows / net.theta.len() as f64;
    let objective =
        |n: &Mlp| sum_sq_error(n, x, y) + lam * n.theta.iter().map(|t| t * t).sum::<f64>();
    let has_val = !xv.is_empty();
    let score = |n: &Mlp| {
        if has_val {
            mse(n, xv, yv)
        } else {
            mse(n, x, y)
        }
    };
    let mut f = objective(&net);
    let mut best = (score(&net), net.clone(), 0usize);
    let mut log = Vec::new();
    let mut lm_mu = cfg.lm_mu0;
    let mut fails = 0;
    let mut stop_reason = "max_epochs".to_string();
    for epoch in 1..=cfg.max_epochs {
        if !f.is_finite() {
            return Err(Error::Training("non-finite training loss".into()));
        }
        let sys = normal_system(&net, x, y);
        let reg: Vec<f64> = net.theta.iter().map(|t| lam * t).collect();
        let mut accepted = false;
        while lm_mu <= cfg.lm_mu_max {
            if let Some(delta) = lm_step(&sys, lam + lm_mu, &reg, nh, h) {
                let mut trial = net.clone();
                for (t, d) in trial.theta.iter_mut().zip(&delta) {
                    *t += d;
                }
                let ft = objective(&trial);
                if ft.is_finite() && ft < f {
                    net = trial;
                    f = ft;
                    lm_mu /= cfg.lm_decrease;
                    accepted = true;
                    break;
                }
            }
            lm_mu *= cfg.lm_increase;
        }
        if !accepted {
            stop_reason = "lm_mu_max".into();
            break;
        }
        let train_mse = mse(&net, x, y);
        let val = score(&net);
        log.push(EpochLog {
            epoch,
            train_mse,
            val_mse: if has_val { val } else { f64::NAN },
            lm_mu,
        });
        if val < best.0 {
            best = (val, net.clone(), epoch);
            fails = 0;
        } else {
            fails += 1;
            if fails >= cfg.patience {
                stop_reason = "validation".into();
                break;
            }
        }
        if train_mse < 1e-14 {
            stop_reason = "converged".into();
            break;
        }
    }
    debug!(
        "restart {restart}: {} epochs, best epoch {}, stop: {stop_reason}",
        log.len(),
        best.2
    );
    Ok((
        best.1,
        TrainingLog {
            restart,
            epochs: log,
            best_epoch: best.2,
            stop_reason,
            validation: Vec::new(),
        },
    ))
}

/// Trains a network on `(x, y)` with early stopping and restarts; keeps the best
/// validation score.
pub fn train_mlp(x: &[Vec<f64>], y: &[Vec<f64>], cfg: &TrainConfig) -> Result<MlpRegressor> {
    cfg.validate()?;
    let scaler = FeatureScaler::fit(x, y)?;
    let xs: Vec<Vec<f64>> = x.iter().map(|v| scaler.scale_input(v)).collect();
    let ys: Vec<Vec<f64>> = y.iter().map(|v| scaler.normalize_output(v)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.shuffle(&mut rng);
    let n_val = (cfg.validation_fraction * x.len() as f64).floor() as usize;
    let (train_idx, val_idx) = order.split_at(x.len() - n_val);
    let pick =
        |idx: &[usize], src: &[Vec<f64>]| idx.iter().map(|&i| src[i].clone()).collect::<Vec<_>>();
    let (xt, yt) = (pick(train_idx, &xs), pick(train_idx, &ys));
    let (xv, yv) = (pick(val_idx, &xs), pick(val_idx, &ys));
    let mut best: Option<(f64, Mlp, TrainingLog)> = None;
    let mut last_err = None;
    for r in 0..cfg.restarts {
        match train_once(&xt, &yt, &xv, &yv, cfg, r, &mut rng) {
            Ok((net, log)) => {
                let s = if xv.is_empty() {
                    mse(&net, &xt, &yt)
                } else {
                    mse(&net, &xv, &yv)
                };
                if best.as_ref().is_none_or(|b| s < b.0) {
                    best = Some((s, net, log));
                }
            }
            Err(e) => {
                warn!("training restart {r} failed: {e}");
                last_err = Some(e);
            }
        }
    }
    let (_, net, mut log) = best
        .ok_or_else(|| last_err.unwrap_or_else(|| Error::Training("all restarts failed".into())))?;
    log.validation = val_idx.to_vec();
    Ok(MlpRegressor { net, scaler, log })
}

/// How the Gaussian shape parameter is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ShapeRule {
    /// `eps = factor / median pairwise distance` of the scaled centers.
    MedianDistance {
        factor: f64,
    },
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RbfConfig {
    pub shape: ShapeRule,
    pub ridge: f64,
    /// Augment the kernel with an affine polynomial, used when there are more
    /// centers than affine terms.
    pub affine_tail: bool,
}

impl Default for RbfConfig {
    fn default() -> Self {
        Self {
            shape: ShapeRule::MedianDistance { factor: 1.0 },
            ridge: 0.0,
            affine_tail: true,
        }
    }
}

/// Above this condition number the kernel matrix gets an automatic ridge.
pub const RBF_MAX_CONDITION: f64 = 1e12;
pub const RBF_AUTO_RIDGE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RbfRegressor {
    pub centers: Vec<Vec<f64>>,
    /// `centers x outputs`.
    pub weights: DMatrix<f64>,
    /// Affine coefficients `(1 + inputs) x outputs`: constant first, then one row per input.
    pub tail: Option<DMatrix<f64>>,
    pub eps: f64,
    pub ridge: f64,
    pub scaler: FeatureScaler,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Median distance over all pairs of centers.
pub fn median_pairwise_distance(centers: &[Vec<f64>]) -> f64 {
    let mut d = Vec::with_capacity(centers.len() * centers.len().saturating_sub(1) / 2);
    for i in 0..centers.len() {
        for j in 0..i {
            d.push(dist(&centers[i], &centers[j]));
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    let med = if m % 2 == 1 {
        d[m / 2]
    } else {
        0.5 * (d[m / 2 - 1] + d[m / 2])
    };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

pub fn train_rbf(x: &[Vec<f64>], y: &[Vec<f64>], cfg: &RbfConfig) -> Result<RbfRegressor> {
    let scaler = FeatureScaler::fit(x, y)?;
    let centers: Vec<Vec<f64>> = x.iter().map(|v| scaler.scale_input(v)).collect();
    let n = centers.len();
    for i in 0..n {
        for j in 0..i {
            if dist(&centers[i], &centers[j]) == 0.0 {
                return Err(Error::Degenerate(format!(
                    "RBF centers {j} and {i} coincide"
                )));
            }
        }
    }
    let eps = match cfg.shape {
        ShapeRule::MedianDistance { factor } => factor / median_pairwise_distance(&centers),
        ShapeRule::Fixed(e) => e,
    };
    if !(eps > 0.0) {
        return Err(Error::Config(format!(
            "RBF shape parameter must be positive, got {eps}"
        )));
    }
    let kernel = DMatrix::from_fn(n, n, |i, j| {
        (-(eps * dist(&centers[i], &centers[j])).powi(2)).exp()
    });
    let eig = SymmetricEigen::new(kernel.clone());
    let (lmin, lmax) = eig
        .eigenvalues
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), &v| {
            (a.min(v), b.max(v.abs()))
        });
    let mut ridge = cfg.ridge;
    if lmin <= 0.0 || lmax / lmin > RBF_MAX_CONDITION {
        warn!(
            "RBF kernel condition {:.3e} exceeds {RBF_MAX_CONDITION:e}; adding ridge {RBF_AUTO_RIDGE:e}",
            lmax / lmin
        );
        ridge = ridge.max(RBF_AUTO_RIDGE);
    }
    let rhs = DMatrix::from_fn(n, y[0].len(), |i, o| scaler.normalize_output(&y[i])[o]);
    let dim = centers[0].len();
    let use_tail = cfg.affine_tail && n > dim + 1;
    let (weights, tail) = if use_tail {
        // saddle-point system [K P; P^T 0] with P = [1, x]
        let m = n + dim + 1;
        let mut a = DMatrix::zeros(m, m);
        a.view_mut((0, 0), (n, n)).copy_from(&kernel);
        for i in 0..n {
            a[(i, i)] += ridge;
            a[(i, n)] = 1.0;
            a[(n, i)] = 1.0;
            for d in 0..dim {
                a[(i, n + 1 + d)] = centers[i][d];
                a[(n + 1 + d, i)] = centers[i][d];
            }
        }
        let mut b = DMatrix::zeros(m, rhs.ncols());
        b.rows_mut(0, n).copy_from(&rhs);
        let sol = a
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::Training("RBF interpolation system is singular".into()))?;
        (
            sol.rows(0, n).into_owned(),
            Some(sol.rows(n, dim + 1).into_owned()),
        )
    } else {
        let mut a = kernel;
        for i in 0..n {
            a[(i, i)] += ridge;
        }
        let w = match Cholesky::new(a.clone()) {
            Some(c) => c.solve(&rhs),
            None => a
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::Training("RBF interpolation system is singular".into()))?,
        };
        (w, None)
    };
    Ok(RbfRegressor {
        centers,
        weights,
        tail,
        eps,
        ridge,
        scaler,
    })
}

impl RbfRegressor {
    pub fn predict(&self, mu: &[f64]) -> Vec<f64> {
        let xs = self.scaler.scale_input(mu);
        let q = self.weights.ncols();
        let mut out = vec![0.0; q];
        for (i, c) in self.centers.iter().enumerate() {
            let phi = (-(self.eps * dist(c, &xs)).powi(2)).exp();
            for (o, v) in out.iter_mut().enumerate() {
                *v += phi * self.weights[(i, o)];
            }
        }
        if let Some(t) = &self.tail {
            for (o, v) in out.iter_mut().enumerate() {
                *v += t[(0, o)]
                    + xs.iter()
                        .enumerate()
                        .map(|(d, x)| t[(1 + d, o)] * x)
                        .sum::<f64>();
            }
        }
        self.scaler.rescale_output(&out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Mlp,
    Rbf,
}

/// Clusters with fewer samples than this train an RBF model instead of a network.
pub const MIN_MLP_SAMPLES: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Regressor {
    Mlp(MlpRegressor),
    Rbf(RbfRegressor),
}

impl Regressor {
    pub fn train(
        backend: Backend,
        x: &[Vec<f64>],
        y: &[Vec<f64>],
        mlp: &TrainConfig,
        rbf: &RbfConfig,
    ) -> Result<Self> {
        match backend {
            Backend::Mlp if x.len() >= MIN_MLP_SAMPLES => Ok(Regressor::Mlp(train_mlp(x, y, mlp)?)),
            Backend::Mlp => {
                warn!(
                    "{} samples are too few for a network; using RBF interpolation",
                    x.len()
                );
                Ok(Regressor::Rbf(train_rbf(x, y, rbf)?))
            }
            Backend::Rbf => Ok(Regressor::Rbf(train_rbf(x, y, rbf)?)),
        }
    }

    pub fn predict(&self, mu: &[f64]) -> Vec<f64> {
        match self {
            Regressor::Mlp(m) => m.predict(mu),
            Regressor::Rbf(r) => r.predict(mu),
        }
    }

    pub fn outputs(&self) -> usize {
        match self {
            Regressor::Mlp(m) => m.net.outputs(),
            Regressor::Rbf(r) => r.weights.ncols(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_data(n: usize, q: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let x: Vec<Vec<f64>> = (0..n)
            .map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()])
            .collect();
        let y = x
            .iter()
            .map(|v| {
                (0..q)
                    .map(|o| (v[0] * (o + 1) as f64).sin() + v[1] * o as f64)
                    .collect()
            })
            .collect();
        (x, y)
    }

    #[test]
    fn blockwise_normal_equations_match_dense_jacobian() {
        for q in [3, 20] {
            let (x, y) = toy_data(7, q);
            let mut net = Mlp::new(2, &[5, 4], q).unwrap();
            net.randomize(&mut ChaCha8Rng::seed_from_u64(3));
            let n = net.n_params();
            let mut jtj = DMatrix::zeros(n, n);
            let mut jte = DVector::zeros(n);
            for (xs, ys) in x.iter().zip(&y) {
                let j = net.jacobian(xs);
                let f = net.forward(xs);
                let e = DVector::from_fn(q, |o, _| f[o] - ys[o]);
                jtj += j.tr_mul(&j);
                jte += j.tr_mul(&e);
            }
            let c = 0.7;
            for scale in [0.0, 0.3] {
                let reg: Vec<f64> = net.theta.iter().map(|t| scale * t).collect();
                let delta = lm_step(
                    &normal_system(&net, &x, &y),
                    c,
                    &reg,
                    net.n_hidden_params(),
                    4,
                )
                .unwrap();
                let mut a = jtj.clone();
                for i in 0..n {
                    a[(i, i)] += c;
                }
                let rhs = -(&jte + DVector::from_column_slice(&reg));
                let dense = a.cholesky().unwrap().solve(&rhs);
                for i in 0..n {
                    assert!(
                        (delta[i] - dense[i]).abs() < 1e-9 * (1.0 + dense[i].abs()),
                        "q={q} i={i}"
                    );
                }
            }
        }
    }

    #[test]
    fn scaler_round_trips() {
        let (x, y) = toy_data(12, 3);
        let s = FeatureScaler::fit(&x, &y).unwrap();
        for v in &y {
            let back = s.rescale_output(&s.normalize_output(v));
            for (a, b) in back.iter().zip(v) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert_eq!(s.rescale_output(&[0.0; 3]), s.out_mean);
    }
}
