//! One-hidden-layer tanh network trained by Levenberg–Marquardt on a
//! sum-of-squares loss.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Regression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: usize,
    pub max_iter: usize,
    pub mu_init: f64,
    pub mu_max: f64,
    pub grad_tol: f64,
    pub max_fail: usize,
    /// Independent initializations; the best by validation (or training)
    /// loss is kept.
    pub restarts: usize,
    pub seed: u64,
}

impl MlpConfig {
    pub fn new(hidden: usize, seed: u64) -> Self {
        Self {
            hidden,
            max_iter: 200,
            mu_init: 1e-3,
            mu_max: 1e10,
            grad_tol: 1e-7,
            max_fail: 6,
            restarts: 1,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIter,
    GradTol,
    MuOverflow,
    EarlyStop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Training mean squared error, initial value then one entry per
    /// accepted step.
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub stop_reason: StopReason,
    pub iterations: usize,
    /// Index into the loss sequences of the returned parameters.
    pub best_iteration: usize,
    pub restart: usize,
}

impl TrainReport {
    pub fn strictly_decreasing(&self) -> bool {
        self.train_loss.windows(2).all(|w| w[1] < w[0])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub input_size: usize,
    pub hidden_size: usize,
    pub output_size: usize,
    pub task: Task,
    /// Row-major `hidden × input`.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// Row-major `output × hidden`.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    /// Inputs are mapped affinely from `[input_min, input_max]` to [-1, 1].
    pub input_min: Vec<f64>,
    pub input_max: Vec<f64>,
    pub seed: u64,
}

fn check_rows(x: &[Vec<f64>], width: usize, what: &'static str) -> Result<()> {
    match x.iter().find(|r| r.len() != width) {
        Some(r) => Err(Error::dims(what, width, r.len())),
        None => Ok(()),
    }
}

impl MlpModel {
    pub fn zeros(input_size: usize, hidden_size: usize, output_size: usize, task: Task) -> Self {
        Self {
            input_size,
            hidden_size,
            output_size,
            task,
            w1: vec![0.0; hidden_size * input_size],
            b1: vec![0.0; hidden_size],
            w2: vec![0.0; output_size * hidden_size],
            b2: vec![0.0; output_size],
            input_min: vec![-1.0; input_size],
            input_max: vec![1.0; input_size],
            seed: 0,
        }
    }

    /// Uniform in [-0.5, 0.5] / sqrt(fan_in) for every weight and bias.
    pub fn random(input_size: usize, hidden_size: usize, output_size: usize, task: Task, seed: u64) -> Self {
        let mut m = Self::zeros(input_size, hidden_size, output_size, task);
        m.seed = seed;
        let mut r = rng::stream(seed, "mlp-init", 0);
        let s1 = 1.0 / (input_size.max(1) as f64).sqrt();
        let s2 = 1.0 / (hidden_size.max(1) as f64).sqrt();
        for w in m.w1.iter_mut().chain(m.b1.iter_mut()) {
            *w = r.random_range(-0.5..0.5) * s1;
        }
        for w in m.w2.iter_mut().chain(m.b2.iter_mut()) {
            *w = r.random_range(-0.5..0.5) * s2;
        }
        m
    }

    pub fn n_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn params(&self) -> Vec<f64> {
        [&self.w1[..], &self.b1, &self.w2, &self.b2].concat()
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let (a, rest) = p.split_at(self.w1.len());
        let (b, rest) = rest.split_at(self.b1.len());
        let (c, d) = rest.split_at(self.w2.len());
        self.w1.copy_from_slice(a);
        self.b1.copy_from_slice(b);
        self.w2.copy_from_slice(c);
        self.b2.copy_from_slice(d);
    }

    fn fit_scaling(&mut self, x: &[Vec<f64>]) {
        for i in 0..self.input_size {
            let (lo, hi) = x
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r[i]), hi.max(r[i])));
            self.input_min[i] = lo;
            self.input_max[i] = hi;
        }
    }

    fn scale(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(i, &v)| {
                let (lo, hi) = (self.input_min[i], self.input_max[i]);
                if hi > lo {
                    2.0 * (v - lo) / (hi - lo) - 1.0
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Hidden activations and outputs for one scaled input.
    fn forward_scaled(&self, xs: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let h = self.hidden_size;
        let a: Vec<f64> = (0..h)
            .map(|j| {
                let row = &self.w1[j * self.input_size..(j + 1) * self.input_size];
                (self.b1[j] + row.iter().zip(xs).map(|(w, x)| w * x).sum::<f64>()).tanh()
            })
            .collect();
        let y = (0..self.output_size)
            .map(|o| {
                let row = &self.w2[o * h..(o + 1) * h];
                self.b2[o] + row.iter().zip(&a).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect();
        (a, y)
    }

    pub fn forward(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.input_size {
            return Err(Error::dims("network input", self.input_size, row.len()));
        }
        Ok(self.forward_scaled(&self.scale(row)).1)
    }

    pub fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        x.iter().map(|r| self.forward(r)).collect()
    }

    /// Argmax of the outputs; ties go to the lowest index.
    pub fn predict_class(&self, x: &[Vec<f64>]) -> Result<Vec<usize>> {
        Ok(self.predict(x)?.iter().map(|y| argmax(y)).collect())
    }

    /// Residuals `output − target` stacked per sample, and their Jacobian
    /// with respect to [`MlpModel::params`].
    pub fn residuals_and_jacobian(
        &self,
        x: &[Vec<f64>],
        t: &[Vec<f64>],
    ) -> (DVector<f64>, DMatrix<f64>) {
        let (ni, nh, no) = (self.input_size, self.hidden_size, self.output_size);
        let rows = x.len() * no;
        let mut e = DVector::zeros(rows);
        let mut jac = DMatrix::zeros(rows, self.n_params());
        let off_b1 = nh * ni;
        let off_w2 = off_b1 + nh;
        let off_b2 = off_w2 + no * nh;
        for (n, (row, target)) in x.iter().zip(t).enumerate() {
            let xs = self.scale(row);
            let (a, y) = self.forward_scaled(&xs);
            for o in 0..no {
                let r = n * no + o;
                e[r] = y[o] - target[o];
                for j in 0..nh {
                    let w = self.w2[o * nh + j];
                    let da = w * (1.0 - a[j] * a[j]);
                    for i in 0..ni {
                        jac[(r, j * ni + i)] = da * xs[i];
                    }
                    jac[(r, off_b1 + j)] = da;
                    jac[(r, off_w2 + o * nh + j)] = a[j];
                }
                jac[(r, off_b2 + o)] = 1.0;
            }
        }
        (e, jac)
    }

    pub fn mse(&self, x: &[Vec<f64>], t: &[Vec<f64>]) -> f64 {
        if x.is_empty() {
            return 0.0;
        }
        let mut s = 0.0;
        for (row, target) in x.iter().zip(t) {
            let y = self.forward_scaled(&self.scale(row)).1;
            s += y.iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
        s / (x.len() * self.output_size) as f64
    }
}

pub fn argmax(y: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in y.iter().enumerate() {
        if *v > y[best] {
            best = i;
        }
    }
    best
}

pub fn one_hot(labels: &[usize], n_classes: usize) -> Vec<Vec<f64>> {
    labels
        .iter()
        .map(|&l| (0..n_classes).map(|c| if c == l { 1.0 } else { 0.0 }).collect())
        .collect()
}

type Split<'a> = (&'a [Vec<f64>], &'a [Vec<f64>]);

fn validate_inputs(x: &[Vec<f64>], y: &[Vec<f64>], hidden: usize) -> Result<(usize, usize)> {
    if x.len() != y.len() {
        return Err(Error::dims("targets", x.len(), y.len()));
    }
    if x.len() < hidden + 1 {
        return Err(Error::InvalidParameter(format!(
            "need at least hidden + 1 = {} training rows, got {}",
            hidden + 1,
            x.len()
        )));
    }
    let ni = x[0].len();
    let no = y[0].len();
    check_rows(x, ni, "network input")?;
    check_rows(y, no, "network target")?;
    if ni == 0 || no == 0 || hidden == 0 {
        return Err(Error::InvalidParameter("network dimensions must be positive".into()));
    }
    Ok((ni, no))
}

/// Runs Levenberg–Marquardt from the parameters already in `model`.
pub fn levenberg_marquardt(
    model: &mut MlpModel,
    x: &[Vec<f64>],
    y: &[Vec<f64>],
    val: Option<Split<'_>>,
    cfg: &MlpConfig,
) -> Result<TrainReport> {
    let mut params = DVector::from_vec(model.params());
    let mut loss = model.mse(x, y);
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("initial training loss is {loss}")));
    }
    let val_mse = |m: &MlpModel| val.map(|(vx, vy)| m.mse(vx, vy));
    let mut report = TrainReport {
        train_loss: vec![loss],
        val_loss: val_mse(model).into_iter().collect(),
        stop_reason: StopReason::MaxIter,
        iterations: 0,
        best_iteration: 0,
        restart: 0,
    };
    let mut best = (report.val_loss.first().copied().unwrap_or(f64::INFINITY), params.clone(), 0);
    let mut fails = 0;
    let mut mu = cfg.mu_init;
    let np = params.len();
    while report.iterations < cfg.max_iter {
        let (e, j) = model.residuals_and_jacobian(x, y);
        let g = j.tr_mul(&e);
        if g.amax() < cfg.grad_tol {
            report.stop_reason = StopReason::GradTol;
            break;
        }
        let jtj = j.tr_mul(&j);
        let accepted = loop {
            let mut a = jtj.clone();
            for i in 0..np {
                a[(i, i)] += mu;
            }
            if let Some(chol) = a.cholesky() {
                let step = chol.solve(&g);
                let trial = &params - step;
                model.set_params(trial.as_slice());
                let new_loss = model.mse(x, y);
                if !new_loss.is_finite() {
                    return Err(Error::Numerical(format!(
                        "training loss became {new_loss} at iteration {}",
                        report.iterations
                    )));
                }
                if new_loss < loss {
                    params = trial;
                    loss = new_loss;
                    mu /= 10.0;
                    break true;
                }
            }
            mu *= 10.0;
            if mu > cfg.mu_max {
                break false;
            }
        };
        model.set_params(params.as_slice());
        if !accepted {
            report.stop_reason = StopReason::MuOverflow;
            break;
        }
        report.iterations += 1;
        report.train_loss.push(loss);
        if let Some(v) = val_mse(model) {
            report.val_loss.push(v);
            if v < best.0 {
                best = (v, params.clone(), report.iterations);
                fails = 0;
            } else {
                fails += 1;
                if fails >= cfg.max_fail {
                    report.stop_reason = StopReason::EarlyStop;
                    break;
                }
            }
        }
    }
    if val.is_some() {
        model.set_params(best.1.as_slice());
        report.best_iteration = best.2;
    } else {
        report.best_iteration = report.iterations;
    }
    Ok(report)
}

/// Trains a network with seeded initialization; with `restarts > 1` the
/// best run by validation loss (training loss without validation) is kept.
pub fn train_mlp(
    x: &[Vec<f64>],
    y: &[Vec<f64>],
    task: Task,
    cfg: &MlpConfig,
    val: Option<Split<'_>>,
) -> Result<(MlpModel, TrainReport)> {
    let (ni, no) = validate_inputs(x, y, cfg.hidden)?;
    if let Some((vx, vy)) = val {
        if vx.len() != vy.len() {
            return Err(Error::dims("validation targets", vx.len(), vy.len()));
        }
        check_rows(vx, ni, "validation input")?;
        check_rows(vy, no, "validation target")?;
        if vx.is_empty() {
            return Err(Error::InvalidParameter("validation split is empty".into()));
        }
    }
    let mut best: Option<(f64, MlpModel, TrainReport)> = None;
    for restart in 0..cfg.restarts.max(1) {
        let seed = rng::derive_seed(cfg.seed, "mlp-restart", restart as u64);
        let mut model = MlpModel::random(ni, cfg.hidden, no, task, seed);
        model.fit_scaling(x);
        let mut report = levenberg_marquardt(&mut model, x, y, val, cfg)?;
        report.restart = restart;
        let score = match val {
            Some((vx, vy)) => model.mse(vx, vy),
            None => model.mse(x, y),
        };
        if best.as_ref().is_none_or(|b| score < b.0) {
            best = Some((score, model, report));
        }
    }
    let (_, model, report) = best.expect("at least one restart");
    Ok((model, report))
}

pub fn train_classifier(
    x: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
    cfg: &MlpConfig,
    val: Option<(&[Vec<f64>], &[usize])>,
) -> Result<(MlpModel, TrainReport)> {
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::InvalidParameter(format!("label {bad} out of range for {n_classes} classes")));
    }
    let t = one_hot(labels, n_classes);
    let vt = val.map(|(vx, vl)| (vx, one_hot(vl, n_classes)));
    train_mlp(
        x,
        &t,
        Task::Classification,
        cfg,
        vt.as_ref().map(|(vx, vt)| (*vx, vt.as_slice())),
    )
}
