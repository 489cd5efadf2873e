//! Radial-basis-function network mapping `(omega_BM, G)` to filter
//! coefficients.
//!
//! Inputs are normalized to the unit square. Each of the 18 x 20 Gaussian
//! kernels is multiplied by its own affine function of the first input,
//! `s_c u1 + t_c`, which makes the network locally linear along the
//! cochlear-place axis.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{build_problem, fit_filter, lse_cost_grad, peak_deviation, PeakDeviation, PoleFilter};
use crate::params::{greenwood_cf, omega_bm_of, ModelParams};
use crate::wkb::{beta_target, ComplexSpectrum};

pub const CENTERS_U1: usize = 18;
pub const CENTERS_U2: usize = 20;
pub const KERNEL_SIGMA: f64 = 0.04;

/// Maps `(omega_BM, G)` to the unit square: log-scaled along `omega_BM`,
/// linear along `G`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputNorm {
    pub omega_lo: f64,
    pub omega_hi: f64,
    pub g_lo: f64,
    pub g_hi: f64,
}

impl InputNorm {
    /// Bounds spanning the mapped `omega_BM` of every section.
    pub fn from_params(p: &ModelParams) -> Result<Self> {
        let hi = omega_bm_of(2.0 * PI * greenwood_cf(0.0, p)?);
        let lo = omega_bm_of(2.0 * PI * greenwood_cf(p.l, p)?);
        Ok(Self {
            omega_lo: lo,
            omega_hi: hi,
            g_lo: p.g_min,
            g_hi: p.g_max,
        })
    }

    pub fn normalize(&self, omega_bm: f64, g: f64) -> [f64; 2] {
        let u1 = (omega_bm / self.omega_lo).ln() / (self.omega_hi / self.omega_lo).ln();
        let u2 = (g - self.g_lo) / (self.g_hi - self.g_lo);
        [u1.clamp(0.0, 1.0), u2.clamp(0.0, 1.0)]
    }

    pub fn denormalize(&self, u: [f64; 2]) -> (f64, f64) {
        let omega = self.omega_lo * (self.omega_hi / self.omega_lo).powf(u[0]);
        (omega, self.g_lo + u[1] * (self.g_hi - self.g_lo))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbfNet {
    pub centers: Vec<[f64; 2]>,
    pub sigma: f64,
    /// One output row of length K per center.
    pub weights: Vec<Vec<f64>>,
    pub slope: Vec<f64>,
    pub intercept: Vec<f64>,
    pub norm: InputNorm,
}

/// Per-sample kernel values needed for the backward pass.
struct Activation {
    u: [f64; 2],
    /// Gaussian factor per center.
    phi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
struct Gradient {
    weights: Vec<Vec<f64>>,
    slope: Vec<f64>,
    intercept: Vec<f64>,
}

impl Gradient {
    fn zeros(net: &RbfNet) -> Self {
        Self {
            weights: vec![vec![0.0; net.order()]; net.centers.len()],
            slope: vec![0.0; net.centers.len()],
            intercept: vec![0.0; net.centers.len()],
        }
    }

    fn add_scaled(&mut self, other: &Gradient, s: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += s * y;
            }
        }
        for (x, y) in self.slope.iter_mut().zip(&other.slope) {
            *x += s * y;
        }
        for (x, y) in self.intercept.iter_mut().zip(&other.intercept) {
            *x += s * y;
        }
    }
}

impl RbfNet {
    /// Zero output weights and unit affine terms on the regular center grid.
    pub fn new(k: usize, norm: InputNorm) -> Self {
        let mut centers = Vec::with_capacity(CENTERS_U1 * CENTERS_U2);
        for i in 0..CENTERS_U1 {
            for j in 0..CENTERS_U2 {
                centers.push([i as f64 / (CENTERS_U1 - 1) as f64, j as f64 / (CENTERS_U2 - 1) as f64]);
            }
        }
        Self::with_centers(centers, KERNEL_SIGMA, k, norm)
    }

    pub fn with_centers(centers: Vec<[f64; 2]>, sigma: f64, k: usize, norm: InputNorm) -> Self {
        let n = centers.len();
        Self {
            centers,
            sigma,
            weights: vec![vec![0.0; k]; n],
            slope: vec![0.0; n],
            intercept: vec![1.0; n],
            norm,
        }
    }

    pub fn order(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    fn activate(&self, u: [f64; 2]) -> Activation {
        let inv = 1.0 / (2.0 * self.sigma * self.sigma);
        let phi = self
            .centers
            .iter()
            .map(|c| {
                let d2 = (u[0] - c[0]).powi(2) + (u[1] - c[1]).powi(2);
                (-d2 * inv).exp()
            })
            .collect();
        Activation { u, phi }
    }

    fn output(&self, act: &Activation) -> Vec<f64> {
        let mut out = vec![0.0; self.order()];
        for (c, phi) in act.phi.iter().enumerate() {
            let a = (self.slope[c] * act.u[0] + self.intercept[c]) * phi;
            if a == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(&self.weights[c]) {
                *o += a * w;
            }
        }
        out
    }

    /// Output for inputs already on the unit square.
    pub fn forward_normalized(&self, u: [f64; 2]) -> Vec<f64> {
        self.output(&self.activate(u))
    }

    /// Coefficients `b_k` for `(omega_BM, G)`; inputs are clamped to the
    /// normalization bounds.
    pub fn forward(&self, omega_bm: f64, g: f64) -> Vec<f64> {
        self.forward_normalized(self.norm.normalize(omega_bm, g))
    }

    /// Parameter gradient for an upstream gradient `dout` on the output.
    fn backward(&self, act: &Activation, dout: &[f64]) -> Gradient {
        let mut grad = Gradient::zeros(self);
        for (c, phi) in act.phi.iter().enumerate() {
            if *phi == 0.0 {
                continue;
            }
            let affine = self.slope[c] * act.u[0] + self.intercept[c];
            let a = affine * phi;
            let mut wd = 0.0;
            for ((g, w), d) in grad.weights[c].iter_mut().zip(&self.weights[c]).zip(dout) {
                *g = a * d;
                wd += w * d;
            }
            grad.slope[c] = phi * act.u[0] * wd;
            grad.intercept[c] = phi * wd;
        }
        grad
    }

    fn apply(&mut self, velocity: &Gradient) {
        for (a, b) in self.weights.iter_mut().zip(&velocity.weights) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (x, y) in self.slope.iter_mut().zip(&velocity.slope) {
            *x += y;
        }
        for (x, y) in self.intercept.iter_mut().zip(&velocity.intercept) {
            *x += y;
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("network serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("network: {e}")))
    }
}

/// Source of training targets for a given `(omega_BM, G)`.
pub trait TargetSource: Sync {
    /// Coefficients of a directly fitted filter.
    fn fitted(&self, omega_bm: f64, g: f64) -> Result<Vec<f64>>;
    /// Correction target on the regression grid.
    fn beta(&self, omega_bm: f64, g: f64) -> Result<ComplexSpectrum>;
}

/// Targets from the WKB model and the Levenberg-Marquardt fit.
pub struct WkbTargets<'a> {
    pub params: &'a ModelParams,
}

impl TargetSource for WkbTargets<'_> {
    fn fitted(&self, omega_bm: f64, g: f64) -> Result<Vec<f64>> {
        let beta = beta_target(omega_bm, g, self.params)?;
        Ok(fit_filter(&beta, omega_bm, g, self.params)?.0.b)
    }

    fn beta(&self, omega_bm: f64, g: f64) -> Result<ComplexSpectrum> {
        beta_target(omega_bm, g, self.params)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub stage1_steps: usize,
    pub stage1_lr: f64,
    pub stage1_momentum: f64,
    pub stage2_steps: usize,
    pub stage2_lr: f64,
    pub stage2_momentum: f64,
    /// Fresh random `(omega_BM, G)` pairs per step.
    pub batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            stage1_steps: 1000,
            stage1_lr: 0.1,
            stage1_momentum: 0.8,
            stage2_steps: 1000,
            stage2_lr: 1e-3,
            stage2_momentum: 0.9,
            batch: 16,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean squared coefficient error per stage-1 step.
    pub stage1_loss: Vec<f64>,
    /// Mean regression cost per stage-2 step, divided by the grid size.
    pub stage2_cost: Vec<f64>,
}

const DIVERGENCE_FACTOR: f64 = 1e6;

fn sample_batch(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 2]> {
    (0..n).map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]).collect()
}

/// Regression cost of coefficients `b` with the gain regressor set to its
/// optimum for that `b` (the cost is quadratic in `eps`), and the gradient
/// with respect to `b`. This matches a direct fit, where `eps` is a free
/// parameter during the regression and DC gain is enforced afterwards.
pub fn profiled_cost_grad(b: &[f64], beta: &ComplexSpectrum, omega_bm: f64, p: &ModelParams) -> Result<(f64, Vec<f64>)> {
    let prob = build_problem(beta, omega_bm, p)?;
    let bv = nalgebra::DVector::from_column_slice(b);
    let r1 = &prob.yl_re - &prob.xl_re * &bv;
    let r2 = &prob.yl_im - &prob.xl_im * &bv;
    let yre1 = prob.yl_re.add_scalar(-1.0);
    let curvature = yre1.norm_squared() + prob.yl_im.norm_squared() + prob.lambda1;
    let eps = -(r1.dot(&yre1) + r2.dot(&prob.yl_im)) / curvature;
    // d cost / d eps vanishes at the optimum, so the b-gradient is exact
    let (cost, grad, _) = lse_cost_grad(b, eps, &prob);
    Ok((cost, grad))
}

fn sgd(
    net: &mut RbfNet,
    steps: usize,
    lr: f64,
    momentum: f64,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    mut sample: impl FnMut(&RbfNet, &[[f64; 2]]) -> Result<Vec<(f64, Gradient)>>,
) -> Result<Vec<f64>> {
    let mut velocity = Gradient::zeros(net);
    let mut history = Vec::with_capacity(steps);
    for step in 0..steps {
        let batch = sample_batch(rng, cfg.batch);
        let results = sample(net, &batch)?;
        let scale = 1.0 / results.len() as f64;
        let mut grad = Gradient::zeros(net);
        let mut loss = 0.0;
        for (l, g) in &results {
            loss += l * scale;
            grad.add_scaled(g, scale);
        }
        let initial = history.first().copied().unwrap_or(loss);
        if !loss.is_finite() || loss > DIVERGENCE_FACTOR * initial.max(f64::MIN_POSITIVE) {
            return Err(Error::TrainingDiverged {
                seed: cfg.seed,
                step,
                cost: loss,
            });
        }
        history.push(loss);
        // v <- momentum v - lr grad; theta <- theta + v
        let mut next = Gradient::zeros(net);
        next.add_scaled(&velocity, momentum);
        next.add_scaled(&grad, -lr);
        velocity = next;
        net.apply(&velocity);
    }
    Ok(history)
}

/// Two-stage training: coefficient regression against fitted filters,
/// then fine-tuning on the regression cost of the network's own output.
/// The fine-tuning cost is averaged over the frequency grid; the summed
/// cost is too steep for plain momentum SGD at the stage-2 learning rate.
pub fn train_rbf(source: &dyn TargetSource, p: &ModelParams, cfg: &TrainConfig) -> Result<(RbfNet, TrainReport)> {
    let norm = InputNorm::from_params(p)?;
    let mut net = RbfNet::new(p.k, norm);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let stage1_loss = sgd(
        &mut net,
        cfg.stage1_steps,
        cfg.stage1_lr,
        cfg.stage1_momentum,
        cfg,
        &mut rng,
        |net, batch| {
            batch
                .par_iter()
                .map(|&u| {
                    let (w, g) = norm.denormalize(u);
                    let target = source.fitted(w, g)?;
                    let act = net.activate(u);
                    let out = net.output(&act);
                    let r: Vec<f64> = out.iter().zip(&target).map(|(o, t)| o - t).collect();
                    let loss = 0.5 * r.iter().map(|x| x * x).sum::<f64>();
                    Ok((loss, net.backward(&act, &r)))
                })
                .collect()
        },
    )?;

    let stage2_cost = sgd(
        &mut net,
        cfg.stage2_steps,
        cfg.stage2_lr,
        cfg.stage2_momentum,
        cfg,
        &mut rng,
        |net, batch| {
            batch
                .par_iter()
                .map(|&u| {
                    let (w, g) = norm.denormalize(u);
                    let beta = source.beta(w, g)?;
                    let act = net.activate(u);
                    let out = net.output(&act);
                    let (cost, mut dout) = profiled_cost_grad(&out, &beta, w, p)?;
                    let per_point = 1.0 / p.m2 as f64;
                    dout.iter_mut().for_each(|d| *d *= per_point);
                    Ok((cost * per_point, net.backward(&act, &dout)))
                })
                .collect()
        },
    )?;

    Ok((
        net,
        TrainReport {
            stage1_loss,
            stage2_cost,
        },
    ))
}

/// One held-out grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeldOutPoint {
    pub omega_bm: f64,
    pub g: f64,
    pub peak: PeakDeviation,
    pub pole_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOutReport {
    pub points: Vec<HeldOutPoint>,
    /// Largest |relative peak deviation|.
    pub worst_peak_dev: f64,
    /// Points whose peak is not pulled toward unity.
    pub sign_violations: usize,
}

/// Evaluates the network at the centres of an `m × m` grid over the
/// normalized input square (points never drawn as such during training)
/// against the WKB targets. Targets within `sign_tol` of unity carry no
/// sign requirement.
pub fn evaluate_held_out(net: &RbfNet, p: &ModelParams, m: usize, sign_tol: f64) -> Result<HeldOutReport> {
    let points = (0..m * m)
        .into_par_iter()
        .map(|r| {
            let (i, j) = (r / m, r % m);
            let (w, g) = net
                .norm
                .denormalize([(i as f64 + 0.5) / m as f64, (j as f64 + 0.5) / m as f64]);
            let beta = beta_target(w, g, p)?;
            let mut f = PoleFilter {
                b: net.forward(w, g),
                eps: 0.0,
                omega_bm: w,
                g,
            };
            f.enforce_dc();
            Ok(HeldOutPoint {
                omega_bm: w,
                g,
                peak: peak_deviation(&f, &beta, w, p.fs),
                pole_radius: f.pole_radius(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(HeldOutReport {
        worst_peak_dev: points.iter().map(|x| x.peak.rel.abs()).fold(0.0, f64::max),
        sign_violations: points.iter().filter(|x| !x.peak.shrinks_toward_one(sign_tol)).count(),
        points,
    })
}
