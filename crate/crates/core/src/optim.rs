//! First-order optimizers over flat parameter vectors.
//!
//! Every optimizer receives the *mean* gradient of the current batch.
//! [`Ftrl`] is batch FTRL-Proximal; [`Adam`], [`RmsProp`] and [`Fobos`] are
//! the baselines it is compared against.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OptimError {
    #[error("gradient has {got} coordinates, parameters have {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite gradient at coordinate {index}: {value}")]
    NonFiniteGradient { index: usize, value: f64 },
    #[error("invalid hyperparameter {name} = {value}")]
    InvalidHyperparameter { name: &'static str, value: f64 },
}

pub trait Optimizer {
    fn name(&self) -> &'static str;

    /// Applies one update in place. `grad` is the batch-mean gradient.
    fn step(&mut self, grad: &[f64], params: &mut [f64]) -> Result<(), OptimError>;
}

fn check_step(expected: usize, grad: &[f64], params: &[f64]) -> Result<(), OptimError> {
    if grad.len() != params.len() {
        return Err(OptimError::DimensionMismatch {
            expected: params.len(),
            got: grad.len(),
        });
    }
    if params.len() != expected {
        return Err(OptimError::DimensionMismatch {
            expected,
            got: params.len(),
        });
    }
    if let Some((index, &value)) = grad.iter().enumerate().find(|(_, g)| !g.is_finite()) {
        return Err(OptimError::NonFiniteGradient { index, value });
    }
    Ok(())
}

fn positive(name: &'static str, value: f64) -> Result<(), OptimError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(OptimError::InvalidHyperparameter { name, value })
    }
}

fn non_negative(name: &'static str, value: f64) -> Result<(), OptimError> {
    if value >= 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(OptimError::InvalidHyperparameter { name, value })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FtrlParams {
    pub alpha: f64,
    pub beta: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for FtrlParams {
    fn default() -> Self {
        FtrlParams {
            alpha: 0.1,
            beta: 1.0,
            lambda1: 1e-4,
            lambda2: 0.0,
        }
    }
}

impl FtrlParams {
    pub fn validate(&self) -> Result<(), OptimError> {
        positive("alpha", self.alpha)?;
        non_negative("beta", self.beta)?;
        non_negative("lambda1", self.lambda1)?;
        non_negative("lambda2", self.lambda2)
    }
}

/// Batch FTRL-Proximal with per-coordinate learning rates
/// `eta_i = alpha / (beta + sqrt(n_i))`.
///
/// Each step solves
/// `argmin_w g_{1:t}.w + 1/2 sum_s sigma_s |w - w_s|^2 + lambda1 |w|_1`
/// (plus `beta/(2 alpha)` and `lambda2/2` quadratic terms) in closed form
/// through the accumulators `z` and `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ftrl {
    pub params: FtrlParams,
    pub z: Vec<f64>,
    pub n: Vec<f64>,
    sqrt_n: Vec<f64>,
    /// Every parameter equals the closed-form solution of its (z, n).
    synced: bool,
}

impl Ftrl {
    /// Fresh state (`z = n = 0`): the first step pulls every coordinate to
    /// the closed-form solution around the origin.
    pub fn new(dim: usize, params: FtrlParams) -> Result<Self, OptimError> {
        params.validate()?;
        Ok(Ftrl {
            params,
            z: vec![0.0; dim],
            n: vec![0.0; dim],
            sqrt_n: vec![0.0; dim],
            synced: false,
        })
    }

    /// State whose closed-form solution is `initial`, so a randomly
    /// initialized network is not collapsed to zero on the first step.
    /// Equivalent to centering the `beta/(2 alpha)` term at `initial`.
    pub fn anchored(initial: &[f64], params: FtrlParams) -> Result<Self, OptimError> {
        params.validate()?;
        let curvature = params.beta / params.alpha + params.lambda2;
        let z = initial
            .iter()
            .map(|&w| {
                if w == 0.0 {
                    0.0
                } else {
                    -w * curvature - w.signum() * params.lambda1
                }
            })
            .collect();
        Ok(Ftrl {
            params,
            z,
            n: vec![0.0; initial.len()],
            sqrt_n: vec![0.0; initial.len()],
            synced: curvature > 0.0,
        })
    }

    /// Closed-form weight for accumulators `(z, sqrt(n))`.
    #[inline]
    pub fn solve(&self, z: f64, sqrt_n: f64) -> f64 {
        let p = &self.params;
        if z.abs() <= p.lambda1 {
            0.0
        } else {
            -(z - z.signum() * p.lambda1) / ((p.beta + sqrt_n) / p.alpha + p.lambda2)
        }
    }

    /// Current per-coordinate learning rate.
    pub fn learning_rate(&self, i: usize) -> f64 {
        self.params.alpha / (self.params.beta + self.sqrt_n[i])
    }
}

impl Optimizer for Ftrl {
    fn name(&self) -> &'static str {
        "ftrl"
    }

    fn step(&mut self, grad: &[f64], params: &mut [f64]) -> Result<(), OptimError> {
        check_step(self.z.len(), grad, params)?;
        let alpha = self.params.alpha;
        for i in 0..params.len() {
            let g = grad[i];
            // zero gradient leaves z, n and hence the solution unchanged
            if g == 0.0 && self.synced {
                continue;
            }
            let w = params[i];
            let n_new = self.n[i] + g * g;
            let sqrt_new = n_new.sqrt();
            let sigma = (sqrt_new - self.sqrt_n[i]) / alpha;
            self.z[i] += g - sigma * w;
            self.n[i] = n_new;
            self.sqrt_n[i] = sqrt_new;
            params[i] = self.solve(self.z[i], sqrt_new);
        }
        self.synced = true;
        Ok(())
    }
}

/// Forward-backward splitting: gradient step, then L1 soft-threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fobos {
    pub eta: f64,
    pub lambda1: f64,
    dim: usize,
}

impl Fobos {
    pub fn new(dim: usize, eta: f64, lambda1: f64) -> Result<Self, OptimError> {
        positive("eta", eta)?;
        non_negative("lambda1", lambda1)?;
        Ok(Fobos { eta, lambda1, dim })
    }
}

pub fn soft_threshold(x: f64, threshold: f64) -> f64 {
    x.signum() * (x.abs() - threshold).max(0.0)
}

impl Optimizer for Fobos {
    fn name(&self) -> &'static str {
        "fobos"
    }

    fn step(&mut self, grad: &[f64], params: &mut [f64]) -> Result<(), OptimError> {
        check_step(self.dim, grad, params)?;
        let shrink = self.eta * self.lambda1;
        for (w, &g) in params.iter_mut().zip(grad) {
            *w = soft_threshold(*w - self.eta * g, shrink);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(dim: usize, lr: f64) -> Result<Self, OptimError> {
        positive("learning_rate", lr)?;
        Ok(Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        })
    }
}

impl Optimizer for Adam {
    fn name(&self) -> &'static str {
        "adam"
    }

    fn step(&mut self, grad: &[f64], params: &mut [f64]) -> Result<(), OptimError> {
        check_step(self.m.len(), grad, params)?;
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmsProp {
    pub lr: f64,
    pub decay: f64,
    pub eps: f64,
    s: Vec<f64>,
}

impl RmsProp {
    pub fn new(dim: usize, lr: f64) -> Result<Self, OptimError> {
        positive("learning_rate", lr)?;
        Ok(RmsProp {
            lr,
            decay: 0.9,
            eps: 1e-8,
            s: vec![0.0; dim],
        })
    }
}

impl Optimizer for RmsProp {
    fn name(&self) -> &'static str {
        "rmsprop"
    }

    fn step(&mut self, grad: &[f64], params: &mut [f64]) -> Result<(), OptimError> {
        check_step(self.s.len(), grad, params)?;
        for i in 0..params.len() {
            let g = grad[i];
            self.s[i] = self.decay * self.s[i] + (1.0 - self.decay) * g * g;
            params[i] -= self.lr * g / (self.s[i].sqrt() + self.eps);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Ftrl,
    Adam,
    Rmsprop,
    Fobos,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 4] = [
        OptimizerKind::Ftrl,
        OptimizerKind::Adam,
        OptimizerKind::Rmsprop,
        OptimizerKind::Fobos,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Ftrl => "ftrl",
            OptimizerKind::Adam => "adam",
            OptimizerKind::Rmsprop => "rmsprop",
            OptimizerKind::Fobos => "fobos",
        }
    }
}

/// Optimizer choice plus hyperparameters, as found in run configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub name: OptimizerKind,
    pub alpha: f64,
    pub beta: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Adam and RMSprop step size.
    pub learning_rate: f64,
    /// FOBOS step size.
    pub fobos_eta: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let f = FtrlParams::default();
        OptimizerConfig {
            name: OptimizerKind::Ftrl,
            alpha: f.alpha,
            beta: f.beta,
            lambda1: f.lambda1,
            lambda2: f.lambda2,
            learning_rate: 1e-3,
            fobos_eta: 0.01,
        }
    }
}

impl OptimizerConfig {
    pub fn ftrl_params(&self) -> FtrlParams {
        FtrlParams {
            alpha: self.alpha,
            beta: self.beta,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
        }
    }

    pub fn with_kind(mut self, kind: OptimizerKind) -> Self {
        self.name = kind;
        self
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        self.ftrl_params().validate()?;
        positive("learning_rate", self.learning_rate)?;
        positive("fobos_eta", self.fobos_eta)
    }

    /// Builds the optimizer for a parameter vector starting at `initial`.
    pub fn build(&self, initial: &[f64]) -> Result<Box<dyn Optimizer + Send>, OptimError> {
        let dim = initial.len();
        Ok(match self.name {
            OptimizerKind::Ftrl => Box::new(Ftrl::anchored(initial, self.ftrl_params())?),
            OptimizerKind::Adam => Box::new(Adam::new(dim, self.learning_rate)?),
            OptimizerKind::Rmsprop => Box::new(RmsProp::new(dim, self.learning_rate)?),
            OptimizerKind::Fobos => Box::new(Fobos::new(dim, self.fobos_eta, self.lambda1)?),
        })
    }
}
