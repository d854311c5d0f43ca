//! SGD, exponential-average momentum and the γ-scheduled SGD variant.
//!
//! Momentum follows `V⁰ = 0`, `Vᵗ = β Vᵗ⁻¹ + (1−β) ∂θᵗ`, `θᵗ⁺¹ = θᵗ − lr Vᵗ`,
//! where `∂θᵗ` is the gradient at `θᵗ`. Over a fixed horizon of `n` steps the
//! γ-variant scales the plain SGD step `t` by `γ_t = (1−β) Σ_{i=t}^{n} β^{i−t}`,
//! and `Σ_s Vˢ = Σ_s γ_s ∂θˢ` for every gradient sequence.

use serde::Serialize;

use crate::error::{contract, Result};
use crate::model::{GradientSet, LinearNet};
use crate::numerics::Mat64;

/// Learning rate, batch size and step count of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainHyper {
    pub learning_rate: f64,
    pub batch: usize,
    pub steps: usize,
}

impl TrainHyper {
    pub fn new(learning_rate: f64, batch: usize, steps: usize) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            contract!("learning rate must be positive, got {learning_rate}");
        }
        if batch == 0 || steps == 0 {
            contract!("batch size and step count must be at least 1");
        }
        Ok(Self {
            learning_rate,
            batch,
            steps,
        })
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if !(0.0..1.0).contains(&beta) {
        contract!("momentum factor {beta} outside [0, 1)");
    }
    Ok(())
}

/// `θ_l ← θ_l − lr · scale · ∂θ_l` for every layer.
fn apply_scaled(net: &mut LinearNet, grads: &GradientSet, step: f64) -> Result<()> {
    grads.check_matches(net)?;
    for (w, g) in net.layers_mut().iter_mut().zip(&grads.grads) {
        w.add_scaled(-step, g)?;
    }
    Ok(())
}

pub fn sgd_step(net: &mut LinearNet, grads: &GradientSet, lr: f64) -> Result<()> {
    apply_scaled(net, grads, lr)
}

/// Velocities `Vᵗ` and the momentum factor.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumState {
    pub velocities: Vec<Mat64>,
    pub beta: f64,
    pub step: usize,
}

impl MomentumState {
    /// Zero velocities shaped like `net`.
    pub fn new(net: &LinearNet, beta: f64) -> Result<Self> {
        check_beta(beta)?;
        Ok(Self {
            velocities: net
                .layers()
                .iter()
                .map(|w| Mat64::zeros(w.rows(), w.cols()))
                .collect(),
            beta,
            step: 0,
        })
    }

    /// Folds one gradient into the velocities without touching any weights.
    pub fn accumulate(&mut self, grads: &GradientSet) -> Result<()> {
        if grads.grads.len() != self.velocities.len() {
            contract!("gradient depth does not match the momentum state");
        }
        for (v, g) in self.velocities.iter_mut().zip(&grads.grads) {
            if v.shape() != g.shape() {
                contract!("gradient shape {:?} vs velocity {:?}", g.shape(), v.shape());
            }
            for (x, y) in v.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *x = self.beta * *x + (1.0 - self.beta) * y;
            }
        }
        self.step += 1;
        Ok(())
    }
}

/// Updates the velocities with `grads`, then moves the weights by `−lr · V`.
pub fn momentum_step(
    net: &mut LinearNet,
    state: &mut MomentumState,
    grads: &GradientSet,
    lr: f64,
) -> Result<()> {
    grads.check_matches(net)?;
    state.accumulate(grads)?;
    for (w, v) in net.layers_mut().iter_mut().zip(&state.velocities) {
        w.add_scaled(-lr, v)?;
    }
    Ok(())
}

/// Step multipliers `γ_1 .. γ_n` of the γ-variant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaSchedule {
    pub horizon: usize,
    pub beta: f64,
    /// Direct-summation values; `gammas[t - 1]` is `γ_t`.
    pub gammas: Vec<f64>,
    /// Largest `|γ_t − (1 − β^{n−t+1})|` over the horizon.
    pub closed_form_deviation: f64,
}

impl GammaSchedule {
    /// `γ_t` for a 1-based step index.
    pub fn gamma(&self, t: usize) -> f64 {
        self.gammas[t - 1]
    }
}

/// Compensated (Neumaier) sum.
fn neumaier_sum(terms: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for x in terms {
        let t = sum + x;
        comp += if sum.abs() >= x.abs() {
            (sum - t) + x
        } else {
            (x - t) + sum
        };
        sum = t;
    }
    sum + comp
}

/// Double-double product `(a_hi + a_lo)(b_hi + b_lo)`.
fn dd_mul((ah, al): (f64, f64), (bh, bl): (f64, f64)) -> (f64, f64) {
    let p = ah * bh;
    let e = ah.mul_add(bh, -p) + (ah * bl + al * bh);
    let hi = p + e;
    (hi, e - (hi - p))
}

/// `β^k` as an unevaluated double-double sum, accurate to about 2⁻¹⁰⁰ relative.
fn dd_pow(beta: f64, mut k: usize) -> (f64, f64) {
    let mut result = (1.0, 0.0);
    let mut base = (beta, 0.0);
    while k > 0 {
        if k & 1 == 1 {
            result = dd_mul(result, base);
        }
        base = dd_mul(base, base);
        k >>= 1;
    }
    result
}

/// Builds `γ_t = (1−β) Σ_{i=t}^{n} β^{i−t}` by direct summation and records its
/// distance to the closed form `1 − β^{n−t+1}`.
///
/// Powers are formed in double-double precision so that both routes stay within
/// a few ulp of the exact value even for `β` close to 1.
pub fn gamma_schedule(beta: f64, n: usize) -> Result<GammaSchedule> {
    check_beta(beta)?;
    if n == 0 {
        contract!("gamma schedule horizon must be at least 1");
    }
    let gammas: Vec<f64> = (1..=n)
        .map(|t| {
            let terms = (t..=n).rev().flat_map(|i| {
                let (hi, lo) = dd_pow(beta, i - t);
                [lo, hi]
            });
            (1.0 - beta) * neumaier_sum(terms)
        })
        .collect();
    let closed_form_deviation = gammas
        .iter()
        .enumerate()
        .map(|(k, g)| {
            let (hi, lo) = dd_pow(beta, n - k);
            (g - ((1.0 - hi) - lo)).abs()
        })
        .fold(0.0, f64::max);
    Ok(GammaSchedule {
        horizon: n,
        beta,
        gammas,
        closed_form_deviation,
    })
}

/// `θ_l ← θ_l − lr · γ_t · ∂θ_l`.
pub fn gamma_variant_step(
    net: &mut LinearNet,
    grads: &GradientSet,
    lr: f64,
    gamma_t: f64,
) -> Result<()> {
    apply_scaled(net, grads, lr * gamma_t)
}

/// Relative gap between `Σ_s Vˢ` (velocity recursion) and `Σ_s γ_s ∂θˢ`
/// (γ-schedule), maximized over layers.
pub fn momentum_identity_residual(grad_sequence: &[GradientSet], beta: f64) -> Result<f64> {
    check_beta(beta)?;
    let Some(first) = grad_sequence.first() else {
        contract!("momentum identity needs at least one gradient");
    };
    let schedule = gamma_schedule(beta, grad_sequence.len())?;
    let zeros = || -> Vec<Mat64> {
        first
            .grads
            .iter()
            .map(|g| Mat64::zeros(g.rows(), g.cols()))
            .collect()
    };
    let mut state = MomentumState {
        velocities: zeros(),
        beta,
        step: 0,
    };
    let mut velocity_sum = zeros();
    let mut gamma_sum = zeros();
    for (s, grads) in grad_sequence.iter().enumerate() {
        state.accumulate(grads)?;
        for (acc, v) in velocity_sum.iter_mut().zip(&state.velocities) {
            acc.add_scaled(1.0, v)?;
        }
        for (acc, g) in gamma_sum.iter_mut().zip(&grads.grads) {
            acc.add_scaled(schedule.gamma(s + 1), g)?;
        }
    }
    let mut worst = 0.0f64;
    for (lhs, rhs) in velocity_sum.iter().zip(&gamma_sum) {
        let mut diff = lhs.clone();
        diff.add_scaled(-1.0, rhs)?;
        worst = worst.max(diff.frobenius_norm() / lhs.frobenius_norm().max(1e-300));
    }
    Ok(worst)
}

/// Optimizer choice for a training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Momentum {
        beta: f64,
    },
    /// γ-variant over the run's full step count.
    Gamma {
        beta: f64,
    },
}

/// Live optimizer state for a run of known length.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd,
    Momentum(MomentumState),
    Gamma(GammaSchedule),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, net: &LinearNet, steps: usize) -> Result<Self> {
        Ok(match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Momentum { beta } => Optimizer::Momentum(MomentumState::new(net, beta)?),
            OptimizerKind::Gamma { beta } => Optimizer::Gamma(gamma_schedule(beta, steps)?),
        })
    }

    /// Applies step `t` (1-based) of the run.
    pub fn step(
        &mut self,
        net: &mut LinearNet,
        grads: &GradientSet,
        lr: f64,
        t: usize,
    ) -> Result<()> {
        match self {
            Optimizer::Sgd => sgd_step(net, grads, lr),
            Optimizer::Momentum(state) => momentum_step(net, state, grads, lr),
            Optimizer::Gamma(schedule) => {
                if t == 0 || t > schedule.horizon {
                    contract!("step {t} outside the gamma horizon {}", schedule.horizon);
                }
                gamma_variant_step(net, grads, lr, schedule.gamma(t))
            }
        }
    }

    pub fn velocities(&self) -> Option<&[Mat64]> {
        match self {
            Optimizer::Momentum(state) => Some(&state.velocities),
            _ => None,
        }
    }
}
