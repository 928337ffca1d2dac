//! Closed-form solutions of the two-stage splicing model
//!
//! ```text
//! du/dt = α − β u
//! ds/dt = β u − γ s
//! ```
//!
//! with α = α_on before the switch time and α = 0 after it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-gene rates and switch time. `t_switch = ∞` means the gene never switches off.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneKinetics {
    pub alpha_on: f64,
    pub beta: f64,
    pub gamma: f64,
    #[serde(with = "crate::io::inf_as_null")]
    pub t_switch: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StateUS {
    pub u: f64,
    pub s: f64,
}

impl StateUS {
    pub const ZERO: StateUS = StateUS { u: 0.0, s: 0.0 };

    pub fn new(u: f64, s: f64) -> Self {
        StateUS { u, s }
    }
}

impl GeneKinetics {
    pub fn new(alpha_on: f64, beta: f64, gamma: f64, t_switch: f64) -> Result<Self> {
        let k = GeneKinetics { alpha_on, beta, gamma, t_switch };
        k.validate()?;
        Ok(k)
    }

    /// A gene that stays in the on stage forever.
    pub fn on_only(alpha_on: f64, beta: f64, gamma: f64) -> Result<Self> {
        Self::new(alpha_on, beta, gamma, f64::INFINITY)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha_on >= 0.0
            && self.alpha_on.is_finite()
            && self.beta > 0.0
            && self.beta.is_finite()
            && self.gamma > 0.0
            && self.gamma.is_finite()
            && self.t_switch > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("invalid kinetics {self:?}")))
        }
    }

    /// Rates divided by `kappa` and switch time multiplied by it.
    pub fn scaled(&self, kappa: f64) -> Self {
        GeneKinetics {
            alpha_on: self.alpha_on / kappa,
            beta: self.beta / kappa,
            gamma: self.gamma / kappa,
            t_switch: self.t_switch * kappa,
        }
    }

    pub fn steady_state(&self) -> StateUS {
        StateUS::new(self.alpha_on / self.beta, self.alpha_on / self.gamma)
    }
}

/// Gap below which γ and β are treated as equal.
pub fn degenerate_threshold(beta: f64, gamma: f64) -> f64 {
    1e-7 * beta.max(gamma)
}

/// (e^{−γt} − e^{−βt}) / (γ − β). Near γ = β this is −t e^{−βt} times a short series in
/// (γ − β)t, which reduces to the limit −t e^{−βt} at equality.
#[inline]
pub fn exp_diff_ratio(beta: f64, gamma: f64, t: f64) -> f64 {
    let delta = gamma - beta;
    if delta.abs() <= degenerate_threshold(beta, gamma) {
        let x = delta * t;
        -t * (-beta * t).exp() * (1.0 - x / 2.0 * (1.0 - x / 3.0 * (1.0 - x / 4.0)))
    } else if delta > 0.0 {
        (-beta * t).exp() * (-delta * t).exp_m1() / delta
    } else {
        -(-gamma * t).exp() * (delta * t).exp_m1() / delta
    }
}

/// Solution of the linear system with constant transcription `alpha`, no argument checks.
#[inline]
pub fn evolve(alpha: f64, beta: f64, gamma: f64, init: StateUS, t: f64) -> StateUS {
    let eb = (-beta * t).exp();
    let eg = (-gamma * t).exp();
    let u = init.u * eb - (alpha / beta) * (-beta * t).exp_m1();
    let s = init.s * eg - (alpha / gamma) * (-gamma * t).exp_m1()
        + (alpha - beta * init.u) * exp_diff_ratio(beta, gamma, t);
    StateUS { u, s }
}

pub fn solve_on_stage(t: f64, k: &GeneKinetics, init: StateUS) -> Result<StateUS> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("on-stage time must be nonnegative, got {t}")));
    }
    if t > k.t_switch {
        return Err(Error::Domain(format!(
            "on-stage time {t} exceeds switch time {}",
            k.t_switch
        )));
    }
    Ok(evolve(k.alpha_on, k.beta, k.gamma, init, t))
}

pub fn solve_off_stage(t: f64, k: &GeneKinetics, switch_state: StateUS) -> Result<StateUS> {
    if !(t >= k.t_switch) || !k.t_switch.is_finite() {
        return Err(Error::Domain(format!(
            "off-stage time {t} precedes switch time {}",
            k.t_switch
        )));
    }
    Ok(evolve(0.0, k.beta, k.gamma, switch_state, t - k.t_switch))
}

/// State at time `t` starting from `init` at time 0, switching off at `k.t_switch`.
pub fn trajectory(k: &GeneKinetics, init: StateUS, t: f64) -> Result<StateUS> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("time must be nonnegative, got {t}")));
    }
    Ok(trajectory_unchecked(k, init, t))
}

#[inline]
pub fn trajectory_unchecked(k: &GeneKinetics, init: StateUS, t: f64) -> StateUS {
    if t <= k.t_switch {
        evolve(k.alpha_on, k.beta, k.gamma, init, t)
    } else {
        let sw = evolve(k.alpha_on, k.beta, k.gamma, init, k.t_switch);
        evolve(0.0, k.beta, k.gamma, sw, t - k.t_switch)
    }
}

/// Spliced velocity β u − γ s.
#[inline]
pub fn velocity(state: StateUS, k: &GeneKinetics) -> f64 {
    k.beta * state.u - k.gamma * state.s
}
