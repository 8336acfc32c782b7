use serde::{Deserialize, Serialize};

/// Two-timescale step sizes `alpha_k = alpha0/(k+1)` and
/// `eta_k = eta0/(k+1)^{4/3}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub alpha0: f64,
    pub eta0: f64,
}

pub const SLOW_EXPONENT: f64 = 4.0 / 3.0;

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule { alpha0: 0.5, eta0: 0.1 }
    }
}

impl StepSchedule {
    pub fn alpha(&self, k: usize) -> f64 {
        self.alpha0 / (k as f64 + 1.0)
    }

    pub fn eta(&self, k: usize) -> f64 {
        self.eta0 / (k as f64 + 1.0).powf(SLOW_EXPONENT)
    }

    /// `eta_k / alpha_k`, the weight on the fast residual in the Lyapunov
    /// function.
    pub fn ratio(&self, k: usize) -> f64 {
        self.eta(k) / self.alpha(k)
    }
}
