use super::DecisionError;

/// Constant relative risk aversion preferences; `rho = 1` is log utility.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Crra {
    rho: f64,
}

impl Crra {
    pub const LOG: Crra = Crra { rho: 1.0 };
    pub const RISK_NEUTRAL: Crra = Crra { rho: 0.0 };

    pub fn new(rho: f64) -> Result<Self, DecisionError> {
        if rho.is_finite() && rho >= 0.0 {
            Ok(Self { rho })
        } else {
            Err(DecisionError::BadRiskAversion(rho))
        }
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    fn is_log(&self) -> bool {
        self.rho == 1.0
    }

    pub fn value(&self, w: f64) -> Result<f64, DecisionError> {
        if (self.rho >= 1.0 && w <= 0.0) || w < 0.0 || w.is_nan() {
            return Err(DecisionError::UtilityDomain { wealth: w, rho: self.rho });
        }
        Ok(if self.is_log() { libm::log(w) } else { libm::pow(w, 1.0 - self.rho) / (1.0 - self.rho) })
    }

    /// `u'(w) = w^-rho`, evaluated without domain checks.
    pub(crate) fn marginal(&self, w: f64) -> f64 {
        if self.rho == 0.0 {
            1.0
        } else if self.is_log() {
            1.0 / w
        } else {
            libm::pow(w, -self.rho)
        }
    }
}

impl Default for Crra {
    fn default() -> Self {
        Crra::LOG
    }
}

/// CRRA utility of wealth `w`.
pub fn crra(w: f64, spec: &Crra) -> Result<f64, DecisionError> {
    spec.value(w)
}
