use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// State space of the particles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// Velocities on the whole real line.
    #[serde(alias = "velocity")]
    VelocityLine,
    /// Wealths on the nonnegative half line.
    #[serde(alias = "wealth")]
    WealthHalfLine,
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "velocity" | "velocity-line" => Ok(ModelKind::VelocityLine),
            "wealth" | "wealth-half-line" => Ok(ModelKind::WealthHalfLine),
            other => Err(Error::Config(format!(
                "unknown model kind `{other}` (expected `velocity` or `wealth`)"
            ))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::VelocityLine => "velocity",
            ModelKind::WealthHalfLine => "wealth",
        })
    }
}

/// Sign of the growth exponent of the conserved-in-the-elastic-case moment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Conservative,
    Dissipative,
    Productive,
}

const CONSERVATIVE_TOL: f64 = 1e-12;

/// Mixing pair `(p, q)` of the collision rule together with the model kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionParams {
    p: f64,
    q: f64,
    kind: ModelKind,
}

impl CollisionParams {
    /// `p` must be positive and `q` nonnegative (`q = 0` is the identity
    /// interaction when `p = 1`).
    pub fn new(p: f64, q: f64, kind: ModelKind) -> Result<Self> {
        if !(p.is_finite() && p > 0.0) {
            return Err(Error::InvalidParams(format!("p must be finite and > 0, got {p}")));
        }
        if !(q.is_finite() && q >= 0.0) {
            return Err(Error::InvalidParams(format!("q must be finite and >= 0, got {q}")));
        }
        Ok(CollisionParams { p, q, kind })
    }

    pub fn velocity(p: f64, q: f64) -> Result<Self> {
        Self::new(p, q, ModelKind::VelocityLine)
    }

    pub fn wealth(p: f64, q: f64) -> Result<Self> {
        Self::new(p, q, ModelKind::WealthHalfLine)
    }

    /// Velocity model on the grazing curve `p = 1 + λ q`.
    pub fn velocity_from_lambda(lambda: f64, q: f64) -> Result<Self> {
        Self::velocity(1.0 + lambda * q, q)
    }

    /// Wealth model on the curve `(p - 1)^2 = λ q`; `growing` selects the
    /// root `p = 1 + sqrt(λ q)`, otherwise `p = 1 - sqrt(λ q)`.
    pub fn wealth_from_lambda(lambda: f64, q: f64, growing: bool) -> Result<Self> {
        if !(lambda >= 0.0) || !(q >= 0.0) {
            return Err(Error::InvalidParams(format!(
                "wealth lambda mode needs lambda >= 0 and q >= 0, got lambda={lambda}, q={q}"
            )));
        }
        let shift = (lambda * q).sqrt();
        let p = if growing { 1.0 + shift } else { 1.0 - shift };
        Self::wealth(p, q)
    }

    /// Wealth model `p = 1 - q - 2 sqrt(q) + 2q`, whose scaled stationary
    /// state is known in closed form for `q < 1/4`.
    pub fn wealth_exact_m4(q: f64) -> Result<Self> {
        if !(q > 0.0 && q < 0.25) {
            return Err(Error::InvalidParams(format!(
                "the exact wealth solution needs 0 < q < 1/4, got {q}"
            )));
        }
        Self::wealth(1.0 - q - 2.0 * q.sqrt() + 2.0 * q, q)
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn with_kind(self, kind: ModelKind) -> Self {
        CollisionParams { kind, ..self }
    }

    /// Jacobian `p² - q²` of the map `(v, w) -> (v*, w*)`.
    pub fn jacobian(&self) -> f64 {
        self.p * self.p - self.q * self.q
    }

    /// Grazing parameter: `(p - 1)/q` for velocities, `(p - 1)²/q` for
    /// wealths. `None` when `q = 0`.
    pub fn lambda(&self) -> Option<f64> {
        if self.q == 0.0 {
            return None;
        }
        Some(match self.kind {
            ModelKind::VelocityLine => (self.p - 1.0) / self.q,
            ModelKind::WealthHalfLine => (self.p - 1.0).powi(2) / self.q,
        })
    }

    /// Exponent of the unscaled energy (velocity) or mean (wealth).
    pub fn growth_exponent(&self) -> f64 {
        match self.kind {
            ModelKind::VelocityLine => self.p * self.p + self.q * self.q - 1.0,
            ModelKind::WealthHalfLine => self.p + self.q - 1.0,
        }
    }

    pub fn regime(&self) -> Regime {
        let g = self.growth_exponent();
        if g.abs() <= CONSERVATIVE_TOL {
            Regime::Conservative
        } else if g < 0.0 {
            Regime::Dissipative
        } else {
            Regime::Productive
        }
    }
}

impl fmt::Display for CollisionParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} model, p={}, q={}", self.kind, self.p, self.q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_mixing_weights() {
        assert!(CollisionParams::velocity(0.0, 0.4).is_err());
        assert!(CollisionParams::velocity(-1.0, 0.4).is_err());
        assert!(CollisionParams::velocity(1.0, -0.1).is_err());
        assert!(CollisionParams::velocity(f64::NAN, 0.1).is_err());
        assert!(CollisionParams::velocity(1.0, 0.0).is_ok());
    }

    #[test]
    fn derived_quantities() {
        let c = CollisionParams::velocity(1.2, 0.4).unwrap();
        assert!((c.jacobian() - 1.28).abs() < 1e-15);
        assert!((c.lambda().unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(c.regime(), Regime::Productive);

        let g = CollisionParams::velocity(0.6, 0.4).unwrap();
        assert!((g.lambda().unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(g.regime(), Regime::Dissipative);

        let cons = CollisionParams::velocity(0.6, 0.8).unwrap();
        assert_eq!(cons.regime(), Regime::Conservative);

        let w = CollisionParams::wealth(0.9, 0.1).unwrap();
        assert_eq!(w.regime(), Regime::Conservative);
        assert!((w.lambda().unwrap() - 0.1).abs() < 1e-12);
        assert!(CollisionParams::velocity(1.0, 0.0).unwrap().lambda().is_none());
    }

    #[test]
    fn lambda_constructors() {
        let v = CollisionParams::velocity_from_lambda(0.5, 0.1).unwrap();
        assert!((v.p() - 1.05).abs() < 1e-15);
        let up = CollisionParams::wealth_from_lambda(4.0, 0.01, true).unwrap();
        assert!((up.p() - 1.2).abs() < 1e-12);
        let down = CollisionParams::wealth_from_lambda(4.0, 0.01, false).unwrap();
        assert!((down.p() - 0.8).abs() < 1e-12);

        let m4 = CollisionParams::wealth_exact_m4(0.1).unwrap();
        let root = 0.1f64.sqrt();
        assert!((m4.p() - (1.0 - root).powi(2)).abs() < 1e-15);
        // (p-1)^2/q = (2 - sqrt q)^2, which tends to 4 as q -> 0
        assert!((m4.lambda().unwrap() - (2.0 - root).powi(2)).abs() < 1e-12);
        assert!(CollisionParams::wealth_exact_m4(0.3).is_err());
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("velocity".parse::<ModelKind>().unwrap(), ModelKind::VelocityLine);
        assert_eq!("Wealth".parse::<ModelKind>().unwrap(), ModelKind::WealthHalfLine);
        assert!("gas".parse::<ModelKind>().is_err());
    }
}
