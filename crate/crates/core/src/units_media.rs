//! Plasma units (Omega = w/w_p, K = k_z c/w_p, R = w_p a/c) and permittivity models.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::str::FromStr;
use thiserror::Error;

/// hbar in eV s.
const HBAR_EV_S: f64 = 6.582_119_569e-16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MediaError {
    #[error("Drude permittivity has a pole at Omega = 0")]
    DrudePole,
    #[error("invalid medium: {0}")]
    Invalid(String),
    #[error("unknown material preset '{0}'")]
    UnknownPreset(String),
    #[error("unknown quantity role '{0}'")]
    UnknownRole(String),
    #[error("invalid unit system: {0}")]
    InvalidUnits(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitSystem {
    /// Plasma energy in eV.
    pub hbar_omega_p: f64,
    /// Nanometres per unit of dimensionless length.
    pub length_unit: f64,
}

impl Default for UnitSystem {
    fn default() -> Self {
        UnitSystem {
            hbar_omega_p: 3.76,
            length_unit: 53.8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    /// eV
    Energy,
    /// nm
    Length,
    /// 1/s
    Rate,
    /// s
    Time,
}

impl FromStr for Role {
    type Err = MediaError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "energy" => Ok(Role::Energy),
            "length" => Ok(Role::Length),
            "rate" => Ok(Role::Rate),
            "time" => Ok(Role::Time),
            _ => Err(MediaError::UnknownRole(s.to_string())),
        }
    }
}

impl UnitSystem {
    pub fn validate(&self) -> Result<(), MediaError> {
        if !(self.hbar_omega_p > 0.0) || !self.hbar_omega_p.is_finite() {
            return Err(MediaError::InvalidUnits("hbar_omega_p must be > 0".into()));
        }
        if !(self.length_unit > 0.0) || !self.length_unit.is_finite() {
            return Err(MediaError::InvalidUnits("length_unit must be > 0".into()));
        }
        Ok(())
    }

    /// Plasma angular frequency in 1/s.
    pub fn omega_p(&self) -> f64 {
        self.hbar_omega_p / HBAR_EV_S
    }

    fn factor(&self, role: Role) -> f64 {
        match role {
            Role::Energy => self.hbar_omega_p,
            Role::Length => self.length_unit,
            Role::Rate => self.omega_p(),
            Role::Time => 1.0 / self.omega_p(),
        }
    }

    pub fn to_physical(&self, q: f64, role: Role) -> f64 {
        q * self.factor(role)
    }

    pub fn from_physical(&self, v: f64, role: Role) -> f64 {
        v / self.factor(role)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MediumKind {
    Drude,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediumParams {
    pub kind: MediumKind,
    #[serde(default)]
    pub eps_inf: f64,
    #[serde(default)]
    pub eps_const: f64,
    /// Relaxation time in units of 1/w_p; `None` is lossless.
    #[serde(default)]
    pub tau_hat: Option<f64>,
}

impl MediumParams {
    pub fn drude(eps_inf: f64) -> Self {
        MediumParams {
            kind: MediumKind::Drude,
            eps_inf,
            eps_const: 0.0,
            tau_hat: None,
        }
    }

    pub fn constant(eps: f64) -> Self {
        MediumParams {
            kind: MediumKind::Constant,
            eps_inf: 0.0,
            eps_const: eps,
            tau_hat: None,
        }
    }

    pub fn silver() -> Self {
        Self::drude(9.6)
    }

    pub fn gan() -> Self {
        Self::constant(5.3)
    }

    pub fn preset(name: &str) -> Result<Self, MediaError> {
        match name.to_ascii_lowercase().as_str() {
            "ag" | "silver" => Ok(Self::silver()),
            "gan" => Ok(Self::gan()),
            _ => Err(MediaError::UnknownPreset(name.to_string())),
        }
    }

    pub fn with_tau(mut self, tau_hat: f64) -> Self {
        self.tau_hat = Some(tau_hat);
        self
    }

    pub fn is_lossless(&self) -> bool {
        match self.kind {
            MediumKind::Constant => true,
            MediumKind::Drude => self.tau_hat.is_none(),
        }
    }

    pub fn validate(&self) -> Result<(), MediaError> {
        match self.kind {
            MediumKind::Drude if !(self.eps_inf > 0.0) => {
                Err(MediaError::Invalid("eps_inf must be > 0".into()))
            }
            MediumKind::Constant if !(self.eps_const > 0.0) => {
                Err(MediaError::Invalid("eps_const must be > 0".into()))
            }
            _ => match self.tau_hat {
                Some(t) if !(t > 0.0) => Err(MediaError::Invalid("tau_hat must be > 0".into())),
                _ => Ok(()),
            },
        }
    }
}

pub fn permittivity(m: &MediumParams, omega: Complex64) -> Result<Complex64, MediaError> {
    match m.kind {
        MediumKind::Constant => Ok(Complex64::new(m.eps_const, 0.0)),
        MediumKind::Drude => {
            if omega == Complex64::new(0.0, 0.0) {
                return Err(MediaError::DrudePole);
            }
            let damp = m.tau_hat.map_or(0.0, |t| 1.0 / t);
            let den = omega * (omega + Complex64::new(0.0, damp));
            Ok(m.eps_inf * (1.0 - 1.0 / den))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn drude_values() {
        let ag = MediumParams::silver();
        assert_eq!(permittivity(&ag, c(1.0, 0.0)).unwrap(), c(0.0, 0.0));
        let e = permittivity(&ag, c(0.5, 0.0)).unwrap();
        assert!((e.re + 28.8).abs() < 1e-12 && e.im == 0.0);
        assert_eq!(permittivity(&ag, c(0.0, 0.0)), Err(MediaError::DrudePole));
        let gan = MediumParams::gan();
        assert_eq!(permittivity(&gan, c(0.37, 0.2)).unwrap(), c(5.3, 0.0));
    }

    #[test]
    fn lossy_drude_absorbs() {
        let ag = MediumParams::silver().with_tau(100.0);
        let e = permittivity(&ag, c(0.6, 0.0)).unwrap();
        assert!(e.im > 0.0);
    }

    #[test]
    fn conversions() {
        let u = UnitSystem::default();
        assert!((u.to_physical(0.707, Role::Energy) - 2.66).abs() < 5e-3);
        assert!((u.to_physical(0.1, Role::Length) - 5.38).abs() < 1e-12);
        assert_eq!(u.to_physical(0.0, Role::Energy), 0.0);
        for role in [Role::Energy, Role::Length, Role::Rate, Role::Time] {
            let q = 0.1234;
            let back = u.from_physical(u.to_physical(q, role), role);
            assert!((back - q).abs() <= 1e-12 * q);
        }
        assert!("speed".parse::<Role>().is_err());
    }

    #[test]
    fn drude_negative_and_increasing_below_plasma() {
        let ag = MediumParams::silver();
        let mut prev = f64::NEG_INFINITY;
        for k in 1..1000 {
            let w = k as f64 / 1000.0;
            let e = permittivity(&ag, c(w, 0.0)).unwrap().re;
            assert!(e < 0.0 && e > prev);
            prev = e;
        }
    }

    #[test]
    fn presets() {
        assert_eq!(MediumParams::preset("Ag").unwrap(), MediumParams::silver());
        assert_eq!(MediumParams::preset("GaN").unwrap(), MediumParams::gan());
        assert!(MediumParams::preset("Au").is_err());
        assert!(MediumParams::drude(-1.0).validate().is_err());
    }
}
