//! Golden-rule spontaneous emission of a dot into the bound wire modes.
//!
//! Gamma / beta = sum over orders and crossings Omega_n(K) = Omega0 (K >= 0) of
//! 2 L_hat |G|^2 / |dOmega/dK|. The +K and -K partners give the factor 2.

use crate::dispersion::{
    implicit_slope, omega_at, BandEdge, DispersionCurve, DispersionError, Regime,
};
use crate::modefields::{coupling_g_at, normalized_profile, DipoleSpec, ModeError};
use crate::numerics::brent;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

/// Points within this distance of a band-edge frequency are flagged.
pub const EDGE_FLAG_DISTANCE: f64 = 1e-4;
/// Floor on |v_g| used in the rate sum.
pub const MIN_GROUP_VELOCITY: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmissionError {
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error(transparent)]
    Dispersion(#[from] DispersionError),
    #[error(transparent)]
    Mode(#[from] ModeError),
}

pub type Result<T> = std::result::Result<T, EmissionError>;

/// One mode order as seen by the rate calculation.
pub trait Branch: Sync {
    fn order(&self) -> u32;
    /// Consecutive bound intervals [K_a, K_b]; crossings are searched inside each.
    fn segments(&self) -> Vec<(f64, f64)>;
    fn omega(&self, k: f64) -> Result<f64>;
    fn slope(&self, k: f64) -> Result<f64>;
    /// |G|^2 at K for quantization length `l_hat` and dot frequency `omega0`.
    fn coupling_sq(&self, k: f64, dipole: &DipoleSpec, omega0: f64, l_hat: f64) -> Result<f64>;
    fn edges(&self) -> Vec<BandEdge>;
}

/// A traced dispersion curve with exact roots, slopes and normalized fields.
pub struct TracedBranch {
    pub curve: DispersionCurve,
}

impl TracedBranch {
    pub fn new(curve: DispersionCurve) -> Result<Self> {
        if curve.wire.is_none() {
            return Err(EmissionError::Invalid("curve carries no wire".into()));
        }
        Ok(TracedBranch { curve })
    }
}

impl Branch for TracedBranch {
    fn order(&self) -> u32 {
        self.curve.n
    }

    fn segments(&self) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = self
            .curve
            .samples
            .windows(2)
            .filter(|w| w[0].regime == Regime::Bound && w[1].regime == Regime::Bound)
            .map(|w| (w[0].k, w[1].k))
            .collect();
        // split at the edges so every piece is monotone
        for e in &self.curve.edges {
            if let Some(i) = out.iter().position(|&(a, b)| a < e.k_c && e.k_c < b) {
                let (a, b) = out[i];
                out[i] = (a, e.k_c);
                out.insert(i + 1, (e.k_c, b));
            }
        }
        out
    }

    fn omega(&self, k: f64) -> Result<f64> {
        Ok(omega_at(&self.curve, k)?.omega.re)
    }

    fn slope(&self, k: f64) -> Result<f64> {
        let p = omega_at(&self.curve, k)?;
        let wire = self.curve.wire.expect("checked in new");
        Ok(implicit_slope(self.curve.n, k, p.omega.re, &wire)?)
    }

    fn coupling_sq(&self, k: f64, dipole: &DipoleSpec, omega0: f64, l_hat: f64) -> Result<f64> {
        let p = omega_at(&self.curve, k)?;
        let wire = self.curve.wire.expect("checked in new");
        let prof = normalized_profile(&p, &wire, l_hat)?;
        Ok(coupling_g_at(&prof, dipole, omega0)?.norm_sqr())
    }

    fn edges(&self) -> Vec<BandEdge> {
        self.curve.edges.clone()
    }
}

/// Omega = omega_c + a (K - k_c)^2 on [k_lo, k_hi] with |G|^2 = g2 / L_hat.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticBranch {
    pub n: u32,
    pub k_c: f64,
    pub omega_c: f64,
    pub a: f64,
    pub k_lo: f64,
    pub k_hi: f64,
    pub g2: f64,
}

impl Branch for QuadraticBranch {
    fn order(&self) -> u32 {
        self.n
    }

    fn segments(&self) -> Vec<(f64, f64)> {
        if self.k_lo < self.k_c && self.k_c < self.k_hi {
            vec![(self.k_lo, self.k_c), (self.k_c, self.k_hi)]
        } else {
            vec![(self.k_lo, self.k_hi)]
        }
    }

    fn omega(&self, k: f64) -> Result<f64> {
        Ok(self.omega_c + self.a * (k - self.k_c).powi(2))
    }

    fn slope(&self, k: f64) -> Result<f64> {
        Ok(2.0 * self.a * (k - self.k_c))
    }

    fn coupling_sq(&self, _k: f64, _d: &DipoleSpec, _omega0: f64, l_hat: f64) -> Result<f64> {
        Ok(self.g2 / l_hat)
    }

    fn edges(&self) -> Vec<BandEdge> {
        vec![BandEdge {
            n: self.n,
            k_c: self.k_c,
            omega_c: self.omega_c,
            a_n: self.a,
            kind: if self.a > 0.0 {
                crate::dispersion::EdgeKind::Minimum
            } else {
                crate::dispersion::EdgeKind::Maximum
            },
            fit_residual: 0.0,
        }]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Crossing {
    pub n: u32,
    pub k: f64,
    pub group_velocity: f64,
    pub coupling_sq: f64,
    pub contribution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatePoint {
    pub omega0: f64,
    /// Total rate in units of beta.
    pub rate: f64,
    pub per_order: Vec<(u32, f64)>,
    pub crossings: Vec<Crossing>,
    /// Omega0 sits within EDGE_FLAG_DISTANCE of a band-edge frequency.
    pub diverged: bool,
}

/// K values in `seg` where the branch passes through `omega0`.
pub(crate) fn crossings_in(b: &dyn Branch, seg: (f64, f64), omega0: f64) -> Result<Vec<f64>> {
    let (a, c) = seg;
    let fa = b.omega(a)? - omega0;
    let fc = b.omega(c)? - omega0;
    if fa == 0.0 {
        return Ok(vec![a]);
    }
    if fa.signum() == fc.signum() || fc == 0.0 {
        return Ok(vec![]);
    }
    let f = |k: f64| b.omega(k).map(|w| w - omega0).unwrap_or(f64::NAN);
    Ok(brent(f, a, c, 1e-13 * c.abs().max(1.0), 200).into_iter().collect())
}

pub fn se_rate(branches: &[&dyn Branch], omega0: f64, dipole: &DipoleSpec, l_hat: f64) -> Result<RatePoint> {
    if !(omega0 > 0.0) || !omega0.is_finite() {
        return Err(EmissionError::Invalid(format!("Omega0 = {omega0}")));
    }
    if !(l_hat > 0.0) {
        return Err(EmissionError::Invalid("quantization length must be > 0".into()));
    }
    let mut crossings = vec![];
    let mut per_order = vec![];
    let mut diverged = false;
    for b in branches {
        let n = b.order();
        diverged |= b.edges().iter().any(|e| (e.omega_c - omega0).abs() <= EDGE_FLAG_DISTANCE);
        let mut sum = 0.0;
        for seg in b.segments() {
            for k in crossings_in(*b, seg, omega0)? {
                let vg = b.slope(k)?;
                let g2 = b.coupling_sq(k, dipole, omega0, l_hat)?;
                let contribution = 2.0 * l_hat * g2 / vg.abs().max(MIN_GROUP_VELOCITY);
                sum += contribution;
                crossings.push(Crossing {
                    n,
                    k,
                    group_velocity: vg,
                    coupling_sq: g2,
                    contribution,
                });
            }
        }
        per_order.push((n, sum));
    }
    let rate = per_order.iter().map(|p| p.1).sum();
    Ok(RatePoint {
        omega0,
        rate,
        per_order,
        crossings,
        diverged,
    })
}

/// Rates over a frequency grid, evaluated in parallel; output follows input order.
pub fn rate_sweep(
    branches: &[&dyn Branch],
    omegas: &[f64],
    dipole: &DipoleSpec,
    l_hat: f64,
) -> Result<Vec<RatePoint>> {
    omegas
        .par_iter()
        .map(|&w| se_rate(branches, w, dipole, l_hat))
        .collect()
}
