//! Non-Markovian decay of a single dot near a band edge.
//!
//! Time is in 1/beta, frequencies in beta. The excited amplitude obeys
//! db/dt = -gamma/2 b - int_0^t K(t - s) b(s) ds, solved by product
//! integration (b piecewise linear against the exact kernel moments) and a
//! trapezoid step with the gamma term integrated exactly.

use crate::dispersion::EdgeKind;
use nalgebra::{SMatrix, SVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

type C = Complex64;

/// Step-halving tolerance on |b|^2 before a warning is attached.
pub const STEP_TOL: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("invalid dynamics setting: {0}")]
    Invalid(String),
    #[error("z = {0} lies on the branch cut of the self-energy")]
    BranchCut(C),
    #[error("kernel is singular at tau = 0")]
    Singular,
}

pub type Result<T> = std::result::Result<T, DynamicsError>;

fn default_substeps() -> usize {
    4
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsConfig {
    pub edge: EdgeKind,
    /// Omega0 - Omega_c in units of beta.
    pub delta: f64,
    /// Extra population decay rate (beta units), applied as e^{-gamma t / 2} on b.
    #[serde(default)]
    pub gamma: f64,
    /// pi |g_c|^2 / sqrt(A_beta), in beta^{3/2}.
    pub coupling: f64,
    pub t_max: f64,
    pub n_steps: usize,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    #[serde(default = "yes")]
    pub check_step: bool,
}

impl DynamicsConfig {
    pub fn minimum(delta: f64, t_max: f64, n_steps: usize) -> Self {
        DynamicsConfig {
            edge: EdgeKind::Minimum,
            delta,
            gamma: 0.0,
            coupling: 1.0,
            t_max,
            n_steps,
            substeps: default_substeps(),
            check_step: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DynamicsError::Invalid(m.into()));
        if !(self.t_max > 0.0) || !self.t_max.is_finite() {
            return bad("t_max must be > 0");
        }
        if self.n_steps == 0 || self.substeps == 0 {
            return bad("n_steps and substeps must be >= 1");
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return bad("gamma must be >= 0");
        }
        if !(self.coupling >= 0.0) || !self.coupling.is_finite() {
            return bad("coupling must be >= 0");
        }
        if !self.delta.is_finite() {
            return bad("delta must be finite");
        }
        Ok(())
    }

    /// Phase of the 1/sqrt(tau) prefactor: the curvature sign fixes it.
    fn edge_phase(&self) -> C {
        match self.edge {
            EdgeKind::Minimum => C::from_polar(1.0, -PI / 4.0),
            EdgeKind::Maximum => C::from_polar(1.0, PI / 4.0),
        }
    }

    fn kernel_prefactor(&self) -> C {
        self.coupling / PI.sqrt() * self.edge_phase()
    }
}

/// Coupling strength pi |g_c|^2 / sqrt(A_beta) from the dimensionless edge coupling.
/// `lg2` is L_hat |G_c|^2, `a_n` the curvature in Omega units, `freq_scale` w_p / beta.
pub fn edge_coupling_strength(lg2: f64, a_n: f64, freq_scale: f64) -> f64 {
    lg2 * (freq_scale / a_n.abs()).sqrt()
}

/// K(tau) = C / sqrt(pi) e^{-+i pi/4} e^{i delta tau} / sqrt(tau).
pub fn memory_kernel(cfg: &DynamicsConfig, tau: f64) -> Result<C> {
    if tau == 0.0 {
        return Err(DynamicsError::Singular);
    }
    if !(tau > 0.0) {
        return Err(DynamicsError::Invalid(format!("tau = {tau}")));
    }
    Ok(cfg.kernel_prefactor() * C::from_polar(1.0, cfg.delta * tau) / tau.sqrt())
}

/// Laplace-domain self energy Sigma(z) = int_0^inf K e^{-z tau}.
pub fn self_energy(cfg: &DynamicsConfig, z: C) -> Result<C> {
    let w = z - C::new(0.0, cfg.delta);
    if w.im == 0.0 && w.re <= 0.0 {
        return Err(DynamicsError::BranchCut(z));
    }
    let s = (w / PI).sqrt();
    Ok(cfg.kernel_prefactor() * crate::specfun::cdiv(C::new(1.0, 0.0), s))
}

pub fn laplace_amplitude(cfg: &DynamicsConfig, z: C) -> Result<C> {
    let den = z + cfg.gamma / 2.0 + self_energy(cfg, z)?;
    Ok(crate::specfun::cdiv(C::new(1.0, 0.0), den))
}

/// Weak-coupling population decay rate 2 Re Sigma(0+); zero in the gap.
pub fn markov_rate(cfg: &DynamicsConfig) -> f64 {
    match self_energy(cfg, C::new(1e-300, 0.0)) {
        Ok(s) => 2.0 * s.re + cfg.gamma,
        Err(_) => cfg.gamma,
    }
}

/// Kernel moments over [m h, (m+1) h]: P_m = int K, Q_m = int K (tau - m h) / h.
pub struct Moments<const D: usize> {
    pub p: Vec<SMatrix<C, D, D>>,
    pub q: Vec<SMatrix<C, D, D>>,
}

/// Exact moments of the closed-form kernel, intervals m = 0..=n.
pub fn band_edge_moments(cfg: &DynamicsConfig, h: f64, n: usize) -> Moments<1> {
    let (xg, wg) = crate::numerics::gauss_legendre(24);
    let c0 = cfg.kernel_prefactor();
    let (p, q): (Vec<_>, Vec<_>) = (0..=n)
        .into_par_iter()
        .map(|m| {
            // tau = v^2 removes the 1/sqrt(tau) singularity
            let a = (m as f64 * h).sqrt();
            let b = ((m + 1) as f64 * h).sqrt();
            let (mut p, mut q) = (C::new(0.0, 0.0), C::new(0.0, 0.0));
            for (x, w) in xg.iter().zip(&wg) {
                let v = 0.5 * (b - a) * x + 0.5 * (b + a);
                let tau = v * v;
                let f = 2.0 * c0 * C::from_polar(0.5 * (b - a) * w, cfg.delta * tau);
                p += f;
                q += f * (tau / h - m as f64);
            }
            (SMatrix::from_element(p), SMatrix::from_element(q))
        })
        .unzip();
    Moments { p, q }
}

/// Moments of a bounded kernel tabulated on tau_m = m h, linear between nodes.
pub fn tabulated_moments<const D: usize>(k: &[SMatrix<C, D, D>], h: f64) -> Moments<D> {
    let n = k.len() - 1;
    let p = (0..n).map(|m| (k[m] + k[m + 1]) * C::new(0.5 * h, 0.0)).collect();
    let q = (0..n)
        .map(|m| k[m] * C::new(h / 6.0, 0.0) + k[m + 1] * C::new(h / 3.0, 0.0))
        .collect();
    Moments { p, q }
}

/// Gauss-Jordan with partial pivoting; D is 1 or 2 in practice.
fn invert<const D: usize>(m: SMatrix<C, D, D>) -> Option<SMatrix<C, D, D>> {
    let mut a = m;
    let mut inv = SMatrix::<C, D, D>::identity();
    for col in 0..D {
        let piv = (col..D).max_by(|&i, &j| a[(i, col)].norm().total_cmp(&a[(j, col)].norm()))?;
        if a[(piv, col)].norm() == 0.0 {
            return None;
        }
        a.swap_rows(col, piv);
        inv.swap_rows(col, piv);
        let d = a[(col, col)];
        for j in 0..D {
            a[(col, j)] /= d;
            inv[(col, j)] /= d;
        }
        for i in 0..D {
            if i != col {
                let f = a[(i, col)];
                for j in 0..D {
                    let (x, y) = (a[(col, j)], inv[(col, j)]);
                    a[(i, j)] -= f * x;
                    inv[(i, j)] -= f * y;
                }
            }
        }
    }
    Some(inv)
}

/// March b from b(0) = b0 over `n` steps of size h.
pub fn volterra<const D: usize>(mom: &Moments<D>, h: f64, gamma: f64, b0: SVector<C, D>, n: usize) -> Result<Vec<SVector<C, D>>> {
    if mom.p.len() < n || mom.q.len() < n {
        return Err(DynamicsError::Invalid("not enough kernel moments".into()));
    }
    let e = (-gamma * h / 2.0).exp();
    let mut b = Vec::with_capacity(n + 1);
    b.push(b0);
    let mut i_prev = SVector::<C, D>::zeros();
    let coef = mom.p[0] - mom.q[0];
    let lhs = SMatrix::<C, D, D>::identity() + coef * C::new(h / 2.0, 0.0);
    let inv = invert(lhs).ok_or_else(|| DynamicsError::Invalid("singular step matrix".into()))?;
    for k in 1..=n {
        let mut known = mom.q[0] * b[k - 1];
        for m in 1..k {
            known += mom.q[m] * b[k - 1 - m] + (mom.p[m] - mom.q[m]) * b[k - m];
        }
        let rhs = b[k - 1] * C::new(e, 0.0) - (i_prev * C::new(e, 0.0) + known) * C::new(h / 2.0, 0.0);
        let bk = inv * rhs;
        i_prev = known + coef * bk;
        b.push(bk);
    }
    Ok(b)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AmplitudeTrace {
    pub t: Vec<f64>,
    pub b: Vec<C>,
    /// max |Delta |b|^2| against a run with half the step, if checked.
    pub step_error: Option<f64>,
    pub warnings: Vec<String>,
}

impl AmplitudeTrace {
    pub fn population(&self) -> Vec<f64> {
        self.b.iter().map(|b| b.norm_sqr()).collect()
    }

    /// Mean and std/mean of |b|^2 over the last quarter of the window.
    pub fn plateau(&self) -> (f64, f64) {
        let t_end = self.t[self.t.len() - 1];
        let tail: Vec<f64> = self
            .t
            .iter()
            .zip(&self.b)
            .filter(|(t, _)| **t >= 0.75 * t_end)
            .map(|(_, b)| b.norm_sqr())
            .collect();
        let mean = tail.iter().sum::<f64>() / tail.len() as f64;
        let var = tail.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / tail.len() as f64;
        (mean, var.sqrt() / mean)
    }

    pub fn trapped_fraction(&self) -> f64 {
        self.plateau().0
    }

    pub fn local_maxima(&self) -> usize {
        let p = self.population();
        p.windows(3).filter(|w| w[1] > w[0] && w[1] > w[2]).count()
    }
}

fn run_single(cfg: &DynamicsConfig, per_out: usize) -> Result<Vec<C>> {
    let n = cfg.n_steps * per_out;
    let h = cfg.t_max / n as f64;
    let mom = band_edge_moments(cfg, h, n);
    let b = volterra(&mom, h, cfg.gamma, SVector::from_element(C::new(1.0, 0.0)), n)?;
    Ok(b.iter().step_by(per_out).map(|v| v[0]).collect())
}

pub fn evolve_single(cfg: &DynamicsConfig) -> Result<AmplitudeTrace> {
    cfg.validate()?;
    let b = run_single(cfg, cfg.substeps)?;
    let t = (0..=cfg.n_steps)
        .map(|i| cfg.t_max * i as f64 / cfg.n_steps as f64)
        .collect();
    let mut warnings = vec![];
    let step_error = if cfg.check_step {
        let fine = run_single(cfg, 2 * cfg.substeps)?;
        let err = b
            .iter()
            .zip(&fine)
            .map(|(x, y)| (x.norm_sqr() - y.norm_sqr()).abs())
            .fold(0.0, f64::max);
        if err > STEP_TOL {
            warnings.push(format!("step halving changes |b|^2 by {err:.2e}"));
        }
        Some(err)
    } else {
        None
    };
    Ok(AmplitudeTrace {
        t,
        b,
        step_error,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_values_and_errors() {
        let cfg = DynamicsConfig::minimum(0.3, 10.0, 100);
        let k = memory_kernel(&cfg, 4.0).unwrap();
        let expect = C::from_polar(0.5 / PI.sqrt(), 1.2 - PI / 4.0);
        assert!((k - expect).norm() < 1e-14);
        assert_eq!(memory_kernel(&cfg, 0.0), Err(DynamicsError::Singular));
        assert!(memory_kernel(&cfg, -1.0).is_err());
    }

    #[test]
    fn self_energy_matches_quadrature() {
        let cfg = DynamicsConfig::minimum(0.4, 10.0, 100);
        let z = C::new(0.7, 0.2);
        // tau = v^2 on [0, 12]: e^{-0.7 v^2} is negligible beyond
        let (x, w) = crate::numerics::gauss_legendre(200);
        let s: C = x
            .iter()
            .zip(&w)
            .map(|(x, w)| {
                let v = 6.0 * (x + 1.0);
                let tau = v * v;
                2.0 * v * memory_kernel(&cfg, tau).unwrap() * (-z * tau).exp() * (6.0 * w)
            })
            .sum();
        assert!((s - self_energy(&cfg, z).unwrap()).norm() < 1e-10);
        assert!(matches!(
            laplace_amplitude(&cfg, C::new(-1.0, 0.4)),
            Err(DynamicsError::BranchCut(_))
        ));
    }

    #[test]
    fn markov_limit_rates() {
        let cfg = DynamicsConfig::minimum(0.25, 10.0, 100);
        assert!((markov_rate(&cfg) - 4.0).abs() < 1e-12);
        let gap = DynamicsConfig::minimum(-0.25, 10.0, 100);
        assert!(markov_rate(&gap).abs() < 1e-12);
    }

    #[test]
    fn zero_coupling_is_free_decay() {
        let mut cfg = DynamicsConfig::minimum(0.0, 5.0, 200);
        cfg.coupling = 0.0;
        cfg.gamma = 0.6;
        let tr = evolve_single(&cfg).unwrap();
        for (t, b) in tr.t.iter().zip(&tr.b) {
            assert!((b.norm_sqr() - (-0.6 * t).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn smooth_kernel_against_exact_solution() {
        // K = k0 constant gives b'' = -k0 b, b(0) = 1, b'(0) = 0
        let h = 0.01;
        let n = 500;
        let kv = vec![SMatrix::<C, 1, 1>::from_element(C::new(2.0, 0.0)); n + 1];
        let b = volterra(&tabulated_moments(&kv, h), h, 0.0, SVector::from_element(C::new(1.0, 0.0)), n).unwrap();
        let w = 2f64.sqrt();
        for (i, v) in b.iter().enumerate() {
            assert!((v[0].re - (w * i as f64 * h).cos()).abs() < 1e-4);
        }
    }

    #[test]
    fn weak_coupling_approaches_markov_decay() {
        let mut cfg = DynamicsConfig::minimum(4.0, 6.0, 600);
        cfg.coupling = 0.05;
        let tr = evolve_single(&cfg).unwrap();
        let rate = markov_rate(&cfg);
        let p = tr.population();
        let i = 500;
        // population relative to the Markov law at late time
        assert!((p[i] / (-rate * tr.t[i]).exp() - 1.0).abs() < 0.02);
    }

    #[test]
    fn edge_plateau_at_resonance() {
        let cfg = DynamicsConfig::minimum(0.0, 20.0, 2000);
        let tr = evolve_single(&cfg).unwrap();
        assert!(tr.step_error.unwrap() < STEP_TOL);
        assert!(tr.warnings.is_empty());
        let (mean, _) = tr.plateau();
        assert!((mean - 4.0 / 9.0).abs() < 0.01);
    }

    #[test]
    fn rejects_bad_config() {
        let mut cfg = DynamicsConfig::minimum(0.0, 20.0, 0);
        assert!(evolve_single(&cfg).is_err());
        cfg.n_steps = 10;
        cfg.t_max = -1.0;
        assert!(evolve_single(&cfg).is_err());
    }

    #[test]
    fn self_energy_near_the_imaginary_axis() {
        let cfg = DynamicsConfig::minimum(0.4, 10.0, 100);
        let z = C::new(0.1, 0.3);
        let (x, w) = crate::numerics::gauss_legendre(400);
        let s: C = x
            .iter()
            .zip(&w)
            .map(|(x, w)| {
                let v = 8.0 * (x + 1.0);
                let tau = v * v;
                2.0 * v * memory_kernel(&cfg, tau).unwrap() * (-z * tau).exp() * (8.0 * w)
            })
            .sum();
        assert!((s - self_energy(&cfg, z).unwrap()).norm() < 1e-4);
    }
}
