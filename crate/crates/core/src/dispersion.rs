//! Mode equation of a metal cylinder in a dielectric host, its roots, branch
//! tracing by continuation, and band-edge extraction.
//!
//! S is made dimensionless by multiplying through with a^2:
//!
//!   S = (a_J - b_H) * R^2 Omega^2 (eps_I a_J - eps_O b_H) - n^2 R^2 K^2 (1/x_O^2 - 1/x_I^2)^2
//!
//! with x = R sqrt(Omega^2 eps - K^2), a_J = J_n'(x_I)/(x_I J_n(x_I)) and
//! b_H = H_n'(x_O)/(x_O H_n(x_O)). The first bracket is the TE factor, the
//! second the TM factor.

use crate::numerics::{brent, quad_fit};
use crate::specfun::{cyl_seq, CylFunKind, SpecFunError};
use crate::units_media::{permittivity, MediaError, MediumParams};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

type C = Complex64;

/// Grid step of the real-frequency bracketing scan.
pub const SCAN_STEP: f64 = 5e-3;
/// Upper end of the bound-mode search window (the wire is metallic below 1).
pub const OMEGA_SCAN_MAX: f64 = 1.0;
/// Largest change of Re(Omega) accepted between neighbouring samples.
pub const MAX_JUMP: f64 = 0.05;
/// Bound on |S| relative to the size of its terms.
pub const RESIDUAL_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DispersionError {
    #[error("pole of the mode equation at n = {n}, K = {k}, Omega = {omega}")]
    Pole { n: u32, k: f64, omega: C },
    #[error("no root found for n = {n}, K = {k}")]
    NotFound { n: u32, k: f64 },
    #[error("Newton did not converge for n = {n}, K = {k}: last {omega}, relative |S| = {residual:e}")]
    NotConverged {
        n: u32,
        k: f64,
        omega: C,
        residual: f64,
    },
    #[error("degenerate point (dS/dOmega = 0) at n = {n}, K = {k}")]
    Degenerate { n: u32, k: f64 },
    #[error("band edge near K = {k} too close to the end of the bound samples")]
    UnresolvedEdge { k: f64 },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    SpecFun(#[from] SpecFunError),
    #[error(transparent)]
    Media(#[from] MediaError),
}

pub type Result<T> = std::result::Result<T, DispersionError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wire {
    pub inner: MediumParams,
    pub outer: MediumParams,
    /// R = w_p a / c
    pub radius: f64,
}

impl Default for Wire {
    fn default() -> Self {
        Wire {
            inner: MediumParams::silver(),
            outer: MediumParams::gan(),
            radius: 0.1,
        }
    }
}

impl Wire {
    pub fn validate(&self) -> Result<()> {
        self.inner.validate()?;
        self.outer.validate()?;
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(DispersionError::Invalid("radius must be > 0".into()));
        }
        Ok(())
    }

    /// Real part of the outer refractive index at real frequency.
    pub fn n_out(&self, omega: f64) -> f64 {
        permittivity(&self.outer, C::new(omega.max(1e-12), 0.0))
            .map(|e| e.sqrt().re)
            .unwrap_or(f64::NAN)
    }

    /// Light-line frequency K / n_O; exact for a non-dispersive host.
    pub fn light_line(&self, k: f64) -> f64 {
        k / self.n_out(1.0)
    }

    pub fn regime(&self, k: f64, omega: C) -> Regime {
        if k > omega.re * self.n_out(omega.re) {
            Regime::Bound
        } else {
            Regime::Nonbound
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Bound,
    Nonbound,
}

/// Branch of the exterior transverse wavenumber.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sheet {
    /// Im x_O >= 0: field decays away from the wire.
    Decaying,
    /// Re x_O >= 0: outgoing radiation, used for complex non-bound roots.
    Outgoing,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModePoint {
    pub n: u32,
    pub k: f64,
    pub omega: C,
    pub regime: Regime,
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Minimum,
    Maximum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandEdge {
    pub n: u32,
    pub k_c: f64,
    pub omega_c: f64,
    /// Half the curvature d^2 Omega / dK^2, signed.
    pub a_n: f64,
    pub kind: EdgeKind,
    pub fit_residual: f64,
}

impl BandEdge {
    pub fn model(&self, k: f64) -> f64 {
        self.omega_c + self.a_n * (k - self.k_c).powi(2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispersionCurve {
    pub n: u32,
    pub samples: Vec<ModePoint>,
    pub edges: Vec<BandEdge>,
    /// K values where continuation lost the branch.
    pub gaps: Vec<f64>,
    /// Approximate K of extrema that could not be resolved.
    pub unresolved_edges: Vec<f64>,
    /// Present for traced curves; enables root re-solves between samples.
    pub wire: Option<Wire>,
}

impl DispersionCurve {
    /// A curve from tabulated samples, without an underlying mode equation.
    pub fn from_samples(n: u32, samples: Vec<ModePoint>) -> Self {
        DispersionCurve {
            n,
            samples,
            edges: vec![],
            gaps: vec![],
            unresolved_edges: vec![],
            wire: None,
        }
    }

    pub fn bound_samples(&self) -> Vec<ModePoint> {
        self.samples
            .iter()
            .filter(|p| p.regime == Regime::Bound)
            .copied()
            .collect()
    }
}

/// The three pieces of S at one point.
#[derive(Debug, Clone, Copy)]
pub struct SFactors {
    pub te: C,
    pub tm: C,
    pub cross: C,
    /// Size of the uncancelled terms of S.
    pub scale: f64,
}

impl SFactors {
    pub fn s(&self) -> C {
        self.te * self.tm - self.cross
    }

    /// |S| relative to its terms; near the light line both grow like 1/x_O^4.
    pub fn relative(&self) -> f64 {
        self.s().norm() / self.scale.max(1e-300)
    }
}

fn branch(kappa2: C, sheet: Sheet) -> C {
    let r = kappa2.sqrt();
    let flip = match sheet {
        Sheet::Decaying => r.im < 0.0 || (r.im == 0.0 && r.re < 0.0),
        Sheet::Outgoing => r.re < 0.0 || (r.re == 0.0 && r.im < 0.0),
    };
    if flip {
        -r
    } else {
        r
    }
}

/// Transverse arguments x_I = R kappa_I, x_O = R kappa_O and the permittivities.
pub fn transverse(k: f64, omega: C, wire: &Wire, sheet: Sheet) -> Result<(C, C, C, C)> {
    let eps_i = permittivity(&wire.inner, omega)?;
    let eps_o = permittivity(&wire.outer, omega)?;
    let w2 = omega * omega;
    let x_i = wire.radius * branch(w2 * eps_i - k * k, Sheet::Decaying);
    let x_o = wire.radius * branch(w2 * eps_o - k * k, sheet);
    Ok((eps_i, eps_o, x_i, x_o))
}

pub fn sheet_for(k: f64, omega: C, wire: &Wire) -> Sheet {
    match wire.regime(k, omega) {
        Regime::Bound => Sheet::Decaying,
        Regime::Nonbound => Sheet::Outgoing,
    }
}

pub fn eval_factors(n: u32, k: f64, omega: C, wire: &Wire, sheet: Sheet) -> Result<SFactors> {
    if omega == C::new(0.0, 0.0) {
        return Err(DispersionError::Invalid("Omega = 0".into()));
    }
    let (eps_i, eps_o, x_i, x_o) = transverse(k, omega, wire, sheet)?;
    let pole = || DispersionError::Pole { n, k, omega };
    if x_i == C::new(0.0, 0.0) || x_o == C::new(0.0, 0.0) {
        return Err(pole());
    }
    let si = cyl_seq(n, x_i)?;
    let so = cyl_seq(n, x_o)?;
    if si.j_scaled(n).norm() == 0.0 || so.h_scaled(n).norm() == 0.0 {
        return Err(pole());
    }
    let a = si.log_deriv(CylFunKind::J, n) / x_i;
    let b = so.log_deriv(CylFunKind::H1, n) / x_o;
    if !(crate::numerics::is_finite(a) && crate::numerics::is_finite(b)) {
        return Err(pole());
    }
    let r2 = wire.radius * wire.radius;
    let te = a - b;
    let tm = r2 * omega * omega * (eps_i * a - eps_o * b);
    let nk = n as f64 * k * wire.radius;
    let d = 1.0 / (x_o * x_o) - 1.0 / (x_i * x_i);
    let cross = nk * nk * d * d;
    let scale = (a.norm() + b.norm()) * r2 * omega.norm_sqr() * ((eps_i * a).norm() + (eps_o * b).norm())
        + cross.norm();
    Ok(SFactors {
        te,
        tm,
        cross,
        scale,
    })
}

/// S on the sheet picked by the regime of (K, Omega).
pub fn eval_s(n: u32, k: f64, omega: C, wire: &Wire) -> Result<C> {
    Ok(eval_factors(n, k, omega, wire, sheet_for(k, omega, wire))?.s())
}

/// Real function whose zeros are the bound roots: the TM factor for n = 0, S otherwise.
fn bound_fn(n: u32, k: f64, omega: f64, wire: &Wire) -> Result<f64> {
    let f = eval_factors(n, k, C::new(omega, 0.0), wire, Sheet::Decaying)?;
    Ok(if n == 0 { f.tm.re } else { f.s().re })
}

fn bound_window(k: f64, wire: &Wire) -> (f64, f64) {
    let hi = (wire.light_line(k) * (1.0 - 1e-10)).min(OMEGA_SCAN_MAX);
    (SCAN_STEP, hi)
}

pub fn find_root_real(n: u32, k: f64, bracket: (f64, f64), wire: &Wire) -> Result<ModePoint> {
    let light = wire.light_line(k);
    let (lo, hi) = bracket;
    if !(lo < hi) || !(lo > 0.0) {
        return Err(DispersionError::Invalid(format!("bad bracket [{lo}, {hi}]")));
    }
    if lo >= light {
        return Err(DispersionError::NotFound { n, k });
    }
    let hi = hi.min(light * (1.0 - 1e-12));
    let flo = bound_fn(n, k, lo, wire)?;
    let fhi = bound_fn(n, k, hi, wire)?;
    if flo.signum() == fhi.signum() {
        return Err(DispersionError::NotFound { n, k });
    }
    let mut err = None;
    let root = brent(
        |w| match bound_fn(n, k, w, wire) {
            Ok(v) => v,
            Err(e) => {
                err = Some(e);
                f64::NAN
            }
        },
        lo,
        hi,
        1e-15,
        300,
    );
    if let Some(e) = err {
        return Err(e);
    }
    let w = root.ok_or(DispersionError::NotFound { n, k })?;
    let omega = C::new(w, 0.0);
    let residual = eval_factors(n, k, omega, wire, Sheet::Decaying)?.relative();
    if residual > RESIDUAL_TOL {
        // a sign change through infinity rather than zero
        if bound_fn(n, k, w, wire)?.abs() > flo.abs().max(fhi.abs()) {
            return Err(DispersionError::Pole { n, k, omega });
        }
        return Err(DispersionError::NotConverged {
            n,
            k,
            omega,
            residual,
        });
    }
    Ok(ModePoint {
        n,
        k,
        omega,
        regime: Regime::Bound,
        residual,
    })
}

/// All bound roots in [lo, hi] found by sign scanning with the given step.
fn scan_between(n: u32, k: f64, lo: f64, hi: f64, step: f64, wire: &Wire) -> Vec<ModePoint> {
    let mut out = vec![];
    if !(hi > lo) {
        return out;
    }
    let m = ((hi - lo) / step).ceil().max(1.0) as usize;
    let grid: Vec<f64> = (0..=m).map(|j| lo + (hi - lo) * j as f64 / m as f64).collect();
    let vals: Vec<Option<f64>> = grid.iter().map(|&w| bound_fn(n, k, w, wire).ok()).collect();
    for j in 0..m {
        if let (Some(a), Some(b)) = (vals[j], vals[j + 1]) {
            if a.signum() != b.signum() {
                if let Ok(p) = find_root_real(n, k, (grid[j], grid[j + 1]), wire) {
                    out.push(p);
                }
            }
        }
    }
    out
}

/// Every bound root of order n at this K inside the search window.
pub fn scan_bound_roots(n: u32, k: f64, wire: &Wire) -> Vec<ModePoint> {
    let (lo, hi) = bound_window(k, wire);
    scan_between(n, k, lo, hi, SCAN_STEP, wire)
}

fn nearest(roots: Vec<ModePoint>, target: f64) -> Option<ModePoint> {
    roots
        .into_iter()
        .min_by(|a, b| (a.omega.re - target).abs().total_cmp(&(b.omega.re - target).abs()))
}

/// Bound root closest to `guess`, searching outward from it.
fn bound_near(n: u32, k: f64, guess: f64, wire: &Wire) -> Option<ModePoint> {
    let (wlo, whi) = bound_window(k, wire);
    let mut width = 2.0 * SCAN_STEP;
    for _ in 0..4 {
        let lo = (guess - width).max(wlo);
        let hi = (guess + width).min(whi);
        let roots = scan_between(n, k, lo, hi, SCAN_STEP / 4.0, wire);
        if let Some(p) = nearest(roots, guess) {
            return Some(p);
        }
        width *= 2.0;
    }
    nearest(scan_bound_roots(n, k, wire), guess).filter(|p| (p.omega.re - guess).abs() < MAX_JUMP)
}

fn newton(n: u32, k: f64, guess: C, wire: &Wire) -> Result<(ModePoint, usize)> {
    let f = |w: C| -> Result<C> { Ok(eval_factors(n, k, w, wire, Sheet::Outgoing)?.s()) };
    let mut w = guess;
    let mut fw = f(w)?;
    let mut iters = 0;
    while iters < 60 {
        if fw.norm() <= 1e-15 {
            break;
        }
        iters += 1;
        let h = 1e-7 * w.norm().max(1.0);
        let d = (f(w + h)? - f(w - h)?) / (2.0 * h);
        if d.norm() == 0.0 || !crate::numerics::is_finite(d) {
            break;
        }
        let step = fw / d;
        let mut lam = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand = w - lam * step;
            if let Ok(fc) = f(cand) {
                if fc.norm() < fw.norm() {
                    w = cand;
                    fw = fc;
                    accepted = true;
                    break;
                }
            }
            lam *= 0.5;
        }
        if !accepted || (lam * step).norm() <= 1e-15 * w.norm().max(1.0) {
            break;
        }
    }
    let residual = eval_factors(n, k, w, wire, Sheet::Outgoing).map_or(f64::INFINITY, |f| f.relative());
    if residual > RESIDUAL_TOL || !crate::numerics::is_finite(w) {
        return Err(DispersionError::NotConverged {
            n,
            k,
            omega: w,
            residual,
        });
    }
    Ok((
        ModePoint {
            n,
            k,
            omega: w,
            regime: wire.regime(k, w),
            residual,
        },
        iters,
    ))
}

/// Complex root above the light line by damped Newton on the outgoing sheet.
pub fn find_root_complex(n: u32, k: f64, guess: C, wire: &Wire) -> Result<ModePoint> {
    let (p, _) = newton(n, k, guess, wire)?;
    if p.regime != Regime::Nonbound || p.omega.im > 1e-12 {
        return Err(DispersionError::NotConverged {
            n,
            k,
            omega: p.omega,
            residual: p.residual,
        });
    }
    Ok(ModePoint {
        omega: C::new(p.omega.re, p.omega.im.min(0.0)),
        ..p
    })
}

pub fn trace_mode(n: u32, k_grid: &[f64], wire: &Wire) -> Result<DispersionCurve> {
    wire.validate()?;
    if k_grid.is_empty() {
        return Err(DispersionError::Invalid("empty K grid".into()));
    }
    if k_grid.windows(2).any(|w| !(w[1] > w[0])) || !(k_grid[0] > 0.0) {
        return Err(DispersionError::Invalid("K grid must be positive and increasing".into()));
    }
    let len = k_grid.len();
    let mut pts: Vec<Option<ModePoint>> = vec![None; len];
    let mut gaps = vec![];

    let start = (0..len).find_map(|i| {
        let roots = scan_bound_roots(n, k_grid[i], wire);
        roots
            .into_iter()
            .min_by(|a, b| a.omega.re.total_cmp(&b.omega.re))
            .map(|p| (i, p))
    });
    let Some((i0, p0)) = start else {
        return Ok(DispersionCurve {
            wire: Some(*wire),
            ..DispersionCurve::from_samples(n, vec![])
        });
    };
    pts[i0] = Some(p0);

    let mut prev = p0;
    for i in i0 + 1..len {
        match bound_near(n, k_grid[i], prev.omega.re, wire) {
            Some(p) if (p.omega.re - prev.omega.re).abs() < MAX_JUMP => {
                pts[i] = Some(p);
                prev = p;
            }
            _ => {
                gaps.push(k_grid[i]);
                break;
            }
        }
    }

    // below the first bound root: bound while it lasts, then complex continuation
    let mut prev = p0;
    let mut prev2: Option<ModePoint> = None;
    let mut complex_mode = false;
    for i in (0..i0).rev() {
        let k = k_grid[i];
        let bound = if complex_mode {
            None
        } else {
            bound_near(n, k, prev.omega.re, wire).filter(|p| (p.omega.re - prev.omega.re).abs() < MAX_JUMP)
        };
        let next = match bound {
            Some(p) => Some(p),
            None => {
                complex_mode = true;
                let guess = match prev2 {
                    Some(q) if prev.regime == Regime::Nonbound => {
                        prev.omega + (prev.omega - q.omega) * ((k - prev.k) / (prev.k - q.k))
                    }
                    _ => C::new(prev.omega.re, -1e-4),
                };
                find_root_complex(n, k, guess, wire)
                    .ok()
                    .filter(|p| (p.omega - prev.omega).norm() < MAX_JUMP)
            }
        };
        match next {
            Some(p) => {
                pts[i] = Some(p);
                prev2 = Some(prev);
                prev = p;
            }
            None => {
                gaps.push(k);
                break;
            }
        }
    }

    let samples: Vec<ModePoint> = pts.into_iter().flatten().collect();
    gaps.sort_by(f64::total_cmp);
    let mut curve = DispersionCurve {
        n,
        samples,
        edges: vec![],
        gaps,
        unresolved_edges: vec![],
        wire: Some(*wire),
    };
    if curve.bound_samples().len() >= 5 {
        let (edges, unresolved) = scan_edges(&curve)?;
        curve.edges = edges;
        curve.unresolved_edges = unresolved;
    }
    Ok(curve)
}

/// dOmega/dK = -(dS/dK)/(dS/dOmega) at a bound root, by fourth-order differences.
pub fn implicit_slope(n: u32, k: f64, omega: f64, wire: &Wire) -> Result<f64> {
    let d4 = |g: &dyn Fn(f64) -> Result<f64>, x: f64, h: f64| -> Result<f64> {
        Ok((-g(x + 2.0 * h)? + 8.0 * g(x + h)? - 8.0 * g(x - h)? + g(x - 2.0 * h)?) / (12.0 * h))
    };
    let fk = d4(&|kk| bound_fn(n, kk, omega, wire), k, 1e-4 * k.max(1.0))?;
    let fw = d4(&|ww| bound_fn(n, k, ww, wire), omega, 1e-5 * omega)?;
    let scale = fk.abs().max(1e-300);
    if fw.abs() <= 1e-12 * scale || fw == 0.0 {
        return Err(DispersionError::Degenerate { n, k });
    }
    Ok(-fk / fw)
}

fn bound_run(curve: &DispersionCurve) -> Vec<ModePoint> {
    curve.bound_samples()
}

/// Bound root of the traced branch at an arbitrary K inside the bound samples.
pub fn omega_at(curve: &DispersionCurve, k: f64) -> Result<ModePoint> {
    let b = bound_run(curve);
    let n = curve.n;
    if b.len() < 2 || k < b[0].k || k > b[b.len() - 1].k {
        return Err(DispersionError::Invalid(format!("K = {k} outside bound samples")));
    }
    let i = b.partition_point(|p| p.k <= k).clamp(1, b.len() - 1);
    let (p, q) = (b[i - 1], b[i]);
    let t = (k - p.k) / (q.k - p.k);
    let guess = p.omega.re + t * (q.omega.re - p.omega.re);
    if t == 0.0 {
        return Ok(p);
    }
    if t == 1.0 {
        return Ok(q);
    }
    let Some(wire) = curve.wire else {
        return Ok(ModePoint {
            n,
            k,
            omega: C::new(guess, 0.0),
            regime: Regime::Bound,
            residual: 0.0,
        });
    };
    bound_near(n, k, guess, &wire).ok_or(DispersionError::NotFound { n, k })
}

pub fn group_velocity(curve: &DispersionCurve, k: f64) -> Result<f64> {
    let p = omega_at(curve, k)?;
    match curve.wire {
        Some(wire) => implicit_slope(curve.n, k, p.omega.re, &wire),
        None => {
            let b = bound_run(curve);
            let i = b.partition_point(|p| p.k <= k).clamp(1, b.len() - 1);
            let j = if i + 1 < b.len() { i } else { i - 1 };
            let (x0, x1, x2) = (b[j - 1].k, b[j].k, b[j + 1].k);
            let (y0, y1, y2) = (b[j - 1].omega.re, b[j].omega.re, b[j + 1].omega.re);
            // derivative of the interpolating parabola
            let d0 = (2.0 * k - x1 - x2) / ((x0 - x1) * (x0 - x2));
            let d1 = (2.0 * k - x0 - x2) / ((x1 - x0) * (x1 - x2));
            let d2 = (2.0 * k - x0 - x1) / ((x2 - x0) * (x2 - x1));
            Ok(y0 * d0 + y1 * d1 + y2 * d2)
        }
    }
}

fn scan_edges(curve: &DispersionCurve) -> Result<(Vec<BandEdge>, Vec<f64>)> {
    let b = bound_run(curve);
    let mut edges = vec![];
    let mut unresolved = vec![];
    let slopes: Vec<f64> = b
        .windows(2)
        .map(|w| (w[1].omega.re - w[0].omega.re) / (w[1].k - w[0].k))
        .collect();
    for i in 1..slopes.len() {
        let (s0, s1) = (slopes[i - 1], slopes[i]);
        if s0 == 0.0 || s0.signum() == s1.signum() {
            continue;
        }
        // extremum near sample i
        if i < 3 || i + 3 >= b.len() {
            unresolved.push(b[i].k);
            continue;
        }
        let edge = match curve.wire {
            Some(wire) => refine_edge(curve, &b, i, &wire)?,
            None => fit_edge(curve.n, &b, i),
        };
        edges.push(edge);
    }
    Ok((edges, unresolved))
}

fn fit_edge(n: u32, b: &[ModePoint], i: usize) -> BandEdge {
    let k0 = b[i].k;
    let xs: Vec<f64> = b[i - 3..=i + 3].iter().map(|p| p.k - k0).collect();
    let ys: Vec<f64> = b[i - 3..=i + 3].iter().map(|p| p.omega.re).collect();
    let (c, res) = quad_fit(&xs, &ys);
    let xv = -c[1] / (2.0 * c[2]);
    edge_from(n, k0 + xv, c[0] + c[1] * xv + c[2] * xv * xv, c[2], res)
}

fn edge_from(n: u32, k_c: f64, omega_c: f64, a_n: f64, fit_residual: f64) -> BandEdge {
    BandEdge {
        n,
        k_c,
        omega_c,
        a_n,
        kind: if a_n > 0.0 {
            EdgeKind::Minimum
        } else {
            EdgeKind::Maximum
        },
        fit_residual,
    }
}

fn refine_edge(curve: &DispersionCurve, b: &[ModePoint], i: usize, wire: &Wire) -> Result<BandEdge> {
    let n = curve.n;
    let slope = |k: f64| -> f64 {
        omega_at(curve, k)
            .and_then(|p| implicit_slope(n, k, p.omega.re, wire))
            .unwrap_or(f64::NAN)
    };
    let mut lo = b[i - 1].k;
    let mut hi = b[i + 1].k;
    if slope(lo).signum() == slope(hi).signum() {
        lo = b[i - 2].k;
        hi = b[i + 2].k;
    }
    let k_c = brent(slope, lo, hi, 1e-12, 200).ok_or(DispersionError::UnresolvedEdge { k: b[i].k })?;
    let omega_c = omega_at(curve, k_c)?.omega.re;
    let h = 0.01;
    let mut xs = vec![];
    let mut ys = vec![];
    for j in -3i32..=3 {
        let x = j as f64 * h;
        let k = k_c + x;
        let w = if j == 0 { omega_c } else { omega_at(curve, k)?.omega.re };
        xs.push(x);
        ys.push(w - omega_c);
    }
    let (c, res) = quad_fit(&xs, &ys);
    Ok(edge_from(n, k_c, omega_c, c[2], res))
}

/// Interior extrema of the bound part of the curve.
pub fn find_band_edges(curve: &DispersionCurve) -> Result<Vec<BandEdge>> {
    let nb = curve.bound_samples().len();
    if nb < 5 {
        return Err(DispersionError::Invalid(format!(
            "need at least 5 bound samples, have {nb}"
        )));
    }
    let (edges, unresolved) = scan_edges(curve)?;
    if let Some(&k) = unresolved.first() {
        return Err(DispersionError::UnresolvedEdge { k });
    }
    Ok(edges)
}

/// Uniform K grid including both ends.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    (0..count)
        .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wire() -> Wire {
        Wire::default()
    }

    #[test]
    fn n0_factorizes() {
        let f = eval_factors(0, 5.0, C::new(0.5, 0.0), &wire(), Sheet::Decaying).unwrap();
        assert_eq!(f.cross, C::new(0.0, 0.0));
        assert!((f.s() - f.te * f.tm).norm() == 0.0);
    }

    #[test]
    fn schwarz_reflection() {
        let w = C::new(0.6, 0.01);
        let a = eval_s(1, 2.0, w, &wire()).unwrap();
        let b = eval_s(1, 2.0, w.conj(), &wire()).unwrap();
        assert!((a.conj() - b).norm() <= 1e-12 * a.norm());
    }

    #[test]
    fn bound_s_is_real() {
        for &(n, k, w) in &[(0, 5.0, 0.4), (1, 3.0, 0.7), (2, 10.0, 0.79), (3, 4.0, 0.2)] {
            let s = eval_s(n, k, C::new(w, 0.0), &wire()).unwrap();
            assert!(s.im.abs() <= 1e-12 * s.norm(), "{n} {k} {w}: {s}");
        }
    }

    #[test]
    fn tm_bracket_at_k5() {
        let w = wire();
        let f = |x: f64| eval_factors(0, 5.0, C::new(x, 0.0), &w, Sheet::Decaying).unwrap().tm.re;
        assert!(f(0.40).signum() != f(0.50).signum());
        // the 0.70..0.81 window holds no root
        assert_eq!(f(0.70).signum(), f(0.81).signum());
        let p = find_root_real(0, 5.0, (0.40, 0.50), &w).unwrap();
        assert!((p.omega.re - 0.436_999).abs() < 2e-6);
        assert!(p.residual <= RESIDUAL_TOL);
    }

    #[test]
    fn root_real_errors() {
        let w = wire();
        let ll = w.light_line(3.0);
        assert!(matches!(
            find_root_real(1, 3.0, (ll + 0.01, ll + 0.1), &w),
            Err(DispersionError::NotFound { .. })
        ));
        assert!(matches!(
            find_root_real(0, 5.0, (0.60, 0.70), &w),
            Err(DispersionError::NotFound { .. })
        ));
    }

    #[test]
    fn n1_root_at_k3() {
        let roots = scan_bound_roots(1, 3.0, &wire());
        assert_eq!(roots.len(), 1);
        assert!((roots[0].omega.re - 0.776_229_448_097).abs() < 1e-9);
        assert!(roots[0].omega.im == 0.0);
    }

    #[test]
    fn n0_saturates_at_very_large_k() {
        let sat = (9.6f64 / 14.9).sqrt();
        let roots = scan_bound_roots(0, 2000.0, &wire());
        assert_eq!(roots.len(), 1);
        assert!((roots[0].omega.re - sat).abs() < 1e-3 * sat);
    }

    #[test]
    fn newton_fixed_point_and_leaky_lifetime() {
        let w = wire();
        let p = find_root_complex(1, 1.5, C::new(0.783, -0.013), &w).unwrap();
        assert!(p.omega.im < -1e-3);
        assert_eq!(p.regime, Regime::Nonbound);
        let (q, iters) = newton(1, 1.5, p.omega, &w).unwrap();
        assert!(iters <= 2);
        assert!((q.omega - p.omega).norm() < 1e-12);
    }

    #[test]
    fn leaky_root_is_local_minimum_of_abs_s() {
        let w = wire();
        let p = find_root_complex(1, 1.5, C::new(0.783, -0.013), &w).unwrap();
        let f = |z: C| eval_factors(1, 1.5, z, &w, Sheet::Outgoing).unwrap().s().norm();
        let h = 2e-4;
        let mut best = (f64::INFINITY, C::new(0.0, 0.0));
        for a in -10..=10 {
            for b in -10..=10 {
                let z = p.omega + C::new(a as f64 * h, b as f64 * h);
                let v = f(z);
                if v < best.0 {
                    best = (v, z);
                }
            }
        }
        assert!((best.1 - p.omega).norm() < 1.5 * h);
    }

    #[test]
    fn empty_branch() {
        // far below every bound root
        let c = trace_mode(1, &[0.1, 0.2, 0.3], &wire()).unwrap();
        assert!(c.samples.is_empty() || c.samples.iter().all(|p| p.regime == Regime::Nonbound));
        let c = trace_mode(0, &[0.001, 0.002], &wire()).unwrap();
        assert!(c.samples.is_empty());
    }

    #[test]
    fn synthetic_parabola_edge() {
        let samples = linspace(1.0, 3.0, 41)
            .into_iter()
            .map(|k| ModePoint {
                n: 1,
                k,
                omega: C::new(0.7 + 0.05 * (k - 2.0).powi(2), 0.0),
                regime: Regime::Bound,
                residual: 0.0,
            })
            .collect();
        let c = DispersionCurve::from_samples(1, samples);
        let e = find_band_edges(&c).unwrap();
        assert_eq!(e.len(), 1);
        assert!((e[0].k_c - 2.0).abs() < 1e-6);
        assert!((e[0].omega_c - 0.7).abs() < 1e-6);
        assert!((e[0].a_n - 0.05).abs() < 1e-6);
        assert_eq!(e[0].kind, EdgeKind::Minimum);
    }

    #[test]
    fn edge_at_curve_end_is_unresolved() {
        let samples = linspace(1.0, 3.0, 21)
            .into_iter()
            .map(|k| ModePoint {
                n: 1,
                k,
                omega: C::new(0.7 - 0.05 * (k - 2.9).powi(2), 0.0),
                regime: Regime::Bound,
                residual: 0.0,
            })
            .collect();
        let c = DispersionCurve::from_samples(1, samples);
        assert!(matches!(find_band_edges(&c), Err(DispersionError::UnresolvedEdge { .. })));
    }

    #[test]
    fn n1_edges_pinned() {
        let c = trace_mode(1, &linspace(1.6, 20.0, 369), &wire()).unwrap();
        let e = &c.edges;
        assert_eq!(e.len(), 2);
        assert_eq!(e[0].kind, EdgeKind::Maximum);
        assert!((e[0].k_c - 2.372_586).abs() < 1e-5);
        assert!((e[0].omega_c - 0.777_574_84).abs() < 1e-7);
        assert!((e[0].a_n + 5.8334e-3).abs() < 1e-6);
        assert_eq!(e[1].kind, EdgeKind::Minimum);
        assert!((e[1].k_c - 15.074_347).abs() < 1e-5);
        assert!((e[1].omega_c - 0.746_474_11).abs() < 1e-7);
        assert!((e[1].a_n - 1.3012e-4).abs() < 1e-7);
    }
}
