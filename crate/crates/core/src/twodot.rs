//! Two identical dots on the same side of the wire, separated by z0 along it,
//! sharing the plasmon continuum. Single-excitation sector, b1(0) = 1.
//!
//! Kernels (time in 1/beta, s = w_p / beta):
//!   K11 = K22 = sum_c K_c(tau),  K_c = (s / pi) int_c dK |G|^2 w(u) e^{-i u tau}
//!   K12 = sum_c e^{+i K_c z0} K_c,  K21 = sum_c e^{-i K_c z0} K_c
//! where c runs over the crossings Omega_n(K_c) = Omega0, u = s (Omega(K) - Omega0)
//! and w is a Gaussian window of width `window_factor` times the single-dot rate.
//! The propagation phase is frozen at K_c: the transit time z0 / v_g is far
//! below both 1/Gamma and the time step. The amplitude of dot 2 is
//! reported in the basis |dn up> -> -|dn up>, which leaves populations and
//! concurrence unchanged and matches the closed-form sign.

use crate::dispersion::{BandEdge, EdgeKind};
use crate::dynamics::{band_edge_moments, edge_coupling_strength, tabulated_moments, volterra, AmplitudeTrace, DynamicsConfig, DynamicsError, STEP_TOL};
use crate::emission::{crossings_in, se_rate, Branch, EmissionError, QuadraticBranch};
use crate::modefields::DipoleSpec;
use crate::numerics::{brent, gauss_legendre};
use nalgebra::{SMatrix, SVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};
use thiserror::Error;

type C = Complex64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TwoDotError {
    #[error("invalid two-dot setting: {0}")]
    Invalid(String),
    #[error("no n = 0 crossing at Omega0 = {0}")]
    NoFundamentalCrossing(f64),
    #[error("concurrence is undefined for the zero vector")]
    UndefinedState,
    #[error(transparent)]
    Emission(#[from] EmissionError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

pub type Result<T> = std::result::Result<T, TwoDotError>;

fn default_substeps() -> usize {
    2
}
fn default_window() -> f64 {
    40.0
}
fn default_scale() -> f64 {
    1e8
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoDotConfig {
    pub omega0: f64,
    /// Separation in c / w_p.
    pub z0_hat: f64,
    /// Wavenumber of the resonant n = 0 plasmon.
    pub k0: f64,
    /// Amplitude decay rate of one isolated dot (half its population rate), beta units.
    pub gamma_sp: f64,
    pub t_max: f64,
    pub n_steps: usize,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    /// Window width in units of the single-dot population rate 2 gamma_sp.
    #[serde(default = "default_window")]
    pub window_factor: f64,
    /// w_p / beta.
    #[serde(default = "default_scale")]
    pub freq_scale: f64,
    #[serde(default = "yes")]
    pub check_step: bool,
}

impl TwoDotConfig {
    /// Take k0 and gamma_sp from the traced branches; t_max = 10 / gamma_sp.
    pub fn calibrated(
        omega0: f64,
        z0_hat: f64,
        branches: &[&dyn Branch],
        dipole: &DipoleSpec,
        n_steps: usize,
    ) -> Result<Self> {
        let r = se_rate(branches, omega0, dipole, 1.0)?;
        let k0 = r
            .crossings
            .iter()
            .find(|c| c.n == 0)
            .map(|c| c.k)
            .ok_or(TwoDotError::NoFundamentalCrossing(omega0))?;
        let gamma_sp = 0.5 * r.rate;
        let cfg = TwoDotConfig {
            omega0,
            z0_hat,
            k0,
            gamma_sp,
            t_max: 10.0 / gamma_sp,
            n_steps,
            substeps: default_substeps(),
            window_factor: default_window(),
            freq_scale: default_scale(),
            check_step: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TwoDotError::Invalid(m.into()));
        if !(self.z0_hat >= 0.0) || !self.z0_hat.is_finite() {
            return bad("z0_hat must be >= 0");
        }
        if !(self.gamma_sp >= 0.0) || !self.gamma_sp.is_finite() {
            return bad("gamma_sp must be >= 0");
        }
        if !(self.t_max > 0.0) || self.n_steps == 0 || self.substeps == 0 {
            return bad("time grid must be non-empty");
        }
        if !(self.window_factor > 0.0) || !(self.freq_scale > 0.0) {
            return bad("window_factor and freq_scale must be > 0");
        }
        if !(self.omega0 > 0.0) {
            return bad("omega0 must be > 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TwoDotTrace {
    pub t: Vec<f64>,
    pub b1: Vec<C>,
    pub b2: Vec<C>,
    pub step_error: Option<f64>,
    pub warnings: Vec<String>,
}

impl TwoDotTrace {
    pub fn populations(&self) -> Vec<(f64, f64)> {
        self.b1.iter().zip(&self.b2).map(|(a, b)| (a.norm_sqr(), b.norm_sqr())).collect()
    }

    /// Concurrence of the conditional state; 0 where both amplitudes vanish.
    pub fn concurrence(&self) -> Vec<f64> {
        self.b1
            .iter()
            .zip(&self.b2)
            .map(|(a, b)| concurrence(*a, *b).unwrap_or(0.0))
            .collect()
    }
}

/// Closed-form Markov amplitudes for a single contributing mode.
pub fn markovian_amplitudes(cfg: &TwoDotConfig, t: f64) -> (C, C) {
    let e = (-2.0 * cfg.gamma_sp * t).exp();
    let b1 = C::new(0.5 * (1.0 + e), 0.0);
    let b2 = C::from_polar(0.5 * (1.0 - e), -cfg.k0 * cfg.z0_hat);
    (b1, b2)
}

/// 2 |b1| |b2| / (|b1|^2 + |b2|^2).
pub fn concurrence(b1: C, b2: C) -> Result<f64> {
    let n = b1.norm_sqr() + b2.norm_sqr();
    if n == 0.0 {
        return Err(TwoDotError::UndefinedState);
    }
    Ok(2.0 * b1.norm() * b2.norm() / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "phase", rename_all = "snake_case")]
pub enum EntangledPhase {
    SingletLike,
    TripletLike,
    General(f64),
}

pub fn entangled_state_phase(k0: f64, z0: f64) -> EntangledPhase {
    let phi = (k0 * z0).rem_euclid(TAU);
    if (phi - PI).abs() <= 1e-9 {
        EntangledPhase::SingletLike
    } else if phi <= 1e-9 || TAU - phi <= 1e-9 {
        EntangledPhase::TripletLike
    } else {
        EntangledPhase::General(phi)
    }
}

/// Dense quadrature nodes of one crossing: weighted spectral density and u.
struct Nodes {
    k_c: f64,
    amp: Vec<f64>,
    u: Vec<f64>,
}

const N_ANCHOR: usize = 9;
const ANCHOR_SPAN: f64 = 0.5;
const WINDOW_SIGMAS: f64 = 6.0;
/// Crossings below this share of the total rate are left out of the kernels.
pub const MIN_CROSSING_SHARE: f64 = 1e-5;

fn cheb_nodes(a: f64, b: f64) -> Vec<f64> {
    (0..N_ANCHOR)
        .map(|j| {
            let x = (PI * j as f64 / (N_ANCHOR - 1) as f64).cos();
            (0.5 * (a + b) + 0.5 * (b - a) * x).clamp(a, b)
        })
        .collect()
}

/// Barycentric interpolation on Chebyshev points of the second kind.
fn bary(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let m = xs.len();
    let mut num = 0.0;
    let mut den = 0.0;
    for j in 0..m {
        let d = x - xs[j];
        if d == 0.0 {
            return ys[j];
        }
        let mut w = if j % 2 == 0 { 1.0 } else { -1.0 };
        if j == 0 || j == m - 1 {
            w *= 0.5;
        }
        num += w / d * ys[j];
        den += w / d;
    }
    num / den
}

/// Monotone piece of the branch around k_c: traced range cut at the band edges.
fn monotone_piece(b: &dyn Branch, k_c: f64) -> (f64, f64) {
    let segs = b.segments();
    let mut lo = segs.first().map_or(k_c, |s| s.0);
    let mut hi = segs.last().map_or(k_c, |s| s.1);
    for e in b.edges() {
        if e.k_c < k_c {
            lo = lo.max(e.k_c);
        } else if e.k_c > k_c {
            hi = hi.min(e.k_c);
        }
    }
    (lo, hi)
}

fn crossing_nodes(b: &dyn Branch, k_c: f64, cfg: &TwoDotConfig, dipole: &DipoleSpec) -> Result<Nodes> {
    let s = cfg.freq_scale;
    let w = cfg.window_factor * 2.0 * cfg.gamma_sp;
    let u_max = WINDOW_SIGMAS * w;
    let range = monotone_piece(b, k_c);
    let u_at = |k: f64| -> Result<f64> { Ok(s * (b.omega(k)? - cfg.omega0)) };
    // walk outwards until the window is left or the piece ends
    let v = b.slope(k_c)?.abs().max(1e-12);
    let reach = |dir: f64| -> Result<f64> {
        let mut step = (1.5 * u_max / (s * v)).min(ANCHOR_SPAN);
        let end = if dir < 0.0 { range.0 } else { range.1 };
        let mut k = k_c;
        loop {
            let next = if dir < 0.0 { (k - step).max(end) } else { (k + step).min(end) };
            if next == end || u_at(next)?.abs() >= u_max {
                return Ok(next);
            }
            k = next;
            step *= 2.0;
        }
    };
    let win = Window {
        omega0: cfg.omega0,
        width: w,
        freq_scale: s,
        t_max: cfg.t_max,
        l_hat: 1.0,
    };
    let mut nodes = Nodes {
        k_c,
        amp: vec![],
        u: vec![],
    };
    window_nodes(b, (reach(-1.0)?, reach(1.0)?), &win, dipole, &mut nodes)?;
    Ok(nodes)
}

/// Spectral window around omega0: Gaussian of `width` (beta units) in u.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub omega0: f64,
    pub width: f64,
    pub freq_scale: f64,
    /// Sets the quadrature density: about 4 rad of phase per panel at t_max.
    pub t_max: f64,
    pub l_hat: f64,
}

/// Append the quadrature nodes of [lo, hi] that fall inside the window.
fn window_nodes(b: &dyn Branch, (lo, hi): (f64, f64), win: &Window, dipole: &DipoleSpec, nodes: &mut Nodes) -> Result<()> {
    let s = win.freq_scale;
    let w = win.width;
    let u_max = WINDOW_SIGMAS * w;
    let u_at = |k: f64| -> Result<f64> { Ok(s * (b.omega(k)? - win.omega0)) };
    let pieces = ((hi - lo) / ANCHOR_SPAN).ceil().max(1.0) as usize;
    let (gx, gw) = gauss_legendre(8);
    for p in 0..pieces {
        let a = lo + (hi - lo) * p as f64 / pieces as f64;
        let c = lo + (hi - lo) * (p + 1) as f64 / pieces as f64;
        let xs = cheb_nodes(a, c);
        let us: Vec<f64> = xs.iter().map(|&k| u_at(k)).collect::<Result<_>>()?;
        if us.iter().all(|u| u.abs() > u_max) && us[0].signum() == us[us.len() - 1].signum() {
            continue;
        }
        let g2: Vec<f64> = xs
            .iter()
            .map(|&k| b.coupling_sq(k, dipole, win.omega0, win.l_hat))
            .collect::<std::result::Result<_, _>>()?;
        let u_span = us.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - us.iter().cloned().fold(f64::INFINITY, f64::min);
        let panels = ((u_span * win.t_max / 4.0).ceil() as usize).max(2);
        let step = (c - a) / panels as f64;
        for q in 0..panels {
            let a0 = a + q as f64 * step;
            for (x, wt) in gx.iter().zip(&gw) {
                let k = a0 + 0.5 * step * (x + 1.0);
                let u = bary(&xs, &us, k);
                let g = (-0.5 * (u / w).powi(2)).exp();
                if g < 1e-16 {
                    continue;
                }
                nodes.u.push(u);
                nodes.amp.push(s / PI * win.l_hat * bary(&xs, &g2, k) * g * 0.5 * step * wt);
            }
        }
    }
    Ok(())
}

/// Nodes of every traced bound mode inside the window, for the single-dot kernel.
fn spectral_nodes(branches: &[&dyn Branch], win: &Window, dipole: &DipoleSpec) -> Result<Nodes> {
    let mut nodes = Nodes {
        k_c: 0.0,
        amp: vec![],
        u: vec![],
    };
    let u_max = WINDOW_SIGMAS * win.width / win.freq_scale;
    for b in branches {
        for (lo, hi) in b.segments() {
            // segments are monotone: clip each to the window before the quadrature
            let f = |k: f64| b.omega(k).map(|w| w - win.omega0).unwrap_or(f64::NAN);
            let (fa, fb) = (f(lo), f(hi));
            if fa.min(fb) > u_max || fa.max(fb) < -u_max {
                continue;
            }
            let clip = |level: f64| {
                if (fa - level) * (fb - level) < 0.0 {
                    brent(|k| f(k) - level, lo, hi, 1e-14 * hi.abs().max(1.0), 200)
                } else {
                    None
                }
            };
            let mut ends = vec![lo, hi];
            ends.extend(clip(u_max));
            ends.extend(clip(-u_max));
            ends.sort_by(f64::total_cmp);
            for w in ends.windows(2) {
                let mid = f(0.5 * (w[0] + w[1]));
                if mid.abs() <= u_max && w[1] > w[0] {
                    window_nodes(*b, (w[0], w[1]), win, dipole, &mut nodes)?;
                }
            }
        }
    }
    Ok(nodes)
}

/// Windowed spectral kernel K(tau) = (s / pi) sum_n int dK L_hat |G|^2 w(u) e^{-i u tau}.
pub fn full_kernel(branches: &[&dyn Branch], win: &Window, dipole: &DipoleSpec, taus: &[f64]) -> Result<Vec<C>> {
    let nodes = spectral_nodes(branches, win, dipole)?;
    Ok(taus
        .iter()
        .map(|&tau| {
            nodes
                .amp
                .iter()
                .zip(&nodes.u)
                .map(|(a, u)| C::from_polar(*a, -u * tau))
                .sum()
        })
        .collect())
}

/// Single-dot decay with the full kernel at omega0 = omega_c + delta / s.
///
/// The closed-form edge kernel is kept exactly; the traced spectrum enters as a
/// windowed correction (traced bands minus their quadratic edge model, both under
/// the same window), so the window never trims the 1/sqrt(tau) tail. The spectral
/// weight is rescaled so the edge strength equals `cfg.coupling`; the traced bands
/// supply the shape of the kernel only.
pub fn evolve_single_full(
    cfg: &DynamicsConfig,
    edge: &BandEdge,
    width: f64,
    freq_scale: f64,
    branches: &[&dyn Branch],
    dipole: &DipoleSpec,
) -> Result<AmplitudeTrace> {
    cfg.validate()?;
    if !(width > 0.0) || !(freq_scale > 0.0) {
        return Err(TwoDotError::Invalid("window width and freq_scale must be > 0".into()));
    }
    if (edge.kind == EdgeKind::Minimum) != (cfg.edge == EdgeKind::Minimum) {
        return Err(TwoDotError::Invalid("edge kind differs from the config".into()));
    }
    let win = Window {
        omega0: edge.omega_c + cfg.delta / freq_scale,
        width,
        freq_scale,
        t_max: cfg.t_max,
        l_hat: 1.0,
    };
    let b_edge = branches
        .iter()
        .find(|b| b.order() == edge.n)
        .ok_or_else(|| TwoDotError::Invalid(format!("no traced branch of order {}", edge.n)))?;
    let g2 = b_edge.coupling_sq(edge.k_c, dipole, edge.omega_c, 1.0)?;
    let strength = edge_coupling_strength(g2, edge.a_n, freq_scale);
    if !(strength > 0.0) {
        return Err(TwoDotError::Invalid("edge coupling vanishes".into()));
    }
    // quadratic model wide enough to cover the window on both sides
    let reach = 2.0 * (WINDOW_SIGMAS * width / freq_scale / edge.a_n.abs()).sqrt() + cfg.delta.abs().sqrt();
    let model = QuadraticBranch {
        n: edge.n,
        k_c: edge.k_c,
        omega_c: edge.omega_c,
        a: edge.a_n,
        k_lo: edge.k_c - reach,
        k_hi: edge.k_c + reach,
        g2,
    };
    let mut nodes = spectral_nodes(branches, &win, dipole)?;
    let m = spectral_nodes(&[&model], &win, dipole)?;
    nodes.u.extend(m.u);
    nodes.amp.extend(m.amp.iter().map(|a| -a));
    for a in nodes.amp.iter_mut() {
        *a *= cfg.coupling / strength;
    }
    let nodes = [nodes];
    let per_out = if cfg.check_step { 2 * cfg.substeps } else { cfg.substeps };
    let n_fine = cfg.n_steps * per_out;
    let row = &crossing_kernels(&nodes, cfg.t_max / n_fine as f64, n_fine)[0];
    let run = |stride: usize, per: usize| -> Result<Vec<C>> {
        let table: Vec<SMatrix<C, 1, 1>> = row.iter().step_by(stride).map(|k| SMatrix::from_element(*k)).collect();
        let n = table.len() - 1;
        let h = cfg.t_max / n as f64;
        let mut mom = tabulated_moments(&table, h);
        let exact = band_edge_moments(cfg, h, n);
        for (x, y) in mom.p.iter_mut().zip(&exact.p) {
            *x += y;
        }
        for (x, y) in mom.q.iter_mut().zip(&exact.q) {
            *x += y;
        }
        let b = volterra(&mom, h, cfg.gamma, SVector::from_element(C::new(1.0, 0.0)), n)?;
        Ok(b.iter().step_by(per).map(|v| v[0]).collect())
    };
    let b = run(per_out / cfg.substeps, cfg.substeps)?;
    let mut warnings = vec![];
    let step_error = if cfg.check_step {
        let fine = run(1, per_out)?;
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
    let t = (0..=cfg.n_steps)
        .map(|i| cfg.t_max * i as f64 / cfg.n_steps as f64)
        .collect();
    Ok(AmplitudeTrace {
        t,
        b,
        step_error,
        warnings,
    })
}

/// K_c(m h) for m = 0..=n, one row per crossing.
fn crossing_kernels(nodes: &[Nodes], h: f64, n: usize) -> Vec<Vec<C>> {
    nodes
        .iter()
        .map(|nd| {
            let pairs: Vec<(f64, f64)> = nd.amp.iter().copied().zip(nd.u.iter().copied()).collect();
            let zero = || vec![C::new(0.0, 0.0); n + 1];
            let parts: Vec<Vec<C>> = pairs
                .par_chunks(512)
                .map(|chunk| {
                    let mut acc = zero();
                    for &(amp, u) in chunk {
                        let r = C::from_polar(1.0, -u * h);
                        let mut z = C::new(amp, 0.0);
                        for (m, slot) in acc.iter_mut().enumerate() {
                            if m % 64 == 0 {
                                // resync against drift of the running phasor
                                z = C::from_polar(amp, -u * h * m as f64);
                            }
                            *slot += z;
                            z *= r;
                        }
                    }
                    acc
                })
                .collect();
            // summed in chunk order so the result does not depend on the pool size
            let mut total = zero();
            for p in &parts {
                for (x, y) in total.iter_mut().zip(p) {
                    *x += y;
                }
            }
            total
        })
        .collect()
}

fn kernel_matrix(nodes: &[Nodes], rows: &[Vec<C>], z0: f64, stride: usize) -> Vec<SMatrix<C, 2, 2>> {
    let len = (rows[0].len() - 1) / stride + 1;
    (0..len)
        .map(|m| {
            let mut k = [C::new(0.0, 0.0); 3];
            for (nd, row) in nodes.iter().zip(rows) {
                let v = row[m * stride];
                let ph = C::from_polar(1.0, nd.k_c * z0);
                k[0] += v;
                k[1] += v * ph;
                k[2] += v * ph.conj();
            }
            SMatrix::<C, 2, 2>::new(k[0], k[1], k[2], k[0])
        })
        .collect()
}

fn collect_nodes(cfg: &TwoDotConfig, branches: &[&dyn Branch], dipole: &DipoleSpec) -> Result<Vec<Nodes>> {
    let r = se_rate(branches, cfg.omega0, dipole, 1.0)?;
    if !r.crossings.iter().any(|c| c.n == 0) {
        return Err(TwoDotError::NoFundamentalCrossing(cfg.omega0));
    }
    let mut out = vec![];
    for b in branches {
        for seg in b.segments() {
            for k in crossings_in(*b, seg, cfg.omega0)? {
                let share = r
                    .crossings
                    .iter()
                    .find(|c| c.n == b.order() && (c.k - k).abs() <= 1e-9 * k.max(1.0))
                    .map_or(0.0, |c| c.contribution / r.rate);
                if share >= MIN_CROSSING_SHARE {
                    out.push(crossing_nodes(*b, k, cfg, dipole)?);
                }
            }
        }
    }
    Ok(out)
}

fn march(cfg: &TwoDotConfig, table: &[SMatrix<C, 2, 2>], per_out: usize) -> Result<Vec<(C, C)>> {
    let n = table.len() - 1;
    let h = cfg.t_max / n as f64;
    let mom = tabulated_moments(table, h);
    let b0 = SVector::<C, 2>::new(C::new(1.0, 0.0), C::new(0.0, 0.0));
    let b = volterra(&mom, h, 0.0, b0, n)?;
    Ok(b.iter().step_by(per_out).map(|v| (v[0], -v[1])).collect())
}

pub fn evolve_two(cfg: &TwoDotConfig, branches: &[&dyn Branch], dipole: &DipoleSpec) -> Result<TwoDotTrace> {
    cfg.validate()?;
    let nodes = collect_nodes(cfg, branches, dipole)?;
    let per_out = if cfg.check_step { 2 * cfg.substeps } else { cfg.substeps };
    let n_fine = cfg.n_steps * per_out;
    let rows = crossing_kernels(&nodes, cfg.t_max / n_fine as f64, n_fine);
    let stride = per_out / cfg.substeps;
    let b = march(cfg, &kernel_matrix(&nodes, &rows, cfg.z0_hat, stride), cfg.substeps)?;
    let mut warnings = vec![];
    let step_error = if cfg.check_step {
        let fine = march(cfg, &kernel_matrix(&nodes, &rows, cfg.z0_hat, 1), per_out)?;
        let err = b
            .iter()
            .zip(&fine)
            .map(|(x, y)| {
                let d1 = (x.0.norm_sqr() - y.0.norm_sqr()).abs();
                let d2 = (x.1.norm_sqr() - y.1.norm_sqr()).abs();
                d1.max(d2)
            })
            .fold(0.0, f64::max);
        if err > STEP_TOL {
            warnings.push(format!("step halving changes populations by {err:.2e}"));
        }
        Some(err)
    } else {
        None
    };
    let t = (0..=cfg.n_steps)
        .map(|i| cfg.t_max * i as f64 / cfg.n_steps as f64)
        .collect();
    Ok(TwoDotTrace {
        t,
        b1: b.iter().map(|x| x.0).collect(),
        b2: b.iter().map(|x| x.1).collect(),
        step_error,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(z0: f64) -> TwoDotConfig {
        TwoDotConfig {
            omega0: 0.6,
            z0_hat: z0,
            k0: 10.0,
            gamma_sp: 0.5,
            t_max: 20.0,
            n_steps: 400,
            substeps: 2,
            window_factor: 40.0,
            freq_scale: 1e7,
            check_step: false,
        }
    }

    #[test]
    fn closed_form_values() {
        let c = cfg(0.3);
        let (b1, b2) = markovian_amplitudes(&c, 0.0);
        assert_eq!((b1, b2.norm()), (C::new(1.0, 0.0), 0.0));
        let t = 2f64.ln() / (2.0 * c.gamma_sp);
        let (b1, b2) = markovian_amplitudes(&c, t);
        assert!((b1.re - 0.75).abs() < 1e-15 && (b2.norm() - 0.25).abs() < 1e-15);
        let (b1, b2) = markovian_amplitudes(&c, 1e3);
        assert!((b1.re - 0.5).abs() < 1e-15);
        assert!((b2 - C::from_polar(0.5, -3.0)).norm() < 1e-15);
    }

    #[test]
    fn concurrence_values() {
        assert_eq!(concurrence(C::new(1.0, 0.0), C::new(0.0, 0.0)).unwrap(), 0.0);
        let c = concurrence(C::new(0.5, 0.0), C::from_polar(0.5, 1.3)).unwrap();
        assert!((c - 1.0).abs() < 1e-15);
        let c = concurrence(C::new(0.75, 0.0), C::new(0.25, 0.0)).unwrap();
        assert!((c - 0.6).abs() < 1e-15);
        assert_eq!(concurrence(C::new(0.0, 0.0), C::new(0.0, 0.0)), Err(TwoDotError::UndefinedState));
    }

    #[test]
    fn phase_classification() {
        assert_eq!(entangled_state_phase(3.0 * PI, 1.0), EntangledPhase::SingletLike);
        assert_eq!(entangled_state_phase(2.0, 2.0 * PI), EntangledPhase::TripletLike);
        match entangled_state_phase(0.5 * PI, 1.0) {
            EntangledPhase::General(p) => assert!((p - 0.5 * PI).abs() < 1e-15),
            other => panic!("{other:?}"),
        }
    }

    fn linear_branch() -> QuadraticBranch {
        // far from its edge the band is effectively linear across the window
        QuadraticBranch {
            n: 0,
            k_c: 0.0,
            omega_c: 0.5,
            a: 0.001,
            k_lo: 0.5,
            k_hi: 20.0,
            g2: 1e-4,
        }
    }

    fn calibrated(z0: f64) -> TwoDotConfig {
        let b = linear_branch();
        let mut c = TwoDotConfig::calibrated(0.6, z0, &[&b], &DipoleSpec::radial(0.3), 800).unwrap();
        c.check_step = false;
        c
    }

    #[test]
    fn flat_band_matches_closed_form() {
        let b = linear_branch();
        let c = calibrated(0.0);
        let tr = evolve_two(&c, &[&b], &DipoleSpec::radial(0.3)).unwrap();
        let mut dev: f64 = 0.0;
        for (i, t) in tr.t.iter().enumerate() {
            let (m1, m2) = markovian_amplitudes(&c, *t);
            dev = dev.max((tr.b1[i] - m1).norm()).max((tr.b2[i] - m2).norm());
        }
        assert!(dev < 0.02, "{dev}");
    }

    #[test]
    fn norm_never_grows_and_symmetry_holds() {
        let b = linear_branch();
        let c = calibrated(0.37);
        let tr = evolve_two(&c, &[&b], &DipoleSpec::radial(0.3)).unwrap();
        let pops = tr.populations();
        let mut prev = 1.0 + 1e-12;
        for (p1, p2) in &pops {
            assert!(p1 + p2 <= prev + 1e-6);
            prev = p1 + p2;
        }
        // dot 2 sees dot 1 through e^{-i K0 z0}
        let last = tr.b2[tr.b2.len() - 1];
        let phase = (last / last.norm()).arg();
        let expect = (-c.k0 * c.z0_hat + PI).rem_euclid(TAU) - PI;
        assert!((phase - expect).abs() < 0.05);
    }

    #[test]
    fn missing_fundamental_is_an_error() {
        let mut b = linear_branch();
        b.n = 1;
        let c = cfg(0.0);
        assert!(matches!(
            evolve_two(&c, &[&b], &DipoleSpec::radial(0.3)),
            Err(TwoDotError::NoFundamentalCrossing(_))
        ));
    }

    fn edge_band() -> QuadraticBranch {
        QuadraticBranch {
            n: 1,
            k_c: 15.0,
            omega_c: 0.75,
            a: 1e-4,
            k_lo: 10.0,
            k_hi: 20.0,
            g2: 0.8,
        }
    }

    #[test]
    fn windowed_kernel_approaches_closed_form() {
        let b = edge_band();
        let s = 1e8;
        let delta = 0.3;
        let win = Window {
            omega0: b.omega_c + delta / s,
            width: 40.0,
            freq_scale: s,
            t_max: 10.0,
            l_hat: 1.0,
        };
        let d = DipoleSpec::radial(0.3);
        let mut cfg = DynamicsConfig::minimum(delta, 10.0, 100);
        cfg.coupling = edge_coupling_strength(b.g2, b.a, s);
        let taus = [2.0, 5.0];
        let k = full_kernel(&[&b], &win, &d, &taus).unwrap();
        for (tau, kk) in taus.iter().zip(&k) {
            let exact = crate::dynamics::memory_kernel(&cfg, *tau).unwrap();
            assert!((kk - exact).norm() < 1e-3 * exact.norm(), "{tau}: {kk} vs {exact}");
        }
        // kernel is unchanged when the quantization length changes
        let k2 = full_kernel(&[&b], &Window { l_hat: 7.0, ..win }, &d, &taus).unwrap();
        for (x, y) in k.iter().zip(&k2) {
            assert!((x - y).norm() <= 1e-10 * x.norm());
        }
    }

    #[test]
    fn full_kernel_on_a_parabolic_band_is_the_edge_kernel() {
        let b = edge_band();
        let e = b.edges()[0];
        let mut cfg = DynamicsConfig::minimum(0.4, 5.0, 200);
        cfg.check_step = false;
        let full = evolve_single_full(&cfg, &e, 40.0, 1e8, &[&b], &DipoleSpec::radial(0.3)).unwrap();
        let edge = crate::dynamics::evolve_single(&cfg).unwrap();
        let dev = full.b.iter().zip(&edge.b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        assert!(dev < 1e-6, "{dev}");
        let mut wrong = e;
        wrong.kind = crate::dispersion::EdgeKind::Maximum;
        assert!(evolve_single_full(&cfg, &wrong, 40.0, 1e8, &[&b], &DipoleSpec::radial(0.3)).is_err());
    }
}
