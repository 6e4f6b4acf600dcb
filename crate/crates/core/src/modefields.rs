//! Boundary-matched field coefficients, energy normalization, field evaluation
//! and the dot-mode coupling.
//!
//! Lengths are in c/w_p. Inside (rho < R) psi = J_n(kappa_I rho), outside
//! psi = H_n^(1)(kappa_O rho); the e^{i(n phi + K z - Omega t)} factor is implied.

use crate::dispersion::{transverse, ModePoint, Regime, Sheet, Wire};
use crate::numerics::gauss_kronrod;
use crate::specfun::{cyl_seq, CylFunKind, SpecFunError};
use crate::units_media::MediaError;
use nalgebra::Matrix4;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

type C = Complex64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModeError {
    #[error("point is not a root: smallest singular value ratio {ratio:e}")]
    InconsistentRoot { ratio: f64 },
    #[error("mode at K = {k} is not normalizable: {reason}")]
    NotNormalizable { k: f64, reason: String },
    #[error("profile must be normalized before computing the coupling")]
    NotNormalized,
    #[error("invalid dipole: {0}")]
    InvalidDipole(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error(transparent)]
    SpecFun(#[from] SpecFunError),
    #[error(transparent)]
    Media(#[from] MediaError),
    #[error(transparent)]
    Dispersion(#[from] crate::dispersion::DispersionError),
}

pub type Result<T> = std::result::Result<T, ModeError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeProfile {
    pub point: ModePoint,
    pub wire: Wire,
    pub a_i: C,
    pub b_i: C,
    pub a_o: C,
    pub b_o: C,
    /// Scale applied by `normalize_mode` (1 before normalization).
    pub norm_factor: f64,
    pub quantization_length_hat: f64,
    pub normalized: bool,
    /// Relative residual of the four continuity conditions.
    pub bc_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DipoleSpec {
    /// Unit vector in the (rho, phi, z) basis.
    pub orientation: [f64; 3],
    /// Radial position of the dot, R + d.
    pub rho: f64,
    /// Free-space rate that fixes the dipole strength; rates come out in its units.
    #[serde(default = "one")]
    pub free_space_rate_beta: f64,
}

fn one() -> f64 {
    1.0
}

impl DipoleSpec {
    pub fn radial(rho: f64) -> Self {
        DipoleSpec {
            orientation: [1.0, 0.0, 0.0],
            rho,
            free_space_rate_beta: 1.0,
        }
    }

    pub fn validate(&self, wire: &Wire) -> Result<()> {
        let norm = self.orientation.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(ModeError::InvalidDipole(format!("|orientation| = {norm}")));
        }
        if !(self.rho > wire.radius) {
            return Err(ModeError::InvalidDipole("dot must sit outside the wire".into()));
        }
        if !(self.free_space_rate_beta >= 0.0) {
            return Err(ModeError::InvalidDipole("beta must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    /// (E_rho, E_phi, E_z)
    pub e: [C; 3],
    /// (H_rho, H_phi, H_z)
    pub h: [C; 3],
    pub normalized: bool,
}

struct Side {
    kappa: C,
    eps: C,
}

fn sides(p: &ModePoint, wire: &Wire) -> Result<(Side, Side)> {
    let (eps_i, eps_o, x_i, x_o) = transverse(p.k, p.omega, wire, sheet(p))?;
    Ok((
        Side {
            kappa: x_i / wire.radius,
            eps: eps_i,
        },
        Side {
            kappa: x_o / wire.radius,
            eps: eps_o,
        },
    ))
}

fn sheet(p: &ModePoint) -> Sheet {
    match p.regime {
        Regime::Bound => Sheet::Decaying,
        Regime::Nonbound => Sheet::Outgoing,
    }
}

/// Transverse field rows for psi, psi' at radius rho with coefficients (A, B).
fn components(n: u32, k: f64, omega: C, side: &Side, rho: f64, psi: C, dpsi: C, a: C, b: C) -> ([C; 3], [C; 3]) {
    let i = C::i();
    let kap = side.kappa;
    let nn = n as f64;
    let (az, bz) = (a * psi, b * psi);
    let tn = if n == 0 { C::new(0.0, 0.0) } else { nn / (kap * kap * rho) };
    let e_rho = i * k / kap * a * dpsi - omega * tn * bz;
    let e_phi = -k * tn * az - i * omega / kap * b * dpsi;
    let h_rho = omega * side.eps * tn * az + i * k / kap * b * dpsi;
    let h_phi = i * omega * side.eps / kap * a * dpsi - k * tn * bz;
    ([e_rho, e_phi, az], [h_rho, h_phi, bz])
}

pub fn solve_mode_coefficients(point: &ModePoint, wire: &Wire) -> Result<ModeProfile> {
    let n = point.n;
    let (ins, out) = sides(point, wire)?;
    let r = wire.radius;
    let si = cyl_seq(n, ins.kappa * r)?;
    let so = cyl_seq(n, out.kappa * r)?;
    let ra = si.log_deriv(CylFunKind::J, n);
    let rb = so.log_deriv(CylFunKind::H1, n);
    let w = point.omega;
    let k = point.k;
    let i = C::i();
    let nk_i = if n == 0 { C::new(0.0, 0.0) } else { n as f64 * k / (ins.kappa * ins.kappa * r) };
    let nk_o = if n == 0 { C::new(0.0, 0.0) } else { n as f64 * k / (out.kappa * out.kappa * r) };
    let z = C::new(0.0, 0.0);
    let o = C::new(1.0, 0.0);
    // unknowns are the surface amplitudes A J(x_I), B J(x_I), A H(x_O), B H(x_O)
    let m = Matrix4::new(
        o, z, -o, z,
        z, o, z, -o,
        -nk_i, -i * w / ins.kappa * ra, nk_o, i * w / out.kappa * rb,
        i * w * ins.eps / ins.kappa * ra, -nk_i, -i * w * out.eps / out.kappa * rb, nk_o,
    );
    let svd = m.svd(false, true);
    let sv = svd.singular_values;
    let vt = svd.v_t.ok_or(ModeError::Invalid("SVD failed".into()))?;
    let (imin, smin) = sv.iter().enumerate().fold((0, f64::INFINITY), |acc, (j, &s)| if s < acc.1 { (j, s) } else { acc });
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let ratio = smin / smax;
    if ratio > 1e-6 {
        return Err(ModeError::InconsistentRoot { ratio });
    }
    let v: Vec<C> = (0..4).map(|c| vt[(imin, c)].conj()).collect();

    // back to the coefficients of J_n(kappa_I rho) and H_n(kappa_O rho)
    let jr = si.value(CylFunKind::J, n);
    let hr = so.value(CylFunKind::H1, n);
    let mut coef = [v[0] / jr, v[1] / jr, v[2] / hr, v[3] / hr];
    let big = coef.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let pivot = if coef[0].norm() > 1e-12 * big { coef[0] } else { coef[1] };
    let phase = pivot.conj() / pivot.norm();
    for c in coef.iter_mut() {
        *c = *c * phase / big;
    }
    let mut prof = ModeProfile {
        point: *point,
        wire: *wire,
        a_i: coef[0],
        b_i: coef[1],
        a_o: coef[2],
        b_o: coef[3],
        norm_factor: 1.0,
        quantization_length_hat: 1.0,
        normalized: false,
        bc_residual: 0.0,
    };
    prof.bc_residual = boundary_residual(&prof)?;
    Ok(prof)
}

/// max over E_z, H_z, E_phi, H_phi of |jump| / max component magnitude at rho = R.
pub fn boundary_residual(p: &ModeProfile) -> Result<f64> {
    let r = p.wire.radius;
    let (ins, out) = sides(&p.point, &p.wire)?;
    let si = cyl_seq(p.point.n, ins.kappa * r)?;
    let so = cyl_seq(p.point.n, out.kappa * r)?;
    let n = p.point.n;
    let (ei, hi) = components(
        n, p.point.k, p.point.omega, &ins, r,
        si.value(CylFunKind::J, n), si.deriv(CylFunKind::J, n), p.a_i, p.b_i,
    );
    let (eo, ho) = components(
        n, p.point.k, p.point.omega, &out, r,
        so.value(CylFunKind::H1, n), so.deriv(CylFunKind::H1, n), p.a_o, p.b_o,
    );
    let pairs = [(ei[1], eo[1]), (ei[2], eo[2]), (hi[1], ho[1]), (hi[2], ho[2])];
    let scale = pairs
        .iter()
        .flat_map(|(a, b)| [a.norm(), b.norm()])
        .fold(0.0, f64::max)
        .max(1e-300);
    Ok(pairs.iter().map(|(a, b)| (a - b).norm()).fold(0.0, f64::max) / scale)
}

pub fn eval_fields(p: &ModeProfile, rho: f64, phi: f64) -> Result<FieldSample> {
    if !(rho >= 0.0) {
        return Err(ModeError::Invalid(format!("rho = {rho}")));
    }
    let n = p.point.n;
    let r = p.wire.radius;
    let (ins, out) = sides(&p.point, &p.wire)?;
    let rr = rho.max(1e-200);
    let (e, h) = if rho < r {
        let x = ins.kappa * rr;
        let s = cyl_seq(n, x)?;
        // J(x) via its scaled form keeps large |Im x| finite
        let f = x.im.abs().exp();
        components(n, p.point.k, p.point.omega, &ins, rr, s.j_scaled(n) * f, s.deriv_scaled(CylFunKind::J, n) * f, p.a_i, p.b_i)
    } else {
        let x = out.kappa * rr;
        let s = cyl_seq(n, x)?;
        let f = (C::i() * x).exp();
        components(n, p.point.k, p.point.omega, &out, rr, s.h_scaled(n) * f, s.deriv_scaled(CylFunKind::H1, n) * f, p.a_o, p.b_o)
    };
    let az = C::new(0.0, n as f64 * phi).exp();
    let sc = p.norm_factor;
    Ok(FieldSample {
        e: e.map(|c| c * az * sc),
        h: h.map(|c| c * az * sc),
        normalized: p.normalized,
    })
}

fn energy_density(p: &ModeProfile, rho: f64, eps: f64) -> f64 {
    match eval_fields(p, rho, 0.0) {
        Ok(f) => eps * f.e.iter().map(|c| c.norm_sqr()).sum::<f64>() * 2.0 * PI * rho,
        Err(_) => f64::NAN,
    }
}

/// Cross-section integral of eps |E|^2 2 pi rho, split into (inside, outside).
pub fn energy_integral(p: &ModeProfile) -> Result<(f64, f64)> {
    if p.point.regime != Regime::Bound {
        return Err(ModeError::NotNormalizable {
            k: p.point.k,
            reason: "non-bound mode radiates".into(),
        });
    }
    let r = p.wire.radius;
    let (ins, out) = sides(&p.point, &p.wire)?;
    let (eps_i, eps_o) = (ins.eps.re, out.eps.re);
    let (inside, _) = gauss_kronrod(|x| energy_density(p, x, eps_i), 0.0, r, 1e-13, 0.0);
    let q = out.kappa.im;
    if !(q > 0.0) {
        return Err(ModeError::NotNormalizable {
            k: p.point.k,
            reason: "exterior field does not decay".into(),
        });
    }
    // integrand falls like e^{-2 q rho}; stop 40 e-folds out, add the tail analytically
    let rc = r + 40.0 / (2.0 * q);
    let mut outside = 0.0;
    let mut a = r;
    while a < rc {
        let b = (2.0 * a).min(a + 4.0 / q).min(rc);
        outside += gauss_kronrod(|x| energy_density(p, x, eps_o), a, b, 1e-13, 0.0).0;
        a = b;
    }
    outside += energy_density(p, rc, eps_o) / (2.0 * q);
    if !(inside.is_finite() && outside.is_finite()) {
        return Err(ModeError::NotNormalizable {
            k: p.point.k,
            reason: "integral diverged".into(),
        });
    }
    Ok((inside, outside))
}

/// Scale so that L_hat * integral(eps |E|^2 2 pi rho drho) = Omega.
pub fn normalize_mode(p: &ModeProfile) -> Result<ModeProfile> {
    normalize_mode_with_length(p, p.quantization_length_hat)
}

pub fn normalize_mode_with_length(p: &ModeProfile, l_hat: f64) -> Result<ModeProfile> {
    if !(l_hat > 0.0) {
        return Err(ModeError::Invalid("quantization length must be > 0".into()));
    }
    let base = ModeProfile {
        norm_factor: 1.0,
        ..*p
    };
    let (inside, outside) = energy_integral(&base)?;
    let total = inside + outside;
    if !(total > 0.0) {
        return Err(ModeError::NotNormalizable {
            k: p.point.k,
            reason: format!("energy integral {total:e} is not positive"),
        });
    }
    let target = p.point.omega.re;
    Ok(ModeProfile {
        norm_factor: (target / (l_hat * total)).sqrt(),
        quantization_length_hat: l_hat,
        normalized: true,
        ..base
    })
}

/// Dimensionless coupling G with |G|^2 = |g|^2 / (beta w_p); the golden-rule rate is
/// 2 L_hat |G|^2 / |dOmega/dK| in units of beta. `omega0` is the dot frequency.
pub fn coupling_g_at(p: &ModeProfile, d: &DipoleSpec, omega0: f64) -> Result<C> {
    if !p.normalized {
        return Err(ModeError::NotNormalized);
    }
    d.validate(&p.wire)?;
    let f = eval_fields(p, d.rho, 0.0)?;
    let mu_e: C = f.e.iter().zip(d.orientation.iter()).map(|(e, u)| e * *u).sum();
    let n_o = p.wire.n_out(omega0);
    let pref = (3.0 * PI * d.free_space_rate_beta / (n_o * omega0.powi(3))).sqrt();
    Ok(pref * mu_e)
}

pub fn coupling_g(p: &ModeProfile, d: &DipoleSpec) -> Result<C> {
    coupling_g_at(p, d, p.point.omega.re)
}

/// Solve and normalize in one go.
pub fn normalized_profile(point: &ModePoint, wire: &Wire, l_hat: f64) -> Result<ModeProfile> {
    let p = solve_mode_coefficients(point, wire)?;
    normalize_mode_with_length(&p, l_hat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispersion::{find_root_real, scan_bound_roots};

    fn wire() -> Wire {
        Wire::default()
    }

    fn root(n: u32, k: f64) -> ModePoint {
        scan_bound_roots(n, k, &wire())[0]
    }

    #[test]
    fn n0_is_pure_tm() {
        let p = solve_mode_coefficients(&root(0, 5.0), &wire()).unwrap();
        let big = [p.a_i, p.a_o].iter().map(|c| c.norm()).fold(0.0, f64::max);
        assert!(p.b_i.norm() <= 1e-10 * big && p.b_o.norm() <= 1e-10 * big);
        assert!(p.a_i.im == 0.0 && p.a_i.re > 0.0);
        let f = eval_fields(&p, 0.3, 0.4).unwrap();
        assert!(f.e[1].norm() < 1e-12 * f.e[2].norm());
        assert!(f.h[0].norm() < 1e-12 * f.e[2].norm());
    }

    #[test]
    fn n1_boundary_residual() {
        let pt = find_root_real(1, 3.0, (0.77, 0.78), &wire()).unwrap();
        let p = solve_mode_coefficients(&pt, &wire()).unwrap();
        assert!(p.bc_residual <= 1e-8, "{}", p.bc_residual);
        let r = wire().radius;
        let a = eval_fields(&p, r - 1e-6, 0.0).unwrap();
        let b = eval_fields(&p, r + 1e-6, 0.0).unwrap();
        assert!((a.e[2] - b.e[2]).norm() < 1e-4 * a.e[2].norm());
    }

    #[test]
    fn not_a_root_is_rejected() {
        let mut pt = root(0, 5.0);
        pt.omega += 0.01;
        assert!(matches!(
            solve_mode_coefficients(&pt, &wire()),
            Err(ModeError::InconsistentRoot { .. })
        ));
    }

    #[test]
    fn normalization_hits_target_and_is_idempotent() {
        let p = solve_mode_coefficients(&root(0, 5.0), &wire()).unwrap();
        let q = normalize_mode(&p).unwrap();
        let (a, b) = energy_integral(&q).unwrap();
        let w = q.point.omega.re;
        assert!(((a + b) - w).abs() < 1e-6 * w);
        let q2 = normalize_mode(&q).unwrap();
        assert!((q2.norm_factor - q.norm_factor).abs() < 1e-12 * q.norm_factor);
        // scaling the raw coefficients does not change the normalized field
        let scaled = ModeProfile {
            a_i: p.a_i * C::new(0.0, 3.0),
            b_i: p.b_i * C::new(0.0, 3.0),
            a_o: p.a_o * C::new(0.0, 3.0),
            b_o: p.b_o * C::new(0.0, 3.0),
            ..p
        };
        let qs = normalize_mode(&scaled).unwrap();
        let f1 = eval_fields(&q, 0.3, 0.0).unwrap().e[0].norm();
        let f2 = eval_fields(&qs, 0.3, 0.0).unwrap().e[0].norm();
        assert!((f1 - f2).abs() < 1e-10 * f1);
    }

    #[test]
    fn trapezoid_oracle_for_energy_integral() {
        let p = solve_mode_coefficients(&root(0, 5.0), &wire()).unwrap();
        let (a, b) = energy_integral(&p).unwrap();
        let (ins, out) = sides(&p.point, &p.wire).unwrap();
        let r = p.wire.radius;
        let trap = |lo: f64, hi: f64, m: usize, eps: f64| {
            let h = (hi - lo) / m as f64;
            (0..=m)
                .map(|j| {
                    let w = if j == 0 || j == m { 0.5 } else { 1.0 };
                    w * energy_density(&p, lo + j as f64 * h, eps)
                })
                .sum::<f64>()
                * h
        };
        let ta = trap(0.0, r * (1.0 - 1e-15), 4000, ins.eps.re);
        let tb = trap(r, r + 40.0 / out.kappa.im, 200_000, out.eps.re);
        assert!((ta - a).abs() < 1e-6 * a.abs());
        assert!((tb - b).abs() < 1e-6 * b.abs());
    }

    #[test]
    fn nonbound_is_not_normalizable() {
        let pt = crate::dispersion::find_root_complex(1, 1.5, C::new(0.783, -0.013), &wire()).unwrap();
        let p = ModeProfile {
            point: pt,
            wire: wire(),
            a_i: C::new(1.0, 0.0),
            b_i: C::new(0.0, 0.0),
            a_o: C::new(1.0, 0.0),
            b_o: C::new(0.0, 0.0),
            norm_factor: 1.0,
            quantization_length_hat: 1.0,
            normalized: false,
            bc_residual: 0.0,
        };
        assert!(matches!(normalize_mode(&p), Err(ModeError::NotNormalizable { .. })));
    }

    #[test]
    fn n1_field_decays_outside() {
        let p = normalize_mode(&solve_mode_coefficients(&root(1, 3.0), &wire()).unwrap()).unwrap();
        let mut prev = f64::INFINITY;
        for j in 0..200 {
            let rho = 0.2 + j as f64 * 0.05;
            let f = eval_fields(&p, rho, 0.0).unwrap();
            let m = f.e.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            assert!(m < prev);
            prev = m;
        }
    }

    #[test]
    fn coupling_geometry() {
        let w = wire();
        let p = normalize_mode(&solve_mode_coefficients(&root(0, 5.0), &w).unwrap()).unwrap();
        let near = coupling_g(&p, &DipoleSpec::radial(0.3)).unwrap();
        let far = coupling_g(&p, &DipoleSpec::radial(0.5)).unwrap();
        assert!(near.norm() > far.norm() && far.norm() > 0.0);
        // n = 0 TM mode has no azimuthal electric field
        let phi_dip = DipoleSpec {
            orientation: [0.0, 1.0, 0.0],
            ..DipoleSpec::radial(0.3)
        };
        assert!(coupling_g(&p, &phi_dip).unwrap().norm() < 1e-12 * near.norm());
        let raw = solve_mode_coefficients(&root(0, 5.0), &w).unwrap();
        assert_eq!(coupling_g(&raw, &DipoleSpec::radial(0.3)), Err(ModeError::NotNormalized));
    }

    #[test]
    fn coupling_scales_with_length() {
        let raw = solve_mode_coefficients(&root(0, 5.0), &wire()).unwrap();
        let d = DipoleSpec::radial(0.3);
        let g1 = coupling_g(&normalize_mode_with_length(&raw, 1.0).unwrap(), &d).unwrap();
        let g10 = coupling_g(&normalize_mode_with_length(&raw, 10.0).unwrap(), &d).unwrap();
        assert!((g1.norm_sqr() - 10.0 * g10.norm_sqr()).abs() < 1e-12 * g1.norm_sqr());
    }

    #[test]
    fn pinned_coupling_at_k5() {
        let w = wire();
        let p = normalize_mode(&solve_mode_coefficients(&root(0, 5.0), &w).unwrap()).unwrap();
        let g = coupling_g(&p, &DipoleSpec::radial(0.3)).unwrap();
        assert!(g.re.abs() < 1e-10);
        assert!((g.im - 6.708_078_181_543).abs() < 1e-8);
    }
}
