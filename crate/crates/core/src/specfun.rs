//! Cylinder functions J_n, Y_n, H_n^(1) of integer order and complex argument.
//!
//! Everything is computed in the first quadrant and mapped out by reflection.
//! Small |z| uses power series, larger |z| gets H_0, H_1 from a steepest-descent
//! integral (trapezoid rule, spectrally accurate) and J from a continued
//! fraction plus the J/H Wronskian. Sequences are kept exponentially scaled:
//! J, Y by e^{-|Im z|}, H1 by e^{-iz}.

use num_complex::Complex64;
use std::f64::consts::{FRAC_2_PI, PI};
use thiserror::Error;

type C = Complex64;

pub const MAX_ORDER: u32 = 60;
pub const MAX_ABS_Z: f64 = 1.0e4;

const SERIES_RADIUS: f64 = 2.0;
const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CylFunKind {
    J,
    Y,
    H1,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpecFunError {
    #[error("singular at z = 0 for {0:?}")]
    Singularity(CylFunKind),
    #[error("outside supported domain: n = {n}, z = {z}")]
    Domain { n: u32, z: C },
    #[error("result overflows for n = {n}, z = {z}")]
    Overflow { n: u32, z: C },
}

/// Scaled values J_k e^{-|Im z|}, H1_k e^{-iz} for k = 0..=nmax+1.
#[derive(Debug, Clone)]
pub struct CylSeq {
    z: C,
    j: Vec<C>,
    h: Vec<C>,
}

impl CylSeq {
    pub fn z(&self) -> C {
        self.z
    }

    pub fn max_order(&self) -> u32 {
        (self.j.len() - 2) as u32
    }

    pub fn j_scaled(&self, n: u32) -> C {
        self.j[n as usize]
    }

    pub fn h_scaled(&self, n: u32) -> C {
        self.h[n as usize]
    }

    pub fn y_scaled(&self, n: u32) -> C {
        // Y = -i (H1 - J); bring H1 to the J scaling first
        let z = self.z;
        let f = (C::i() * z).exp() * (-z.im.abs()).exp();
        -C::i() * (self.h[n as usize] * f - self.j[n as usize])
    }

    pub fn scaled(&self, kind: CylFunKind, n: u32) -> C {
        match kind {
            CylFunKind::J => self.j_scaled(n),
            CylFunKind::Y => self.y_scaled(n),
            CylFunKind::H1 => self.h_scaled(n),
        }
    }

    /// Derivative in the same scaling as `scaled`.
    pub fn deriv_scaled(&self, kind: CylFunKind, n: u32) -> C {
        let up = self.scaled(kind, n + 1);
        if n == 0 {
            -up
        } else {
            0.5 * (self.scaled(kind, n - 1) - up)
        }
    }

    /// Logarithmic derivative f'_n / f_n, scaling-free.
    pub fn log_deriv(&self, kind: CylFunKind, n: u32) -> C {
        cdiv(self.deriv_scaled(kind, n), self.scaled(kind, n))
    }

    fn unscale(&self, kind: CylFunKind, v: C) -> C {
        match kind {
            CylFunKind::J | CylFunKind::Y => v * self.z.im.abs().exp(),
            CylFunKind::H1 => v * (C::i() * self.z).exp(),
        }
    }

    pub fn value(&self, kind: CylFunKind, n: u32) -> C {
        self.unscale(kind, self.scaled(kind, n))
    }

    pub fn deriv(&self, kind: CylFunKind, n: u32) -> C {
        self.unscale(kind, self.deriv_scaled(kind, n))
    }
}

pub fn cyl_seq(nmax: u32, z: C) -> Result<CylSeq, SpecFunError> {
    if nmax > MAX_ORDER + 1 || !(z.norm() <= MAX_ABS_Z) {
        return Err(SpecFunError::Domain { n: nmax, z });
    }
    let top = nmax as usize + 1;
    if z == C::new(0.0, 0.0) {
        let mut j = vec![C::new(0.0, 0.0); top + 1];
        j[0] = C::new(1.0, 0.0);
        let h = vec![C::new(f64::NAN, f64::NAN); top + 1];
        return Ok(CylSeq { z, j, h });
    }

    // first-quadrant image
    let w = C::new(z.re.abs(), z.im.abs());
    let (jw, hw) = first_quadrant(top, w);

    let (j, h) = if z.re >= 0.0 && z.im >= 0.0 {
        (jw, hw)
    } else if z.re < 0.0 && z.im >= 0.0 {
        q2(&jw, &hw)
    } else if z.re >= 0.0 {
        // z = conj(w)
        let j: Vec<C> = jw.iter().map(|v| v.conj()).collect();
        let y: Vec<C> = (0..=top).map(|k| y_from(w, jw[k], hw[k]).conj()).collect();
        let h = lower_h(z, &j, &y);
        (j, h)
    } else {
        // z = conj(z2) with z2 = -conj(w) in the second quadrant
        let (j2, h2) = q2(&jw, &hw);
        let z2 = z.conj();
        let j: Vec<C> = j2.iter().map(|v| v.conj()).collect();
        let y: Vec<C> = (0..=top).map(|k| y_from(z2, j2[k], h2[k]).conj()).collect();
        let h = lower_h(z, &j, &y);
        (j, h)
    };
    Ok(CylSeq { z, j, h })
}

fn y_from(z: C, j: C, h: C) -> C {
    let f = (C::i() * z).exp() * (-z.im.abs()).exp();
    -C::i() * (h * f - j)
}

fn q2(jw: &[C], hw: &[C]) -> (Vec<C>, Vec<C>) {
    let sgn = |k: usize| if k % 2 == 0 { 1.0 } else { -1.0 };
    let j = jw.iter().enumerate().map(|(k, v)| sgn(k) * v.conj()).collect();
    let h = hw.iter().enumerate().map(|(k, v)| -sgn(k) * v.conj()).collect();
    (j, h)
}

// lower half plane: H1 = J + iY, rescaled from e^{-|Im z|} to e^{-iz}
fn lower_h(z: C, j: &[C], y: &[C]) -> Vec<C> {
    let ph = C::new(0.0, -z.re).exp();
    j.iter().zip(y).map(|(a, b)| (a + C::i() * b) * ph).collect()
}

fn first_quadrant(top: usize, w: C) -> (Vec<C>, Vec<C>) {
    let scale_j = (-w.im).exp();
    let scale_h = (-C::i() * w).exp();
    let mut h = vec![C::new(0.0, 0.0); top + 1];
    let mut j = vec![C::new(0.0, 0.0); top + 1];

    if w.norm() < SERIES_RADIUS {
        let (h0, h1) = hankel01_series(w);
        h[0] = h0 * scale_h;
        h[1] = h1 * scale_h;
        for (k, jk) in j.iter_mut().enumerate() {
            *jk = j_series(k as u32, w) * scale_j;
        }
    } else {
        let (h0, h1) = hankel01_integral(w);
        h[0] = h0;
        h[1] = h1;
    }
    for k in 1..top {
        h[k + 1] = (2.0 * k as f64 / w) * h[k] - h[k - 1];
    }

    if w.norm() >= SERIES_RADIUS {
        let n = top;
        let r = cf1_ratio(n as u32, w);
        // J_n (r H_n - H_{n+1}) = 2i/(pi z), written in scaled form
        let hn = h[n];
        let hn1 = (2.0 * n as f64 / w) * h[n] - h[n - 1];
        let wr = C::new(0.0, FRAC_2_PI) / w * C::new(0.0, -w.re).exp();
        j[n] = cdiv(wr, r * hn - hn1);
        let mut jup = r * j[n];
        for k in (1..=n).rev() {
            let jm = (2.0 * k as f64 / w) * j[k] - jup;
            jup = j[k];
            j[k - 1] = jm;
        }
    }
    (j, h)
}

/// Complex division without the overflow of the textbook |b|^2 form.
pub(crate) fn cdiv(a: C, b: C) -> C {
    if b.re.abs() >= b.im.abs() {
        let r = b.im / b.re;
        let den = b.re + b.im * r;
        C::new((a.re + a.im * r) / den, (a.im - a.re * r) / den)
    } else {
        let r = b.re / b.im;
        let den = b.re * r + b.im;
        C::new((a.re * r + a.im) / den, (a.im * r - a.re) / den)
    }
}

fn j_series(n: u32, z: C) -> C {
    let half = 0.5 * z;
    let mut lead = C::new(1.0, 0.0);
    for k in 1..=n {
        lead *= half / k as f64;
    }
    let q = -half * half;
    let mut term = C::new(1.0, 0.0);
    let mut sum = term;
    for k in 1..200 {
        term *= q / (k as f64 * (n + k) as f64);
        sum += term;
        if term.norm() <= 1e-17 * sum.norm() {
            break;
        }
    }
    lead * sum
}

fn hankel01_series(z: C) -> (C, C) {
    let half = 0.5 * z;
    let q = -half * half;
    let lg = half.ln() + EULER_GAMMA;

    let j0 = j_series(0, z);
    let j1 = j_series(1, z);

    // Y0 = (2/pi)(ln(z/2)+gamma) J0 + (2/pi) sum (-1)^{k+1} H_k (z^2/4)^k / (k!)^2
    let mut term = C::new(1.0, 0.0);
    let mut harm = 0.0;
    let mut s0 = C::new(0.0, 0.0);
    for k in 1..200 {
        term *= q / (k as f64 * k as f64);
        harm += 1.0 / k as f64;
        let add = -term * harm;
        s0 += add;
        if add.norm() <= 1e-17 * s0.norm() {
            break;
        }
    }
    let y0 = FRAC_2_PI * (lg * j0 + s0);

    // Y1 = -2/(pi z) + (2/pi) ln(z/2) J1
    //      - (1/pi) sum (-1)^k [psi(k+1)+psi(k+2)] (z/2)^{2k+1} / (k!(k+1)!)
    let mut term = half;
    let mut s1 = C::new(0.0, 0.0);
    let mut hk = 0.0;
    for k in 0..200 {
        if k > 0 {
            term *= q / (k as f64 * (k + 1) as f64);
            hk += 1.0 / k as f64;
        }
        let psi_sum = 2.0 * (-EULER_GAMMA) + 2.0 * hk + 1.0 / (k + 1) as f64;
        let add = term * psi_sum;
        s1 += add;
        if k > 0 && add.norm() <= 1e-17 * s1.norm() {
            break;
        }
    }
    let y1 = -FRAC_2_PI / z + FRAC_2_PI * half.ln() * j1 - s1 / PI;

    (j0 + C::i() * y0, j1 + C::i() * y1)
}

/// e^{-iz} H_nu(z) for nu = 0, 1, first quadrant, |z| >= 2.
fn hankel01_integral(z: C) -> (C, C) {
    const H: f64 = 0.1;
    const NODES: usize = 66;
    let inv = C::i() / (2.0 * z);
    let mut i0 = C::new(0.0, 0.0);
    let mut i1 = C::new(0.0, 0.0);
    for k in 0..NODES {
        let s = k as f64 * H;
        let s2 = s * s;
        let wgt = if k == 0 { 0.5 * H } else { H } * 2.0 * (-s2).exp();
        let root = (1.0 + inv * s2).sqrt();
        i0 += wgt / root;
        i1 += wgt * s2 * root;
    }
    let pre = (2.0 / (PI * z)).sqrt();
    let sqrt_pi = PI.sqrt();
    let h0 = pre * C::new(0.0, -0.25 * PI).exp() * i0 / sqrt_pi;
    let h1 = pre * C::new(0.0, -0.75 * PI).exp() * i1 / (0.5 * sqrt_pi);
    (h0, h1)
}

/// J_{n+1}/J_n by modified Lentz.
fn cf1_ratio(n: u32, z: C) -> C {
    let tiny = 1e-150;
    let inv = cdiv(C::new(1.0, 0.0), z);
    let mut f = C::new(tiny, 0.0);
    let mut c = f;
    let mut d = C::new(0.0, 0.0);
    let mut k = n + 1;
    let mut first = true;
    for _ in 0..100_000 {
        let b = 2.0 * k as f64 * inv;
        let a = if first { C::new(1.0, 0.0) } else { C::new(-1.0, 0.0) };
        first = false;
        d = b + a * d;
        if d.norm() < tiny {
            d = C::new(tiny, 0.0);
        }
        c = b + cdiv(a, c);
        if c.norm() < tiny {
            c = C::new(tiny, 0.0);
        }
        d = cdiv(C::new(1.0, 0.0), d);
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).norm() < 1e-16 {
            break;
        }
        k += 1;
    }
    f
}

fn check_args(kind: CylFunKind, n: u32, z: C) -> Result<(), SpecFunError> {
    if n > MAX_ORDER || !(z.norm() <= MAX_ABS_Z) {
        return Err(SpecFunError::Domain { n, z });
    }
    if z == C::new(0.0, 0.0) && kind != CylFunKind::J {
        return Err(SpecFunError::Singularity(kind));
    }
    Ok(())
}

fn finite(v: C, n: u32, z: C) -> Result<C, SpecFunError> {
    if v.re.is_finite() && v.im.is_finite() {
        Ok(v)
    } else {
        Err(SpecFunError::Overflow { n, z })
    }
}

pub fn cyl_fun(kind: CylFunKind, n: u32, z: C) -> Result<C, SpecFunError> {
    check_args(kind, n, z)?;
    let seq = cyl_seq(n, z)?;
    finite(seq.value(kind, n), n, z)
}

pub fn cyl_fun_deriv(kind: CylFunKind, n: u32, z: C) -> Result<C, SpecFunError> {
    check_args(kind, n, z)?;
    let seq = cyl_seq(n, z)?;
    finite(seq.deriv(kind, n), n, z)
}

/// Scaled value: J, Y times e^{-|Im z|}, H1 times e^{-iz}.
pub fn cyl_fun_scaled(kind: CylFunKind, n: u32, z: C) -> Result<C, SpecFunError> {
    check_args(kind, n, z)?;
    let seq = cyl_seq(n, z)?;
    finite(seq.scaled(kind, n), n, z)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C {
        C::new(re, im)
    }

    fn rel(a: C, b: C) -> f64 {
        (a - b).norm() / b.norm().max(1e-300)
    }

    #[test]
    fn trivial_values() {
        assert_eq!(cyl_fun(CylFunKind::J, 0, c(0.0, 0.0)).unwrap(), c(1.0, 0.0));
        assert_eq!(cyl_fun(CylFunKind::J, 1, c(0.0, 0.0)).unwrap(), c(0.0, 0.0));
        let d = cyl_fun_deriv(CylFunKind::J, 1, c(0.0, 0.0)).unwrap();
        assert!((d - c(0.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn series_oracles() {
        let j0 = cyl_fun(CylFunKind::J, 0, c(1.0, 0.0)).unwrap();
        assert!((j0.re - 0.765_197_686_558).abs() < 1e-12);
        let d = cyl_fun_deriv(CylFunKind::J, 0, c(2.0, 0.0)).unwrap();
        assert!((d.re + 0.576_724_807_757).abs() < 1e-12);
    }

    #[test]
    fn hankel_derivative_is_linear() {
        let z = c(1.0, 1.0);
        let h = cyl_fun_deriv(CylFunKind::H1, 1, z).unwrap();
        let j = cyl_fun_deriv(CylFunKind::J, 1, z).unwrap();
        let y = cyl_fun_deriv(CylFunKind::Y, 1, z).unwrap();
        assert!(rel(h, j + C::i() * y) < 1e-13);
    }

    #[test]
    fn errors() {
        assert_eq!(
            cyl_fun(CylFunKind::Y, 0, c(0.0, 0.0)),
            Err(SpecFunError::Singularity(CylFunKind::Y))
        );
        assert!(matches!(
            cyl_fun(CylFunKind::J, 61, c(1.0, 0.0)),
            Err(SpecFunError::Domain { .. })
        ));
        assert!(matches!(
            cyl_fun(CylFunKind::J, 0, c(2e4, 0.0)),
            Err(SpecFunError::Domain { .. })
        ));
        assert!(matches!(
            cyl_fun(CylFunKind::J, 0, c(0.0, 900.0)),
            Err(SpecFunError::Overflow { .. })
        ));
        assert!(cyl_fun_scaled(CylFunKind::J, 0, c(0.0, 900.0)).is_ok());
    }

    #[test]
    fn continuous_across_positive_axis() {
        for &x in &[0.5, 1.9, 2.1, 7.0, 40.0] {
            for kind in [CylFunKind::J, CylFunKind::Y, CylFunKind::H1] {
                let a = cyl_fun(kind, 2, c(x, 1e-15)).unwrap();
                let b = cyl_fun(kind, 2, c(x, -1e-15)).unwrap();
                let scale = cyl_fun(CylFunKind::H1, 2, c(x, 0.0)).unwrap().norm();
                assert!((a - b).norm() < 1e-12 * scale, "{kind:?} at {x}");
            }
        }
    }

    #[test]
    fn switch_radius_is_seamless() {
        for &th in &[0.0, 0.4, 1.2, 2.5, -2.0] {
            let zi = C::from_polar(2.0 - 1e-15, th);
            let zo = C::from_polar(2.0 + 1e-15, th);
            for n in [0, 1, 5] {
                for kind in [CylFunKind::J, CylFunKind::Y, CylFunKind::H1] {
                    let a = cyl_fun(kind, n, zi).unwrap();
                    let b = cyl_fun(kind, n, zo).unwrap();
                    assert!(rel(a, b) < 1e-11, "{kind:?} n={n} th={th}: {a} {b}");
                }
            }
        }
    }

    #[test]
    fn hankel_decays_on_imaginary_axis() {
        let mut prev = f64::INFINITY;
        for k in 0..=990 {
            let y = 1.0 + k as f64 * 0.1;
            let v = cyl_fun(CylFunKind::H1, 0, c(0.0, y)).unwrap().norm();
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn conjugation() {
        for &(x, y) in &[(0.3, 0.7), (3.0, -2.0), (-5.0, 1.0), (12.0, 30.0)] {
            for n in 0..6 {
                let a = cyl_fun(CylFunKind::J, n, c(x, -y)).unwrap();
                let b = cyl_fun(CylFunKind::J, n, c(x, y)).unwrap().conj();
                assert!(rel(a, b) < 1e-13);
            }
        }
    }
}
