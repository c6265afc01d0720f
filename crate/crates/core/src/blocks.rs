//! Building blocks: the triangle and trapezoid functions on `𝕋`, Fejér
//! kernels, the function `φ` vanishing on an interval around `1/2`, the
//! nonnegative bump `σ` on a Landau set and smooth plateau cutoffs.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::check::Check;
use crate::norms::{
    ap_norm_torus, ft_compact, grid_step, sinc, LandauSet, LineFunction, NormError, PeriodicSeries, Profile, Tail,
};
use crate::quad;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BlockError {
    #[error("parameter {name} = {value} is out of range")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("parameters must satisfy 0 < h < h' < h'' < 1")]
    ParameterOrder,
    #[error("property {0} violated")]
    PropertyViolation(&'static str),
    #[error(transparent)]
    Norm(#[from] NormError),
}

fn c(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// Truncation order used for the closed-form periodic blocks.
pub fn default_order(h: f64) -> usize {
    ((64.0 / h).ceil() as usize).max(256)
}

/// `Δ̂_h(n) = h·sinc²(nh)`.
pub fn triangle_coeff(h: f64, n: i64) -> f64 {
    h * sinc(n as f64 * h).powi(2)
}

/// Tail of the triangle series beyond order `n`: `Σ_{|k|>n} Δ̂_h(k) ≤ 2/(π²h n)`
/// and every discarded coefficient is at most `1/(π²h(n+1)²)`.
fn triangle_tail(h: f64, n: usize, partial: f64) -> Tail {
    let analytic = 2.0 / (PI * PI * h * n.max(1) as f64);
    let exact = (1.0 - partial).max(0.0) + 1e-14;
    Tail { l1: analytic.min(exact), sup: 1.0 / (PI * PI * h * (n as f64 + 1.0).powi(2)) }
}

fn check_range(name: &'static str, v: f64, hi: f64) -> Result<(), BlockError> {
    if v > 0.0 && v < hi {
        Ok(())
    } else {
        Err(BlockError::OutOfRange { name, value: v })
    }
}

/// The 1-periodic unit-height triangle supported on `(-h, h) + ℤ`.
pub fn triangle(h: f64) -> Result<PeriodicSeries, BlockError> {
    triangle_with_order(h, default_order(h))
}

pub fn triangle_with_order(h: f64, n: usize) -> Result<PeriodicSeries, BlockError> {
    check_range("h", h, 0.5)?;
    let s = PeriodicSeries::from_fn(n, Tail::EXACT, |k| c(triangle_coeff(h, k)));
    let partial: f64 = s.coeffs().iter().map(|a| a.re).sum();
    Ok(PeriodicSeries::new(s.coeffs().to_vec(), triangle_tail(h, n, partial)))
}

/// Pointwise value of the triangle, periodized.
pub fn triangle_value(h: f64, t: f64) -> f64 {
    let d = t - t.round();
    (1.0 - d.abs() / h).max(0.0)
}

/// `τ_h(t) = Δ_h(t + h) + Δ_h(t) + Δ_h(t - h)`.
pub fn trapezoid(h: f64) -> Result<PeriodicSeries, BlockError> {
    trapezoid_with_order(h, default_order(h))
}

pub fn trapezoid_with_order(h: f64, n: usize) -> Result<PeriodicSeries, BlockError> {
    check_range("h", h, 0.25)?;
    let tri = triangle_with_order(h, n)?;
    let t = tri.tail();
    let s = tri.weighted(|k| 1.0 + 2.0 * (2.0 * PI * k as f64 * h).cos());
    Ok(PeriodicSeries::new(s.coeffs().to_vec(), Tail { l1: 3.0 * t.l1, sup: 3.0 * t.sup }))
}

pub fn trapezoid_value(h: f64, t: f64) -> f64 {
    triangle_value(h, t + h) + triangle_value(h, t) + triangle_value(h, t - h)
}

/// The Fejér kernel `K_N` with coefficients `1 - |n|/(N+1)`.
pub fn fejer(n: usize) -> PeriodicSeries {
    PeriodicSeries::from_fn(n, Tail::EXACT, |k| c(1.0 - k.unsigned_abs() as f64 / (n as f64 + 1.0)))
}

/// `φ̂(n) = δ_{n0} + Δ̂_h(n)(3 - (-1)^n(1 + 2cos 2πnh))`.
pub fn phi_coeff(h: f64, n: i64) -> f64 {
    let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
    let base = triangle_coeff(h, n) * (3.0 - sign * (1.0 + 2.0 * (2.0 * PI * n as f64 * h).cos()));
    if n == 0 {
        1.0 + base
    } else {
        base
    }
}

/// `φ(t) = 1 + 3Δ_h(t) - τ_h(t - 1/2)`: nonnegative coefficients, mean one,
/// zero set exactly `[1/2 - h, 1/2 + h] + ℤ`.
pub fn phi(h: f64) -> Result<PeriodicSeries, BlockError> {
    phi_with_order(h, default_order(h))
}

pub fn phi_with_order(h: f64, n: usize) -> Result<PeriodicSeries, BlockError> {
    check_range("h", h, 1.0 / 6.0)?;
    let s = PeriodicSeries::from_fn(n, Tail::EXACT, |k| c(phi_coeff(h, k)));
    let partial: f64 = s.coeffs().iter().map(|a| a.re).sum();
    let tri = triangle_tail(h, n, 0.0);
    let l1 = ((4.0 - partial).max(0.0) + 1e-13).min(6.0 * tri.l1);
    let out = PeriodicSeries::new(s.coeffs().to_vec(), Tail { l1, sup: 6.0 * tri.sup });
    if (out.coeff(0).re - 1.0).abs() > 1e-12 || out.coeffs().iter().any(|a| a.re < 0.0) {
        return Err(BlockError::PropertyViolation("itp:i"));
    }
    let zero = phi_zero_set_residual(h, grid_step(h));
    if zero.inside > 1e-12 || zero.outside_min <= 0.0 {
        return Err(BlockError::PropertyViolation("itp:ii"));
    }
    Ok(out)
}

pub fn phi_value(h: f64, t: f64) -> f64 {
    1.0 + 3.0 * triangle_value(h, t) - trapezoid_value(h, t - 0.5)
}

/// `max |φ|` inside the zero interval and `min φ` at distance at least two
/// grid steps outside it, sampled on `dx·ℤ ∩ [0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeroSet {
    pub inside: f64,
    pub outside_min: f64,
}

pub fn phi_zero_set_residual(h: f64, dx: f64) -> ZeroSet {
    let n = (1.0 / dx).round() as i64;
    let mut inside = 0.0f64;
    let mut outside_min = f64::INFINITY;
    for i in 0..n {
        let t = i as f64 * dx;
        let d = (t - 0.5).abs();
        let v = phi_value(h, t);
        if d <= h {
            inside = inside.max(v.abs());
        } else if d >= h + 2.0 * dx {
            outside_min = outside_min.min(v);
        }
    }
    ZeroSet { inside, outside_min }
}

/// Property table for `φ`.
pub fn phi_checks(h: f64, ps: &[f64]) -> Result<Vec<Check>, BlockError> {
    let f = phi(h)?;
    let mut out = vec![
        Check::at_most(format!("phi h={h} |hat(0) - 1|"), (f.coeff(0).re - 1.0).abs(), 1e-12),
        Check::at_least(
            format!("phi h={h} min coefficient"),
            f.coeffs().iter().map(|a| a.re).fold(f64::INFINITY, f64::min),
            0.0,
        ),
    ];
    let z = phi_zero_set_residual(h, grid_step(h));
    out.push(Check::at_most(format!("phi h={h} max |phi| on zero interval"), z.inside, 1e-12));
    out.push(Check::above(format!("phi h={h} min phi off zero interval"), z.outside_min, 0.0));
    let g = f.sub(&PeriodicSeries::constant(1.0));
    for &p in ps {
        let n = ap_norm_torus(&g, p)?;
        out.push(Check::at_most(
            format!("phi h={h} p={p} ||phi - 1||"),
            n.upper(),
            6.0 * h.powf((p - 1.0) / p) + 1e-9,
        ));
    }
    Ok(out)
}

/// Inequalities for the triangle and trapezoid at `(h, p)`.
pub fn triangle_trapezoid_checks(h: f64, ps: &[f64]) -> Result<Vec<Check>, BlockError> {
    let mut out = Vec::new();
    let tri = triangle(h)?;
    out.push(Check::at_most(format!("triangle h={h} |hat(0) - h|"), (tri.coeff(0).re - h).abs(), 1e-12));
    for &p in ps {
        let n = ap_norm_torus(&tri, p)?;
        out.push(Check::at_most(format!("triangle h={h} p={p} norm"), n.upper(), h.powf((p - 1.0) / p) + 1e-9));
    }
    if h < 0.25 {
        let tr = trapezoid(h)?;
        out.push(Check::at_most(
            format!("trapezoid h={h} |hat(0) - 3h|"),
            (tr.coeff(0).re - 3.0 * h).abs(),
            1e-12,
        ));
        for &p in ps {
            let n = ap_norm_torus(&tr, p)?;
            out.push(Check::at_most(
                format!("trapezoid h={h} p={p} norm"),
                n.upper(),
                3.0 * h.powf((p - 1.0) / p) + 1e-9,
            ));
        }
    }
    Ok(out)
}

/// The mollifier `ρ(t) = exp(-1/(1 - 4t²))` on `|t| < 1/2`.
pub fn rho(t: f64) -> f64 {
    let q = 1.0 - 4.0 * t * t;
    if q <= 0.0 {
        0.0
    } else {
        (-1.0 / q).exp()
    }
}

fn rho_integral(a: f64, b: f64) -> f64 {
    let (a, b) = (a.max(-0.5), b.min(0.5));
    if b <= a {
        return 0.0;
    }
    let (x, w) = quad::composite(a, b, 8, 16);
    x.iter().zip(&w).map(|(t, w)| w * rho(*t)).sum()
}

/// Smooth step: `0` for `x ≤ -1/2`, `1` for `x ≥ 1/2`, `∫_{-1/2}^x ρ / ∫ρ`
/// in between.
pub fn smooth_step(x: f64) -> f64 {
    if x <= -0.5 {
        0.0
    } else if x >= 0.5 {
        1.0
    } else {
        rho_integral(-0.5, x) / rho_integral(-0.5, 0.5)
    }
}

/// `(ρ ∗ ρ)(2s)`, supported on `|s| < 1/2`, even, with nonnegative
/// transform `½ ρ̂(x/2)²`.
pub fn rho2(s: f64) -> f64 {
    let u = 2.0 * s;
    if u.abs() >= 1.0 {
        return 0.0;
    }
    let (a, b) = ((u - 0.5).max(-0.5), (u + 0.5).min(0.5));
    let (x, w) = quad::composite(a, b, 8, 16);
    x.iter().zip(&w).map(|(v, w)| w * rho(*v) * rho(u - v)).sum()
}

/// `ρ̂(y) = ∫ ρ(t) cos(2πyt) dt`.
pub fn rho_hat(y: f64) -> f64 {
    let panels = 8 + (2.0 * y.abs()).ceil() as usize;
    let (x, w) = quad::composite(-0.5, 0.5, panels, 16);
    x.iter().zip(&w).map(|(t, w)| w * rho(*t) * (2.0 * PI * y * t).cos()).sum()
}

fn check_order(hs: &[f64]) -> Result<(), BlockError> {
    let ok = hs.first().is_some_and(|&h| h > 0.0)
        && hs.windows(2).all(|w| w[0] < w[1])
        && hs.last().is_some_and(|&h| h < 1.0);
    if ok {
        Ok(())
    } else {
        Err(BlockError::ParameterOrder)
    }
}

/// `σ(t) = Σ_{|l| ≤ L} (1 - |l|/(L+1)) ρ₂((t - l)/h')`: smooth, positive on
/// `Ω(L, h)`, supported in `Ω(L, h')`, with `σ̂(x) = h' ρ̂₂(h'x) K_L(x) ≥ 0`.
pub fn sigma_bump(l: u32, h: f64, h1: f64) -> Result<LineFunction, BlockError> {
    sigma_bump_on_grid(l, h, h1, grid_step(h))
}

pub fn sigma_bump_on_grid(l: u32, h: f64, h1: f64, dx: f64) -> Result<LineFunction, BlockError> {
    check_order(&[h, h1])?;
    let big_l = l as f64;
    let half = (0.5 * h1 / dx).ceil() as i64;
    let local: Vec<f64> = (-half..=half).map(|i| rho2(i as f64 * dx / h1)).collect();
    let step = (1.0 / dx).round() as i64;
    let first = -(l as i64) * step - half;
    let last = l as i64 * step + half;
    let mut values = vec![Complex64::new(0.0, 0.0); (last - first + 1) as usize];
    for j in -(l as i64)..=l as i64 {
        let w = 1.0 - j.unsigned_abs() as f64 / (big_l + 1.0);
        let off = (j * step - half - first) as usize;
        for (i, v) in local.iter().enumerate() {
            values[off + i] += c(w * v);
        }
    }
    Ok(LineFunction::from_profile(Profile::from_samples(first, dx, values, true)))
}

/// `σ̂(x)` from the product formula.
pub fn sigma_bump_ft_formula(l: u32, h1: f64, x: f64) -> f64 {
    let y = h1 * x;
    let rho2_hat = 0.5 * rho_hat(0.5 * y).powi(2);
    let fejer: f64 = (-(l as i64)..=l as i64)
        .map(|j| (1.0 - j.unsigned_abs() as f64 / (l as f64 + 1.0)) * (2.0 * PI * j as f64 * x).cos())
        .sum();
    h1 * rho2_hat * fejer
}

/// Property table for `σ = sigma_bump(l, h, h1)`: nonnegative, positive on
/// `Ω(L, h)`, zero off `Ω(L, h')`, and `σ̂ ≥ 0` matching its product formula.
pub fn sigma_checks(l: u32, h: f64, h1: f64) -> Result<Vec<Check>, BlockError> {
    let s = sigma_bump(l, h, h1)?;
    let inner = LandauSet::new(l, h)?;
    let outer = LandauSet::new(l, h1)?;
    let dx = grid_step(h);
    let reach = l as f64 + 0.5;
    let n = (reach / dx).round() as i64;
    let (mut min, mut min_inner, mut off) = (f64::INFINITY, f64::INFINITY, 0.0f64);
    for i in -n..=n {
        let t = i as f64 * dx;
        let v = s.eval(t);
        min = min.min(v.re);
        if inner.contains(t) {
            min_inner = min_inner.min(v.re);
        }
        if !outer.contains(t) {
            off = off.max(v.norm());
        }
    }
    let name = |what: &str| format!("sigma L={l} h={h} h'={h1} {what}");
    let (mut hat_min, mut hat_err) = (f64::INFINITY, 0.0f64);
    for i in -160..=160 {
        let x = 0.25 * i as f64;
        let want = sigma_bump_ft_formula(l, h1, x);
        hat_min = hat_min.min(want);
        hat_err = hat_err.max((ft_compact(&s, x) - want).norm());
    }
    Ok(vec![
        Check::at_least(name("min sigma"), min, 0.0),
        Check::above(name("min sigma on Omega(L, h)"), min_inner, 0.0),
        Check::at_most(name("max |sigma| off Omega(L, h')"), off, 0.0),
        Check::at_least(name("min sigma hat"), hat_min, -1e-12),
        Check::at_most(name("quadrature vs product formula"), hat_err, 1e-6),
    ])
}

/// Plateau cutoffs and their periodized sum.
#[derive(Debug, Clone)]
pub struct Cutoffs {
    /// `1` on `[-h/2, h/2]`, supported in `[-h'/2, h'/2]`.
    pub phi: Profile,
    /// `1` on `[-h'/2, h'/2]`, supported in `[-h''/2, h''/2]`.
    pub psi: Profile,
    /// `Σ_{j<s} Φ(t - j)`.
    pub theta: Profile,
    pub s: usize,
}

fn plateau(inner: f64, outer: f64) -> impl Fn(f64) -> f64 {
    let w = 0.5 * (outer - inner);
    let c0 = 0.25 * (inner + outer);
    move |t| smooth_step((t + c0) / w) - smooth_step((t - c0) / w)
}

pub fn cutoffs(s: usize, h: f64, h1: f64, h2: f64) -> Result<Cutoffs, BlockError> {
    cutoffs_on_grid(s, h, h1, h2, grid_step(h))
}

pub fn cutoffs_on_grid(s: usize, h: f64, h1: f64, h2: f64, dx: f64) -> Result<Cutoffs, BlockError> {
    check_order(&[h, h1, h2])?;
    if s == 0 {
        return Err(BlockError::OutOfRange { name: "s", value: 0.0 });
    }
    let f = plateau(h, h1);
    let phi = Profile::real_fn(-0.5 * h1, 0.5 * h1, dx, &f);
    let psi = Profile::real_fn(-0.5 * h2, 0.5 * h2, dx, plateau(h1, h2));
    let theta = Profile::real_fn(-0.5 * h1, s as f64 - 1.0 + 0.5 * h1, dx, |t| {
        let j = t.round();
        if j >= 0.0 && j < s as f64 {
            f(t - j)
        } else {
            0.0
        }
    });
    Ok(Cutoffs { phi, psi, theta, s })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::norms::{ap_norm_line, triple_norm};

    fn quad_coeff(f: impl Fn(f64) -> f64, n: i64) -> f64 {
        let (x, w) = quad::composite(-0.5, 0.5, 400, 16);
        x.iter().zip(&w).map(|(t, w)| w * f(*t) * (2.0 * PI * n as f64 * t).cos()).sum()
    }

    #[test]
    fn triangle_coefficients_match_quadrature() {
        let h = 0.1;
        let tri = triangle(h).unwrap();
        assert!((tri.coeff(0).re - h).abs() < 1e-15);
        for n in 1..=5 {
            let want = quad_coeff(|t| triangle_value(h, t), n);
            assert!((tri.coeff(n).re - want).abs() < 1e-10, "n={n}");
            assert!(tri.coeff(n).re <= h);
        }
    }

    #[test]
    fn trapezoid_plateau_and_mass() {
        let h = 0.05;
        let tr = trapezoid(h).unwrap();
        assert!((tr.coeff(0).re - 3.0 * h).abs() < 1e-15);
        let eps = tr.tail().l1;
        for &(t, want) in &[(0.0, 1.0), (0.04, 1.0), (-0.05, 1.0), (0.3, 0.0), (0.5, 0.0)] {
            assert!((tr.eval(t).re - want).abs() <= eps + 1e-12, "t={t}");
        }
        assert!(ap_norm_torus(&tr, 1.0).unwrap().upper() <= 3.0 + 1e-9);
        for n in 1..=4 {
            let want = quad_coeff(|t| trapezoid_value(h, t), n);
            assert!((tr.coeff(n).re - want).abs() < 1e-10);
        }
    }

    #[test]
    fn fejer_values() {
        assert_eq!(fejer(0).coeffs(), &[c(1.0)]);
        for n in [1usize, 5, 64] {
            let k = fejer(n);
            assert_eq!(k.coeff(0), c(1.0));
            assert!((k.eval(0.0).re - (n + 1) as f64).abs() < 1e-9);
            let min = k.eval_grid(4096).iter().map(|v| v.re).fold(f64::INFINITY, f64::min);
            assert!(min >= -1e-12);
        }
    }

    #[test]
    fn phi_properties() {
        for h in [0.01, 0.05, 0.15] {
            let f = phi(h).unwrap();
            assert!((f.coeff(0).re - 1.0).abs() < 1e-12);
            assert!((phi_value(h, 0.0) - 4.0).abs() < 1e-15);
            assert_eq!(phi_value(h, 0.5), 0.0);
            let checks = phi_checks(h, &[1.0, 1.5, 2.0]).unwrap();
            assert!(checks.iter().all(|c| c.pass), "{checks:?}");
            let err = (f.eval(0.3).re - phi_value(h, 0.3)).abs();
            assert!(err <= f.tail().l1 + 1e-12);
        }
        assert!(matches!(phi(0.2), Err(BlockError::OutOfRange { .. })));
    }

    #[test]
    fn estim_delta_sweep() {
        for h in [0.01, 0.05, 0.1, 0.2, 0.4] {
            let checks = triangle_trapezoid_checks(h, &[1.0, 1.25, 1.5, 2.0, 3.0]).unwrap();
            assert!(checks.iter().all(|c| c.pass), "{checks:?}");
        }
    }

    #[test]
    fn sigma_bump_shape_and_transform() {
        let (l, h, h1) = (2u32, 0.4, 0.6);
        let s = sigma_bump(l, h, h1).unwrap();
        for j in -2..=2 {
            assert!(s.eval(j as f64).re > 0.0);
            assert_eq!(s.eval(j as f64 + 0.3125).re, 0.0);
        }
        assert_eq!(s.eval(0.5).re, 0.0);
        for i in -80..=80 {
            let x = 0.5 * i as f64;
            let got = ft_compact(&s, x);
            let want = sigma_bump_ft_formula(l, h1, x);
            assert!((got.re - want).abs() < 1e-6 && got.im.abs() < 1e-6, "x={x} {got} {want}");
            assert!(got.re >= -1e-9);
        }
    }

    #[test]
    fn sigma_property_table_passes() {
        for (l, h, h1) in [(0u32, 0.3, 0.5), (1, 0.5, 0.7), (2, 0.4, 0.6)] {
            let checks = sigma_checks(l, h, h1).unwrap();
            assert!(checks.iter().all(|c| c.pass), "{checks:?}");
        }
    }

    #[test]
    fn cutoff_identities() {
        let cut = cutoffs(3, 0.4, 0.6, 0.8).unwrap();
        let dx = cut.phi.dx();
        let prod = cut.psi.mul(&cut.phi);
        for (t, v) in cut.phi.samples() {
            assert_eq!(prod.eval(t), v);
            if t.abs() <= 0.2 {
                assert_eq!(v.re, 1.0);
            }
        }
        for j in 0..3 {
            let shifted = cut.theta.translate(j as f64);
            for (t, v) in cut.psi.samples() {
                assert!((v * shifted.eval(t) - cut.phi.eval(t)).norm() < 1e-15);
            }
        }
        for i in (-0.2 / dx) as i64..=(2.2 / dx) as i64 {
            let t = i as f64 * dx;
            if (t - t.round()).abs() <= 0.2 {
                assert_eq!(cut.theta.eval(t).re, 1.0);
            }
        }
    }

    #[test]
    fn cutoff_derivatives_are_grid_stable() {
        let a = cutoffs_on_grid(1, 0.4, 0.6, 0.8, 1.0 / 2048.0).unwrap();
        let b = cutoffs_on_grid(1, 0.4, 0.6, 0.8, 1.0 / 4096.0).unwrap();
        let (da, db) = (a.phi.derivative_l1(), b.phi.derivative_l1());
        for k in 1..4 {
            assert!((da[k] - db[k]).abs() < 0.01 * da[k], "k={k}");
        }
    }

    #[test]
    fn plateau_norms() {
        let cut = cutoffs(1, 0.4, 0.6, 0.8).unwrap();
        let phi = LineFunction::from_profile(cut.phi.clone());
        let dx = cut.phi.dx();
        let mass: f64 = cut.phi.samples().map(|(_, v)| v.re).sum::<f64>() * dx;
        let l2: f64 = (cut.phi.samples().map(|(_, v)| v.re * v.re).sum::<f64>() * dx).sqrt();
        assert!((ft_compact(&phi, 0.0).re - mass).abs() < 1e-12);
        let n2 = ap_norm_line(&phi, 2.0, 64.0).unwrap();
        assert!((n2.value - l2).abs() < 1e-6, "{n2:?} {l2}");
        let tn = triple_norm(&phi).unwrap();
        assert!(tn > 10.0 * mass);
        for p in [1.0, 1.5, 2.0, 3.0] {
            assert!(ap_norm_line(&phi, p, 64.0).unwrap().upper() <= tn);
        }
    }
}
