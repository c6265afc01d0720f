//! `A^p` norms on the circle and on the line.
//!
//! On the circle the norm of `f` is the `ℓ^p` norm of its Fourier
//! coefficients; on the line it is the `L^p` norm of the Fourier transform.
//! Periodic objects are [`PeriodicSeries`] carrying a tail certificate for
//! the discarded coefficients. Functions on the line are [`LineFunction`]s:
//! finite sums of compactly supported sampled profiles, each multiplied by a
//! trigonometric polynomial, so that products with high-frequency
//! polynomials never have to be sampled.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fft;
use crate::quad;
use crate::trigpoly::{lp_norm, Frequency, TrigError, TrigPoly};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NormError {
    #[error("exponent p = {0} is below 1")]
    InvalidExponent(f64),
    #[error("line function has no decay bound")]
    NoDecayBound,
    #[error("invalid Landau set: L = {l}, h = {h}")]
    InvalidLandauSet { l: u32, h: f64 },
    #[error("frequency list is empty")]
    EmptyFrequencies,
    #[error("Gram matrix condition estimate {0:e} exceeds 1e14")]
    GramIllConditioned(f64),
    #[error("window must be positive, got {0}")]
    BadWindow(f64),
    #[error(transparent)]
    Trig(#[from] TrigError),
}

/// A computed norm with an additive uncertainty from truncation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormEstimate {
    pub value: f64,
    pub uncertainty: f64,
}

impl NormEstimate {
    pub fn upper(&self) -> f64 {
        self.value + self.uncertainty
    }
}

/// Bounds on the coefficients discarded by truncation: their `ℓ¹` mass and
/// their largest magnitude.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Tail {
    pub l1: f64,
    pub sup: f64,
}

impl Tail {
    pub const EXACT: Tail = Tail { l1: 0.0, sup: 0.0 };

    fn plus(self, o: Tail) -> Tail {
        Tail { l1: self.l1 + o.l1, sup: self.sup + o.sup }
    }
}

/// Two-sided Fourier coefficients `f̂(n)`, `|n| ≤ N`, of a function on `𝕋`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicSeries {
    coeffs: Vec<Complex64>,
    tail: Tail,
}

impl PeriodicSeries {
    /// `coeffs[i]` is `f̂(i - N)`; the length must be odd.
    pub fn new(coeffs: Vec<Complex64>, tail: Tail) -> Self {
        assert!(coeffs.len() % 2 == 1, "coefficient vector must have odd length");
        PeriodicSeries { coeffs, tail }
    }

    pub fn from_fn<F: Fn(i64) -> Complex64>(order: usize, tail: Tail, f: F) -> Self {
        let n = order as i64;
        PeriodicSeries::new((-n..=n).map(f).collect(), tail)
    }

    pub fn constant(c: f64) -> Self {
        PeriodicSeries::new(vec![Complex64::new(c, 0.0)], Tail::EXACT)
    }

    pub fn from_trigpoly(p: &TrigPoly) -> Result<Self, NormError> {
        let mut n = 0i64;
        for f in p.frequencies() {
            n = n.max(f.as_integer().ok_or(TrigError::NonIntegerSpectrum(f.value()))?.abs());
        }
        let mut c = vec![ZERO; 2 * n as usize + 1];
        for (f, a) in p.terms() {
            c[(f.as_integer().unwrap() + n) as usize] += a;
        }
        Ok(PeriodicSeries::new(c, Tail::EXACT))
    }

    pub fn to_trigpoly(&self) -> TrigPoly {
        TrigPoly::from_dense(-(self.order() as i64), &self.coeffs)
    }

    pub fn order(&self) -> usize {
        (self.coeffs.len() - 1) / 2
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn tail(&self) -> Tail {
        self.tail
    }

    pub fn coeff(&self, n: i64) -> Complex64 {
        let i = n + self.order() as i64;
        if i < 0 || i as usize >= self.coeffs.len() {
            ZERO
        } else {
            self.coeffs[i as usize]
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        PeriodicSeries {
            coeffs: self.coeffs.iter().map(|a| a * c).collect(),
            tail: Tail { l1: self.tail.l1 * c.abs(), sup: self.tail.sup * c.abs() },
        }
    }

    pub fn add(&self, other: &PeriodicSeries) -> Self {
        let n = self.order().max(other.order()) as i64;
        PeriodicSeries {
            coeffs: (-n..=n).map(|k| self.coeff(k) + other.coeff(k)).collect(),
            tail: self.tail.plus(other.tail),
        }
    }

    pub fn sub(&self, other: &PeriodicSeries) -> Self {
        self.add(&other.scale(-1.0))
    }

    /// Pointwise product, computed by convolving the coefficient vectors.
    pub fn mul(&self, other: &PeriodicSeries) -> Self {
        let coeffs = fft::convolve(&self.coeffs, &other.coeffs);
        let (a, b) = (self.l1_truncated(), other.l1_truncated());
        let l1 = self.tail.l1 * (b + other.tail.l1) + other.tail.l1 * a;
        PeriodicSeries { coeffs, tail: Tail { l1, sup: l1 } }
    }

    /// Multiplies coefficient `n` by `w(n)`; `w` is assumed bounded by one
    /// so the tail certificate is kept.
    pub fn weighted<F: Fn(i64) -> f64>(&self, w: F) -> Self {
        let n = self.order() as i64;
        PeriodicSeries {
            coeffs: (-n..=n).map(|k| self.coeff(k) * w(k)).collect(),
            tail: self.tail,
        }
    }

    /// Keeps `|n| ≤ m`; discarded mass moves into the tail certificate.
    pub fn truncate(&self, m: usize) -> Self {
        if m >= self.order() {
            return self.clone();
        }
        let n = self.order() as i64;
        let dropped = (-n..=n).filter(|k| k.unsigned_abs() as usize > m).map(|k| self.coeff(k).norm());
        let (l1, sup) = dropped.fold((0.0, 0.0f64), |(s, m), a| (s + a, m.max(a)));
        PeriodicSeries {
            coeffs: (-(m as i64)..=m as i64).map(|k| self.coeff(k)).collect(),
            tail: Tail { l1: self.tail.l1 + l1, sup: self.tail.sup.max(sup) },
        }
    }

    fn l1_truncated(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).sum()
    }

    pub fn eval(&self, t: f64) -> Complex64 {
        let n = self.order() as i64;
        (-n..=n).map(|k| self.coeff(k) * Frequency::Integer(k).cis(t)).sum()
    }

    /// Values at `t_j = j/m`, `0 ≤ j < m`, exact for the truncated series.
    pub fn eval_grid(&self, m: usize) -> Vec<Complex64> {
        let mut bins = vec![ZERO; m];
        let n = self.order() as i64;
        for k in -n..=n {
            bins[k.rem_euclid(m as i64) as usize] += self.coeff(k);
        }
        fft::inverse(&mut bins);
        bins
    }
}

/// `‖f‖_{A^p(𝕋)}`; the uncertainty is the largest possible contribution
/// of the discarded coefficients.
pub fn ap_norm_torus(f: &PeriodicSeries, p: f64) -> Result<NormEstimate, NormError> {
    if !(p >= 1.0) {
        return Err(NormError::InvalidExponent(p));
    }
    let value = lp_norm(f.coeffs.iter().map(|c| c.norm()), p)?;
    let t = f.tail;
    let upper = if t.l1 == 0.0 {
        value
    } else if p == 1.0 {
        value + t.l1
    } else {
        (value.powf(p) + t.sup.powf(p - 1.0) * t.l1).powf(1.0 / p)
    };
    Ok(NormEstimate { value, uncertainty: upper - value })
}

/// Grid step used for sampled functions on a Landau set with interval
/// length `h`: the largest power of two not exceeding `h/256`.
pub fn grid_step(h: f64) -> f64 {
    2f64.powi(-(256.0 / h).log2().ceil() as i32)
}

/// A compactly supported function sampled on the grid `dx·ℤ`.
#[derive(Debug)]
pub struct Profile {
    dx: f64,
    first: i64,
    values: Vec<Complex64>,
    smooth: bool,
    deriv_l1: [f64; 5],
    table: OnceLock<FtTable>,
}

#[derive(Debug)]
struct FtTable {
    step: f64,
    center: f64,
    half: usize,
    values: Vec<Complex64>,
}

impl Clone for Profile {
    fn clone(&self) -> Self {
        Profile {
            dx: self.dx,
            first: self.first,
            values: self.values.clone(),
            smooth: self.smooth,
            deriv_l1: self.deriv_l1,
            table: OnceLock::new(),
        }
    }
}

impl Profile {
    /// Samples `values[i]` at `(first + i)·dx`; zero samples are added at
    /// both ends when needed so that the profile vanishes at its endpoints.
    pub fn from_samples(first: i64, dx: f64, mut values: Vec<Complex64>, smooth: bool) -> Self {
        let mut first = first;
        if values.first().map_or(true, |v| v.norm() != 0.0) {
            values.insert(0, ZERO);
            first -= 1;
        }
        if values.last().map_or(true, |v| v.norm() != 0.0) {
            values.push(ZERO);
        }
        let deriv_l1 = derivative_l1(&values, dx);
        Profile { dx, first, values, smooth, deriv_l1, table: OnceLock::new() }
    }

    /// Samples `f` on the grid points of `[a, b]`; `f` must vanish outside.
    pub fn from_fn<F: Fn(f64) -> Complex64>(a: f64, b: f64, dx: f64, smooth: bool, f: F) -> Self {
        let i0 = (a / dx).floor() as i64;
        let i1 = (b / dx).ceil() as i64;
        let values = (i0..=i1).map(|i| f(i as f64 * dx)).collect();
        Profile::from_samples(i0, dx, values, smooth)
    }

    pub fn real_fn<F: Fn(f64) -> f64>(a: f64, b: f64, dx: f64, f: F) -> Self {
        Profile::from_fn(a, b, dx, true, |t| Complex64::new(f(t), 0.0))
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn support(&self) -> (f64, f64) {
        (self.first as f64 * self.dx, (self.first + self.values.len() as i64 - 1) as f64 * self.dx)
    }

    pub fn samples(&self) -> impl Iterator<Item = (f64, Complex64)> + '_ {
        self.values.iter().enumerate().map(move |(i, v)| ((self.first + i as i64) as f64 * self.dx, *v))
    }

    pub fn is_smooth(&self) -> bool {
        self.smooth
    }

    /// Estimated `‖u^{(k)}‖_{L¹}` for `k ≤ 4`.
    pub fn derivative_l1(&self) -> [f64; 5] {
        self.deriv_l1
    }

    /// Value at `t`, exact on grid points and cubic-interpolated between.
    pub fn eval(&self, t: f64) -> Complex64 {
        let u = t / self.dx - self.first as f64;
        let i = u.round();
        if (u - i).abs() < 1e-9 {
            return self.sample(i as i64);
        }
        let i = u.floor() as i64;
        let s = u - i as f64;
        let w = [
            -s * (s - 1.0) * (s - 2.0) / 6.0,
            (s + 1.0) * (s - 1.0) * (s - 2.0) / 2.0,
            -(s + 1.0) * s * (s - 2.0) / 2.0,
            (s + 1.0) * s * (s - 1.0) / 6.0,
        ];
        (0..4).map(|m| self.sample(i - 1 + m as i64) * w[m]).sum()
    }

    fn sample(&self, i: i64) -> Complex64 {
        if i < 0 || i as usize >= self.values.len() {
            ZERO
        } else {
            self.values[i as usize]
        }
    }

    /// Pointwise product of two profiles on the same grid.
    pub fn mul(&self, other: &Profile) -> Profile {
        assert_eq!(self.dx, other.dx, "profiles must share a grid");
        let lo = self.first.max(other.first);
        let hi = (self.first + self.values.len() as i64).min(other.first + other.values.len() as i64);
        let values = (lo..hi.max(lo))
            .map(|i| self.sample(i - self.first) * other.sample(i - other.first))
            .collect();
        Profile::from_samples(lo, self.dx, values, self.smooth && other.smooth)
    }

    /// `t ↦ u(t + τ)` for `τ` a multiple of the grid step.
    pub fn translate(&self, tau: f64) -> Profile {
        let shift = (tau / self.dx).round() as i64;
        let mut p = self.clone();
        p.first -= shift;
        p
    }

    /// `û(x) = ∫ u(t) e^{-2πixt} dt` by the trapezoid rule on the samples.
    pub fn ft(&self, x: f64) -> Complex64 {
        let t0 = self.first as f64 * self.dx;
        let mut acc = ZERO;
        for (b, chunk) in self.values.chunks(256).enumerate() {
            let i0 = b * 256;
            let mut ph = Complex64::from_polar(1.0, -2.0 * PI * ((x * (t0 + i0 as f64 * self.dx)).rem_euclid(1.0)));
            let w = Complex64::from_polar(1.0, -2.0 * PI * (x * self.dx).rem_euclid(1.0));
            for v in chunk {
                acc += v * ph;
                ph *= w;
            }
        }
        acc * self.dx
    }

    /// Fast transform through an interpolation table built by one FFT.
    pub fn ft_fast(&self, x: f64) -> Complex64 {
        let tab = self.table.get_or_init(|| self.build_table());
        let pos = x / tab.step + tab.half as f64;
        let i = pos.floor() as i64;
        if i < 3 || i + 4 >= tab.values.len() as i64 {
            return self.ft(x);
        }
        let s = pos - i as f64;
        let mut acc = ZERO;
        for m in -3i64..=4 {
            let mut w = 1.0;
            for q in -3i64..=4 {
                if q != m {
                    w *= (s - q as f64) / (m - q) as f64;
                }
            }
            acc += tab.values[(i + m) as usize] * w;
        }
        acc * Complex64::from_polar(1.0, -2.0 * PI * (x * tab.center).rem_euclid(1.0))
    }

    fn build_table(&self) -> FtTable {
        let n = self.values.len();
        let p = (32 * n).next_power_of_two().max(1024);
        let mut buf = self.values.clone();
        buf.resize(p, ZERO);
        fft::forward(&mut buf);
        let step = 1.0 / (p as f64 * self.dx);
        let t0 = self.first as f64 * self.dx;
        let center = t0 + 0.5 * (n - 1) as f64 * self.dx;
        let half = p / 4;
        let values = (0..2 * half)
            .map(|m| {
                let k = m as i64 - half as i64;
                let y = k as f64 * step;
                let raw = buf[k.rem_euclid(p as i64) as usize] * self.dx;
                raw * Complex64::from_polar(1.0, -2.0 * PI * (y * (t0 - center)).rem_euclid(1.0))
            })
            .collect();
        FtTable { step, center, half, values }
    }

    /// Largest `|x|` at which the sampled transform is meaningful.
    pub fn band_limit(&self) -> f64 {
        0.25 / self.dx
    }

    /// Certified bound on `(∫_{|y|>X} |û(y)|^p dy)^{1/p}` from the
    /// derivative norms, together with the decay bound `M` when given.
    fn tail_lp(&self, x: f64, p: f64, decay: Option<f64>) -> f64 {
        let mut best = f64::INFINITY;
        for k in 1..=4usize {
            let kp = k as f64 * p;
            if kp <= 1.0 {
                continue;
            }
            let c = 1.1 * self.deriv_l1[k] / (2.0 * PI).powi(k as i32);
            let b = (2.0 * c.powf(p) * x.powf(1.0 - kp) / (kp - 1.0)).powf(1.0 / p);
            best = best.min(b);
        }
        if let Some(m) = decay {
            let b = (2.0 * m.powf(p) * x.powf(1.0 - 2.0 * p) / (2.0 * p - 1.0)).powf(1.0 / p);
            best = best.min(b);
        }
        best
    }
}

fn derivative_l1(v: &[Complex64], dx: f64) -> [f64; 5] {
    let mut out = [0.0; 5];
    let mut d: Vec<Complex64> = v.to_vec();
    out[0] = d.iter().map(|z| z.norm()).sum::<f64>() * dx;
    for k in 1..5 {
        let mut next = Vec::with_capacity(d.len() + 1);
        next.push(d[0] / dx);
        for i in 1..d.len() {
            next.push((d[i] - d[i - 1]) / dx);
        }
        next.push(-d[d.len() - 1] / dx);
        d = next;
        out[k] = d.iter().map(|z| z.norm()).sum::<f64>() * dx;
    }
    out
}

#[derive(Debug, Clone)]
struct Part {
    profile: Arc<Profile>,
    mult: TrigPoly,
}

/// A function on the line of the form `Σ_i u_i(t)·T_i(t)` with `u_i`
/// compactly supported sampled profiles and `T_i` trigonometric polynomials.
#[derive(Debug, Clone, Default)]
pub struct LineFunction {
    parts: Vec<Part>,
    neglected: f64,
}

/// A windowed `A^p(ℝ)` norm with its certified tail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineNorm {
    pub value: f64,
    pub tail: f64,
    pub window: f64,
}

impl LineNorm {
    pub fn upper(&self) -> f64 {
        self.value + self.tail
    }
}

impl LineFunction {
    pub fn zero() -> Self {
        LineFunction::default()
    }

    pub fn from_profile(p: Profile) -> Self {
        LineFunction::from_shared(Arc::new(p))
    }

    pub fn from_shared(p: Arc<Profile>) -> Self {
        LineFunction {
            parts: vec![Part { profile: p, mult: TrigPoly::constant(Complex64::new(1.0, 0.0)) }],
            neglected: 0.0,
        }
    }

    /// Bound on the `A^p(ℝ)` norm of contributions dropped by truncation.
    pub fn neglected(&self) -> f64 {
        self.neglected
    }

    pub fn is_zero(&self) -> bool {
        self.parts.is_empty()
    }

    pub fn profiles(&self) -> impl Iterator<Item = (&Arc<Profile>, &TrigPoly)> + '_ {
        self.parts.iter().map(|p| (&p.profile, &p.mult))
    }

    pub fn scale(&self, c: Complex64) -> Self {
        LineFunction {
            parts: self
                .parts
                .iter()
                .map(|p| Part { profile: p.profile.clone(), mult: p.mult.scale(c) })
                .filter(|p| !p.mult.is_empty())
                .collect(),
            neglected: self.neglected * c.norm(),
        }
    }

    pub fn add(&self, other: &LineFunction) -> Self {
        let mut parts = self.parts.clone();
        for q in &other.parts {
            match parts.iter_mut().find(|p| Arc::ptr_eq(&p.profile, &q.profile)) {
                Some(p) => p.mult = p.mult.add(&q.mult).expect("compatible multipliers"),
                None => parts.push(q.clone()),
            }
        }
        parts.retain(|p| !p.mult.is_empty());
        LineFunction { parts, neglected: self.neglected + other.neglected }
    }

    pub fn sub(&self, other: &LineFunction) -> Self {
        self.add(&other.scale(Complex64::new(-1.0, 0.0)))
    }

    /// Multiplies by a trigonometric polynomial.
    pub fn mul_poly(&self, t: &TrigPoly) -> Result<Self, NormError> {
        let mut parts = Vec::with_capacity(self.parts.len());
        for p in &self.parts {
            let mult = p.mult.mul(t)?;
            if !mult.is_empty() {
                parts.push(Part { profile: p.profile.clone(), mult });
            }
        }
        Ok(LineFunction { parts, neglected: self.neglected * t.coeff_norm(1.0)? })
    }

    /// Multiplies every profile pointwise by `w`.
    pub fn mul_profile(&self, w: &Profile) -> Self {
        LineFunction {
            parts: self
                .parts
                .iter()
                .map(|p| Part { profile: Arc::new(p.profile.mul(w)), mult: p.mult.clone() })
                .collect(),
            neglected: if self.neglected > 0.0 {
                let wf = LineFunction::from_profile(w.clone());
                self.neglected * PI * decay_bound(&wf).unwrap_or(f64::INFINITY)
            } else {
                0.0
            },
        }
    }

    /// `t ↦ φ(t + τ)` for `τ` a multiple of the grid step.
    pub fn translate(&self, tau: f64) -> Self {
        LineFunction {
            parts: self
                .parts
                .iter()
                .map(|p| Part {
                    profile: Arc::new(p.profile.translate(tau)),
                    mult: TrigPoly::from_terms(p.mult.terms().iter().map(|(f, c)| (*f, c * f.cis(tau))))
                        .expect("same spectrum"),
                })
                .collect(),
            neglected: self.neglected,
        }
    }

    pub fn eval(&self, t: f64) -> Complex64 {
        self.parts.iter().map(|p| p.profile.eval(t) * p.mult.eval(t)).sum()
    }

    /// Fourier transform by direct quadrature of every profile.
    pub fn ft(&self, x: f64) -> Complex64 {
        self.parts
            .iter()
            .map(|p| p.mult.terms().iter().map(|(f, c)| c * p.profile.ft(x - f.value())).sum::<Complex64>())
            .sum()
    }

    /// Fourier transform through interpolation tables.
    pub fn ft_fast(&self, x: f64) -> Complex64 {
        self.parts
            .iter()
            .map(|p| p.mult.terms().iter().map(|(f, c)| c * p.profile.ft_fast(x - f.value())).sum::<Complex64>())
            .sum()
    }

    pub fn support(&self) -> Option<(f64, f64)> {
        self.parts.iter().map(|p| p.profile.support()).reduce(|a, b| (a.0.min(b.0), a.1.max(b.1)))
    }

    fn width(&self) -> f64 {
        self.support().map_or(1.0, |(a, b)| (b - a).max(0.25))
    }

    fn band_limit(&self) -> f64 {
        self.parts.iter().map(|p| p.profile.band_limit()).fold(f64::INFINITY, f64::min)
    }

    fn is_smooth(&self) -> bool {
        self.parts.iter().all(|p| p.profile.smooth)
    }

    /// Total number of exponential terms across the parts.
    pub fn term_count(&self) -> usize {
        self.parts.iter().map(|p| p.mult.len()).sum()
    }

    /// Merged windows `[λ - X, λ + X]` around every spectral point.
    fn windows(&self, x: f64) -> Vec<(f64, f64)> {
        let mut c: Vec<f64> = self.parts.iter().flat_map(|p| p.mult.frequencies().map(|f| f.value())).collect();
        c.sort_by(f64::total_cmp);
        let mut out: Vec<(f64, f64)> = Vec::new();
        for v in c {
            match out.last_mut() {
                Some(w) if v - x <= w.1 => w.1 = w.1.max(v + x),
                _ => out.push((v - x, v + x)),
            }
        }
        out
    }

    /// Evaluates `x ↦ F(x)` on a uniform grid of each window, using only
    /// terms within distance `X`.
    fn windowed_values<G>(&self, x_win: f64, step: f64, reduce: G) -> Vec<f64>
    where
        G: Fn(f64, Complex64) -> f64 + Sync,
    {
        let lists: Vec<(Arc<Profile>, Vec<(f64, Complex64)>)> = self
            .parts
            .iter()
            .map(|p| (p.profile.clone(), p.mult.terms().iter().map(|(f, c)| (f.value(), *c)).collect()))
            .collect();
        let windows = self.windows(x_win);
        let mut jobs = Vec::new();
        for (a, b) in windows {
            let n = ((b - a) / step).ceil() as usize;
            let mut s = 0;
            while s <= n {
                let e = (s + 4096).min(n + 1);
                jobs.push((a, step, s, e, n));
                s = e;
            }
        }
        jobs.par_iter()
            .map(|&(a, h, s, e, n)| {
                let mut acc = 0.0;
                for i in s..e {
                    let x = a + i as f64 * h;
                    let mut v = ZERO;
                    for (prof, terms) in &lists {
                        let lo = terms.partition_point(|t| t.0 < x - x_win);
                        for (lam, c) in terms[lo..].iter().take_while(|t| t.0 <= x + x_win) {
                            v += c * prof.ft_fast(x - lam);
                        }
                    }
                    let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                    acc += w * reduce(x, v);
                }
                acc
            })
            .collect()
    }

    /// Certified bound on the `L^p` norm of `û` outside the windows of
    /// half-width `x` around the spectrum.
    pub fn tail_bound(&self, x: f64, p: f64) -> f64 {
        self.parts
            .iter()
            .map(|q| q.mult.coeff_norm(1.0).unwrap_or(0.0) * q.profile.tail_lp(x, p, None))
            .sum::<f64>()
            + self.neglected
    }
}

/// `û(x)` by quadrature.
pub fn ft_compact(u: &LineFunction, x: f64) -> Complex64 {
    u.ft(x)
}

/// `‖u‖_{A^p(ℝ)}`: the `L^p` norm of `û` over windows of half-width `X`
/// around the spectrum, widened until the certified tail drops below
/// `1e-8` of the windowed value.
pub fn ap_norm_line(u: &LineFunction, p: f64, x: f64) -> Result<LineNorm, NormError> {
    if !(p >= 1.0) {
        return Err(NormError::InvalidExponent(p));
    }
    if !(x > 0.0) {
        return Err(NormError::BadWindow(x));
    }
    if u.is_zero() {
        return Ok(LineNorm { value: 0.0, tail: u.neglected, window: x });
    }
    if !u.is_smooth() {
        return Err(NormError::NoDecayBound);
    }
    let cap = u.band_limit();
    let step = 1.0 / (16.0 * u.width());
    let mut win = x.min(cap);
    loop {
        let parts = u.windowed_values(win, step, |_, v| v.norm().powf(p));
        let value = (parts.iter().sum::<f64>() * step).powf(1.0 / p);
        let tail = u.tail_bound(win, p);
        if tail <= 1e-8 * value || win >= cap {
            return Ok(LineNorm { value, tail, window: win });
        }
        win = (2.0 * win).min(cap);
    }
}

/// `10·sup_x (1 + x²)|û(x)|`, probed on a fine grid around the spectrum
/// with a certified remainder for the rest of the line.
pub fn triple_norm(u: &LineFunction) -> Result<f64, NormError> {
    if u.is_zero() {
        return Ok(0.0);
    }
    if !u.is_smooth() {
        return Err(NormError::NoDecayBound);
    }
    let x_win = 64f64.min(u.band_limit());
    let step = 1.0 / (16.0 * u.width());
    let sup = u
        .windowed_sup(x_win, step, |x, v| (1.0 + x * x) * v.norm());
    let rem: f64 = u
        .parts
        .iter()
        .map(|q| {
            let d4 = 1.1 * q.profile.deriv_l1[4];
            let r = (1.0 + x_win * x_win) * d4 / (2.0 * PI * x_win).powi(4);
            q.mult
                .terms()
                .iter()
                .map(|(f, c)| c.norm() * 2.0 * (1.0 + f.value().powi(2)) * r)
                .sum::<f64>()
        })
        .sum();
    Ok(10.0 * (sup + rem) + 10.0 * u.neglected)
}

impl LineFunction {
    fn windowed_sup<G>(&self, x_win: f64, step: f64, f: G) -> f64
    where
        G: Fn(f64, Complex64) -> f64 + Sync,
    {
        let lists: Vec<(Arc<Profile>, Vec<(f64, Complex64)>)> = self
            .parts
            .iter()
            .map(|p| (p.profile.clone(), p.mult.terms().iter().map(|(f, c)| (f.value(), *c)).collect()))
            .collect();
        let mut xs = Vec::new();
        for (a, b) in self.windows(x_win) {
            let n = ((b - a) / step).ceil() as usize;
            xs.extend((0..=n).map(|i| a + i as f64 * step));
        }
        xs.par_iter()
            .map(|&x| {
                let mut v = ZERO;
                for (prof, terms) in &lists {
                    let lo = terms.partition_point(|t| t.0 < x - x_win);
                    for (lam, c) in terms[lo..].iter().take_while(|t| t.0 <= x + x_win) {
                        v += c * prof.ft_fast(x - lam);
                    }
                }
                f(x, v)
            })
            .reduce(|| 0.0, f64::max)
    }
}

/// Largest `M` with `|û(x)| ≤ M/(1 + x²)`, i.e. a tenth of the triple norm.
pub fn decay_bound(u: &LineFunction) -> Result<f64, NormError> {
    Ok(triple_norm(u)? / 10.0)
}

/// `u·f` for a periodic `f`: the transform is `Σ f̂(n)·û(x - n)`, and the
/// truncated part of `f` is accounted for through `|||u|||·tail`.
pub fn product_line_periodic(u: &LineFunction, f: &PeriodicSeries) -> Result<LineFunction, NormError> {
    let mut out = u.mul_poly(&f.to_trigpoly())?;
    if f.tail.l1 > 0.0 {
        out.neglected += triple_norm(u)? * f.tail.l1;
    }
    Ok(out)
}

/// The Landau set `Ω(L, h) = ∪_{|l| ≤ L} [l - h/2, l + h/2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandauSet {
    pub l: u32,
    pub h: f64,
}

impl LandauSet {
    pub fn new(l: u32, h: f64) -> Result<Self, NormError> {
        if !(h > 0.0 && h < 1.0) {
            return Err(NormError::InvalidLandauSet { l, h });
        }
        Ok(LandauSet { l, h })
    }

    pub fn intervals(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let l = self.l as i64;
        (-l..=l).map(move |c| (c as f64 - 0.5 * self.h, c as f64 + 0.5 * self.h))
    }

    /// Membership with a `1e-12` slack so grid endpoints count as inside.
    pub fn contains(&self, t: f64) -> bool {
        let c = t.round();
        c.abs() <= self.l as f64 && (t - c).abs() <= 0.5 * self.h + 1e-12
    }

    pub fn measure(&self) -> f64 {
        (2 * self.l + 1) as f64 * self.h
    }
}

/// Values of low-order derivatives at the half-integers, which must all
/// vanish for a function in `I_0(ℝ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct I0Certificate {
    pub residual: f64,
    pub per_order: Vec<f64>,
}

/// Derivatives of orders `0..=j_max` at `n + 1/2`, `|n| ≤ n_max`, by
/// five-point central differences at step `dx`.
pub fn i0_certificate(u: &LineFunction, j_max: usize, n_max: i64, dx: f64) -> I0Certificate {
    let mut per_order = vec![0.0f64; j_max + 1];
    for n in -n_max..=n_max {
        let t = n as f64 + 0.5;
        let f: Vec<Complex64> = (-2..=2).map(|m| u.eval(t + m as f64 * dx)).collect();
        let d = [
            f[2],
            (f[0] - f[1] * 8.0 + f[3] * 8.0 - f[4]) / (12.0 * dx),
            (-f[0] + f[1] * 16.0 - f[2] * 30.0 + f[3] * 16.0 - f[4]) / (12.0 * dx * dx),
            (-f[0] + f[1] * 2.0 - f[3] * 2.0 + f[4]) / (2.0 * dx.powi(3)),
        ];
        for j in 0..=j_max.min(3) {
            per_order[j] = per_order[j].max(d[j].norm());
        }
    }
    I0Certificate { residual: per_order.iter().copied().fold(0.0, f64::max), per_order }
}

/// Outcome of a least-squares completeness probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub residual: f64,
    pub condition: f64,
}

/// Tikhonov parameter, relative to the mean diagonal of the Gram matrix.
pub const GRAM_REGULARIZATION: f64 = 1e-12;
pub const GRAM_CONDITION_LIMIT: f64 = 1e14;

/// Relative `L²(Ω)` distance from `target` to the span of
/// `{e^{2πiλt}}_{λ ∈ freqs}`, by a regularized Gram solve.
pub fn completeness_residual<F>(freqs: &[f64], omega: &LandauSet, target: F) -> Result<Residual, NormError>
where
    F: Fn(f64) -> Complex64 + Sync,
{
    if freqs.is_empty() {
        return Err(NormError::EmptyFrequencies);
    }
    let m = freqs.len();
    let h = omega.h;
    let l = omega.l as i64;
    let gram = DMatrix::from_fn(m, m, |r, c| {
        let d = freqs[c] - freqs[r];
        let s: Complex64 = (-l..=l).map(|j| Frequency::Real(d).cis(j as f64)).sum();
        s * h * sinc(d * h)
    });
    let max_freq = freqs.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let panels = (4.0 * max_freq * h).ceil() as usize + 4;
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    for (a, b) in omega.intervals() {
        let (x, w) = quad::composite(a, b, panels, 16);
        nodes.extend(x);
        weights.extend(w);
    }
    let g: Vec<Complex64> = nodes.par_iter().map(|&t| target(t)).collect();
    let rhs = DVector::from_iterator(
        m,
        freqs.iter().map(|&lam| {
            nodes
                .iter()
                .zip(&weights)
                .zip(&g)
                .map(|((&t, &w), &v)| v * Frequency::Real(-lam).cis(t) * w)
                .sum::<Complex64>()
        }),
    );
    let diag = (0..m).map(|i| gram[(i, i)].re).sum::<f64>() / m as f64;
    let tau = GRAM_REGULARIZATION * diag;
    let reg = &gram + DMatrix::<Complex64>::identity(m, m) * Complex64::new(tau, 0.0);
    let eig = reg.clone().symmetric_eigenvalues();
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &e| (a.min(e), b.max(e)));
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= GRAM_CONDITION_LIMIT) {
        return Err(NormError::GramIllConditioned(condition));
    }
    let coef = reg.clone().cholesky().map(|c| c.solve(&rhs)).unwrap_or_else(|| {
        reg.clone().lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(m))
    });
    let (num, den) = nodes
        .par_iter()
        .zip(weights.par_iter())
        .zip(g.par_iter())
        .map(|((&t, &w), &v)| {
            let approx: Complex64 = freqs.iter().zip(coef.iter()).map(|(&lam, c)| c * Frequency::Real(lam).cis(t)).sum();
            (w * (v - approx).norm_sqr(), w * v.norm_sqr())
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let residual = if den > 0.0 { (num / den).sqrt().min(1.0) } else { 0.0 };
    Ok(Residual { residual, condition })
}

/// Normalized sinc, `sin(πx)/(πx)`.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - (PI * x).powi(2) / 6.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// A function known by its samples `u(start + i·dt)` and vanishing off
/// them. Transforms come from one zero-padded FFT, so functions with
/// spectra far beyond the reach of windowed quadrature stay cheap; the
/// samples must resolve the spectrum (`dt` below a quarter period).
#[derive(Debug, Clone)]
pub struct Sampled {
    pub start: f64,
    pub dt: f64,
    pub values: Vec<Complex64>,
}

impl Sampled {
    /// `|û|` on the grid `x_k = k·Δx`, `Δx ≤ 1/(2·span)`, in FFT order,
    /// together with `Δx`.
    pub fn transform_magnitudes(&self) -> (f64, Vec<f64>) {
        let n = self.values.len().max(1);
        let span = n as f64 * self.dt;
        let mut len = n.next_power_of_two();
        while (len as f64) * self.dt < 4.0 * span {
            len *= 2;
        }
        let mut buf = self.values.clone();
        buf.resize(len, ZERO);
        fft::forward(&mut buf);
        let mags = buf.iter().map(|v| v.norm() * self.dt).collect();
        (1.0 / (len as f64 * self.dt), mags)
    }

    /// `‖u‖_{A^p(ℝ)}` by the rectangle rule on the transform grid.
    pub fn ap_norm(&self, p: f64) -> Result<f64, NormError> {
        if !(p >= 1.0) {
            return Err(NormError::InvalidExponent(p));
        }
        let (dx, mags) = self.transform_magnitudes();
        Ok((mags.iter().map(|m| m.powf(p)).sum::<f64>() * dx).powf(1.0 / p))
    }

    /// `10·max (1 + x²)|û(x)|` over the transform grid.
    pub fn triple_norm(&self) -> f64 {
        let (dx, mags) = self.transform_magnitudes();
        let len = mags.len();
        let sup = mags
            .iter()
            .enumerate()
            .map(|(k, m)| {
                let x = if k < len / 2 { k as f64 } else { k as f64 - len as f64 } * dx;
                (1.0 + x * x) * m
            })
            .fold(0.0, f64::max);
        10.0 * sup
    }
}
