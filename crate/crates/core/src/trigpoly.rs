//! Sparse trigonometric polynomials over integer, real and lattice frequencies.
//!
//! A [`TrigPoly`] is a finite sum `Σ a_j e^{2πiλ_j t}` stored as a list of
//! `(Frequency, coefficient)` pairs sorted by frequency value. Lattice
//! frequencies `j + k·a` keep their integer coordinates so that gap
//! computations on two-gap spectra stay exact.

use std::cmp::Ordering;
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Real frequencies closer than this are the same frequency.
pub const REAL_MERGE_TOL: f64 = 1e-12;
/// Coefficients at or below this magnitude are dropped after arithmetic.
pub const PRUNE_TOL: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrigError {
    #[error("lattice frequencies over different bases {0} and {1}")]
    IncompatibleBase(f64, f64),
    #[error("frequency {0} is not an integer frequency")]
    NonIntegerSpectrum(f64),
    #[error("exponent p = {0} is below 1")]
    InvalidExponent(f64),
    #[error("malformed frequency record: {0}")]
    BadRecord(String),
}

/// A frequency `λ` of an exponential `e^{2πiλt}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Frequency {
    Integer(i64),
    Real(f64),
    /// The number `j + k·base`.
    Lattice { j: i64, k: i64, base: f64 },
}

impl Frequency {
    pub fn lattice(j: i64, k: i64, base: f64) -> Self {
        Frequency::Lattice { j, k, base }
    }

    /// Numerical value of the frequency.
    pub fn value(&self) -> f64 {
        match *self {
            Frequency::Integer(n) => n as f64,
            Frequency::Real(x) => x,
            Frequency::Lattice { j, k, base } => j as f64 + k as f64 * base,
        }
    }

    pub fn base(&self) -> Option<f64> {
        match *self {
            Frequency::Lattice { base, .. } => Some(base),
            _ => None,
        }
    }

    pub fn as_integer(&self) -> Option<i64> {
        match *self {
            Frequency::Integer(n) => Some(n),
            Frequency::Lattice { j, k: 0, .. } => Some(j),
            _ => None,
        }
    }

    fn is_exact(&self) -> bool {
        !matches!(self, Frequency::Real(_))
    }

    /// Sum of two frequencies, exact whenever both are exact.
    pub fn add(&self, other: &Frequency) -> Result<Frequency, TrigError> {
        use Frequency::*;
        Ok(match (*self, *other) {
            (Integer(a), Integer(b)) => Integer(a + b),
            (Integer(a), Lattice { j, k, base }) | (Lattice { j, k, base }, Integer(a)) => {
                Lattice { j: j + a, k, base }
            }
            (Lattice { j, k, base }, Lattice { j: j2, k: k2, base: b2 }) => {
                if base.to_bits() != b2.to_bits() {
                    return Err(TrigError::IncompatibleBase(base, b2));
                }
                Lattice { j: j + j2, k: k + k2, base }
            }
            (a, b) => Real(a.value() + b.value()),
        })
    }

    pub fn neg(&self) -> Frequency {
        match *self {
            Frequency::Integer(n) => Frequency::Integer(-n),
            Frequency::Real(x) => Frequency::Real(-x),
            Frequency::Lattice { j, k, base } => Frequency::Lattice { j: -j, k: -k, base },
        }
    }

    /// Frequency equality: exact on integer and lattice coordinates,
    /// within [`REAL_MERGE_TOL`] when a real frequency is involved.
    pub fn same(&self, other: &Frequency) -> Result<bool, TrigError> {
        use Frequency::*;
        Ok(match (*self, *other) {
            (Integer(a), Integer(b)) => a == b,
            (Integer(a), Lattice { j, k, .. }) | (Lattice { j, k, .. }, Integer(a)) => {
                k == 0 && j == a
            }
            (Lattice { j, k, base }, Lattice { j: j2, k: k2, base: b2 }) => {
                if base.to_bits() != b2.to_bits() {
                    return Err(TrigError::IncompatibleBase(base, b2));
                }
                j == j2 && k == k2
            }
            (a, b) => (a.value() - b.value()).abs() <= REAL_MERGE_TOL,
        })
    }

    /// Fractional part of `λt`, computed so that large integer parts cancel.
    pub fn phase(&self, t: f64) -> f64 {
        let frac = |n: i64, t: f64| {
            let (ti, tf) = (t.trunc(), t.fract());
            let a = ((n as f64) * ti).rem_euclid(1.0);
            a + (n as f64 * tf).rem_euclid(1.0)
        };
        match *self {
            Frequency::Integer(n) => frac(n, t),
            Frequency::Real(x) => (x * t).rem_euclid(1.0),
            Frequency::Lattice { j, k, base } => frac(j, t) + (k as f64 * base * t).rem_euclid(1.0),
        }
    }

    /// `e^{2πiλt}`.
    pub fn cis(&self, t: f64) -> Complex64 {
        Complex64::from_polar(1.0, 2.0 * PI * self.phase(t))
    }

    fn sort_key(&self, other: &Frequency) -> Ordering {
        self.value().total_cmp(&other.value()).then_with(|| {
            let c = |f: &Frequency| match *f {
                Frequency::Integer(n) => (0u8, n, 0i64),
                Frequency::Lattice { j, k, .. } => (1, j, k),
                Frequency::Real(_) => (2, 0, 0),
            };
            c(self).cmp(&c(other))
        })
    }
}

/// Serialized form of a [`Frequency`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreqRecord {
    pub tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<f64>,
}

impl From<Frequency> for FreqRecord {
    fn from(f: Frequency) -> Self {
        let empty = FreqRecord { tag: String::new(), j: None, k: None, x: None, base: None };
        match f {
            Frequency::Integer(n) => FreqRecord { tag: "integer".into(), j: Some(n), ..empty },
            Frequency::Real(x) => FreqRecord { tag: "real".into(), x: Some(x), ..empty },
            Frequency::Lattice { j, k, base } => FreqRecord {
                tag: "lattice".into(),
                j: Some(j),
                k: Some(k),
                base: Some(base),
                ..empty
            },
        }
    }
}

impl TryFrom<FreqRecord> for Frequency {
    type Error = TrigError;
    fn try_from(r: FreqRecord) -> Result<Self, TrigError> {
        let missing = |f: &str| TrigError::BadRecord(format!("tag {} needs field {}", r.tag, f));
        match r.tag.as_str() {
            "integer" => Ok(Frequency::Integer(r.j.ok_or_else(|| missing("j"))?)),
            "real" => Ok(Frequency::Real(r.x.ok_or_else(|| missing("x"))?)),
            "lattice" => Ok(Frequency::Lattice {
                j: r.j.ok_or_else(|| missing("j"))?,
                k: r.k.ok_or_else(|| missing("k"))?,
                base: r.base.ok_or_else(|| missing("base"))?,
            }),
            other => Err(TrigError::BadRecord(format!("unknown tag {other}"))),
        }
    }
}

impl Serialize for Frequency {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        FreqRecord::from(*self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Frequency {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Frequency::try_from(FreqRecord::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

/// One serialized term of a [`TrigPoly`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermRecord {
    pub freq: FreqRecord,
    pub re: f64,
    pub im: f64,
}

/// A finite exponential sum with pairwise distinct frequencies and no zero
/// coefficients.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<TermRecord>", into = "Vec<TermRecord>")]
pub struct TrigPoly {
    terms: Vec<(Frequency, Complex64)>,
}

impl TryFrom<Vec<TermRecord>> for TrigPoly {
    type Error = TrigError;
    fn try_from(records: Vec<TermRecord>) -> Result<Self, TrigError> {
        let terms = records
            .into_iter()
            .map(|r| Ok((Frequency::try_from(r.freq)?, Complex64::new(r.re, r.im))))
            .collect::<Result<Vec<_>, TrigError>>()?;
        TrigPoly::from_terms(terms)
    }
}

impl From<TrigPoly> for Vec<TermRecord> {
    fn from(p: TrigPoly) -> Self {
        p.terms
            .into_iter()
            .map(|(f, c)| TermRecord { freq: f.into(), re: c.re, im: c.im })
            .collect()
    }
}

impl TrigPoly {
    pub fn zero() -> Self {
        TrigPoly { terms: Vec::new() }
    }

    /// The constant `c`.
    pub fn constant(c: Complex64) -> Self {
        Self::monomial(Frequency::Integer(0), c)
    }

    pub fn monomial(f: Frequency, c: Complex64) -> Self {
        let mut p = TrigPoly { terms: vec![(f, c)] };
        p.prune();
        p
    }

    /// Builds a polynomial from arbitrary terms, merging equal frequencies.
    pub fn from_terms<I>(terms: I) -> Result<Self, TrigError>
    where
        I: IntoIterator<Item = (Frequency, Complex64)>,
    {
        let mut terms: Vec<_> = terms.into_iter().collect();
        check_bases(terms.iter().map(|t| &t.0))?;
        terms.sort_by(|a, b| a.0.sort_key(&b.0));
        let mut out: Vec<(Frequency, Complex64)> = Vec::with_capacity(terms.len());
        for (f, c) in terms {
            if let Some(last) = out.last_mut() {
                if last.0.same(&f)? {
                    if !last.0.is_exact() && f.is_exact() {
                        last.0 = f;
                    }
                    last.1 += c;
                    continue;
                }
            }
            out.push((f, c));
        }
        let mut p = TrigPoly { terms: out };
        p.prune();
        Ok(p)
    }

    /// Integer-spectrum polynomial with coefficients `coeffs[i]` at `offset + i`.
    pub fn from_dense(offset: i64, coeffs: &[Complex64]) -> Self {
        let mut p = TrigPoly {
            terms: coeffs
                .iter()
                .enumerate()
                .map(|(i, &c)| (Frequency::Integer(offset + i as i64), c))
                .collect(),
        };
        p.prune();
        p
    }

    fn prune(&mut self) {
        self.terms.retain(|(_, c)| c.norm() > PRUNE_TOL);
    }

    pub fn terms(&self) -> &[(Frequency, Complex64)] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn frequencies(&self) -> impl Iterator<Item = &Frequency> + '_ {
        self.terms.iter().map(|t| &t.0)
    }

    /// Coefficient at frequency `f`, zero when absent.
    pub fn coeff(&self, f: &Frequency) -> Complex64 {
        let v = f.value();
        let start = self.terms.partition_point(|t| t.0.value() < v - 2.0 * REAL_MERGE_TOL);
        self.terms[start..]
            .iter()
            .take_while(|t| t.0.value() <= v + 2.0 * REAL_MERGE_TOL)
            .find(|t| t.0.same(f).unwrap_or(false))
            .map_or(Complex64::new(0.0, 0.0), |t| t.1)
    }

    /// Lattice base shared by the lattice terms, if any.
    pub fn base(&self) -> Option<f64> {
        self.terms.iter().find_map(|t| t.0.base())
    }

    pub fn is_integer_spectrum(&self) -> bool {
        self.terms.iter().all(|t| matches!(t.0, Frequency::Integer(_)))
    }

    pub fn add(&self, other: &TrigPoly) -> Result<TrigPoly, TrigError> {
        TrigPoly::from_terms(self.terms.iter().chain(other.terms.iter()).copied())
    }

    pub fn sub(&self, other: &TrigPoly) -> Result<TrigPoly, TrigError> {
        self.add(&other.scale(Complex64::new(-1.0, 0.0)))
    }

    pub fn scale(&self, c: Complex64) -> TrigPoly {
        let mut p = TrigPoly { terms: self.terms.iter().map(|&(f, a)| (f, a * c)).collect() };
        p.prune();
        p
    }

    /// Product; the spectrum is the sumset of the two spectra.
    pub fn mul(&self, other: &TrigPoly) -> Result<TrigPoly, TrigError> {
        check_bases(self.frequencies().chain(other.frequencies()))?;
        let mut terms = Vec::with_capacity(self.len() * other.len());
        for &(f, a) in &self.terms {
            for &(g, b) in &other.terms {
                terms.push((f.add(&g)?, a * b));
            }
        }
        TrigPoly::from_terms(terms)
    }

    /// `t ↦ P(νt)` for an integer-spectrum `P`.
    pub fn dilate(&self, nu: u64) -> Result<TrigPoly, TrigError> {
        let terms = self
            .terms
            .iter()
            .map(|&(f, c)| match f {
                Frequency::Integer(n) => Ok((Frequency::Integer(n * nu as i64), c)),
                other => Err(TrigError::NonIntegerSpectrum(other.value())),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(TrigPoly { terms })
    }

    /// `t ↦ e^{2πiσt} P(t)`.
    pub fn modulate(&self, sigma: &Frequency) -> Result<TrigPoly, TrigError> {
        let terms = self
            .terms
            .iter()
            .map(|&(f, c)| Ok((f.add(sigma)?, c)))
            .collect::<Result<Vec<_>, TrigError>>()?;
        TrigPoly::from_terms(terms)
    }

    pub fn eval(&self, t: f64) -> Complex64 {
        self.terms.iter().map(|(f, c)| c * f.cis(t)).sum()
    }

    pub fn conj(&self) -> TrigPoly {
        TrigPoly::from_terms(self.terms.iter().map(|(f, c)| (f.neg(), c.conj())))
            .expect("negation preserves bases")
    }

    /// `(Σ|a_j|^p)^{1/p}`.
    pub fn coeff_norm(&self, p: f64) -> Result<f64, TrigError> {
        lp_norm(self.terms.iter().map(|t| t.1.norm()), p)
    }

    /// Smallest `r ≥ 0` with the spectrum inside `[-r, r]`.
    pub fn degree(&self) -> f64 {
        self.terms.iter().map(|t| t.0.value().abs()).fold(0.0, f64::max)
    }

    /// `Δ^k P` where `(Δφ)(t) = φ(t+1) - φ(t)`: each coefficient is
    /// multiplied by `(e^{2πiα} - 1)^k` with `α = λ - round(λ)`.
    pub fn diff_op(&self, k: u32) -> TrigPoly {
        if k == 0 {
            return self.clone();
        }
        let mut p = TrigPoly {
            terms: self
                .terms
                .iter()
                .map(|&(f, c)| {
                    let a = frac_alpha(&f);
                    let m = if a == 0.0 {
                        Complex64::new(0.0, 0.0)
                    } else {
                        (Complex64::from_polar(1.0, 2.0 * PI * a) - 1.0).powu(k)
                    };
                    (f, c * m)
                })
                .collect(),
        };
        p.prune();
        p
    }
}

/// Offset `α = λ - round(λ)` of a frequency from its nearest integer,
/// ties to even; exact zero on integer and `k = 0` lattice frequencies.
pub fn frac_alpha(f: &Frequency) -> f64 {
    match *f {
        Frequency::Integer(_) | Frequency::Lattice { k: 0, .. } => 0.0,
        Frequency::Lattice { k, base, .. } => {
            let x = k as f64 * base;
            x - x.round_ties_even()
        }
        Frequency::Real(x) => x - x.round_ties_even(),
    }
}

/// `ℓ^p` norm of a sequence of magnitudes.
pub fn lp_norm<I: IntoIterator<Item = f64>>(mags: I, p: f64) -> Result<f64, TrigError> {
    if !(p >= 1.0) {
        return Err(TrigError::InvalidExponent(p));
    }
    if p == 1.0 {
        return Ok(mags.into_iter().sum());
    }
    let v: Vec<f64> = mags.into_iter().collect();
    let m = v.iter().copied().fold(0.0, f64::max);
    if m == 0.0 {
        return Ok(0.0);
    }
    if p.is_infinite() {
        return Ok(m);
    }
    let s: f64 = v.iter().map(|a| (a / m).powf(p)).sum();
    Ok(m * s.powf(1.0 / p))
}

fn check_bases<'a, I: Iterator<Item = &'a Frequency>>(freqs: I) -> Result<(), TrigError> {
    let mut base: Option<f64> = None;
    for f in freqs {
        if let Some(b) = f.base() {
            match base {
                Some(a) if a.to_bits() != b.to_bits() => {
                    return Err(TrigError::IncompatibleBase(a, b))
                }
                _ => base = Some(b),
            }
        }
    }
    Ok(())
}
