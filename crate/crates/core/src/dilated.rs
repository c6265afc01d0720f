//! Products `Γ(t) = ∏ γ_i(ν_i t)` of dilated periodic series.
//!
//! With dilations growing fast enough every frequency of `Γ` has a unique
//! representation `Σ m_i ν_i`, `|m_i| ≤ deg γ_i`, so the coefficients of `Γ`
//! are products of factor coefficients and the `ℓ^p` norm of `Γ` factors.
//! Dilations are `u128` because the sparse construction outgrows `u64`.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_complex::Complex64;

use crate::norms::{ap_norm_torus, NormError, PeriodicSeries};

#[derive(Debug, Clone)]
pub struct Factor {
    pub series: Arc<PeriodicSeries>,
    pub nu: u128,
    /// Degree reserved for this factor when checking separation; at least
    /// the order of `series`, larger when the factor may later be replaced
    /// by a longer series.
    pub width: u128,
}

impl Factor {
    pub fn degree(&self) -> u128 {
        self.width
    }
}

#[derive(Debug, Clone, Default)]
pub struct DilatedProduct {
    factors: Vec<Factor>,
}

/// `frac(ν t)` in `[0, 1)`, exact when `t` is a dyadic rational with at
/// most 127 fractional bits.
pub fn frac_mul(nu: u128, t: f64) -> f64 {
    if t == 0.0 || !t.is_finite() {
        return 0.0;
    }
    let bits = t.abs().to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let (mant, e) = if exp == 0 {
        (bits & ((1 << 52) - 1), -1074)
    } else {
        ((bits & ((1 << 52) - 1)) | (1 << 52), exp - 1075)
    };
    if e >= 0 {
        return 0.0;
    }
    let k = -e;
    let f = if k <= 127 {
        let modulus_mask = (1u128 << k) - 1;
        let r = (nu & modulus_mask).wrapping_mul(mant as u128) & modulus_mask;
        r as f64 * (-(k as f64)).exp2()
    } else {
        (nu as f64 * t.abs()).rem_euclid(1.0)
    };
    if t < 0.0 && f > 0.0 {
        1.0 - f
    } else {
        f
    }
}

impl DilatedProduct {
    pub fn new() -> Self {
        DilatedProduct::default()
    }

    pub fn from_factors(factors: Vec<Factor>) -> Self {
        DilatedProduct { factors }
    }

    pub fn push(&mut self, series: Arc<PeriodicSeries>, nu: u128) {
        let width = series.order() as u128;
        self.factors.push(Factor { series, nu, width });
    }

    pub fn push_with_width(&mut self, series: Arc<PeriodicSeries>, nu: u128, width: u128) {
        let width = width.max(series.order() as u128);
        self.factors.push(Factor { series, nu, width });
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    /// The product of both factor lists.
    pub fn concat(&self, other: &DilatedProduct) -> Self {
        let mut factors = self.factors.clone();
        factors.extend(other.factors.iter().cloned());
        DilatedProduct { factors }
    }

    /// The same product with factor `i` replaced.
    pub fn with_replaced(&self, i: usize, series: Arc<PeriodicSeries>) -> Self {
        let mut factors = self.factors.clone();
        factors[i].width = factors[i].width.max(series.order() as u128);
        factors[i].series = series;
        DilatedProduct { factors }
    }

    fn sorted(&self) -> Vec<&Factor> {
        let mut f: Vec<&Factor> = self.factors.iter().collect();
        f.sort_by_key(|f| f.nu);
        f
    }

    /// `Σ deg_i ν_i`, the largest frequency of the product; `None` on
    /// overflow.
    pub fn reach(&self) -> Option<u128> {
        self.factors.iter().try_fold(0u128, |acc, f| acc.checked_add(f.degree().checked_mul(f.nu)?))
    }

    /// Smallest dilation a new top factor may use while keeping the product
    /// separated.
    pub fn separation_floor(&self) -> Option<u128> {
        self.reach()?.checked_mul(2)?.checked_add(1)
    }

    /// Every dilation exceeds twice the reach of the factors below it.
    pub fn is_separated(&self) -> bool {
        let mut reach: u128 = 0;
        for f in self.sorted() {
            if f.nu <= reach.saturating_mul(2) {
                return false;
            }
            reach = match f.degree().checked_mul(f.nu).and_then(|x| reach.checked_add(x)) {
                Some(r) => r,
                None => return false,
            };
        }
        true
    }

    /// `Γ̂(0) = ∏ γ̂_i(0)` for a separated product.
    pub fn constant(&self) -> Complex64 {
        self.factors.iter().map(|f| f.series.coeff(0)).product()
    }

    /// `‖Γ‖_{A^p}^p = ∏ ‖γ_i‖_{A^p}^p` for a separated product.
    pub fn norm_pow(&self, p: f64) -> Result<f64, NormError> {
        self.factors.iter().try_fold(1.0, |acc, f| Ok(acc * ap_norm_torus(&f.series, p)?.upper().powf(p)))
    }

    /// Smallest value of `Γ` over a grid of `m` points per factor period,
    /// bounded below by the product of the factors' minima.
    pub fn min_lower_bound(&self, m: usize) -> f64 {
        self.factors
            .iter()
            .map(|f| f.series.eval_grid(m).iter().map(|v| v.re).fold(f64::INFINITY, f64::min))
            .product()
    }

    pub fn ap_norm(&self, p: f64) -> Result<f64, NormError> {
        Ok(self.norm_pow(p)?.powf(1.0 / p))
    }

    /// `‖Γ - 1‖_{A^p}`: only the constant coefficient changes.
    pub fn ap_norm_minus_one(&self, p: f64) -> Result<f64, NormError> {
        let c0 = self.constant();
        let v = self.norm_pow(p)? - c0.norm().powf(p) + (c0 - 1.0).norm().powf(p);
        Ok(v.max(0.0).powf(1.0 / p))
    }

    /// `(‖Γ‖^p - |Γ̂(0)|^p)^{1/p}`: the norm of the non-constant part.
    pub fn ap_norm_nonconstant(&self, p: f64) -> Result<f64, NormError> {
        let v = self.norm_pow(p)? - self.constant().norm().powf(p);
        Ok(v.max(0.0).powf(1.0 / p))
    }

    /// Number of terms in the expanded product.
    pub fn expanded_len(&self) -> f64 {
        self.factors.iter().map(|f| f.series.coeffs().len() as f64).product()
    }

    /// Coefficients of the expanded product in increasing frequency; `None`
    /// when the expansion exceeds `limit` terms.
    pub fn expand(&self, limit: usize) -> Option<BTreeMap<i128, Complex64>> {
        if self.expanded_len() > limit as f64 {
            return None;
        }
        let mut acc: BTreeMap<i128, Complex64> = BTreeMap::from([(0, Complex64::new(1.0, 0.0))]);
        for f in &self.factors {
            let nu = i128::try_from(f.nu).ok()?;
            let n = f.series.order() as i64;
            let mut next = BTreeMap::new();
            for (&lam, &a) in &acc {
                for (i, &b) in f.series.coeffs().iter().enumerate() {
                    let m = i as i64 - n;
                    let key = lam.checked_add((m as i128).checked_mul(nu)?)?;
                    *next.entry(key).or_insert(Complex64::new(0.0, 0.0)) += a * b;
                }
            }
            acc = next;
        }
        Some(acc)
    }

    /// `‖Γ‖_{A^p}^p` summed over the expanded coefficients.
    pub fn expanded_norm_pow(&self, p: f64, limit: usize) -> Option<f64> {
        Some(self.expand(limit)?.values().map(|c| c.norm().powf(p)).sum())
    }

    pub fn eval(&self, t: f64) -> Complex64 {
        self.factors.iter().map(|f| f.series.eval(frac_mul(f.nu, t))).product()
    }

    /// Frequencies `λ` of a separated product with `|λ - x| ≤ radius`,
    /// with their coefficients.
    pub fn spectrum_near(&self, x: f64, radius: f64) -> Vec<(i128, Complex64)> {
        let mut f = self.sorted();
        f.reverse();
        let mut below = vec![0f64; f.len() + 1];
        for i in (0..f.len()).rev() {
            below[i] = below[i + 1] + f[i].degree() as f64 * f[i].nu as f64;
        }
        let mut out = Vec::new();
        walk(&f, &below, 0, 0, Complex64::new(1.0, 0.0), x, radius, &mut out);
        out
    }
}

#[allow(clippy::too_many_arguments)]
fn walk(
    f: &[&Factor],
    below: &[f64],
    i: usize,
    lam: i128,
    coef: Complex64,
    x: f64,
    radius: f64,
    out: &mut Vec<(i128, Complex64)>,
) {
    if i == f.len() {
        if (lam as f64 - x).abs() <= radius {
            out.push((lam, coef));
        }
        return;
    }
    let nu = f[i].nu as i128;
    let n = f[i].series.order() as i64;
    let slack = below[i + 1] + radius;
    for m in -n..=n {
        let c = f[i].series.coeff(m);
        if c == Complex64::new(0.0, 0.0) {
            continue;
        }
        let l = lam + m as i128 * nu;
        if (l as f64 - x).abs() <= slack {
            walk(f, below, i + 1, l, coef * c, x, radius, out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::fejer;
    use crate::norms::Tail;

    fn series(c: &[f64]) -> Arc<PeriodicSeries> {
        Arc::new(PeriodicSeries::new(c.iter().map(|&v| Complex64::new(v, 0.0)).collect(), Tail::EXACT))
    }

    #[test]
    fn frac_mul_is_exact_on_dyadics() {
        assert_eq!(frac_mul(3, 0.25), 0.75);
        assert_eq!(frac_mul(5, -0.125), 0.375);
        assert_eq!(frac_mul(1u128 << 100, 0.5), 0.0);
        let nu = (1u128 << 90) + 3;
        assert_eq!(frac_mul(nu, 0.5), 0.5);
        assert_eq!(frac_mul(7, 3.0), 0.0);
    }

    #[test]
    fn norm_identity_on_separated_product() {
        let g = series(&[0.2, 0.5, 1.0, 0.5, 0.2]);
        let mut prod = DilatedProduct::new();
        prod.push(g.clone(), 3);
        let nu2 = prod.separation_floor().unwrap();
        prod.push(g.clone(), nu2);
        let nu3 = prod.separation_floor().unwrap();
        prod.push(g, nu3);
        assert!(prod.is_separated());
        for p in [1.0, 1.5, 3.0] {
            let direct = prod.expanded_norm_pow(p, 1 << 20).unwrap();
            assert!((direct - prod.norm_pow(p).unwrap()).abs() < 1e-12 * direct);
        }
        let mut unsep = DilatedProduct::new();
        unsep.push(series(&[0.5, 1.0, 0.5]), 1);
        unsep.push(series(&[0.5, 1.0, 0.5]), 2);
        assert!(!unsep.is_separated());
        assert!(unsep.expand(100).unwrap().len() < 9);
    }

    #[test]
    fn evaluation_matches_expansion() {
        let mut prod = DilatedProduct::new();
        prod.push(Arc::new(fejer(3)), 2);
        prod.push(Arc::new(fejer(2)), 17);
        let exp = prod.expand(1000).unwrap();
        for i in 0..32 {
            let t = i as f64 / 32.0 + 0.01;
            let direct: Complex64 = exp
                .iter()
                .map(|(&l, &c)| c * Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * l as f64 * t))
                .sum();
            assert!((direct - prod.eval(t)).norm() < 1e-12);
        }
    }

    #[test]
    fn spectrum_search_finds_all_nearby_frequencies() {
        let mut prod = DilatedProduct::new();
        prod.push(Arc::new(fejer(2)), 1);
        prod.push(Arc::new(fejer(2)), 5);
        prod.push(Arc::new(fejer(2)), 25);
        let exp = prod.expand(1000).unwrap();
        for x in [-30.0, 0.0, 12.5, 49.0] {
            let mut near: Vec<i128> = prod.spectrum_near(x, 3.0).into_iter().map(|v| v.0).collect();
            let mut want: Vec<i128> =
                exp.iter().filter(|(&l, c)| (l as f64 - x).abs() <= 3.0 && c.norm() > 0.0).map(|v| *v.0).collect();
            near.sort();
            want.sort();
            assert_eq!(near, want);
        }
    }

    #[test]
    fn minus_one_norm_uses_only_the_constant() {
        let g = series(&[0.25, 1.0, 0.25]);
        let mut prod = DilatedProduct::new();
        prod.push(g.clone(), 1);
        prod.push(g, 7);
        let mut exp = prod.expand(100).unwrap();
        *exp.get_mut(&0).unwrap() -= 1.0;
        let direct: f64 = exp.values().map(|c| c.norm().powf(1.5)).sum::<f64>().powf(1.0 / 1.5);
        assert!((direct - prod.ap_norm_minus_one(1.5).unwrap()).abs() < 1e-12);
    }
}
