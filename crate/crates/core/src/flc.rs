//! Two-gap spectra: trigonometric polynomials whose consecutive frequencies
//! differ by exactly `1` or `a`, approximating a target uniformly on a
//! Landau set.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::approx::{self, ApproxError, Diagnostics, IntervalBudget};
use crate::check::Check;
use crate::norms::{completeness_residual, LandauSet, NormError};
use crate::report::{ConstructionReport, GapClass, LambdaRow, ResidualRow};
use crate::trigpoly::{Frequency, TrigError, TrigPoly};

/// Condition number above which the Vandermonde system is rejected.
pub const NEAR_SINGULAR: f64 = 1e12;
/// Largest accepted entry of `V·d - I`.
pub const INVERSE_RESIDUAL: f64 = 1e-10;

#[derive(Debug, Clone, Error)]
pub enum FlcError {
    #[error("Vandermonde matrix for a = {a}, L = {l} is near singular (condition {condition:e})")]
    NearSingular { a: f64, l: u32, condition: f64 },
    #[error("invalid parameter {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error(transparent)]
    Approx(#[from] ApproxError),
    #[error(transparent)]
    Norm(#[from] NormError),
    #[error(transparent)]
    Trig(#[from] TrigError),
}

/// `d = V^{-1}` for `V_{lk} = e^{2πikla}`, `|l| ≤ L`, `0 ≤ k ≤ 2L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VandermondeWeights {
    pub a: f64,
    pub l: u32,
    /// Row `k`, column `l + L`.
    pub d: Vec<Vec<Complex64>>,
    pub condition: f64,
    pub residual: f64,
}

impl VandermondeWeights {
    pub fn weight(&self, k: usize, l: i64) -> Complex64 {
        self.d[k][(l + self.l as i64) as usize]
    }
}

fn vandermonde(a: f64, l: u32) -> DMatrix<Complex64> {
    let n = 2 * l as usize + 1;
    DMatrix::from_fn(n, n, |r, k| {
        let li = r as i64 - l as i64;
        Frequency::Real(k as f64 * a).cis(li as f64)
    })
}

pub fn vandermonde_weights(a: f64, l: u32) -> Result<VandermondeWeights, FlcError> {
    let v = vandermonde(a, l);
    let n = v.nrows();
    let sv = v.clone().singular_values();
    let condition = sv.max() / sv.min();
    if !(condition <= NEAR_SINGULAR) {
        return Err(FlcError::NearSingular { a, l, condition });
    }
    let inv = v.clone().try_inverse().ok_or(FlcError::NearSingular { a, l, condition: f64::INFINITY })?;
    let e = &v * &inv - DMatrix::<Complex64>::identity(n, n);
    let residual = e.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if !(residual <= INVERSE_RESIDUAL) {
        return Err(FlcError::NearSingular { a, l, condition });
    }
    let d = (0..n).map(|k| (0..n).map(|c| inv[(k, c)]).collect()).collect();
    Ok(VandermondeWeights { a, l, d, condition, residual })
}

/// One block `J_k = {λ0 + ka + j : N_k ≤ j ≤ N_{k+1}}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub k: usize,
    pub lo: i64,
    pub hi: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlcResult {
    /// `P` with lattice frequencies `j + k·a`, including the `λ0` shift.
    pub poly: TrigPoly,
    /// The spectrum list `λ_1 < λ_2 < …` following `λ0`.
    pub lambdas: Vec<Frequency>,
    pub blocks: Vec<Block>,
    pub weights: VandermondeWeights,
    /// Sup error of each `Q_k` fit on its grid.
    pub fit_errors: Vec<f64>,
    /// `max |P - χ|` over the dense grid on `Ω`.
    pub sup_error: f64,
    pub diagnostics: Vec<Diagnostics>,
}

/// Lattice offset `(j, k)` of a frequency `j + k·a`.
fn lattice_parts(f: &Frequency, a: f64) -> Result<(i64, i64), FlcError> {
    match *f {
        Frequency::Integer(j) => Ok((j, 0)),
        Frequency::Lattice { j, k, base } if base.to_bits() == a.to_bits() => Ok((j, k)),
        Frequency::Lattice { j, k: 0, .. } => Ok((j, 0)),
        _ => Err(FlcError::Trig(TrigError::IncompatibleBase(f.base().unwrap_or(f64::NAN), a))),
    }
}

/// Points per Landau interval for the sup-error measurement.
pub const DENSE_GRID: usize = 4096;

/// Builds `P = Σ_k e^{2πi(λ0 + ka)t} Q_k(t)` with each `Q_k` an integer
/// exponential sum, so that `|P - χ| ≤ ε` on `Ω` and consecutive spectral
/// points differ by `1` or `a`.
pub fn flc_polynomial<F>(
    a: f64,
    omega: &LandauSet,
    chi: F,
    lambda0: Frequency,
    eps: f64,
    budget: &IntervalBudget,
) -> Result<FlcResult, FlcError>
where
    F: Fn(f64) -> Complex64,
{
    if !(a > 0.0) {
        return Err(FlcError::InvalidParameter { name: "a", value: a });
    }
    let (j0, k0) = lattice_parts(&lambda0, a)?;
    let w = vandermonde_weights(a, omega.l)?;
    let big_l = omega.l as i64;
    let n = 2 * omega.l as usize + 1;
    let delta = eps / n as f64;
    let shifted = |t: f64| chi(t) * Frequency::lattice(j0, k0, a).cis(-t);
    let mut terms = Vec::new();
    let mut blocks = Vec::with_capacity(n);
    let mut fit_errors = Vec::with_capacity(n);
    let mut diagnostics = Vec::with_capacity(n);
    let mut lo = 1i64;
    for k in 0..n {
        let target = |t: f64| {
            let s: Complex64 = (-big_l..=big_l).map(|l| w.weight(k, l) * shifted(t + l as f64)).sum();
            s * Frequency::Real(k as f64 * a).cis(-t)
        };
        let fit = fit_block(&target, omega.h, lo, delta, budget)?;
        let hi = fit.poly.frequencies().filter_map(|f| f.as_integer()).fold(lo, i64::max);
        for (f, c) in fit.poly.terms() {
            let j = f.as_integer().expect("integer spectrum");
            terms.push((Frequency::lattice(j0 + j, k0 + k as i64, a), *c));
        }
        blocks.push(Block { k, lo, hi });
        fit_errors.push(fit.sup_error);
        diagnostics.push(fit.diagnostics);
        lo = hi;
    }
    let poly = TrigPoly::from_terms(terms)?;
    let mut lambdas = Vec::new();
    for b in &blocks {
        for j in b.lo..=b.hi {
            lambdas.push(Frequency::lattice(j0 + j, k0 + b.k as i64, a));
        }
    }
    let sup_error = sup_error_on(&poly, omega, &chi);
    Ok(FlcResult { poly, lambdas, blocks, weights: w, fit_errors, sup_error, diagnostics })
}

/// Window lengths tried for one block: every length up to 16, then
/// geometric growth. Short windows keep later blocks close to their targets.
fn window_lengths(max_terms: usize) -> impl Iterator<Item = usize> {
    let mut n = 0usize;
    std::iter::from_fn(move || {
        n = if n < 16 { n + 1 } else { n + n / 4 };
        (n <= max_terms.max(1)).then_some(n)
    })
}

/// Shortest window `[lo, lo + n)` whose fit meets `δ`, else the best seen.
fn fit_block<F>(target: &F, h: f64, lo: i64, delta: f64, budget: &IntervalBudget) -> Result<approx::IntervalFit, FlcError>
where
    F: Fn(f64) -> Complex64,
{
    let mut best: Option<approx::IntervalFit> = None;
    for n in window_lengths(budget.max_terms) {
        let b = IntervalBudget { start_terms: n, max_terms: n, ..*budget };
        let fit = approx::interval_best_effort(approx::fit_exponentials_on_interval(target, h, lo - 1, delta, &b))?;
        let done = fit.sup_error <= delta;
        if best.as_ref().is_none_or(|b| fit.sup_error < b.sup_error) {
            best = Some(fit);
        }
        if done {
            break;
        }
    }
    Ok(best.expect("at least one window length"))
}

/// `max |P - χ|` over `DENSE_GRID` points per interval of `Ω`.
pub fn sup_error_on<F: Fn(f64) -> Complex64>(poly: &TrigPoly, omega: &LandauSet, chi: &F) -> f64 {
    let mut worst = 0.0f64;
    for (lo, hi) in omega.intervals() {
        for i in 0..DENSE_GRID {
            let t = lo + (hi - lo) * i as f64 / (DENSE_GRID - 1) as f64;
            worst = worst.max((poly.eval(t) - chi(t)).norm());
        }
    }
    worst
}

/// Classifies consecutive gaps using only the lattice coordinates.
pub fn classify_gaps(prev: &Frequency, lambdas: &[Frequency], a: f64) -> Result<Vec<GapClass>, FlcError> {
    let mut last = lattice_parts(prev, a)?;
    let mut out = Vec::with_capacity(lambdas.len());
    for f in lambdas {
        let cur = lattice_parts(f, a)?;
        out.push(match (cur.0 - last.0, cur.1 - last.1) {
            (1, 0) => GapClass::One,
            (0, 1) => GapClass::A,
            _ => GapClass::Other,
        });
        last = cur;
    }
    Ok(out)
}

/// One step of the driver: a Landau set and a target on it.
pub struct FlcStep {
    pub omega: LandauSet,
    pub chi: Box<dyn Fn(f64) -> Complex64 + Sync>,
}

/// Runs the steps with `ε_k = 1/k`, chaining `λ0` from step to step, and
/// probes completeness of the accumulated family on the given Landau sets.
pub fn flc_driver(
    a: f64,
    steps: &[FlcStep],
    probes: &[(LandauSet, Box<dyn Fn(f64) -> Complex64 + Sync>)],
    budget: &IntervalBudget,
) -> Result<ConstructionReport, FlcError> {
    let mut report = ConstructionReport::new("flc");
    let mut lambda0 = Frequency::lattice(0, 0, a);
    let mut all: Vec<Frequency> = Vec::new();
    for (i, step) in steps.iter().enumerate() {
        let k = i + 1;
        let eps = 1.0 / k as f64;
        let res = flc_polynomial(a, &step.omega, &step.chi, lambda0, eps, budget)?;
        let gaps = classify_gaps(&lambda0, &res.lambdas, a)?;
        for (f, g) in res.lambdas.iter().zip(&gaps) {
            let (j, kk) = lattice_parts(f, a)?;
            report.lambdas.push(LambdaRow {
                n: report.lambdas.len() + 1,
                value: f.value(),
                j: Some(j),
                k: Some(kk),
                ratio: None,
                required: None,
                gap_class: Some(*g),
                source: format!("step {k}"),
            });
        }
        report.checks.push(Check::at_most(format!("step {k} sup |P - chi|"), res.sup_error, eps));
        report.checks.push(Check::at_most(
            format!("step {k} Vandermonde residual"),
            res.weights.residual,
            1e-10,
        ));
        report.checks.push(Check::at_most(
            format!("step {k} gaps outside {{1, a}}"),
            gaps.iter().filter(|g| **g == GapClass::Other).count() as f64,
            0.0,
        ));
        report.residuals.push(ResidualRow {
            name: "sup |P_k - chi_k|".into(),
            step: k,
            p: f64::INFINITY,
            value: res.sup_error,
            bound: eps,
        });
        report.push_poly(&format!("P_{k}"), &res.poly);
        for (kk, d) in res.diagnostics.iter().enumerate() {
            report.push_diagnostics(format!("step {k} Q_{kk}"), d);
        }
        all.extend(res.lambdas.iter().copied());
        lambda0 = *res.lambdas.last().unwrap_or(&lambda0);
        let values: Vec<f64> = all.iter().map(|f| f.value()).collect();
        for (pi, (om, target)) in probes.iter().enumerate() {
            match completeness_residual(&values, om, target) {
                Ok(r) => report.residuals.push(ResidualRow {
                    name: format!("completeness probe {pi} on Omega({}, {})", om.l, om.h),
                    step: k,
                    p: 2.0,
                    value: r.residual,
                    bound: 1.0,
                }),
                Err(e) => report.notes.push(format!("step {k} probe {pi}: {e}")),
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian(t: f64) -> Complex64 {
        Complex64::new((-t * t).exp(), 0.0)
    }

    #[test]
    fn trivial_weights() {
        let w = vandermonde_weights(2f64.sqrt(), 0).unwrap();
        assert_eq!(w.d.len(), 1);
        assert!((w.d[0][0] - 1.0).norm() < 1e-15);
    }

    #[test]
    fn golden_weights_invert() {
        let w = vandermonde_weights((5f64.sqrt() - 1.0) / 2.0, 1).unwrap();
        assert!(w.residual <= 1e-12);
        let v = vandermonde(w.a, 1);
        for l in 0..3 {
            for k in 0..3 {
                let s: Complex64 = (0..3).map(|m| v[(l, m)] * w.d[m][k]).sum();
                let want = if l == k { 1.0 } else { 0.0 };
                assert!((s - want).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn near_rational_base_is_rejected() {
        for a in [1.0 / 3.0, 1.0 / 3.0 + 1e-9] {
            let r = vandermonde_weights(a, 2);
            assert!(matches!(r, Err(FlcError::NearSingular { .. })), "{a}");
        }
        let w = vandermonde_weights(1.0 / 3.0 + 1e-6, 2).unwrap();
        assert!(w.condition > 1e5);
    }

    #[test]
    fn single_interval_is_integer_spectrum() {
        let om = LandauSet::new(0, 0.5).unwrap();
        let a = 2f64.sqrt();
        let r = flc_polynomial(a, &om, gaussian, Frequency::Integer(0), 0.05, &IntervalBudget::default()).unwrap();
        assert_eq!(r.blocks.len(), 1);
        assert!(r.poly.frequencies().all(|f| matches!(f, Frequency::Lattice { k: 0, .. })));
        let gaps = classify_gaps(&Frequency::lattice(0, 0, a), &r.lambdas, a).unwrap();
        assert!(gaps.iter().all(|g| *g == GapClass::One));
        assert!(r.sup_error <= 0.05);
    }

    #[test]
    fn modulated_target_uses_shift() {
        let om = LandauSet::new(0, 0.5).unwrap();
        let a = 2f64.sqrt();
        let l0 = Frequency::lattice(7, 2, a);
        let chi = |t: f64| l0.cis(t) * gaussian(t);
        let r = flc_polynomial(a, &om, chi, l0, 0.05, &IntervalBudget::default()).unwrap();
        assert!(r.sup_error <= 0.05);
        let gaps = classify_gaps(&l0, &r.lambdas, a).unwrap();
        assert!(gaps.iter().all(|g| *g != GapClass::Other));
        assert!(r.lambdas[0].value() > l0.value());
    }

    #[test]
    fn two_gap_certificate() {
        let a = 2f64.sqrt();
        let om = LandauSet::new(1, 0.2).unwrap();
        let chi = |t: f64| if om.contains(t) { gaussian(t) } else { Complex64::new(0.0, 0.0) };
        let r = flc_polynomial(a, &om, chi, Frequency::Integer(0), 0.1, &IntervalBudget::default()).unwrap();
        assert!(r.sup_error <= 0.1, "{}", r.sup_error);
        assert!(r.weights.residual <= 1e-10);
        let gaps = classify_gaps(&Frequency::lattice(0, 0, a), &r.lambdas, a).unwrap();
        assert!(gaps.iter().all(|g| *g != GapClass::Other));
        assert!(gaps.contains(&GapClass::One) && gaps.contains(&GapClass::A));
        for w in r.blocks.windows(2) {
            let top = Frequency::lattice(w[0].hi, w[0].k as i64, a).value();
            let bottom = Frequency::lattice(w[1].lo, w[1].k as i64, a).value();
            assert!((top + a - bottom).abs() < 1e-9);
        }
        let worst_fit = r.fit_errors.iter().copied().fold(0.0, f64::max);
        assert!(r.sup_error <= 3.0 * worst_fit + 1e-9);
    }

    #[test]
    fn reconstruction_identity() {
        let a = 2f64.sqrt();
        let om = LandauSet::new(1, 0.2).unwrap();
        let r = flc_polynomial(a, &om, gaussian, Frequency::Integer(0), 0.1, &IntervalBudget::default()).unwrap();
        let scale: f64 = r.poly.terms().iter().map(|(_, c)| c.norm()).sum();
        let parts: Vec<TrigPoly> = (0..3)
            .map(|k| {
                TrigPoly::from_terms(
                    r.poly.terms().iter().filter(|(f, _)| matches!(f, Frequency::Lattice { k: kk, .. } if *kk == k as i64)).copied(),
                )
                .unwrap()
            })
            .collect();
        for &t in &[-0.2, 0.0, 0.17] {
            for l in -1i64..=1 {
                let direct = r.poly.eval(t + l as f64);
                let rebuilt: Complex64 = parts
                    .iter()
                    .enumerate()
                    .map(|(k, q)| Frequency::Real(k as f64 * a).cis(l as f64) * q.eval(t))
                    .sum();
                assert!((direct - rebuilt).norm() < 1e-10 * scale.max(1.0));
            }
        }
    }
}
