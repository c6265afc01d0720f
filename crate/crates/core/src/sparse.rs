//! The slowly lacunary construction: blocks `Q = Σ c_n e^{2πiσ_n t} P(ν_n t)`
//! with product weights `Γ = ∏ γ(ν_n t)`, and the inductive driver that
//! strings blocks into one sequence with `λ_{n+1}/λ_n > 1 + ε_n`.
//!
//! Weights stay factored as `u_0·G` with `G` a separated [`DilatedProduct`].
//! A function `u_0(t)·Σ_n c_n e^{2πiσ_n t} F_n(t)` with periodic `F_n`
//! splits into clusters of transform mass around the frequencies of the
//! `F_n`. The cluster at zero is computed directly on the line; every other
//! cluster is bounded by `‖u_0‖_{A^p}` times the `ℓ^p` mass of the
//! non-constant coefficients, which factors over the product.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::approx::{gamma_best_effort, lemma_gamma_p, ApproxError, FitBudget, GammaBudget, GammaP, POSITIVITY_MARGIN};
use crate::blocks::{self, BlockError};
use crate::check::Check;
use crate::dilated::{DilatedProduct, Factor};
use crate::norms::{
    ap_norm_line, ap_norm_torus, completeness_residual, grid_step, triple_norm, LandauSet, LineFunction, NormError,
    PeriodicSeries, Profile,
};
use crate::report::{ConstructionReport, LambdaRow, ResidualRow};
use crate::trigpoly::{Frequency, TrigError, TrigPoly};

const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[derive(Debug, Clone, Error)]
pub enum SparseError {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("dilation for factor {factor} not found after {tries} escalations")]
    SeparationFailure { factor: usize, tries: usize },
    #[error("schedule infeasible at step {step}: {reason}")]
    ScheduleInfeasible { step: usize, reason: String },
    #[error("clusters {gap} apart cannot hold windows around a spread of {spread}")]
    ClusterOverlap { gap: f64, spread: f64 },
    #[error(transparent)]
    Approx(#[from] ApproxError),
    #[error(transparent)]
    Norm(#[from] NormError),
    #[error(transparent)]
    Block(#[from] BlockError),
    #[error(transparent)]
    Trig(#[from] TrigError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparseBudget {
    pub gamma: GammaBudget,
    /// Factor-4 escalations allowed per dilation.
    pub max_escalations: usize,
    /// Largest expansion of `Γ` used for the direct norm identity check.
    pub expand_limit: usize,
    pub max_fillers: usize,
    /// Starting half-width of spectral windows for line norms.
    pub window: f64,
}

impl Default for SparseBudget {
    fn default() -> Self {
        SparseBudget {
            gamma: GammaBudget {
                fit: FitBudget { start_degree: 4, degree_cap: 4, max_iterations: 3_000, total_iterations: 12_000 },
                fejer_cap: 63,
                h_floor: 1.0 / 128.0,
                fit_order: 4096,
            },
            max_escalations: 64,
            expand_limit: 20_000_000,
            max_fillers: 1_000_000,
            window: 32.0,
        }
    }
}

/// Smallest distance kept between distinct cluster centres beyond the
/// spread of one cluster.
const CLUSTER_MARGIN: f64 = 32.0;

/// A weight `u_0·G` with `u_0` compactly supported and `G` a separated
/// dilated product.
#[derive(Debug, Clone)]
pub struct Weight {
    pub base: LineFunction,
    pub product: DilatedProduct,
}

impl Weight {
    pub fn from_line(u: LineFunction) -> Self {
        Weight { base: u, product: DilatedProduct::new() }
    }

    pub fn eval(&self, t: f64) -> Complex64 {
        let b = self.base.eval(t);
        if b == Complex64::new(0.0, 0.0) {
            b
        } else {
            b * self.product.eval(t)
        }
    }

    /// `ŵ(x) = Σ_λ Ĝ(λ) û_0(x - λ)` over the frequencies `λ` of `G` within
    /// `radius` of `x`.
    pub fn ft(&self, x: f64, radius: f64) -> Complex64 {
        self.product.spectrum_near(x, radius).into_iter().map(|(lam, g)| g * self.base.ft(x - lam as f64)).sum()
    }
}

/// `σ_n = n + 0.3/(n + 1)`.
pub fn sigma(n: usize) -> f64 {
    n as f64 + 0.3 / (n as f64 + 1.0)
}

/// One summand `c·e^{2πiσt}·F(t)` of a clustered function, with the
/// periodic `F` described by its constant coefficient, the `A^p` norm of its
/// non-constant part and its `A^1` norm.
#[derive(Debug, Clone, Copy)]
pub struct Summand {
    pub c: Complex64,
    pub sigma: f64,
    pub constant: Complex64,
    pub rest: f64,
    pub l1: f64,
}

/// A bound `(zero^p + rest^p)^{1/p} + tail` on a clustered norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Clustered {
    pub zero: f64,
    pub rest: f64,
    pub tail: f64,
    pub value: f64,
}

/// `‖u_0·Σ c_n e^{2πiσ_n t} F_n − χ‖_{A^p(ℝ)}` for periodic `F_n` whose
/// nonzero frequencies are at least `gap` apart from each other and from
/// zero.
pub fn clustered_norm(
    base: &LineFunction,
    summands: &[Summand],
    minus: Option<&LineFunction>,
    p: f64,
    gap: f64,
    window: f64,
) -> Result<Clustered, SparseError> {
    let lo = summands.iter().map(|s| s.sigma).fold(0.0, f64::min);
    let hi = summands.iter().map(|s| s.sigma).fold(0.0, f64::max);
    let spread = hi - lo;
    let radius = ((gap - spread) / 2.0).min(2.0 * window);
    if !(radius >= 1.0) {
        return Err(SparseError::ClusterOverlap { gap, spread });
    }
    let h0 = TrigPoly::from_terms(summands.iter().map(|s| (Frequency::Real(s.sigma), s.c * s.constant)))?;
    let mut zero_fn = base.mul_poly(&h0)?;
    if let Some(m) = minus {
        zero_fn = zero_fn.sub(m);
    }
    let zero = ap_norm_line(&zero_fn, p, window)?.upper();
    let base_norm = ap_norm_line(base, p, window)?.upper();
    let rest = base_norm * summands.iter().map(|s| s.c.norm() * s.rest).sum::<f64>();
    let mut tail = summands.iter().map(|s| s.c.norm() * s.l1).sum::<f64>() * base.tail_bound(radius, p);
    if let Some(m) = minus {
        tail += m.tail_bound(radius, p);
    }
    let value = (zero.powf(p) + rest.powf(p)).powf(1.0 / p) + tail;
    Ok(Clustered { zero, rest, tail, value })
}

/// The summand for `c e^{2πiσt}·A(t)·(B(t) − 1)` with `A`, `B` sharing a
/// separated product.
fn product_minus_one(c: Complex64, sigma: f64, a: &DilatedProduct, b: &DilatedProduct, p: f64) -> Result<Summand, NormError> {
    let constant = a.constant() * (b.constant() - 1.0);
    let full = a.ap_norm(p)? * b.ap_norm_minus_one(p)?;
    let rest = (full.powf(p) - constant.norm().powf(p)).max(0.0).powf(1.0 / p);
    let l1 = a.ap_norm(1.0)? * (b.ap_norm(1.0)? + 1.0);
    Ok(Summand { c, sigma, constant, rest, l1 })
}

/// The summand for `c e^{2πiσt}·A(t)`.
fn product_term(c: Complex64, sigma: f64, a: &DilatedProduct, p: f64) -> Result<Summand, NormError> {
    Ok(Summand { c, sigma, constant: a.constant(), rest: a.ap_norm_nonconstant(p)?, l1: a.ap_norm(1.0)? })
}

/// Least distance between two distinct frequencies of a separated product
/// (infinite for an empty product).
pub fn cluster_gap(g: &DilatedProduct) -> f64 {
    let mut f: Vec<&Factor> = g.factors().iter().collect();
    f.sort_by_key(|f| f.nu);
    let mut reach = 0u128;
    let mut gap = f64::INFINITY;
    for x in f {
        let room = x.nu.saturating_sub(reach.saturating_mul(2));
        gap = gap.min(room as f64);
        reach = reach.saturating_add(x.degree().saturating_mul(x.nu));
    }
    gap
}

/// One term `c·e^{2πiσt}·P(νt)` of a block polynomial `Q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QTerm {
    pub c: Complex64,
    pub sigma: f64,
    pub nu: u128,
}

/// The output of the block lemma before the threshold `d` is known.
#[derive(Debug, Clone)]
pub struct SparseBlocks {
    pub p: f64,
    pub eta: f64,
    /// `M = 1 + Σ |c_n|·|||u_0 e^{2πiσ_n·}|||·‖G‖_{A^1}`.
    pub m_const: f64,
    pub eps: f64,
    pub delta: f64,
    pub gamma: GammaP,
    /// `(σ_n, c_n)` of `H`, by increasing `σ`.
    pub terms: Vec<(f64, Complex64)>,
    pub weight: Weight,
    gamma_p: Arc<PeriodicSeries>,
    degree: i64,
}

/// The blocks, `Γ` and `Q` for one threshold `d`.
#[derive(Debug, Clone)]
pub struct BlockBuild {
    pub d: f64,
    /// `Γ = ∏ γ(ν_n t)`.
    pub gamma_product: DilatedProduct,
    pub q: Vec<QTerm>,
    /// Spectrum of `Q` in increasing order with the term it comes from.
    pub lambdas: Vec<(f64, usize)>,
    pub checks: Vec<Check>,
    /// Bounds on `‖u(ΓQ - H)‖_{A^q}` for `q = p` and `q = 2p`.
    pub vi: Vec<(f64, Clustered)>,
    pub escalations: usize,
}

impl BlockBuild {
    pub fn nus(&self) -> Vec<u128> {
        self.q.iter().map(|t| t.nu).collect()
    }
}

/// Runs the block lemma for `u`, `H`, `p`, `η`: fixes `ε = η/(4M)`, obtains
/// `(P, γ)` from the gamma lemma and returns `δ = 1/(1 + deg P)` with a
/// builder for any threshold `d`.
pub fn lemma_sparse_blocks(
    u: &Weight,
    h: &TrigPoly,
    p: f64,
    eta: f64,
    budget: &SparseBudget,
) -> Result<SparseBlocks, SparseError> {
    if !(p > 1.0) {
        return Err(ApproxError::InvalidExponent(p).into());
    }
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(ApproxError::InvalidParameter { name: "eta", value: eta }.into());
    }
    if h.is_empty() {
        return Err(ApproxError::InvalidParameter { name: "H terms", value: 0.0 }.into());
    }
    let mut terms: Vec<(f64, Complex64)> = h.terms().iter().map(|(f, c)| (f.value(), *c)).collect();
    terms.sort_by(|a, b| a.0.total_cmp(&b.0));
    let g1 = u.product.ap_norm(1.0)?;
    let mut m_const = 1.0;
    for &(s, c) in &terms {
        let e = u.base.mul_poly(&TrigPoly::monomial(Frequency::Real(s), ONE))?;
        m_const += c.norm() * triple_norm(&e)? * g1;
    }
    let eps = (eta / (4.0 * m_const)).min(0.99);
    let gamma = gamma_best_effort(lemma_gamma_p(p, eps, &budget.gamma))?;
    let mut degree = 0;
    for f in gamma.poly.frequencies() {
        let n = f.as_integer().ok_or(TrigError::NonIntegerSpectrum(f.value()))?;
        if n < 1 {
            return Err(ApproxError::PropertyViolation("spec P ⊂ [1, ∞)").into());
        }
        degree = degree.max(n);
    }
    let gamma_p = Arc::new(PeriodicSeries::from_trigpoly(&gamma.poly)?.mul(&gamma.gamma));
    Ok(SparseBlocks {
        p,
        eta,
        m_const,
        eps,
        delta: 1.0 / gamma.degree_plus_one(),
        gamma,
        terms,
        weight: u.clone(),
        gamma_p,
        degree,
    })
}

impl SparseBlocks {
    fn poly_spectrum(&self) -> Vec<(i64, Complex64)> {
        let mut s: Vec<(i64, Complex64)> =
            self.gamma.poly.terms().iter().map(|(f, c)| (f.as_integer().unwrap(), *c)).collect();
        s.sort_by_key(|v| v.0);
        s
    }

    fn spread(&self) -> f64 {
        let hi = self.terms.iter().map(|t| t.0).fold(0.0, f64::max);
        let lo = self.terms.iter().map(|t| t.0).fold(0.0, f64::min);
        hi - lo
    }

    /// `λ`s of the block for term `n` at dilation `ν`.
    fn block(&self, n: usize, nu: u128) -> Vec<f64> {
        self.poly_spectrum().iter().map(|&(l, _)| (l as u128 * nu) as f64 + self.terms[n].0).collect()
    }

    /// Chooses `ν_1 < ν_2 < …` by factor-4 escalation and certifies the
    /// block conditions.
    pub fn build(&self, d: f64, budget: &SparseBudget) -> Result<BlockBuild, SparseError> {
        let spec = self.poly_spectrum();
        if spec.is_empty() {
            return Err(ApproxError::PropertyViolation("P is zero").into());
        }
        let width = (self.gamma.gamma.order() as i64 + self.degree) as u128;
        let margin = (2.0 * (self.spread() + CLUSTER_MARGIN)).ceil() as u128;
        let gamma = Arc::new(self.gamma.gamma.clone());
        let mut combined = self.weight.product.clone();
        let mut gamma_product = DilatedProduct::new();
        let mut lambdas: Vec<(f64, usize)> = Vec::new();
        let mut escalations = 0;
        let ratio_ok = |prev: Option<f64>, blk: &[f64]| {
            let mut last = prev;
            for &l in blk {
                if let Some(x) = last {
                    if !(l / x > 1.0 + self.delta) {
                        return false;
                    }
                }
                last = Some(l);
            }
            true
        };
        for n in 0..self.terms.len() {
            let floor = combined
                .reach()
                .and_then(|r| r.checked_mul(2))
                .and_then(|r| r.checked_add(margin))
                .ok_or(SparseError::SeparationFailure { factor: n, tries: 0 })?;
            let mut nu = match gamma_product.factors().last() {
                None => ((d.max(0.0) * (1.0 + 1e-9)).ceil() as u128).saturating_add(self.degree as u128).max(margin),
                Some(f) => f.nu.checked_mul(4).ok_or(SparseError::SeparationFailure { factor: n, tries: 0 })?,
            };
            let mut tries = 0;
            loop {
                let blk = self.block(n, nu);
                let above_d = n > 0 || blk[0] > d;
                if nu >= floor && above_d && ratio_ok(lambdas.last().map(|v| v.0), &blk) {
                    lambdas.extend(blk.into_iter().map(|l| (l, n)));
                    break;
                }
                tries += 1;
                if tries > budget.max_escalations {
                    return Err(SparseError::SeparationFailure { factor: n, tries });
                }
                nu = nu.checked_mul(4).ok_or(SparseError::SeparationFailure { factor: n, tries })?;
            }
            escalations += tries;
            combined.push_with_width(gamma.clone(), nu, width);
            gamma_product.push_with_width(gamma.clone(), nu, width);
        }
        let q: Vec<QTerm> = self
            .terms
            .iter()
            .zip(gamma_product.factors())
            .map(|(&(sigma, c), f)| QTerm { c, sigma, nu: f.nu })
            .collect();
        let mut checks = Vec::new();
        checks.push(Check::above("lambda_1 - d", lambdas[0].0 - d, 0.0));
        let min_ratio = lambdas.windows(2).map(|w| w[1].0 / w[0].0).fold(f64::INFINITY, f64::min);
        checks.push(Check::above("min ratio in block", min_ratio, 1.0 + self.delta));
        checks.push(Check::at_least("cluster gap", cluster_gap(&combined), margin as f64));
        checks.push(Check::at_least("Gamma min on grid", gamma_product.min_lower_bound(8192), POSITIVITY_MARGIN));
        checks.push(Check::at_most("|Gamma hat(0) - 1|", (gamma_product.constant() - 1.0).norm(), 1e-12));
        let min_coeff = self.gamma.gamma.coeffs().iter().map(|c| c.re).fold(f64::INFINITY, f64::min);
        checks.push(Check::at_least("min Gamma hat(n)", min_coeff, 0.0));
        checks.push(Check::below("||Gamma - 1||_p", gamma_product.ap_norm_minus_one(self.p)?, self.eta));
        if let Some(direct) = gamma_product.expanded_norm_pow(self.p, budget.expand_limit) {
            let factored = ap_norm_torus(&self.gamma.gamma, self.p)?.value.powf(self.p * q.len() as f64);
            checks.push(Check::at_most("norm identity |direct - factored|", (direct - factored).abs(), 1e-8));
        }
        for n in 0..q.len() {
            let gp = gamma_product.with_replaced(n, self.gamma_p.clone());
            checks.push(Check::below(
                format!("||Gamma P(nu_{} t) - 1||_p", n + 1),
                gp.ap_norm_minus_one(self.p)?,
                self.eta / self.m_const,
            ));
        }
        let gap = cluster_gap(&combined);
        let mut vi = Vec::new();
        for qq in [self.p, 2.0 * self.p] {
            let summands = self.vi_summands(&gamma_product, qq)?;
            let b = clustered_norm(&self.weight.base, &summands, None, qq, gap, budget.window)?;
            checks.push(Check::below(format!("weighted error ||u(Gamma Q - H)||_{qq}"), b.value, self.eta));
            vi.push((qq, b));
        }
        Ok(BlockBuild { d, gamma_product, q, lambdas, checks, vi, escalations })
    }

    fn vi_summands(&self, gamma_product: &DilatedProduct, q: f64) -> Result<Vec<Summand>, SparseError> {
        let prev = &self.weight.product;
        let mut out = Vec::new();
        for (n, &(s, c)) in self.terms.iter().enumerate() {
            let y = gamma_product.with_replaced(n, self.gamma_p.clone());
            out.push(product_minus_one(c, s, prev, &y, q)?);
        }
        Ok(out)
    }

    /// `Q` as a trigonometric polynomial with real frequencies.
    pub fn q_poly(&self, build: &BlockBuild) -> Result<TrigPoly, SparseError> {
        let spec = self.poly_spectrum();
        let mut terms = Vec::new();
        for t in &build.q {
            for &(l, a) in &spec {
                terms.push((Frequency::Real((l as u128 * t.nu) as f64 + t.sigma), t.c * a));
            }
        }
        Ok(TrigPoly::from_terms(terms)?)
    }
}

/// A positive, nonincreasing sequence `ε_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EpsSequence {
    /// `ε_n = 1/log(n + shift)`.
    InverseLog { shift: f64 },
    /// Listed values; the last one repeats.
    Table { values: Vec<f64> },
}

impl EpsSequence {
    pub fn eval(&self, n: usize) -> f64 {
        match self {
            EpsSequence::InverseLog { shift } => 1.0 / (n as f64 + shift).ln(),
            EpsSequence::Table { values } => values[n.min(values.len() - 1)],
        }
    }

    fn validate(&self) -> Result<(), SparseError> {
        match self {
            EpsSequence::InverseLog { shift } if !(*shift > 1.0) => {
                Err(SparseError::InvalidSchedule(format!("eps.shift = {shift} must exceed 1")))
            }
            EpsSequence::Table { values } if values.is_empty() => {
                Err(SparseError::InvalidSchedule("eps.values is empty".into()))
            }
            EpsSequence::Table { values } => {
                if values.iter().any(|v| !(*v > 0.0)) || values.windows(2).any(|w| w[1] > w[0]) {
                    Err(SparseError::InvalidSchedule("eps.values must be positive and nonincreasing".into()))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// `u_0 = sigma_bump(l, h, h1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseWeight {
    pub l: u32,
    pub h: f64,
    pub h1: f64,
}

/// A Gaussian `e^{-(t-c)²/(2w²)}` cut off smoothly inside the interval of
/// the Landau set nearest to `c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetBump {
    pub center: f64,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseSchedule {
    pub eps: EpsSequence,
    pub lambda0: f64,
    pub steps: usize,
    pub base: BaseWeight,
    /// One target per step; empty selects bumps cycling through the
    /// intervals of the base Landau set.
    #[serde(default)]
    pub targets: Vec<TargetBump>,
    /// Number of exponentials in each `H_k`.
    pub h_terms: usize,
    /// `H_k` uses `σ_n` for `n` in `(offset, offset + h_terms]`.
    pub sigma_offset: usize,
}

impl SparseSchedule {
    /// `ε_n = 1/log(n + 3)`, `λ_0 = 1`, `u_0 = sigma_bump(1, 0.5, 0.7)`.
    pub fn desk(steps: usize) -> Self {
        SparseSchedule {
            eps: EpsSequence::InverseLog { shift: 3.0 },
            lambda0: 1.0,
            steps,
            base: BaseWeight { l: 1, h: 0.5, h1: 0.7 },
            targets: Vec::new(),
            h_terms: 3,
            sigma_offset: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SparseError> {
        self.eps.validate()?;
        let bad = |s: &str| Err(SparseError::InvalidSchedule(s.into()));
        if !(self.lambda0 > 0.0) {
            return bad("lambda0 must be positive");
        }
        if self.steps == 0 {
            return bad("steps must be positive");
        }
        if self.h_terms == 0 {
            return bad("h_terms must be positive");
        }
        if !(self.base.h > 0.0 && self.base.h < self.base.h1 && self.base.h1 < 1.0) {
            return bad("base needs 0 < h < h1 < 1");
        }
        if !self.targets.is_empty() && self.targets.len() < self.steps {
            return bad("targets must list one bump per step");
        }
        for t in &self.targets {
            if !(t.width > 0.0) || (t.center - t.center.round()).abs() > 0.1 * self.base.h {
                return bad("target centres must lie near an integer and widths be positive");
            }
        }
        Ok(())
    }

    pub fn target(&self, k: usize) -> TargetBump {
        match self.targets.get(k - 1) {
            Some(t) => *t,
            None => {
                let l = self.base.l as i64;
                TargetBump { center: ((k as i64 - 1) % (2 * l + 1) - l) as f64, width: 0.08 }
            }
        }
    }
}

/// The target `χ` on the sampling grid of the base weight.
pub fn target_function(base: &BaseWeight, t: &TargetBump) -> Result<LineFunction, SparseError> {
    let h = base.h;
    let dx = grid_step(h);
    let cut = blocks::cutoffs_on_grid(1, 0.6 * h, 0.9 * h, 0.95 * h, dx)?.phi;
    let l = t.center.round();
    let (c, w) = (t.center, t.width);
    let prof = Profile::real_fn(l - 0.45 * h, l + 0.45 * h, dx, |s| {
        (-(s - c).powi(2) / (2.0 * w * w)).exp() * cut.eval(s - l).re
    });
    Ok(LineFunction::from_profile(prof))
}

/// Least-squares `H = Σ c_n e^{2πiσ_n t}` for the weight `u_0·G`: with the
/// clusters of `G` separated the `A²(ℝ)` error splits as
/// `‖Ĝ(0) u_0 H − χ‖² + (‖G‖² − |Ĝ(0)|²)‖u_0 H‖²`, a ridge problem on the
/// sampling grid of `u_0`.
pub fn fit_h(u0: &LineFunction, g: &DilatedProduct, chi: &LineFunction, sigmas: &[f64]) -> Result<TrigPoly, SparseError> {
    let (a, b) = u0.support().ok_or(ApproxError::InvalidParameter { name: "u0 support", value: 0.0 })?;
    let dx = u0.profiles().next().map(|p| p.0.dx()).unwrap();
    let n = ((b - a) / dx).round() as usize;
    let rows: Vec<(f64, Complex64)> =
        (0..=n).map(|i| a + i as f64 * dx).map(|t| (t, u0.eval(t))).filter(|v| v.1.norm() > 0.0).collect();
    let g0 = g.constant();
    let ridge = (g.norm_pow(2.0)? - g0.norm_sqr()).max(0.0).sqrt();
    let r = rows.len();
    let m = sigmas.len();
    let mat = DMatrix::from_fn(2 * r, m, |i, j| {
        let (t, u) = rows[i % r];
        let e = u * Frequency::Real(sigmas[j]).cis(t);
        if i < r {
            g0 * e
        } else {
            ridge * e
        }
    });
    let rhs = DVector::from_fn(2 * r, |i, _| if i < r { chi.eval(rows[i].0) } else { Complex64::new(0.0, 0.0) });
    let sol = mat.svd(true, true).solve(&rhs, 1e-12).map_err(|_| ApproxError::PropertyViolation("least squares"))?;
    Ok(TrigPoly::from_terms(sigmas.iter().zip(sol.iter()).map(|(&s, &c)| (Frequency::Real(s), c)))?)
}

/// One completed induction step.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub k: usize,
    pub p: f64,
    pub eta: f64,
    pub delta: f64,
    pub h: TrigPoly,
    pub target: LineFunction,
    pub blocks: SparseBlocks,
    pub build: BlockBuild,
    /// Index of the last filler.
    pub m_k: usize,
    pub d: f64,
}

/// Everything the driver produces.
#[derive(Debug, Clone)]
pub struct SparseRun {
    pub report: ConstructionReport,
    /// `w = u_K`.
    pub weight: Weight,
    pub steps: Vec<StepRecord>,
}

/// Runs the induction for `schedule.steps` steps, then measures the target
/// residuals, their three-term split, the telescoping sums and the sign of
/// `w` and `ŵ` on probe grids.
pub fn sparse_driver(schedule: &SparseSchedule, budget: &SparseBudget) -> Result<SparseRun, SparseError> {
    schedule.validate()?;
    let b = schedule.base;
    let u0 = blocks::sigma_bump(b.l, b.h, b.h1)?;
    let eps = |n: usize| schedule.eps.eval(n);
    let mut report = ConstructionReport::new("sparse");
    let mut lambdas = vec![schedule.lambda0];
    report.lambdas.push(LambdaRow {
        n: 0,
        value: schedule.lambda0,
        j: None,
        k: None,
        ratio: None,
        required: None,
        gap_class: None,
        source: "lambda0".into(),
    });
    let push = |report: &mut ConstructionReport, lambdas: &mut Vec<f64>, v: f64, source: String| {
        let n = lambdas.len();
        let prev = lambdas[n - 1];
        lambdas.push(v);
        report.lambdas.push(LambdaRow {
            n,
            value: v,
            j: None,
            k: None,
            ratio: Some(v / prev),
            required: Some(1.0 + eps(n - 1)),
            gap_class: None,
            source,
        });
    };
    let mut weight = Weight::from_line(u0.clone());
    let mut steps: Vec<StepRecord> = Vec::new();
    let sigmas: Vec<f64> = (1..=schedule.h_terms).map(|i| sigma(schedule.sigma_offset + i)).collect();
    let u0_triple: Vec<f64> = sigmas
        .iter()
        .map(|&s| triple_norm(&u0.mul_poly(&TrigPoly::monomial(Frequency::Real(s), ONE))?))
        .collect::<Result<_, NormError>>()?;
    for k in 1..=schedule.steps {
        let p = 1.0 + 1.0 / k as f64;
        let chi = target_function(&b, &schedule.target(k))?;
        let h = fit_h(&u0, &weight.product, &chi, &sigmas)?;
        let mut c_const = 1.0 + triple_norm(&u0)? * weight.product.ap_norm(1.0)?;
        for s in &steps {
            for (n, t) in s.build.q.iter().enumerate() {
                let idx = weight.product.factors().iter().position(|f| f.nu == t.nu).unwrap();
                let g = weight.product.with_replaced(idx, s.blocks.gamma_p.clone());
                c_const += t.c.norm() * u0_triple[n] * g.ap_norm(1.0)?;
            }
        }
        let eta = 0.5 * 0.5f64.powi(k as i32) / k as f64 / c_const;
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(SparseError::ScheduleInfeasible { step: k, reason: format!("constant {c_const}") });
        }
        let blk = lemma_sparse_blocks(&weight, &h, p, eta, budget)?;
        let mut m = lambdas.len() - 1;
        let start = m;
        while !(eps(m) < blk.delta) {
            if m - start >= budget.max_fillers {
                return Err(SparseError::ScheduleInfeasible {
                    step: k,
                    reason: format!("eps_n stays above delta = {} for {} fillers", blk.delta, budget.max_fillers),
                });
            }
            let v = (1.0 + eps(m)) * lambdas[m] * 1.0001;
            push(&mut report, &mut lambdas, v, format!("step {k} filler"));
            m += 1;
        }
        let d = (1.0 + eps(m)) * lambdas[m];
        if !d.is_finite() {
            return Err(SparseError::ScheduleInfeasible { step: k, reason: "threshold overflow".into() });
        }
        let build = blk.build(d, budget)?;
        for &(v, n) in &build.lambdas {
            push(&mut report, &mut lambdas, v, format!("step {k} block {}", n + 1));
        }
        for c in &build.checks {
            report.checks.push(Check { name: format!("step {k}: {}", c.name), ..c.clone() });
        }
        for (q, v) in &build.vi {
            report.residuals.push(ResidualRow { name: "block weighted error".into(), step: k, p: *q, value: v.value, bound: eta });
        }
        report.push_diagnostics(format!("step {k} gamma fit"), &blk.gamma.diagnostics);
        report.notes.push(format!(
            "step {k}: p = {p}, eta = {eta:e}, M = {:.4}, eps = {:e}, delta = {}, deg P = {}, Fejer order {}, h = {}, gamma lemma verified = {}, fillers = {}, escalations = {}",
            blk.m_const,
            blk.eps,
            blk.delta,
            blk.degree,
            blk.gamma.n_fejer,
            blk.gamma.h,
            blk.gamma.verified(),
            m - start,
            build.escalations
        ));
        weight.product = weight.product.concat(&build.gamma_product);
        steps.push(StepRecord { k, p, eta, delta: blk.delta, h, target: chi, blocks: blk, build, m_k: m, d });
    }
    finish(&mut report, &weight, &steps, budget, schedule)?;
    Ok(SparseRun { report, weight, steps })
}

fn finish(
    report: &mut ConstructionReport,
    weight: &Weight,
    steps: &[StepRecord],
    budget: &SparseBudget,
    schedule: &SparseSchedule,
) -> Result<(), SparseError> {
    let u0 = &weight.base;
    let all = &weight.product;
    let gap = cluster_gap(all);
    let win = budget.window;
    let excess = report
        .lambdas
        .iter()
        .filter_map(|r| Some(r.ratio? - r.required?))
        .fold(f64::INFINITY, f64::min);
    report.checks.push(Check::above("min ratio - (1 + eps_n)", excess, 0.0));
    let increasing = report.lambdas.windows(2).all(|w| w[1].value > w[0].value);
    report.checks.push(Check::at_least("lambdas strictly increasing", increasing as u8 as f64, 1.0));
    // Factor indices of each step inside the full product.
    let mut offsets = Vec::new();
    let mut at = 0;
    for s in steps {
        offsets.push(at);
        at += s.build.q.len();
    }
    for (i, s) in steps.iter().enumerate() {
        let k = s.k;
        let p = s.p;
        let o = offsets[i];
        let below = DilatedProduct::from_factors(all.factors()[..o].to_vec());
        let upto = DilatedProduct::from_factors(all.factors()[..o + s.build.q.len()].to_vec());
        let after = DilatedProduct::from_factors(all.factors()[o + s.build.q.len()..].to_vec());
        let mut full = Vec::new();
        let mut t3 = Vec::new();
        for (n, t) in s.build.q.iter().enumerate() {
            let g = all.with_replaced(o + n, s.blocks.gamma_p.clone());
            full.push(product_term(t.c, t.sigma, &g, p)?);
            let gk = upto.with_replaced(o + n, s.blocks.gamma_p.clone());
            t3.push(product_minus_one(t.c, t.sigma, &gk, &after, p)?);
        }
        let residual = clustered_norm(u0, &full, Some(&s.target), p, gap, win)?;
        let t1_terms: Vec<Summand> = s
            .blocks
            .terms
            .iter()
            .map(|&(sg, c)| product_term(c, sg, &below, p))
            .collect::<Result<_, _>>()?;
        let term1 = clustered_norm(u0, &t1_terms, Some(&s.target), p, gap, win)?;
        let term2 = s.blocks.vi_summands(&s.build.gamma_product, p)?;
        let term2 = clustered_norm(u0, &term2, None, p, gap, win)?;
        let term3 = clustered_norm(u0, &t3, None, p, gap, win)?;
        let kf = k as f64;
        let rows = [
            ("residual ||w Q_k - chi_k||", residual.value, 2.0 / kf),
            ("term ||u_{k-1} H_k - chi_k||", term1.value, 1.0 / kf),
            ("term ||u_{k-1}(Gamma_k Q_k - H_k)||", term2.value, s.eta),
            ("term ||(w - u_k) Q_k||", term3.value, 1.0 / kf),
            ("zero cluster of residual", residual.zero, 2.0 / kf),
        ];
        for (name, value, bound) in rows {
            report.residuals.push(ResidualRow { name: name.into(), step: k, p, value, bound });
        }
        report.checks.push(Check::below(format!("residual step {k}"), residual.value, 2.0 / kf));
        let sum = term1.value + term2.value + term3.value;
        report.checks.push(Check::at_most(format!("residual step {k} within term sum"), residual.value, sum + 1e-12));
        // Telescoping: Σ_{j>k} ‖u_j − u_{j−1}‖_{A^{p_k}}.
        let mut tele = 0.0;
        for (j, sj) in steps.iter().enumerate().skip(i + 1) {
            let oj = offsets[j];
            let prev = DilatedProduct::from_factors(all.factors()[..oj].to_vec());
            let term = product_minus_one(ONE, 0.0, &prev, &sj.build.gamma_product, p)?;
            tele += clustered_norm(u0, &[term], None, p, gap, win)?.value;
        }
        report.residuals.push(ResidualRow {
            name: "telescoping sum".into(),
            step: k,
            p,
            value: tele,
            bound: 0.5f64.powi(k as i32),
        });
        report.checks.push(Check::below(format!("telescoping after step {k}"), tele, 0.5f64.powi(k as i32)));
        report.checks.push(Check::at_most(format!("mass after step {k}"), (upto.constant() - 1.0).norm(), 1e-12));
        let omega = LandauSet::new(schedule.base.l, schedule.base.h)?;
        let probe: Vec<f64> = (1..=32).map(|n| sigma(schedule.sigma_offset + n)).collect();
        let target = s.target.clone();
        let comp = completeness_residual(&probe, &omega, move |t| target.eval(t))?;
        report.residuals.push(ResidualRow {
            name: "completeness probe (32 sigma_n on the Landau set)".into(),
            step: k,
            p: 2.0,
            value: comp.residual,
            bound: 1.0,
        });
        report.push_poly(&format!("H_{k}"), &s.h);
        report.push_poly(&format!("Q_{k}"), &s.blocks.q_poly(&s.build)?);
        report.push_poly(&format!("gamma_{k}"), &s.blocks.gamma.gamma.to_trigpoly());
        report.push_poly(&format!("P_{k}"), &s.blocks.gamma.poly);
    }
    let (w_min, w_imag) = probe_w(weight);
    report.checks.push(Check::at_least("min w on probe grid", w_min, -1e-9));
    report.checks.push(Check::at_most("max |Im w| on probe grid", w_imag, 1e-9));
    report.checks.push(Check::at_least("min w hat on probe grid", probe_w_hat(weight), -1e-9));
    Ok(())
}

/// Minimum of `Re w` and maximum of `|Im w|` on a dyadic grid over the
/// support of the base weight.
pub fn probe_w(w: &Weight) -> (f64, f64) {
    let (a, b) = w.base.support().unwrap_or((0.0, 0.0));
    let step = 1.0 / 1024.0;
    let i0 = (a / step).floor() as i64;
    let i1 = (b / step).ceil() as i64;
    let mut lo = f64::INFINITY;
    let mut im: f64 = 0.0;
    for i in i0..=i1 {
        let v = w.eval(i as f64 * step);
        lo = lo.min(v.re);
        im = im.max(v.im.abs());
    }
    (lo, im)
}

/// Minimum of `Re ŵ` over `[-64, 64]` and around the lowest dilations.
pub fn probe_w_hat(w: &Weight) -> f64 {
    let mut xs: Vec<f64> = (-256..=256).map(|i| i as f64 * 0.25).collect();
    let mut nus: Vec<u128> = w.product.factors().iter().map(|f| f.nu).collect();
    nus.sort();
    for nu in nus.into_iter().take(3) {
        for off in [-1.3, 0.0, 0.5, 2.0] {
            xs.push(nu as f64 + off);
        }
    }
    xs.iter().map(|&x| w.ft(x, 24.0).re).fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_interval_weight() -> LineFunction {
        blocks::sigma_bump(1, 0.4, 0.6).unwrap()
    }

    #[test]
    fn sigma_sequence_is_near_integers() {
        assert!((sigma(1) - 1.15).abs() < 1e-15);
        assert!((sigma(9) - 9.03).abs() < 1e-12);
        let e = EpsSequence::InverseLog { shift: 3.0 };
        assert!((e.eval(0) - 1.0 / 3f64.ln()).abs() < 1e-15);
        assert!(e.eval(10) < e.eval(9));
        assert!(EpsSequence::Table { values: vec![0.5, 0.6] }.validate().is_err());
    }

    #[test]
    fn schedule_validation_names_problems() {
        let mut s = SparseSchedule::desk(3);
        assert!(s.validate().is_ok());
        s.lambda0 = 0.0;
        assert!(matches!(s.validate(), Err(SparseError::InvalidSchedule(m)) if m.contains("lambda0")));
        let d = SparseSchedule::desk(3);
        assert_eq!(d.target(1).center, -1.0);
        assert_eq!(d.target(3).center, 1.0);
    }

    #[test]
    fn single_exponential_block() {
        let u = Weight::from_line(two_interval_weight());
        let h = TrigPoly::monomial(Frequency::Real(sigma(2)), Complex64::new(0.5, 0.0));
        let budget = SparseBudget::default();
        let blk = lemma_sparse_blocks(&u, &h, 1.5, 0.3, &budget).unwrap();
        assert_eq!(blk.delta, 1.0 / blk.gamma.degree_plus_one());
        let build = blk.build(50.0, &budget).unwrap();
        assert!(build.lambdas[0].0 > 50.0);
        assert_eq!(build.q.len(), 1);
        let q = blk.q_poly(&build).unwrap();
        assert_eq!(q.len(), blk.gamma.poly.len());
        for (f, c) in q.terms() {
            let l = ((f.value() - sigma(2)) / build.q[0].nu as f64).round() as i64;
            assert!((c - 0.5 * blk.gamma.poly.coeff(&Frequency::Integer(l))).norm() < 1e-15);
        }
        let vi = build.vi[0].1.value;
        let bound = ap_norm_line(&u.base, 1.5, 32.0).unwrap().upper() * 0.5
            * build.gamma_product.with_replaced(0, blk.gamma_p.clone()).ap_norm_minus_one(1.5).unwrap();
        assert!(vi <= bound + build.vi[0].1.tail + 1e-12);
    }

    #[test]
    fn three_term_block_certificate() {
        let u = Weight::from_line(two_interval_weight());
        let h = TrigPoly::from_terms((1..=3).map(|n| (Frequency::Real(sigma(n)), Complex64::new(0.3, 0.1 * n as f64))))
            .unwrap();
        let budget = SparseBudget::default();
        let blk = lemma_sparse_blocks(&u, &h, 1.5, 0.3, &budget).unwrap();
        let build = blk.build(50.0, &budget).unwrap();
        assert!(build.gamma_product.is_separated());
        let get = |name: &str| build.checks.iter().find(|c| c.name.starts_with(name)).unwrap().clone();
        assert!(get("lambda_1 - d").pass);
        assert!(get("min ratio in block").pass);
        assert!(get("norm identity").pass, "{:?}", get("norm identity"));
        assert!(get("|Gamma hat(0) - 1|").pass);
        assert!(get("min Gamma hat(n)").pass);
        assert!(get("Gamma min on grid").pass);
        let nus = build.nus();
        assert!(nus.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn least_squares_fit_reduces_target_norm() {
        let s = SparseSchedule::desk(1);
        let u0 = blocks::sigma_bump(1, 0.5, 0.7).unwrap();
        let chi = target_function(&s.base, &s.target(2)).unwrap();
        let sig: Vec<f64> = (1..=3).map(sigma).collect();
        let h = fit_h(&u0, &DilatedProduct::new(), &chi, &sig).unwrap();
        let before = ap_norm_line(&chi, 2.0, 32.0).unwrap().upper();
        let after = ap_norm_line(&u0.mul_poly(&h).unwrap().sub(&chi), 2.0, 32.0).unwrap().upper();
        assert!(after < before, "{after} vs {before}");
    }

    #[test]
    fn clustered_bound_is_exact_without_product() {
        let u0 = blocks::sigma_bump(1, 0.5, 0.7).unwrap();
        let s = Summand { c: Complex64::new(0.7, 0.0), sigma: 1.5, constant: ONE, rest: 0.0, l1: 1.0 };
        let b = clustered_norm(&u0, &[s], None, 1.5, f64::INFINITY, 32.0).unwrap();
        let direct = 0.7 * ap_norm_line(&u0, 1.5, 32.0).unwrap().upper();
        assert!((b.zero - direct).abs() < 1e-6 * direct);
        assert_eq!(b.rest, 0.0);
    }
}
