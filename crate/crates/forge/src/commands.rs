//! Command dispatch: each command runs a module driver or battery and
//! returns a [`ConstructionReport`] wrapped in a versioned [`RunReport`].

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use spectral_forge_core::almost_integer::{
    almost_integer_driver, commutation_check, construct_gamma_q, diff_bound_check, AlmostBudget, AlmostError,
    AlmostSchedule, AlphaSeq, PerturbSpec,
};
use spectral_forge_core::approx::IntervalBudget;
use spectral_forge_core::blocks::{self, BlockError};
use spectral_forge_core::check::{all_pass, Check};
use spectral_forge_core::flc::{classify_gaps, flc_polynomial, FlcError};
use spectral_forge_core::norms::{completeness_residual, LandauSet, LineFunction, NormError, Profile};
use spectral_forge_core::report::{ConstructionReport, GapClass, LambdaRow, ResidualRow};
use spectral_forge_core::sparse::{sparse_driver, EpsSequence, SparseBudget, SparseError, SparseSchedule};
use spectral_forge_core::trigpoly::{Frequency, TrigPoly};

use crate::config::{
    AlmostParams, BlocksParams, CommandKind, CompletenessParams, FlcParams, RunConfig, SparseParams,
};

/// Version tag of the report layout.
pub const SCHEMA: &str = "spectral-forge/1";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{command}: {source}")]
    Sparse { command: CommandKind, source: SparseError },
    #[error("{command}: {source}")]
    Almost { command: CommandKind, source: AlmostError },
    #[error("{command}: {source}")]
    Flc { command: CommandKind, source: FlcError },
    #[error("{command}: {source}")]
    Block { command: CommandKind, source: BlockError },
    #[error("{command}: {source}")]
    Norm { command: CommandKind, source: NormError },
}

/// Everything written to `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: String,
    pub command: CommandKind,
    pub seed: u64,
    pub tolerance_scale: f64,
    pub params: serde_json::Value,
    pub pass: bool,
    pub report: ConstructionReport,
}

impl RunReport {
    pub fn new(config: &RunConfig, report: ConstructionReport) -> Self {
        RunReport {
            schema: SCHEMA.into(),
            command: config.command,
            seed: config.seed,
            tolerance_scale: config.tolerance_scale,
            params: config.params_value(),
            pass: all_pass(&report.checks),
            report,
        }
    }
}

pub fn run(config: &RunConfig) -> Result<RunReport, RunError> {
    let cmd = config.command;
    let report = match cmd {
        CommandKind::VerifyBlocks => verify_blocks(&config.blocks, config.seed, config.tolerance_scale),
        CommandKind::BuildSparse => build_sparse(&config.sparse),
        CommandKind::BuildAlmostInteger => build_almost_integer(&config.almost_integer),
        CommandKind::BuildFlc => build_flc(&config.flc),
        CommandKind::CheckCompleteness => check_completeness(&config.completeness),
    }
    .map_err(|e| e.with(cmd))?;
    Ok(RunReport::new(config, report))
}

/// A module error before the command is attached.
#[derive(Debug)]
pub enum Failure {
    Sparse(SparseError),
    Almost(AlmostError),
    Flc(FlcError),
    Block(BlockError),
    Norm(NormError),
}

impl Failure {
    fn with(self, command: CommandKind) -> RunError {
        match self {
            Failure::Sparse(source) => RunError::Sparse { command, source },
            Failure::Almost(source) => RunError::Almost { command, source },
            Failure::Flc(source) => RunError::Flc { command, source },
            Failure::Block(source) => RunError::Block { command, source },
            Failure::Norm(source) => RunError::Norm { command, source },
        }
    }
}

macro_rules! failure_from {
    ($($t:ty => $v:ident),*) => {
        $(impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Failure::$v(e)
            }
        })*
    };
}

failure_from!(SparseError => Sparse, AlmostError => Almost, FlcError => Flc, BlockError => Block, NormError => Norm);

fn binom(k: u32, j: u32) -> f64 {
    (0..j).fold(1.0, |a, i| a * (k - i) as f64 / (i + 1) as f64)
}

/// A random polynomial with at most `max_terms` frequencies `n + α`,
/// `|n| ≤ 30`, `|α| ≤ max_alpha`.
pub fn random_trigpoly(rng: &mut ChaCha8Rng, max_terms: usize, max_alpha: f64) -> TrigPoly {
    let count = rng.random_range(1..=max_terms);
    let terms: Vec<(Frequency, Complex64)> = (0..count)
        .map(|_| {
            let n = rng.random_range(-30i64..=30);
            let a = rng.random_range(-max_alpha..=max_alpha);
            let c = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            (Frequency::Real(n as f64 + a), c)
        })
        .collect();
    TrigPoly::from_terms(terms).expect("real frequencies combine")
}

/// Largest deviations, over `grid_points` points of `[-1, 1)`, of the
/// spectral difference formula from pointwise differencing for `k ≤ max_k`,
/// and of the binomial reconstruction `P(t+j) = Σ_l C(j,l)(Δ^l P)(t)` for
/// `j ≤ 5`.
pub fn difference_oracle(poly: &TrigPoly, max_k: u32, grid_points: usize) -> (f64, f64) {
    let ts: Vec<f64> = (0..grid_points).map(|i| -1.0 + 2.0 * i as f64 / grid_points as f64).collect();
    let top = max_k.max(5);
    let diffs: Vec<TrigPoly> = (0..=top).map(|k| poly.diff_op(k)).collect();
    let mut spectral = 0.0f64;
    for k in 0..=max_k {
        for &t in &ts {
            let pointwise: Complex64 = (0..=k)
                .map(|j| poly.eval(t + j as f64) * binom(k, j) * if (k - j) % 2 == 0 { 1.0 } else { -1.0 })
                .sum();
            spectral = spectral.max((diffs[k as usize].eval(t) - pointwise).norm());
        }
    }
    let mut binomial = 0.0f64;
    for j in 0..=5u32 {
        for &t in &ts {
            let rebuilt: Complex64 = (0..=j).map(|l| diffs[l as usize].eval(t) * binom(j, l)).sum();
            binomial = binomial.max((poly.eval(t + j as f64) - rebuilt).norm());
        }
    }
    (spectral, binomial)
}

/// A random smooth function on the three intervals `j ± h'/2`, `j < 3`,
/// vanishing near their ends.
fn random_bumps(rng: &mut ChaCha8Rng, h: f64, h1: f64, dx: f64) -> LineFunction {
    let cut = blocks::cutoffs_on_grid(3, h, h1, 0.5 * (h1 + 1.0), dx).expect("valid widths");
    let amp: Vec<(f64, f64, f64)> =
        (0..3).map(|_| (rng.random_range(-1.0..1.0), rng.random_range(-3.0..3.0), rng.random_range(0.0..1.0))).collect();
    LineFunction::from_profile(Profile::from_fn(-0.5 * h1, 2.0 + 0.5 * h1, dx, true, |t| {
        let j = t.round().clamp(0.0, 2.0);
        let (a, f, ph) = amp[j as usize];
        let x = t - j;
        cut.phi.eval(x) * Complex64::from_polar(1.0 + 0.5 * a * x, 2.0 * PI * (f * x + ph))
    }))
}

pub fn verify_blocks(p: &BlocksParams, seed: u64, scale: f64) -> Result<ConstructionReport, Failure> {
    let mut report = ConstructionReport::new("verify_blocks");
    for &h in &p.hs {
        report.checks.extend(blocks::triangle_trapezoid_checks(h, &p.ps)?);
    }
    for &h in &p.phi_hs {
        report.checks.extend(blocks::phi_checks(h, &p.ps)?);
    }
    for s in &p.sigma {
        report.checks.extend(blocks::sigma_checks(s.l, s.h, s.h1)?);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut spectral, mut binomial) = (0.0f64, 0.0f64);
    for _ in 0..p.trials {
        let poly = random_trigpoly(&mut rng, p.max_terms, p.max_alpha);
        let (a, b) = difference_oracle(&poly, p.max_k, p.grid_points);
        spectral = spectral.max(a);
        binomial = binomial.max(b);
    }
    let tol = 1e-10 * scale;
    report.checks.push(Check::at_most("difference operator: spectral vs pointwise", spectral, tol));
    report.checks.push(Check::at_most("difference operator: binomial reconstruction", binomial, tol));

    let cut = blocks::cutoffs(3, 0.3, 0.6, 0.9)?;
    let mut commutation = 0.0f64;
    for _ in 0..8 {
        let poly = random_trigpoly(&mut rng, 6, p.max_alpha);
        let f = |t: f64| poly.eval(t);
        for l in 0..3 {
            commutation = commutation.max(commutation_check(&cut.theta, &cut.psi, &cut.phi, &f, l));
        }
    }
    report.checks.push(Check::at_most("cutoff commutation Psi D^l(Theta f) = Phi D^l f", commutation, tol));

    let mut slack = f64::INFINITY;
    for trial in 0..p.bound_trials {
        let phi = random_bumps(&mut rng, 0.3, 0.6, cut.phi.dx());
        for q in [1.0, 2.0] {
            let (lhs, rhs) = diff_bound_check(&phi, &cut.psi, 3, 0.6, q)?;
            slack = slack.min(rhs + 1e-8 * scale - lhs);
            report.residuals.push(ResidualRow {
                name: format!("difference bound trial {trial}"),
                step: trial,
                p: q,
                value: lhs,
                bound: rhs,
            });
        }
    }
    if p.bound_trials > 0 {
        report.checks.push(Check::at_least("difference bound 2^s max ||Psi D^l phi|| - ||phi||", slack, 0.0));
    }
    report.notes.push(format!("seed {seed}: {} random polynomials, {} random bump triples", p.trials, p.bound_trials));
    Ok(report)
}

pub fn build_sparse(p: &SparseParams) -> Result<ConstructionReport, Failure> {
    let schedule = SparseSchedule {
        eps: EpsSequence::InverseLog { shift: p.eps_shift },
        lambda0: p.lambda0,
        h_terms: p.h_terms,
        ..SparseSchedule::desk(p.steps)
    };
    Ok(sparse_driver(&schedule, &SparseBudget::default())?.report)
}

pub fn almost_budget(p: &AlmostParams) -> AlmostBudget {
    AlmostBudget {
        max_n: p.max_n,
        max_partial: p.max_partial,
        max_grid_log2: p.max_grid_log2,
        ..AlmostBudget::default()
    }
}

pub fn almost_spec(p: &AlmostParams) -> Result<PerturbSpec, AlmostError> {
    let spec = PerturbSpec {
        alpha: p.alpha.parse::<AlphaSeq>()?,
        s: p.s,
        h: p.h,
        h1: p.h1,
        h2: p.h2,
        p: p.p,
        eps: p.eps,
        n: p.n,
    };
    spec.validate()?;
    Ok(spec)
}

/// `v = Σ_{j<s} σ(t - j)` with `σ` a bump of width `h`.
pub fn lemma_weight(spec: &PerturbSpec) -> Result<LineFunction, BlockError> {
    let bump = blocks::sigma_bump(0, 0.5 * spec.h, spec.h)?;
    Ok((0..spec.s).fold(LineFunction::zero(), |acc, j| acc.add(&bump.translate(-(j as f64)))))
}

/// The smooth factor used in single-construction runs.
pub fn lemma_target(t: f64) -> Complex64 {
    Complex64::from_polar(1.0 / (1.0 + t * t), 2.0 * PI * 0.25 * t)
}

pub fn build_almost_integer(p: &AlmostParams) -> Result<ConstructionReport, Failure> {
    let spec = almost_spec(p)?;
    let budget = almost_budget(p);
    if p.steps == 0 {
        let v = lemma_weight(&spec)?;
        let out = construct_gamma_q(&spec, &v, &lemma_target, &budget)?;
        return Ok(out.report());
    }
    let mut schedule = AlmostSchedule::desk(p.steps);
    schedule.spec = spec;
    Ok(almost_integer_driver(&schedule, &budget)?.report)
}

/// `e^{-t²/w²}` on the Landau set, zero elsewhere.
pub fn restricted_gaussian(omega: LandauSet, width: f64) -> impl Fn(f64) -> Complex64 + Sync {
    move |t| {
        if omega.contains(t) {
            Complex64::new((-(t / width).powi(2)).exp(), 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    }
}

fn lattice(f: &Frequency) -> (i64, i64) {
    match *f {
        Frequency::Integer(j) => (j, 0),
        Frequency::Lattice { j, k, .. } => (j, k),
        Frequency::Real(x) => (x.round() as i64, 0),
    }
}

pub fn build_flc(p: &FlcParams) -> Result<ConstructionReport, Failure> {
    let omega = LandauSet::new(p.l, p.h)?;
    let chi = restricted_gaussian(omega, p.width);
    let budget = IntervalBudget { max_terms: p.max_terms, ..IntervalBudget::default() };
    let lambda0 = Frequency::lattice(0, 0, p.a);
    let res = flc_polynomial(p.a, &omega, &chi, lambda0, p.eps, &budget)?;
    let gaps = classify_gaps(&lambda0, &res.lambdas, p.a)?;
    let mut report = ConstructionReport::new("flc");
    for (i, (f, g)) in res.lambdas.iter().zip(&gaps).enumerate() {
        let (j, k) = lattice(f);
        report.lambdas.push(LambdaRow {
            n: i + 1,
            value: f.value(),
            j: Some(j),
            k: Some(k),
            ratio: None,
            required: None,
            gap_class: Some(*g),
            source: format!("block {k}"),
        });
    }
    let n = 2 * p.l as usize + 1;
    let worst_fit = res.fit_errors.iter().cloned().fold(0.0, f64::max);
    report.checks.push(Check::at_most("sup |P - chi| on Omega", res.sup_error, p.eps));
    report.checks.push(Check::at_most("Vandermonde residual", res.weights.residual, 1e-10));
    report.checks.push(Check::at_most(
        "gaps outside {1, a}",
        gaps.iter().filter(|g| **g == GapClass::Other).count() as f64,
        0.0,
    ));
    report.checks.push(Check::at_most("sup error within (2L+1) max fit error", res.sup_error, n as f64 * worst_fit + 1e-12));
    for (k, e) in res.fit_errors.iter().enumerate() {
        report.checks.push(Check::at_most(format!("block {k} fit error"), *e, p.eps / n as f64));
        report.residuals.push(ResidualRow {
            name: format!("block {k} fit"),
            step: k,
            p: f64::INFINITY,
            value: *e,
            bound: p.eps / n as f64,
        });
    }
    report.residuals.push(ResidualRow {
        name: "sup |P - chi|".into(),
        step: 0,
        p: f64::INFINITY,
        value: res.sup_error,
        bound: p.eps,
    });
    report.push_poly("P", &res.poly);
    for (k, d) in res.diagnostics.iter().enumerate() {
        report.push_diagnostics(format!("Q_{k}"), d);
    }
    report.notes.push(format!(
        "a = {}, L = {}, h = {}, Vandermonde condition {:e}",
        p.a, p.l, p.h, res.weights.condition
    ));
    Ok(report)
}

/// A smooth bump on the interval of the Landau set around `1`: it is not
/// the restriction of any 1-periodic function.
pub fn off_periodic_target(omega: LandauSet) -> impl Fn(f64) -> Complex64 + Sync {
    let r = 0.5 * omega.h;
    move |t| {
        let x = t - 1.0;
        if x.abs() < r {
            Complex64::new((1.0 - (x / r).powi(2)).powi(3), 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    }
}

pub fn check_completeness(p: &CompletenessParams) -> Result<ConstructionReport, Failure> {
    let omega = LandauSet::new(p.l, p.h)?;
    let alpha: AlphaSeq = p.alpha.parse()?;
    let target = off_periodic_target(omega);
    let mut report = ConstructionReport::new("completeness");
    let mut ms = p.ms.clone();
    ms.sort_unstable();
    let mut perturbed = Vec::new();
    let mut integer_min = f64::INFINITY;
    for &m in &ms {
        let ints: Vec<f64> = (1..=m as i64).map(|n| n as f64).collect();
        let pert: Vec<f64> = (1..=m as i64).map(|n| n as f64 + alpha.eval(n)).collect();
        let ri = completeness_residual(&ints, &omega, &target)?;
        let rp = completeness_residual(&pert, &omega, &target)?;
        integer_min = integer_min.min(ri.residual);
        perturbed.push(rp.residual);
        report.residuals.push(ResidualRow { name: "integers".into(), step: m, p: 2.0, value: ri.residual, bound: 0.1 });
        report.residuals.push(ResidualRow {
            name: "perturbed integers".into(),
            step: m,
            p: 2.0,
            value: rp.residual,
            bound: 0.02,
        });
        report.notes.push(format!(
            "M = {m}: integer residual {:.6} (condition {:.3e}), perturbed residual {:.6} (condition {:.3e})",
            ri.residual, ri.condition, rp.residual, rp.condition
        ));
    }
    let increases = perturbed.windows(2).filter(|w| w[1] > w[0] * (1.0 + 1e-9)).count();
    report.checks.push(Check::at_least("integer residual at every M", integer_min, 0.1));
    report.checks.push(Check::below("perturbed residual at largest M", *perturbed.last().unwrap_or(&1.0), 0.02));
    report.checks.push(Check::at_most("perturbed residual increases along M", increases as f64, 0.0));
    Ok(report)
}
