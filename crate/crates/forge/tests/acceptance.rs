//! Acceptance suite: one PASS/FAIL line per criterion with the measured
//! values and the runtime against its limit. Exits 0 unless
//! `SPECTRAL_FORGE_STRICT` is set, in which case any FAIL exits 1.

use std::f64::consts::{PI, SQRT_2};
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;

use spectral_forge::commands::{difference_oracle, random_trigpoly};
use spectral_forge::emit::to_json;
use spectral_forge::{run, CommandKind, RunConfig, RunReport};
use spectral_forge_core::approx::{gamma_best_effort, lemma_gamma_p, GammaBudget, GammaP};
use spectral_forge_core::blocks;
use spectral_forge_core::check::{all_pass, Check};
use spectral_forge_core::sparse::{lemma_sparse_blocks, sigma, SparseBudget, Weight};
use spectral_forge_core::trigpoly::{Frequency, TrigPoly};

const SEED: u64 = 20_240_601;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome { pass, detail: detail.into() }
    }

    fn error(e: impl std::fmt::Display) -> Self {
        Outcome::new(false, format!("error: {e}"))
    }
}

fn config(command: CommandKind, seed: u64) -> RunConfig {
    let text = format!("command = \"{command}\"\nout = \"unused\"\nseed = {seed}\n");
    RunConfig::from_toml(&text, "acceptance").expect("base configuration")
}

fn failing(checks: &[Check]) -> Vec<&Check> {
    checks.iter().filter(|c| !c.pass).collect()
}

fn describe(c: &Check) -> String {
    format!("{} = {:.4e} (required {:.4e})", c.name, c.measured, c.required)
}

fn worst(checks: &[Check], limit: usize) -> String {
    let bad = failing(checks);
    if bad.is_empty() {
        return format!("all {} checks hold", checks.len());
    }
    let shown: Vec<String> = bad.iter().take(limit).map(|c| describe(c)).collect();
    format!("{} of {} checks fail; {}", bad.len(), checks.len(), shown.join("; "))
}

fn find<'a>(checks: &'a [Check], prefix: &str) -> Option<&'a Check> {
    checks.iter().find(|c| c.name.starts_with(prefix))
}

fn building_blocks() -> Outcome {
    let ps = [1.0, 1.25, 1.5, 2.0, 3.0];
    let mut checks = Vec::new();
    let mut skipped = Vec::new();
    for h in [0.01, 0.05, 0.1, 0.2, 0.4] {
        match blocks::triangle_trapezoid_checks(h, &ps) {
            Ok(c) => checks.extend(c),
            Err(_) => skipped.push(h),
        }
    }
    let mut detail = worst(&checks, 3);
    if !skipped.is_empty() {
        detail.push_str(&format!("; widths outside the valid range: {skipped:?}"));
    }
    Outcome::new(all_pass(&checks) && !checks.is_empty(), detail)
}

fn phi_properties() -> Outcome {
    let ps = [1.0, 1.25, 1.5, 2.0, 3.0];
    let mut checks = Vec::new();
    for h in [0.01, 0.05, 0.15] {
        match blocks::phi_checks(h, &ps) {
            Ok(c) => checks.extend(c),
            Err(e) => return Outcome::error(e),
        }
    }
    Outcome::new(all_pass(&checks), worst(&checks, 3))
}

fn difference_operator() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (mut spectral, mut binomial) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let poly = random_trigpoly(&mut rng, 12, 0.4);
        let (a, b) = difference_oracle(&poly, 4, 64);
        spectral = spectral.max(a);
        binomial = binomial.max(b);
    }
    let mut cfg = config(CommandKind::VerifyBlocks, SEED);
    cfg.blocks.hs.clear();
    cfg.blocks.phi_hs.clear();
    cfg.blocks.sigma.clear();
    cfg.blocks.trials = 0;
    let commutation = match run(&cfg) {
        Ok(r) => find(&r.report.checks, "cutoff commutation").map(|c| c.measured).unwrap_or(f64::INFINITY),
        Err(e) => return Outcome::error(e),
    };
    let pass = spectral <= 1e-10 && binomial <= 1e-10 && commutation <= 1e-10;
    Outcome::new(
        pass,
        format!(
            "spectral vs pointwise {spectral:.3e}, binomial reconstruction {binomial:.3e}, \
             cutoff commutation {commutation:.3e} (each required <= 1e-10)"
        ),
    )
}

/// Samples `Σ c_n e^{2πint}` at `t = i/m` by direct summation.
fn direct_samples(coeffs: &[(i64, Complex64)], m: usize) -> Vec<Complex64> {
    let roots: Vec<Complex64> = (0..m).map(|k| Complex64::from_polar(1.0, 2.0 * PI * k as f64 / m as f64)).collect();
    (0..m)
        .map(|i| {
            coeffs
                .iter()
                .map(|&(n, c)| c * roots[(n.rem_euclid(m as i64) as usize * i) % m])
                .sum()
        })
        .collect()
}

/// `(Σ_n |ĝ(n) - δ_{n0}|^p)^{1/p}` from samples on `m` points.
fn ap_distance_to_one(samples: &[Complex64], p: f64) -> f64 {
    let m = samples.len();
    let mut buf = samples.to_vec();
    FftPlanner::new().plan_fft_forward(m).process(&mut buf);
    buf[0] -= m as f64;
    buf.iter().map(|c| (c.norm() / m as f64).powf(p)).sum::<f64>().powf(1.0 / p)
}

/// The five conditions of the gamma lemma measured without the library's
/// norm routines.
fn reverify_gamma(g: &GammaP, p: f64) -> (f64, f64, f64, f64, f64) {
    let order = g.gamma.order() as i64;
    let gamma: Vec<(i64, Complex64)> =
        g.gamma.coeffs().iter().enumerate().map(|(i, c)| (i as i64 - order, *c)).collect();
    let poly: Vec<(i64, Complex64)> =
        g.poly.terms().iter().map(|(f, c)| (f.as_integer().unwrap_or(i64::MIN), *c)).collect();
    let min_spec = poly.iter().map(|t| t.0).min().unwrap_or(1);
    let deg = poly.iter().map(|t| t.0.abs()).max().unwrap_or(0);
    let m = (2 * (order + deg) as usize + 1).next_power_of_two().max(8192);
    let gs = direct_samples(&gamma, m);
    let ps = direct_samples(&poly, m);
    let stride = m / 8192;
    let min_gamma = gs.iter().step_by(stride).map(|c| c.re).fold(f64::INFINITY, f64::min);
    let min_hat = gamma.iter().map(|t| t.1.re).fold(f64::INFINITY, f64::min);
    let pg: Vec<Complex64> = gs.iter().zip(&ps).map(|(a, b)| a * b).collect();
    (min_gamma, min_hat, min_spec as f64, ap_distance_to_one(&gs, p), ap_distance_to_one(&pg, p))
}

fn gamma_lemma() -> Outcome {
    let (p, eps) = (1.5, 0.25);
    let (g, verified) = match lemma_gamma_p(p, eps, &GammaBudget::default()) {
        Ok(g) => (g, true),
        Err(e) => match gamma_best_effort(Err(e)) {
            Ok(g) => (g, false),
            Err(e) => return Outcome::error(e),
        },
    };
    let (min_g, min_hat, min_spec, g1, pg1) = reverify_gamma(&g, p);
    let pass = min_g >= 1e-10 && min_hat >= -1e-12 && min_spec >= 1.0 && g1 < eps && pg1 < eps;
    let source = if verified { "returned pair" } else { "best rung after budget exhaustion" };
    Outcome::new(
        pass,
        format!(
            "{source} at h = {:.4}, independent check: min gamma {min_g:.3e} (>= 1e-10), min gamma hat {min_hat:.3e} (>= 0), min spec P \
             {min_spec} (>= 1), ||gamma - 1|| {g1:.4} and ||P gamma - 1|| {pg1:.4} (both < {eps})",
            g.h
        ),
    )
}

fn sparse_block() -> Outcome {
    let u = match blocks::sigma_bump(1, 0.4, 0.6) {
        Ok(u) => Weight::from_line(u),
        Err(e) => return Outcome::error(e),
    };
    let h = TrigPoly::from_terms((1..=3).map(|n| (Frequency::Real(sigma(n)), Complex64::new(0.3, 0.1 * n as f64))))
        .expect("distinct frequencies");
    let budget = SparseBudget::default();
    let blk = match lemma_sparse_blocks(&u, &h, 1.5, 0.3, &budget) {
        Ok(b) => b,
        Err(e) => return Outcome::error(e),
    };
    let build = match blk.build(50.0, &budget) {
        Ok(b) => b,
        Err(e) => return Outcome::error(e),
    };
    let mut checks = build.checks.clone();
    let ratio_ok = find(&checks, "min ratio in block").map(|c| c.pass);
    checks.push(Check::at_most("delta = 1/(1 + deg P)", (blk.delta - 1.0 / blk.gamma.degree_plus_one()).abs(), 0.0));
    let detail = format!(
        "lambda_1 {:.4e}, delta {:.4e}, ratios above 1 + delta: {}; {}",
        build.lambdas.first().map_or(f64::NAN, |l| l.0),
        blk.delta,
        ratio_ok.unwrap_or(false),
        worst(&checks, 4)
    );
    Outcome::new(all_pass(&checks), detail)
}

fn report_of(cfg: &RunConfig) -> Result<RunReport, String> {
    run(cfg).map_err(|e| e.to_string())
}

fn sparse_driver(runs: &mut Vec<(String, RunConfig, String)>) -> Outcome {
    let cfg = config(CommandKind::BuildSparse, SEED);
    let r = match report_of(&cfg) {
        Ok(r) => r,
        Err(e) => return Outcome::error(e),
    };
    runs.push(("sparse driver".into(), cfg, to_json(&r)));
    let rep = &r.report;
    let ratios = find(&rep.checks, "min ratio - (1 + eps_n)");
    let ratio_ok = ratios.is_some_and(|c| c.pass);
    let rows: Vec<_> = rep.residuals.iter().filter(|row| row.name.starts_with("residual ")).collect();
    let residual_ok = rows.len() == 3 && rows.iter().all(|row| row.value < 2.0 / row.step as f64 + 0.05);
    let probes: Vec<&Check> = rep.checks.iter().filter(|c| c.name.contains("probe grid")).collect();
    let probe_ok = probes.len() == 3 && probes.iter().all(|c| c.pass);
    let res: Vec<String> =
        rows.iter().map(|row| format!("k={} {:.4} (< {:.4})", row.step, row.value, 2.0 / row.step as f64 + 0.05)).collect();
    let pr: Vec<String> = probes.iter().map(|c| format!("{} {:.3e}", c.name, c.measured)).collect();
    Outcome::new(
        ratio_ok && residual_ok && probe_ok,
        format!(
            "ratio excess {:.4e} (> 0); residuals {}; {}",
            ratios.map_or(f64::NAN, |c| c.measured),
            res.join(", "),
            pr.join(", ")
        ),
    )
}

fn almost_integer(runs: &mut Vec<(String, RunConfig, String)>) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for s in [1usize, 2] {
        let mut cfg = config(CommandKind::BuildAlmostInteger, SEED);
        cfg.almost_integer.s = s;
        cfg.almost_integer.alpha = "0.3/n".into();
        cfg.almost_integer.eps = 0.3;
        cfg.almost_integer.n = 10;
        cfg.almost_integer.p = 2.0;
        cfg.almost_integer.steps = 0;
        let r = match report_of(&cfg) {
            Ok(r) => r,
            Err(e) => {
                pass = false;
                parts.push(format!("s={s}: error: {e}"));
                continue;
            }
        };
        let checks = &r.report.checks;
        let division = checks
            .iter()
            .filter(|c| c.name.contains("coefficient division"))
            .map(|c| c.measured)
            .fold(0.0, f64::max);
        pass &= all_pass(checks) && division <= 1e-12;
        parts.push(format!("s={s}: division {division:.3e} (<= 1e-12), {}", worst(checks, 3)));
        runs.push((format!("almost-integer s={s}"), cfg, to_json(&r)));
    }
    Outcome::new(pass, parts.join(" | "))
}

fn flc(runs: &mut Vec<(String, RunConfig, String)>) -> Outcome {
    let mut cfg = config(CommandKind::BuildFlc, SEED);
    cfg.flc.a = SQRT_2;
    cfg.flc.l = 1;
    cfg.flc.h = 0.6;
    cfg.flc.eps = 0.1;
    let r = match report_of(&cfg) {
        Ok(r) => r,
        Err(e) => return Outcome::error(e),
    };
    runs.push(("flc".into(), cfg, to_json(&r)));
    let checks = &r.report.checks;
    let get = |name: &str| find(checks, name).cloned();
    let wanted = ["sup |P - chi| on Omega", "gaps outside {1, a}", "Vandermonde residual"];
    let found: Vec<Check> = wanted.iter().filter_map(|n| get(n)).collect();
    let pass = found.len() == wanted.len() && found.iter().all(|c| c.pass);
    let shown: Vec<String> = found.iter().map(|c| describe(c)).collect();
    Outcome::new(pass, shown.join("; "))
}

fn completeness(runs: &mut Vec<(String, RunConfig, String)>) -> Outcome {
    let cfg = config(CommandKind::CheckCompleteness, SEED);
    let r = match report_of(&cfg) {
        Ok(r) => r,
        Err(e) => return Outcome::error(e),
    };
    runs.push(("completeness".into(), cfg, to_json(&r)));
    let trend: Vec<String> = r
        .report
        .residuals
        .iter()
        .filter(|row| row.name == "perturbed integers")
        .map(|row| format!("{}:{:.4}", row.step, row.value))
        .collect();
    Outcome::new(
        all_pass(&r.report.checks),
        format!("{}; perturbed trend {}", worst(&r.report.checks, 3), trend.join(" ")),
    )
}

fn determinism(runs: &[(String, RunConfig, String)]) -> Outcome {
    let mut cfg = config(CommandKind::VerifyBlocks, SEED);
    cfg.blocks.trials = 50;
    let mut all = runs.to_vec();
    match report_of(&cfg) {
        Ok(r) => all.push(("verify-blocks".into(), cfg, to_json(&r))),
        Err(e) => return Outcome::error(e),
    }
    let mut differing = Vec::new();
    for (name, cfg, first) in &all {
        match report_of(cfg) {
            Ok(r) if to_json(&r) == *first => {}
            Ok(_) => differing.push(name.clone()),
            Err(e) => differing.push(format!("{name} ({e})")),
        }
    }
    let names: Vec<&str> = all.iter().map(|r| r.0.as_str()).collect();
    if differing.is_empty() {
        Outcome::new(true, format!("byte-identical reports on repeat: {}", names.join(", ")))
    } else {
        Outcome::new(false, format!("reports differ on repeat: {}", differing.join(", ")))
    }
}

fn report(label: &str, limit: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = f();
    let took = start.elapsed();
    let pass = out.pass && took <= limit;
    println!(
        "{} {label}: {} [{:.1} s, limit {} s]",
        if pass { "PASS" } else { "FAIL" },
        out.detail,
        took.as_secs_f64(),
        limit.as_secs()
    );
    pass
}

fn main() {
    let secs = Duration::from_secs;
    let mut runs = Vec::new();
    let results = [
        report("1 triangle and trapezoid norm bounds", secs(10), building_blocks),
        report("2 properties of phi", secs(10), phi_properties),
        report("3 difference operator oracle", secs(30), difference_operator),
        report("4 gamma lemma at p = 1.5, eps = 0.25", secs(300), gamma_lemma),
        report("5 sparse block certificate", secs(600), sparse_block),
        report("6 sparse driver with three steps", secs(1800), || sparse_driver(&mut runs)),
        report("7 almost-integer construction for s = 1, 2", secs(1800), || almost_integer(&mut runs)),
        report("8 two-gap polynomial for a restricted Gaussian", secs(300), || flc(&mut runs)),
        report("9 completeness residuals", secs(300), || completeness(&mut runs)),
        report("10 determinism", secs(3600), || determinism(&runs)),
    ];
    let passed = results.iter().filter(|p| **p).count();
    println!("acceptance: {passed} of {} criteria pass", results.len());
    if std::env::var_os("SPECTRAL_FORGE_STRICT").is_some() && passed < results.len() {
        std::process::exit(1);
    }
}
