use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use spectral_forge::config::OUT_ENV;
use spectral_forge::{emit, emit_report, run, CommandKind, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "spectral-forge", version, about = "Constructions with constrained spectra and their certificates")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the configuration and SPECTRAL_FORGE_OUT.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed of the randomized batteries.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Multiplier applied to the numerical tolerances of the batteries.
    #[arg(long = "tolerance-scale", global = true)]
    tolerance_scale: Option<f64>,
    #[command(subcommand)]
    command: Option<Cmd>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Building-block inequalities and the difference-operator battery.
    VerifyBlocks {
        #[arg(long)]
        trials: Option<usize>,
    },
    /// The sparse-spectrum driver.
    BuildSparse {
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lambda0: Option<f64>,
    },
    /// The almost-integer construction; `--steps 0` runs a single (Gamma, Q) lemma.
    BuildAlmostInteger {
        /// Offsets such as `0.3/n`, `0.4/sqrt(n)` or `alt:0.2/n`.
        #[arg(long)]
        alpha: Option<String>,
        #[arg(long)]
        s: Option<usize>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        p: Option<f64>,
        #[arg(long)]
        n: Option<u64>,
    },
    /// A two-gap polynomial approximating a restricted Gaussian.
    BuildFlc {
        #[arg(long)]
        a: Option<f64>,
        #[arg(long = "L")]
        l: Option<u32>,
        #[arg(long)]
        h: Option<f64>,
        #[arg(long)]
        eps: Option<f64>,
    },
    /// Gram residuals of integer and perturbed-integer exponentials.
    CheckCompleteness {
        #[arg(long = "L")]
        l: Option<u32>,
        #[arg(long)]
        h: Option<f64>,
    },
}

fn overrides(cli: &Cli) -> Overrides {
    let mut o = Overrides {
        out: cli.out.clone(),
        seed: cli.seed,
        tolerance_scale: cli.tolerance_scale,
        ..Default::default()
    };
    let Some(cmd) = &cli.command else { return o };
    o.command = Some(match cmd {
        Cmd::VerifyBlocks { trials } => {
            o.param("blocks", "trials", trials.map(|v| v as i64));
            CommandKind::VerifyBlocks
        }
        Cmd::BuildSparse { steps, lambda0 } => {
            o.param("sparse", "steps", steps.map(|v| v as i64));
            o.param("sparse", "lambda0", *lambda0);
            CommandKind::BuildSparse
        }
        Cmd::BuildAlmostInteger { alpha, s, eps, steps, p, n } => {
            o.param("almost_integer", "alpha", alpha.clone());
            o.param("almost_integer", "s", s.map(|v| v as i64));
            o.param("almost_integer", "eps", *eps);
            o.param("almost_integer", "steps", steps.map(|v| v as i64));
            o.param("almost_integer", "p", *p);
            o.param("almost_integer", "n", n.map(|v| v as i64));
            CommandKind::BuildAlmostInteger
        }
        Cmd::BuildFlc { a, l, h, eps } => {
            o.param("flc", "a", *a);
            o.param("flc", "l", l.map(i64::from));
            o.param("flc", "h", *h);
            o.param("flc", "eps", *eps);
            CommandKind::BuildFlc
        }
        Cmd::CheckCompleteness { l, h } => {
            o.param("completeness", "l", l.map(i64::from));
            o.param("completeness", "h", *h);
            CommandKind::CheckCompleteness
        }
    });
    o
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let env_out = std::env::var_os(OUT_ENV).map(PathBuf::from);
    let config = match RunConfig::resolve(cli.config.as_deref(), &overrides(&cli), env_out) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let report = match run(&config) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match emit_report(&report, &config.out) {
        Ok((_, digest)) => print!("{}", emit::summary(&report, &digest)),
        Err(e) => {
            eprintln!("error: writing {}: {e}", config.out.display());
            return ExitCode::from(2);
        }
    }
    if report.pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
