//! Command-line driver: argument definitions and dispatch.

pub mod commands;
pub mod config;
pub mod output;
pub mod plot;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use config::{ConfigFile, Globals, Params};
use output::Checks;

/// Exit code when `--strict` is set and a check fails.
pub const EXIT_CHECK_FAILED: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "subdiff", version, about = "Verifiers for time-fractional parabolic equations")]
pub struct Cli {
    /// Key-value config file with one section per subcommand.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (default `out`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Exit with status 3 when any check fails.
    #[arg(long, global = true)]
    pub strict: bool,
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

/// Rough-in-time problem shared by the solution-based subcommands.
#[derive(Args, Debug, Clone, Default)]
pub struct ProblemArgs {
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub t_end: Option<f64>,
    /// Time steps.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    /// Box length.
    #[arg(long)]
    pub l: Option<f64>,
    /// Cells per axis.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub switches: Option<usize>,
    /// Fourier modes of the random right-hand side.
    #[arg(long)]
    pub modes: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Caputo derivative of a power of t against its closed form.
    Fracderiv {
        #[arg(long)]
        alpha: Option<f64>,
        /// t, t2 or t3.
        #[arg(long = "fn")]
        func: Option<String>,
        /// Number of refinement levels.
        #[arg(long)]
        refine: Option<usize>,
        #[arg(long)]
        n0: Option<usize>,
        #[arg(long)]
        t_end: Option<f64>,
    },
    /// One solve; writes the solution and coefficients as binary dumps.
    Solve {
        #[command(flatten)]
        problem: ProblemArgs,
        /// rough, bmo or constant.
        #[arg(long)]
        coeff: Option<String>,
        #[arg(long)]
        gamma0: Option<f64>,
        #[arg(long)]
        r0: Option<f64>,
        /// trig, zero or manufactured.
        #[arg(long)]
        rhs: Option<String>,
        /// dense or compressed.
        #[arg(long)]
        history: Option<String>,
        #[arg(long)]
        eps: Option<f64>,
    },
    /// Discrete energy inequality on random vector series.
    Energy {
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        width: Option<usize>,
    },
    /// A priori constant over an ensemble of coefficients and data.
    Apriori {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        p: Option<f64>,
        #[arg(long)]
        refine: Option<bool>,
    },
    /// Mean oscillation and the doubling bound of a small-BMO field.
    Oscillation {
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        gamma0: Option<f64>,
        #[arg(long)]
        r0: Option<f64>,
        /// smooth or checkerboard.
        #[arg(long)]
        profile: Option<String>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Embedding inequality ratios over random test functions.
    Embed {
        /// Inequality id, or `all`.
        #[arg(long)]
        id: Option<String>,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        p: Option<f64>,
        #[arg(long)]
        q: Option<f64>,
        #[arg(long)]
        r: Option<f64>,
        #[arg(long)]
        theta: Option<f64>,
        #[arg(long)]
        t_end: Option<f64>,
        #[arg(long)]
        seeds: Option<usize>,
        /// 0 picks a resolution per id.
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long)]
        refine: Option<bool>,
    },
    /// Exponent ladder from p to infinity.
    Ladder {
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        p: Option<f64>,
    },
    /// Maximal functions of the Hessian of a solution.
    Maximal {
        #[command(flatten)]
        problem: ProblemArgs,
        /// square, rectangular or two-sided.
        #[arg(long)]
        shape: Option<String>,
        #[arg(long)]
        p: Option<f64>,
    },
    /// Layer-cake identity on computed solutions.
    Layercake {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long)]
        runs: Option<usize>,
        /// Comma-separated exponents.
        #[arg(long)]
        p: Option<String>,
    },
    /// Local splitting of a solution into w and v.
    Decompose {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long)]
        t0: Option<f64>,
        /// Comma-separated center.
        #[arg(long)]
        x0: Option<String>,
        #[arg(long)]
        r: Option<f64>,
        #[arg(long)]
        p: Option<f64>,
    },
    /// Level-set measure inequality with fitted κ.
    Abset {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long)]
        p: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        kappa: Option<f64>,
        /// Adds the small-BMO term with this γ0.
        #[arg(long)]
        gamma0: Option<f64>,
        #[arg(long)]
        mu: Option<f64>,
    },
    /// Covering lemma constant on synthetic sets.
    Inkspots {
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        instances: Option<usize>,
    },
    /// Manufactured-solution refinement study of the solver.
    Convergence {
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        switches: Option<usize>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        levels: Option<usize>,
        #[arg(long)]
        n0: Option<usize>,
    },
    /// Renders a table written by another subcommand as SVG.
    Plot {
        #[arg(long)]
        table: PathBuf,
        /// convergence, ratio or levelset.
        #[arg(long)]
        kind: String,
        /// Defaults to the table path with an `.svg` extension.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Fracderiv { .. } => "fracderiv",
            Command::Solve { .. } => "solve",
            Command::Energy { .. } => "energy",
            Command::Apriori { .. } => "apriori",
            Command::Oscillation { .. } => "oscillation",
            Command::Embed { .. } => "embed",
            Command::Ladder { .. } => "ladder",
            Command::Maximal { .. } => "maximal",
            Command::Layercake { .. } => "layercake",
            Command::Decompose { .. } => "decompose",
            Command::Abset { .. } => "abset",
            Command::Inkspots { .. } => "inkspots",
            Command::Convergence { .. } => "convergence",
            Command::Plot { .. } => "plot",
        }
    }
}

pub const COMMANDS: [&str; 14] = [
    "fracderiv", "solve", "energy", "apriori", "oscillation", "embed", "ladder", "maximal", "layercake", "decompose", "abset", "inkspots", "convergence", "plot",
];

/// Resolved parameters and global options of one invocation.
pub struct Ctx {
    pub params: Params,
    pub globals: Globals,
}

impl Ctx {
    /// Fixes the config hash and opens the output directory; call after
    /// every parameter has been resolved.
    pub fn output(&self) -> Result<output::Output> {
        let hash = self.params.finish(self.globals.seed)?;
        output::Output::create(&self.globals.out, hash)
    }
}

/// Runs the parsed command; returns the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p, &COMMANDS)?,
        None => ConfigFile::default(),
    };
    let globals = Globals::resolve(&file, cli.seed, cli.out.clone(), cli.strict, cli.threads)?;
    if let Some(t) = globals.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            log::warn!("thread pool already initialised: {e}");
        }
    }
    let strict = globals.strict;
    let mut ctx = Ctx { params: Params::new(cli.command.name(), &file), globals };
    let checks: Checks = commands::dispatch(&cli.command, &mut ctx)?;
    for (name, pass, detail) in &checks.items {
        println!("check {name}: {} {detail}", if *pass { "PASS" } else { "FAIL" });
    }
    Ok(if strict && !checks.all_pass() { EXIT_CHECK_FAILED } else { 0 })
}
