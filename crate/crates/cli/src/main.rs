//! `vdr` — simulate, fit, compare, and diagnose rating-scale rule-mixture
//! models from the command line.
//!
//! Every invocation resolves to an [`manifest::ExperimentManifest`] (flags
//! override manifest values, which override defaults), writes the resolved
//! manifest next to its outputs, and embeds the manifest digest in every
//! artifact. `vdr run --manifest FILE` replays a saved manifest exactly;
//! outputs are byte-identical for any `--jobs` setting.
//!
//! Exit codes: 0 success, 2 usage, 3 input/parse, 4 infeasible model,
//! 5 quadrature failure, 6 failed data screening (pipeline only).

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vdr_core::error::VdrError;
use vdr_core::model::{ModelClass, ModelSpec, ParamSet, RuleSet};
use vdr_core::sim;
use vdr_core::Result;

use manifest::ExperimentManifest;

#[derive(Parser)]
#[command(
    name = "vdr",
    version,
    about = "Rating-scale rule-mixture models: simulation, fitting, model selection, diagnostics"
)]
struct Cli {
    /// Master seed; every random stream is derived from it
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (outputs are identical for any value)
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Relative quadrature tolerance (absolute tolerance = 1e-3 x relative)
    #[arg(long, global = true)]
    tol: Option<f64>,

    /// Number of independent fit starts
    #[arg(long, global = true)]
    starts: Option<usize>,

    /// Annealing steps per start
    #[arg(long, global = true)]
    steps: Option<usize>,

    /// Output directory for artifacts
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,

    /// Manifest file supplying defaults for every setting
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,

    /// Proceed past a failed independence screen
    #[arg(long, global = true)]
    force: bool,

    /// Stream progress to stderr
    #[arg(long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate pseudo-data count matrices from a generating model
    Simulate {
        /// Number of stimuli
        #[arg(long)]
        n: Option<usize>,
        /// Number of response categories
        #[arg(long)]
        m: Option<usize>,
        /// Trials per stimulus
        #[arg(long)]
        tps: Option<u64>,
        /// Number of matrices (generating parameters walk between them)
        #[arg(long)]
        nsim: Option<usize>,
        /// Relative scale of the generating-parameter random walk
        #[arg(long)]
        walk_step: Option<f64>,
        /// JSON file with the generating parameter set
        #[arg(long)]
        theta: Option<PathBuf>,
        /// Model class: VDR, SDT-EV, SDT-UV, CSDT-EV, CSDT-UV
        #[arg(long)]
        class: Option<String>,
        /// Comma-separated decision rules, e.g. 1,3
        #[arg(long)]
        rules: Option<String>,
    },
    /// Fit a model to a count matrix by annealed multi-start search
    Fit {
        /// Count-matrix CSV
        data: Option<PathBuf>,
        /// JSON model spec file
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Model class (dimensions are taken from the data)
        #[arg(long)]
        class: Option<String>,
        /// Comma-separated decision rules, e.g. 1,3
        #[arg(long)]
        rules: Option<String>,
    },
    /// Compare two fit artifacts of the same data by AICc
    Compare {
        fit_a: Option<PathBuf>,
        fit_b: Option<PathBuf>,
    },
    /// Screen a trial sequence for sequential dependencies (PACF)
    Diagnose {
        /// Trial-sequence CSV (trial,stimulus,response)
        trials: Option<PathBuf>,
        #[arg(long)]
        max_lag: Option<usize>,
    },
    /// Bin continuous ratings into a count matrix
    Bin {
        /// Trial-sequence CSV (trial,stimulus,response)
        trials: Option<PathBuf>,
        #[arg(long)]
        bins: Option<usize>,
        /// Equal-count bins instead of equal-width
        #[arg(long)]
        equal_count: bool,
    },
    /// Screen, tabulate, and run the staged model-selection procedure
    Pipeline {
        /// Trial-sequence CSV or pre-tabulated count-matrix CSV
        input: Option<PathBuf>,
        #[arg(long)]
        bins: Option<usize>,
        #[arg(long)]
        max_lag: Option<usize>,
    },
    /// Scan trials-per-stimulus for the critical sample size between models
    CssScan {
        /// JSON file with {"spec": ..., "theta": ...} for model A
        model_a: Option<PathBuf>,
        /// JSON file with {"spec": ..., "theta": ...} for model B
        model_b: Option<PathBuf>,
        /// Comma-separated trials-per-stimulus grid, e.g. 100,400,1600
        #[arg(long)]
        grid: Option<String>,
        /// Simulations per model per grid point
        #[arg(long)]
        reps: Option<usize>,
        /// Required fraction of correct AICc preferences
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Sweep one integration cell and report step-size discontinuities
    JumpDemo {
        #[arg(long)]
        rule: Option<u8>,
        #[arg(long)]
        row: Option<usize>,
        #[arg(long)]
        col: Option<usize>,
        #[arg(long)]
        points: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        m: Option<usize>,
    },
    /// Replay a saved manifest exactly
    Run,
}

fn parse_class(s: &str) -> Result<ModelClass> {
    serde_json::from_value(serde_json::Value::String(s.to_uppercase()))
        .map_err(|_| VdrError::Parse(format!("unknown model class '{s}'")))
}

fn parse_rules(s: &str) -> Result<RuleSet> {
    let rules: std::result::Result<Vec<u8>, _> =
        s.split(',').map(|t| t.trim().parse::<u8>()).collect();
    RuleSet::new(&rules.map_err(|e| VdrError::Parse(format!("bad rule list '{s}': {e}")))?)
}

fn parse_grid(s: &str) -> Result<Vec<u64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<u64>()
                .map_err(|e| VdrError::Parse(format!("bad grid value '{t}': {e}")))
        })
        .collect()
}

fn load_json<T: for<'de> serde::Deserialize<'de>>(path: &PathBuf) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| VdrError::Parse(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

/// Merge the subcommand's arguments into the manifest. Flags win over
/// whatever the loaded manifest carried.
fn overlay(man: &mut ExperimentManifest, cmd: &Cmd) -> Result<()> {
    match cmd {
        Cmd::Simulate {
            n,
            m,
            tps,
            nsim,
            walk_step,
            theta,
            class,
            rules,
        } => {
            man.command = "simulate".into();
            let mut sim = man.sim.take().unwrap_or_default();
            if n.is_some() || m.is_some() || class.is_some() || rules.is_some() {
                let n = n.unwrap_or(sim.spec.n_stimuli);
                let m = m.unwrap_or(sim.spec.n_responses);
                let klass = match class {
                    Some(c) => parse_class(c)?,
                    None => sim.spec.klass,
                };
                let rule_set = match rules {
                    Some(r) => parse_rules(r)?,
                    None => sim.spec.rule_set,
                };
                sim.spec = ModelSpec::new(n, m, klass, rule_set)?;
                // structural zeros and equal-variance ties for special classes
                sim.theta =
                    sim::repair_params(sim::default_generating_params(n, m), &sim.spec, 1e-3);
            }
            if let Some(p) = theta {
                sim.theta = load_json::<ParamSet>(p)?;
            }
            if let Some(t) = tps {
                sim.tps = *t;
            }
            if let Some(k) = nsim {
                sim.nsim = *k;
            }
            if let Some(w) = walk_step {
                sim.walk_step = *w;
            }
            man.spec = Some(sim.spec);
            man.sim = Some(sim);
        }
        Cmd::Fit {
            data,
            spec,
            class,
            rules,
        } => {
            man.command = "fit".into();
            if let Some(d) = data {
                man.inputs = vec![d.clone()];
            }
            if let Some(p) = spec {
                man.spec = Some(load_json::<ModelSpec>(p)?);
            } else if class.is_some() || rules.is_some() {
                let path = man
                    .inputs
                    .first()
                    .ok_or_else(|| VdrError::Parse("fit requires a data file".into()))?;
                let text = std::fs::read_to_string(path)
                    .map_err(|e| VdrError::Parse(format!("cannot read {}: {e}", path.display())))?;
                let counts = vdr_core::io::count_matrix_from_csv(&text)?;
                let klass = match class {
                    Some(c) => parse_class(c)?,
                    None => ModelClass::Vdr,
                };
                let rule_set = match rules {
                    Some(r) => parse_rules(r)?,
                    None => RuleSet::ALL,
                };
                man.spec = Some(ModelSpec::new(
                    counts.n_stimuli(),
                    counts.n_responses(),
                    klass,
                    rule_set,
                )?);
            }
        }
        Cmd::Compare { fit_a, fit_b } => {
            man.command = "compare".into();
            if let (Some(a), Some(b)) = (fit_a, fit_b) {
                man.inputs = vec![a.clone(), b.clone()];
            }
        }
        Cmd::Diagnose { trials, max_lag } => {
            man.command = "diagnose".into();
            if let Some(t) = trials {
                man.inputs = vec![t.clone()];
            }
            if max_lag.is_some() {
                man.options.max_lag = *max_lag;
            }
        }
        Cmd::Bin {
            trials,
            bins,
            equal_count,
        } => {
            man.command = "bin".into();
            if let Some(t) = trials {
                man.inputs = vec![t.clone()];
            }
            if bins.is_some() {
                man.options.bins = *bins;
            }
            if *equal_count {
                man.options.equal_count = true;
            }
        }
        Cmd::Pipeline {
            input,
            bins,
            max_lag,
        } => {
            man.command = "pipeline".into();
            if let Some(i) = input {
                man.inputs = vec![i.clone()];
            }
            if bins.is_some() {
                man.options.bins = *bins;
            }
            if max_lag.is_some() {
                man.options.max_lag = *max_lag;
            }
        }
        Cmd::CssScan {
            model_a,
            model_b,
            grid,
            reps,
            threshold,
        } => {
            man.command = "css-scan".into();
            if let (Some(a), Some(b)) = (model_a, model_b) {
                man.inputs = vec![a.clone(), b.clone()];
            }
            if let Some(g) = grid {
                man.options.grid = parse_grid(g)?;
            }
            if reps.is_some() {
                man.options.reps = *reps;
            }
            if threshold.is_some() {
                man.options.threshold = *threshold;
            }
        }
        Cmd::JumpDemo {
            rule,
            row,
            col,
            points,
            n,
            m,
        } => {
            man.command = "jump-demo".into();
            if n.is_some() || m.is_some() {
                let cur = man.spec.unwrap_or(ModelSpec::general_vdr(4, 7)?);
                man.spec = Some(ModelSpec::general_vdr(
                    n.unwrap_or(cur.n_stimuli),
                    m.unwrap_or(cur.n_responses),
                )?);
            }
            if rule.is_some() {
                man.options.rule = *rule;
            }
            if row.is_some() {
                man.options.row = *row;
            }
            if col.is_some() {
                man.options.col = *col;
            }
            if points.is_some() {
                man.options.points = *points;
            }
        }
        Cmd::Run => {
            if man.command.is_empty() {
                return Err(VdrError::Parse(
                    "run requires --manifest with a saved command".into(),
                ));
            }
        }
    }
    Ok(())
}

/// Apply the global flags and propagate the master seed into every
/// seed-bearing sub-config, so the stored manifest replays exactly.
fn apply_globals(man: &mut ExperimentManifest, cli: &Cli) {
    if let Some(s) = cli.seed {
        man.seed = s;
    }
    if let Some(t) = cli.tol {
        man.quad.rel_tol = t;
        man.quad.abs_tol = t * 1e-3;
    }
    if let Some(s) = cli.starts {
        man.search.n_starts = s;
    }
    if let Some(s) = cli.steps {
        man.search.n_steps = s;
    }
    man.search.seed = man.seed;
    if let Some(sim) = man.sim.as_mut() {
        sim.seed = man.seed;
    }
}

fn exit_code(e: &VdrError) -> u8 {
    match e {
        VdrError::InfeasibleSpec { .. } | VdrError::SampleTooSmall { .. } => 4,
        VdrError::QuadratureFailure { .. } => 5,
        VdrError::ScreeningFailed(_) => 6,
        _ => 3,
    }
}

fn run_cli(cli: &Cli) -> Result<()> {
    let mut man = match &cli.manifest {
        Some(path) => load_json::<ExperimentManifest>(path)?,
        None => ExperimentManifest::default(),
    };
    if let (Some(_), Cmd::Run) = (&cli.manifest, &cli.cmd) {
        // replay verbatim; only global flags may override
    } else if !man.command.is_empty() {
        // a manifest loaded under an explicit subcommand serves as defaults
    }
    overlay(&mut man, &cli.cmd)?;
    apply_globals(&mut man, cli);
    if !man.quad.validate() {
        return Err(VdrError::Parse(
            "quadrature tolerances out of range (rel_tol and abs_tol must be positive)".into(),
        ));
    }
    commands::run(&man, &cli.out, cli.force, cli.verbose)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        // ignore failure: the global pool may already exist in tests
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global();
    }
    match run_cli(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
