//! Implementations of the subcommands. Each one reads its inputs, runs the
//! corresponding `vdr_core` operation, and writes artifacts (atomically)
//! into the output directory with an embedded provenance block.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vdr_core::diag::{self, BinStrategy, PipelineConfig, ScreenVerdict, TrialSequence};
use vdr_core::error::VdrError;
use vdr_core::model::{
    check_fit_feasible, count_parameters, CountMatrix, FitResult, ModelSpec, ParamSet,
};
use vdr_core::quad::{self, SweepSample};
use vdr_core::rng::substream;
use vdr_core::{fit, gof, io, likelihood, sim, Result};

use crate::manifest::{ExperimentManifest, Provenance};

/// A fit artifact on disk: provenance plus the fit itself.
#[derive(Debug, Serialize, Deserialize)]
pub struct FitArtifact {
    pub provenance: Provenance,
    pub fit: FitResult,
}

/// A generating model on disk, as used by `css-scan`.
#[derive(Debug, Serialize, Deserialize)]
pub struct ModelInstance {
    pub spec: ModelSpec,
    pub theta: ParamSet,
}

fn read_input(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| VdrError::Parse(format!("cannot read {}: {e}", path.display())))
}

fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&read_input(path)?)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    io::write_atomic(path, &s)
}

fn input<'a>(man: &'a ExperimentManifest, idx: usize, what: &str) -> Result<&'a PathBuf> {
    man.inputs
        .get(idx)
        .ok_or_else(|| VdrError::Parse(format!("{} requires {what}", man.command)))
}

fn recommend_dimensions(spec: &ModelSpec) {
    if spec.n_stimuli < 3 || spec.n_responses < 4 {
        eprintln!(
            "warning: {} stimuli x {} responses is below the recommended minimum of 3 x 4; \
             identifiability will be poor",
            spec.n_stimuli, spec.n_responses
        );
    }
}

/// Dispatch a resolved manifest. `out` is the artifact directory.
pub fn run(man: &ExperimentManifest, out: &Path, force: bool, verbose: bool) -> Result<()> {
    fs::create_dir_all(out)?;
    let prov = Provenance::new(man);
    io::write_atomic(&out.join("manifest.json"), &man.to_json())?;
    match man.command.as_str() {
        "simulate" => simulate(man, out, &prov, verbose),
        "fit" => fit_cmd(man, out, &prov, verbose),
        "compare" => compare(man, out, &prov),
        "diagnose" => diagnose(man, out, &prov),
        "bin" => bin_cmd(man, out, &prov),
        "pipeline" => pipeline(man, out, &prov, force, verbose),
        "css-scan" => css_scan(man, out, &prov, verbose),
        "jump-demo" => jump_demo(man, out, &prov),
        other => Err(VdrError::Parse(format!("unknown command '{other}'"))),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SimArtifact {
    provenance: Provenance,
    spec: ModelSpec,
    theta: ParamSet,
    /// Log-likelihood of the matrix under its own generating parameters.
    log_l_g: f64,
    data_digest: u64,
}

fn simulate(man: &ExperimentManifest, out: &Path, prov: &Provenance, verbose: bool) -> Result<()> {
    let cfg = man
        .sim
        .as_ref()
        .ok_or_else(|| VdrError::Parse("simulate requires a generating model".into()))?;
    recommend_dimensions(&cfg.spec);
    let batch = sim::run_batch(cfg, &man.quad)?;
    for (i, (theta, matrix, log_l_g)) in batch.iter().enumerate() {
        let csv = io::count_matrix_to_csv(matrix) + &prov.csv_footer();
        io::write_atomic(&out.join(format!("sim_{i:03}.csv")), &csv)?;
        write_json(
            &out.join(format!("sim_{i:03}.json")),
            &SimArtifact {
                provenance: prov.clone(),
                spec: cfg.spec,
                theta: theta.clone(),
                log_l_g: *log_l_g,
                data_digest: matrix.digest(),
            },
        )?;
        if verbose {
            eprintln!("sim {i}: tps={} log(L)_G={log_l_g:.4}", matrix.tps);
        }
    }
    println!("simulate: wrote {} matrices to {}", batch.len(), out.display());
    Ok(())
}

// No row-sum check here: real (binned) data has uneven row totals, unlike
// simulator output; the parser already guarantees a rectangular matrix.
fn load_counts(path: &Path) -> Result<CountMatrix> {
    io::count_matrix_from_csv(&read_input(path)?)
}

fn fit_cmd(man: &ExperimentManifest, out: &Path, prov: &Provenance, verbose: bool) -> Result<()> {
    let data = load_counts(input(man, 0, "a count-matrix CSV")?)?;
    let spec = man
        .spec
        .ok_or_else(|| VdrError::Parse("fit requires a model spec".into()))?;
    if spec.n_stimuli != data.n_stimuli() || spec.n_responses != data.n_responses() {
        return Err(VdrError::ShapeMismatch(format!(
            "spec is {}x{} but the data are {}x{}",
            spec.n_stimuli,
            spec.n_responses,
            data.n_stimuli(),
            data.n_responses()
        )));
    }
    recommend_dimensions(&spec);
    if !check_fit_feasible(&spec) {
        return Err(VdrError::InfeasibleSpec {
            data_df: spec.data_df(),
            n_params: count_parameters(&spec),
        });
    }
    let mut rng = substream(man.seed, "cli", "starts", 0);
    let starts = fit::default_starts(&spec, &data, man.search.n_starts.max(2), &mut rng);
    if verbose {
        eprintln!(
            "fitting {} {:?} with {} starts x {} steps",
            spec.klass,
            Vec::<u8>::from(spec.rule_set),
            starts.len(),
            man.search.n_steps
        );
    }
    let result = fit::multi_start_fit(&data, &spec, &starts, &man.search, &man.quad)?;
    println!(
        "fit: {} {:?} log(L)={:.4} AICc={:.4} r2={:.4} %ic={:.4}",
        result.spec.klass,
        Vec::<u8>::from(result.spec.rule_set),
        result.log_l,
        result.aicc,
        result.gof.r2,
        result.pct_ic
    );
    write_json(
        &out.join("fit.json"),
        &FitArtifact {
            provenance: prov.clone(),
            fit: result,
        },
    )
}

fn compare(man: &ExperimentManifest, out: &Path, prov: &Provenance) -> Result<()> {
    let a: FitArtifact = load_json(input(man, 0, "two fit artifacts")?)?;
    let b: FitArtifact = load_json(input(man, 1, "two fit artifacts")?)?;
    let report = gof::compare(&a.fit, &b.fit)?;
    #[derive(Serialize)]
    struct CompareArtifact<'a> {
        provenance: &'a Provenance,
        report: &'a gof::ComparisonReport,
    }
    write_json(
        &out.join("compare.json"),
        &CompareArtifact {
            provenance: prov,
            report: &report,
        },
    )?;
    let describe = |spec: &ModelSpec, aicc: f64, g: &gof::GofBundle| {
        format!(
            "{} {:?}  AICc {:.4}  r2 {:.4}  rmsd {:.5}  K-L {:.5}",
            spec.klass,
            Vec::<u8>::from(spec.rule_set),
            aicc,
            g.r2,
            g.rmsd,
            g.kl
        )
    };
    let verdict = match report.winner {
        Some(0) => "model A is AICc-preferred",
        Some(1) => "model B is AICc-preferred",
        _ => "exact AICc tie",
    };
    let text = format!(
        "A: {}\nB: {}\ndelta AICc (A - B): {:.4} ({:.4}%)\n{}\n{}",
        describe(&report.spec_a, report.aicc_a, &report.gof_a),
        describe(&report.spec_b, report.aicc_b, &report.gof_b),
        report.delta_aicc,
        report.pct_aicc_diff,
        verdict,
        prov.csv_footer()
    );
    io::write_atomic(&out.join("compare.txt"), &text)?;
    println!("compare: {verdict}");
    Ok(())
}

fn load_trials(path: &Path) -> Result<TrialSequence> {
    io::trial_sequence_from_csv(&read_input(path)?)
}

fn diagnose(man: &ExperimentManifest, out: &Path, prov: &Provenance) -> Result<()> {
    let seq = load_trials(input(man, 0, "a trial-sequence CSV")?)?;
    let max_lag = man.options.max_lag.unwrap_or(10);
    let summary = diag::screen(&seq, max_lag)?;
    let mut csv = String::from("lag,pacf,cl95\n");
    for (lag0, c) in summary.coefficients.iter().enumerate() {
        csv.push_str(&format!("{},{:.8},{:.8}\n", lag0 + 1, c, summary.cl95));
    }
    csv.push_str(&prov.csv_footer());
    io::write_atomic(&out.join("pacf.csv"), &csv)?;
    #[derive(Serialize)]
    struct ScreenArtifact<'a> {
        provenance: &'a Provenance,
        summary: &'a diag::ScreenSummary,
    }
    write_json(
        &out.join("screen.json"),
        &ScreenArtifact {
            provenance: prov,
            summary: &summary,
        },
    )?;
    println!("diagnose: verdict {:?} (cl95 = {:.5})", summary.verdict, summary.cl95);
    Ok(())
}

fn bin_cmd(man: &ExperimentManifest, out: &Path, prov: &Provenance) -> Result<()> {
    let seq = load_trials(input(man, 0, "a trial-sequence CSV")?)?;
    let n_bins = man.options.bins.unwrap_or(10);
    let strategy = if man.options.equal_count {
        BinStrategy::EqualCount
    } else {
        BinStrategy::EqualWidth
    };
    let (matrix, warnings) = diag::bin_responses(&seq, n_bins, strategy)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let csv = io::count_matrix_to_csv(&matrix) + &prov.csv_footer();
    io::write_atomic(&out.join("binned.csv"), &csv)?;
    println!(
        "bin: {} x {} matrix ({} warnings)",
        matrix.n_stimuli(),
        matrix.n_responses(),
        warnings.len()
    );
    Ok(())
}

/// Integer category responses are tabulated directly; anything else goes
/// through the binning step.
fn counts_from_trials(
    seq: &TrialSequence,
    bins: Option<usize>,
) -> Result<(CountMatrix, Vec<String>)> {
    let responses = seq.responses();
    let integral = responses
        .iter()
        .all(|&r| r.fract() == 0.0 && (1.0..=20.0).contains(&r));
    if integral && bins.is_none() {
        let n = seq.n_stimuli();
        let m = responses.iter().cloned().fold(0.0f64, f64::max) as usize;
        if m < 2 {
            return Err(VdrError::AllEqualRatings);
        }
        let mut counts = vec![vec![0u64; m]; n];
        for &(stim, r) in &seq.trials {
            if stim == 0 || stim > n {
                return Err(VdrError::Parse(format!("stimulus index {stim} out of 1..{n}")));
            }
            counts[stim - 1][r as usize - 1] += 1;
        }
        let tps = (seq.trials.len() as f64 / n as f64).round() as u64;
        return Ok((CountMatrix { counts, tps }, Vec::new()));
    }
    diag::bin_responses(seq, bins.unwrap_or(10), BinStrategy::EqualWidth)
}

fn pipeline(
    man: &ExperimentManifest,
    out: &Path,
    prov: &Provenance,
    force: bool,
    verbose: bool,
) -> Result<()> {
    let path = input(man, 0, "a trial-sequence or count-matrix CSV")?;
    let text = read_input(path)?;
    let (data, screened) = if text.trim_start().starts_with('#') {
        // pre-tabulated counts carry no trial order, so no screening
        (io::count_matrix_from_csv(&text)?, None)
    } else {
        let seq = io::trial_sequence_from_csv(&text)?;
        let summary = diag::screen(&seq, man.options.max_lag.unwrap_or(10))?;
        if summary.verdict == ScreenVerdict::Fail && !force {
            return Err(VdrError::ScreeningFailed(
                "partial autocorrelations exceed the 95% confidence limit beyond lags 1-2; \
                 responses look sequentially dependent (use --force to fit anyway)"
                    .into(),
            ));
        }
        if summary.verdict == ScreenVerdict::Warn {
            eprintln!("warning: lag-1/2 partial autocorrelations slightly exceed the 95% limit");
        }
        let (data, warnings) = counts_from_trials(&seq, man.options.bins)?;
        for w in &warnings {
            eprintln!("warning: {w}");
        }
        (data, Some(summary))
    };
    let cfg = PipelineConfig {
        search: man.search.clone(),
        quad: man.quad,
        seed: man.seed,
    };
    let report = diag::select_model(&data, screened, &cfg)?;
    if verbose {
        for line in &report.narrative {
            eprintln!("{line}");
        }
    }
    #[derive(Serialize)]
    struct SelectionArtifact<'a> {
        provenance: &'a Provenance,
        report: &'a diag::SelectionReport,
    }
    write_json(
        &out.join("selection.json"),
        &SelectionArtifact {
            provenance: prov,
            report: &report,
        },
    )?;
    let mut md = String::from("# Model selection\n\n");
    for line in &report.narrative {
        md.push_str(&format!("- {line}\n"));
    }
    md.push_str(&format!(
        "\nChosen model: **{} {:?}**\n\n<!-- {} -->\n",
        report.chosen.klass,
        Vec::<u8>::from(report.chosen.rule_set),
        prov.csv_footer().trim()
    ));
    io::write_atomic(&out.join("selection.md"), &md)?;
    println!(
        "pipeline: chose {} {:?}",
        report.chosen.klass,
        Vec::<u8>::from(report.chosen.rule_set)
    );
    Ok(())
}

fn css_scan(man: &ExperimentManifest, out: &Path, prov: &Provenance, verbose: bool) -> Result<()> {
    let a: ModelInstance = load_json(input(man, 0, "two generating-model JSON files")?)?;
    let b: ModelInstance = load_json(input(man, 1, "two generating-model JSON files")?)?;
    let grid: Vec<u64> = if man.options.grid.is_empty() {
        vec![100, 200, 400, 800]
    } else {
        man.options.grid.clone()
    };
    let reps = man.options.reps.unwrap_or(2);
    let threshold = man.options.threshold.unwrap_or(1.0);
    let cfg = PipelineConfig {
        search: man.search.clone(),
        quad: man.quad,
        seed: man.seed,
    };
    let report = diag::css_scan(&a.spec, &a.theta, &b.spec, &b.theta, &grid, reps, threshold, &cfg)?;
    if verbose {
        for row in &report.rows {
            eprintln!(
                "tps {}: A correct {}/{}, B correct {}/{}",
                row.tps, row.a_correct, row.reps, row.b_correct, row.reps
            );
        }
    }
    let mut csv = String::from("tps,a_correct,b_correct,reps\n");
    for row in &report.rows {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            row.tps, row.a_correct, row.b_correct, row.reps
        ));
    }
    csv.push_str(&prov.csv_footer());
    io::write_atomic(&out.join("css.csv"), &csv)?;
    #[derive(Serialize)]
    struct CssArtifact<'a> {
        provenance: &'a Provenance,
        report: &'a diag::CssReport,
    }
    write_json(
        &out.join("css.json"),
        &CssArtifact {
            provenance: prov,
            report: &report,
        },
    )?;
    match report.css {
        Some(tps) => println!("css-scan: critical sample size {tps} trials per stimulus"),
        None => println!("css-scan: no stable sample size within the scanned grid"),
    }
    Ok(())
}

fn jump_demo(man: &ExperimentManifest, out: &Path, prov: &Provenance) -> Result<()> {
    let spec = match man.spec {
        Some(s) => s,
        None => ModelSpec::general_vdr(4, 7)?,
    };
    let base = sim::default_generating_params(spec.n_stimuli, spec.n_responses);
    let rule = man.options.rule.unwrap_or(3);
    if !(1..=3).contains(&rule) {
        return Err(VdrError::Parse(format!("rule {rule} out of range 1..=3")));
    }
    let row = man.options.row.unwrap_or(1).min(spec.n_stimuli - 1);
    let col = man.options.col.unwrap_or(2).min(spec.n_responses - 2);
    let points = man.options.points.unwrap_or(200).max(3);
    // sweep the shared criterion SD; step-size decisions flip along the way
    let (lo, hi) = (0.25, 1.75);
    let samples: Vec<SweepSample> = (0..points)
        .map(|i| {
            let factor = lo + (hi - lo) * i as f64 / (points - 1) as f64;
            let mut theta = base.clone();
            for sd in theta.crit_sds.iter_mut() {
                *sd = 0.5 * factor;
            }
            let cell = likelihood::cell_double_integral(rule, &theta, &spec, &man.quad, row, col);
            SweepSample {
                position: factor,
                value: cell.value,
                refinements: cell.total_refinements(),
            }
        })
        .collect();
    let events = quad::jump_report(&samples);
    let mut csv = String::from("position,value,refinements\n");
    for s in &samples {
        csv.push_str(&format!("{:.6},{:.12},{}\n", s.position, s.value, s.refinements));
    }
    csv.push_str(&prov.csv_footer());
    io::write_atomic(&out.join("sweep.csv"), &csv)?;
    let mut csv = String::from("position,refinements_before,refinements_after,value_jump\n");
    for e in &events {
        csv.push_str(&format!(
            "{:.6},{},{},{:.3e}\n",
            e.position, e.refinements_before, e.refinements_after, e.value_jump
        ));
    }
    csv.push_str(&prov.csv_footer());
    io::write_atomic(&out.join("jumps.csv"), &csv)?;
    #[derive(Serialize)]
    struct JumpArtifact<'a> {
        provenance: &'a Provenance,
        rule: u8,
        row: usize,
        col: usize,
        events: &'a [quad::JumpEvent],
        max_abs_jump: f64,
    }
    let max_abs_jump = events.iter().map(|e| e.value_jump.abs()).fold(0.0, f64::max);
    write_json(
        &out.join("jumps.json"),
        &JumpArtifact {
            provenance: prov,
            rule,
            row,
            col,
            events: &events,
            max_abs_jump,
        },
    )?;
    println!(
        "jump-demo: {} refinement changes over {points} points, largest jump {max_abs_jump:.3e}",
        events.len()
    );
    Ok(())
}
