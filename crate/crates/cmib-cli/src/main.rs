//! Command-line runner: verify the information-theoretic identities and
//! gradients, then drive the staged skill pipeline (generate, build cards,
//! train latents, evaluate, report) from a TOML config.
//!
//! Logs go to stderr as `key=value` pairs; data lands only in files under
//! the output directory. Exit codes: 0 success, 1 invalid configuration or
//! usage, 2 a theory check failed, 3 a runtime failure (missing artifacts,
//! I/O, numerical breakdown).

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use cmib_core::config::ExperimentConfig;
use cmib_core::pipeline::Pipeline;
use cmib_core::verify;

const EXIT_OK: u8 = 0;
const EXIT_VALIDATION: u8 = 1;
const EXIT_THEORY: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "cmib",
    version,
    about = "Build and evaluate multimodal agent skills (text card + conditional latent) \
             on a synthetic environment, and verify the underlying identities numerically."
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Experiment configuration (TOML). Built-in defaults apply when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Replace the config's seed list with this single seed. This changes
    /// the experiment identity, so pair it consistently across stages.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides both the config and CMIB_OUT.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Run randomized batches checking the objective factorization, the
    /// conditional bound (including its zero-weight identity), and the
    /// analytic gradients; write one JSON report per batch.
    VerifyTheory {
        #[command(flatten)]
        run: RunArgs,
        /// Random trials per lemma batch.
        #[arg(long, default_value_t = verify::DEFAULT_TRIALS)]
        trials: usize,
        /// Random points for the gradient audit.
        #[arg(long, default_value_t = verify::DEFAULT_GRADIENT_POINTS)]
        points: usize,
    },
    /// Generate tasks and rollout bundles for every seed.
    Gen(RunArgs),
    /// Fit the frozen readout if needed and select one card per bundle.
    BuildSkill(RunArgs),
    /// Train both latent arms per seed and realize the skill libraries.
    Train(RunArgs),
    /// Evaluate every configured arm on every seed.
    Eval(RunArgs),
    /// Run gen, build-skill, train, eval, and report end to end.
    Pipeline(RunArgs),
    /// Rebuild and evaluate the experiment across text-routing levels.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated routing levels to sweep.
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.5, 1.0])]
        alphas: Vec<f64>,
    },
    /// Merge per-seed rows into the report CSV and JSON summary.
    Report {
        #[command(flatten)]
        run: RunArgs,
        /// Keep only these arms, e.g. "cmib,text_only".
        #[arg(long, value_delimiter = ',')]
        arms: Option<Vec<String>>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_VALIDATION,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    ExitCode::from(dispatch(cli))
}

fn dispatch(cli: Cli) -> u8 {
    match cli.cmd {
        Cmd::VerifyTheory { run, trials, points } => verify_theory(&run, trials, points),
        Cmd::Gen(run) => stage_command("gen", &run, |p| {
            p.write_config()?;
            p.stage_gen()?;
            Ok(format!("seeds={}", p.config().eval.seeds.len()))
        }),
        Cmd::BuildSkill(run) => stage_command("build-skill", &run, |p| {
            let frozen = p.load_or_fit_frozen()?;
            p.stage_cards(&frozen)?;
            Ok(format!("seeds={}", p.config().eval.seeds.len()))
        }),
        Cmd::Train(run) => stage_command("train", &run, |p| {
            let frozen = p.load_or_fit_frozen()?;
            p.stage_train(&frozen)?;
            Ok(format!("steps={}", p.config().train.steps))
        }),
        Cmd::Eval(run) => stage_command("eval", &run, |p| {
            let frozen = p.load_or_fit_frozen()?;
            p.stage_eval(&frozen)?;
            Ok(format!("arms={}", p.config().eval.arms.len()))
        }),
        Cmd::Pipeline(run) => stage_command("pipeline", &run, |p| {
            let report = p.run_all()?;
            Ok(format!(
                "rows={} report={}",
                report.rows.len(),
                p.report_csv_path().display()
            ))
        }),
        Cmd::Ablate { run, alphas } => stage_command("ablate", &run, move |p| {
            let frozen = p.load_or_fit_frozen()?;
            let rows = p.stage_ablate(&frozen, &alphas)?;
            Ok(format!(
                "levels={} rows={} file={}",
                alphas.len(),
                rows.len(),
                p.ablation_csv_path().display()
            ))
        }),
        Cmd::Report { run, arms } => stage_command("report", &run, move |p| {
            let report = p.merge_report(arms.as_deref())?;
            Ok(format!(
                "rows={} file={}",
                report.rows.len(),
                p.report_csv_path().display()
            ))
        }),
    }
}

/// One-line rendering of an error so `message="..."` stays a single
/// key=value pair even for multi-line parser output.
fn flat(e: &cmib_core::CmibError) -> String {
    e.to_string().split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Loads and validates the configuration, applies the seed and output-dir
/// overrides, and opens the pipeline. All failures here are validation
/// failures.
fn prepare(run: &RunArgs) -> Result<Pipeline, u8> {
    let mut cfg = match &run.config {
        Some(path) => ExperimentConfig::load(path),
        None => Ok(ExperimentConfig::default()),
    }
    .map_err(|e| {
        eprintln!("status=error kind=validation message=\"{}\"", flat(&e));
        EXIT_VALIDATION
    })?;
    if let Some(seed) = run.seed {
        cfg.eval.seeds = vec![seed];
    }
    let out = run.out.clone().unwrap_or_else(|| cfg.output_dir());
    Pipeline::new(cfg, out).map_err(|e| {
        eprintln!("status=error kind=validation message=\"{}\"", flat(&e));
        EXIT_VALIDATION
    })
}

fn stage_command(
    name: &str,
    run: &RunArgs,
    f: impl FnOnce(&Pipeline) -> cmib_core::Result<String>,
) -> u8 {
    let p = match prepare(run) {
        Ok(p) => p,
        Err(code) => return code,
    };
    eprintln!(
        "cmd={name} status=start out={} config_hash={}",
        p.out().display(),
        p.config().short_hash()
    );
    let t0 = Instant::now();
    match f(&p) {
        Ok(summary) => {
            eprintln!(
                "cmd={name} status=done elapsed_ms={} {summary}",
                t0.elapsed().as_millis()
            );
            EXIT_OK
        }
        Err(e) => {
            eprintln!("cmd={name} status=error kind=runtime message=\"{}\"", flat(&e));
            EXIT_RUNTIME
        }
    }
}

fn verify_theory(run: &RunArgs, trials: usize, points: usize) -> u8 {
    let p = match prepare(run) {
        Ok(p) => p,
        Err(code) => return code,
    };
    let out = p.out().to_path_buf();
    eprintln!("cmd=verify-theory status=start out={} trials={trials} points={points}", out.display());
    let t0 = Instant::now();

    let mut all_pass = true;
    let mut batches: Vec<(String, verify::LemmaBatch)> = Vec::new();
    let runs: Vec<(String, cmib_core::Result<verify::LemmaBatch>)> = verify::LEMMA1_BETAS
        .iter()
        .map(|&b| (verify::lemma1_file_name(b), verify::lemma1_batch(trials, b)))
        .chain(
            verify::LEMMA2_BETAS
                .iter()
                .map(|&b| (verify::lemma2_file_name(b), verify::lemma2_batch(trials, b))),
        )
        .chain(std::iter::once((
            verify::lemma2_file_name(0.0),
            verify::lemma2_zero_beta_batch(trials),
        )))
        .collect();
    for (file, outcome) in runs {
        match outcome {
            Ok(batch) => batches.push((file, batch)),
            Err(e) => {
                eprintln!("cmd=verify-theory status=error kind=runtime message=\"{}\"", flat(&e));
                return EXIT_RUNTIME;
            }
        }
    }
    for (file, batch) in &batches {
        if let Err(e) = write_json(&out.join(file), batch) {
            eprintln!("cmd=verify-theory status=error kind=runtime message=\"{}\"", flat(&e));
            return EXIT_RUNTIME;
        }
        eprintln!(
            "cmd=verify-theory check={} beta={} trials={} failures={} file={}",
            batch.check,
            batch.beta,
            batch.trials,
            batch.failures.len(),
            file
        );
        if !batch.all_pass() {
            all_pass = false;
            eprintln!(
                "cmd=verify-theory check={} beta={} failing_trial_seeds={:?}",
                batch.check, batch.beta, batch.failures
            );
        }
    }

    let gradients = match verify::gradient_batch(points) {
        Ok(g) => g,
        Err(e) => {
            eprintln!("cmd=verify-theory status=error kind=runtime message=\"{}\"", flat(&e));
            return EXIT_RUNTIME;
        }
    };
    if let Err(e) = write_json(&out.join("gradients.json"), &gradients) {
        eprintln!("cmd=verify-theory status=error kind=runtime message=\"{}\"", flat(&e));
        return EXIT_RUNTIME;
    }
    eprintln!(
        "cmd=verify-theory check=gradients points={} failures={} worst_rel_err={:e} file=gradients.json",
        gradients.points,
        gradients.failures.len(),
        gradients.worst_rel_err()
    );
    if !gradients.all_pass() {
        all_pass = false;
        eprintln!(
            "cmd=verify-theory check=gradients failing_trial_seeds={:?}",
            gradients.failures
        );
    }

    eprintln!(
        "cmd=verify-theory status={} elapsed_ms={}",
        if all_pass { "pass" } else { "fail" },
        t0.elapsed().as_millis()
    );
    if all_pass {
        EXIT_OK
    } else {
        EXIT_THEORY
    }
}

fn write_json<T: serde::Serialize>(path: &std::path::Path, value: &T) -> cmib_core::Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| cmib_core::CmibError::Config(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}
