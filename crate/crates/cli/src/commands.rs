use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, ValueEnum};
use serde::Serialize;

use zirf::dataset::{load_csv, CountDataset, LoadOptions, Schema};
use zirf::forest::{variable_importance, ImportanceProfile};
use zirf::report::{self, Document, FitReport, SCHEMA_VERSION};
use zirf::simgen::{generate_paper_sim, generate_zi_counts, GroupCovariates, SimConfig};
use zirf::varselect::{
    elimination_step, exhaustive_search, forward_selection, run_from_profile, OobEvaluator, SelectionConfig,
    SelectionTrace, DEFAULT_EXHAUSTIVE_CAP,
};
use zirf::zicount::{fit_mle_with, gof_chisq, Convergence, Family, FitOptions, ThetaMode, ZIParams, ZISpec};

use crate::manifest::{digest_file, InputDigest, RunManifest};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SimKind {
    /// 25 continuous and 25 binary covariates with a linear response.
    Benchmark,
    /// Zero-inflated counts nested in groups.
    Counts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyArg {
    Zip,
    Zinb,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Zip => Family::Zip,
            FamilyArg::Zinb => Family::Zinb,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "benchmark")]
    pub kind: SimKind,
    /// Rows of the benchmark dataset.
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Standard deviation of Gaussian noise added to the benchmark response.
    #[arg(long, default_value_t = 0.0)]
    pub noise_sd: f64,
    /// Correlation within each of the four benchmark pairs.
    #[arg(long, default_value_t = 0.9)]
    pub correlation: f64,
    #[arg(long, value_enum, default_value = "zinb")]
    pub family: FamilyArg,
    #[arg(long, default_value_t = 500, value_parser = clap::value_parser!(u64).range(1..))]
    pub groups: u64,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    pub per_group: u64,
    /// Count coefficients: intercept, log_gameto.
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        default_value = "-1.3021,0.8402"
    )]
    pub beta: Vec<f64>,
    /// Zero-inflation coefficients: intercept, log_gameto.
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        default_value = "0.0029,-0.2618"
    )]
    pub gamma: Vec<f64>,
    #[arg(long, default_value_t = 0.566)]
    pub theta: f64,
    #[arg(long, default_value_t = 3.0, allow_hyphen_values = true)]
    pub covariate_mean: f64,
    #[arg(long, default_value_t = 1.0)]
    pub covariate_sd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Elimination, interpretation and prediction steps.
    Standard,
    /// Elimination followed by greedy forward selection.
    Forward,
    /// Forward selection followed by a search over all its subsets.
    Exhaustive,
}

#[derive(Debug, Args, Serialize)]
pub struct SelectArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Column type declarations; defaults to `<input>.schema` next to the CSV.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub response: Option<String>,
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
    pub nfor: u64,
    /// Trees per forest in the importance stage.
    #[arg(long, default_value_t = 500, value_parser = clap::value_parser!(u64).range(1..))]
    pub ntree: u64,
    /// Variables tried per split in the importance stage.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub mtry: Option<u64>,
    /// Trees per forest when scoring candidate models.
    #[arg(long, default_value_t = 500, value_parser = clap::value_parser!(u64).range(1..))]
    pub model_ntree: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "standard")]
    pub variant: Variant,
    #[arg(long, default_value_t = DEFAULT_EXHAUSTIVE_CAP)]
    pub exhaustive_cap: usize,
    #[arg(long)]
    pub drop_incomplete: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    /// Long-format CSV: one row per observation.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "group")]
    pub group_col: String,
    #[arg(long, default_value = "count")]
    pub count_col: String,
    #[arg(long, value_enum, default_value = "zinb")]
    pub family: FamilyArg,
    /// Count-component covariates (comma separated).
    #[arg(long = "count", value_delimiter = ',')]
    pub count_covariates: Vec<String>,
    /// Zero-component covariates (comma separated); empty for an intercept only.
    #[arg(long = "zero", value_delimiter = ',')]
    pub zero_covariates: Vec<String>,
    /// Hold θ at this value instead of estimating it.
    #[arg(long)]
    pub fixed_theta: Option<f64>,
    /// Covariate on the x axis of the mean plot (default: first count covariate).
    #[arg(long)]
    pub plot_covariate: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// Directory written by `select` or `fit-zi`.
    #[arg(long)]
    pub run: PathBuf,
    /// Where to write the re-rendered files (default: the run directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn write(dir: &Path, name: &str, contents: &str, outputs: &mut Vec<String>) -> Result<(), CliError> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
    outputs.push(name.to_string());
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

struct Run<'a> {
    command: &'a str,
    argv: &'a [String],
    started: Instant,
    outputs: Vec<String>,
    inputs: Vec<InputDigest>,
}

impl<'a> Run<'a> {
    fn new(command: &'a str, argv: &'a [String]) -> Self {
        Self {
            command,
            argv,
            started: Instant::now(),
            outputs: Vec::new(),
            inputs: Vec::new(),
        }
    }

    fn finish<T: Serialize>(mut self, dir: &Path, flags: &T, seed: Option<u64>) -> Result<(), CliError> {
        self.outputs.sort();
        let manifest = RunManifest {
            schema_version: SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: self.command.to_string(),
            argv: self.argv.to_vec(),
            flags: serde_json::to_value(flags).map_err(|e| CliError::Data(e.into()))?,
            seed,
            threads: rayon::current_num_threads(),
            inputs: self.inputs,
            outputs: self.outputs,
            elapsed_seconds: self.started.elapsed().as_secs_f64(),
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Data(e.into()))?;
        let path = dir.join("manifest.json");
        std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))
    }
}

pub fn simulate(args: &SimulateArgs, argv: &[String]) -> Result<(), CliError> {
    ensure_dir(&args.out)?;
    let mut run = Run::new("simulate", argv);
    match args.kind {
        SimKind::Benchmark => {
            let cfg = SimConfig {
                n: args.n as usize,
                pair_correlation: args.correlation,
                noise_sd: args.noise_sd,
                seed: args.seed,
                ..SimConfig::default()
            };
            let data = generate_paper_sim(&cfg)?;
            data.write_with_schema(args.out.join("data.csv"), args.out.join("data.schema"))?;
            run.outputs.extend(["data.csv".to_string(), "data.schema".to_string()]);
            println!(
                "wrote {} rows x {} covariates to {}",
                data.n_rows(),
                data.n_cols(),
                args.out.display()
            );
        }
        SimKind::Counts => {
            let spec = ZISpec::new(args.family.into(), &["log_gameto"], &["log_gameto"]);
            if args.beta.len() != 2 || args.gamma.len() != 2 {
                return Err(CliError::Usage(
                    "--beta and --gamma take two values: intercept,slope".into(),
                ));
            }
            if args.theta.is_nan() || args.theta <= 0.0 {
                return Err(CliError::Usage("--theta must be positive".into()));
            }
            let params = ZIParams {
                beta: args.beta.clone(),
                gamma: args.gamma.clone(),
                log_theta: args.theta.ln(),
            };
            let cov = GroupCovariates::normal(
                &["log_gameto"],
                args.groups as usize,
                args.covariate_mean,
                args.covariate_sd,
                args.seed,
            );
            let data = generate_zi_counts(&spec, &params, &cov, args.per_group as usize, args.seed)?;
            data.write_csv(args.out.join("counts.csv"), "group", "count")?;
            run.outputs.push("counts.csv".to_string());
            println!(
                "wrote {} counts in {} groups to {}",
                data.n_obs(),
                data.n_groups(),
                args.out.display()
            );
        }
    }
    run.finish(&args.out, args, Some(args.seed))
}

fn default_schema_path(input: &Path) -> PathBuf {
    input.with_extension("schema")
}

fn selection_config(args: &SelectArgs) -> SelectionConfig {
    SelectionConfig {
        vi_ntree: args.ntree as usize,
        vi_mtry: args.mtry.map(|m| m as usize),
        model_ntree: args.model_ntree as usize,
        nfor: args.nfor as usize,
        seed: args.seed,
        exhaustive_cap: args.exhaustive_cap,
        ..SelectionConfig::default()
    }
}

#[derive(Debug, Serialize)]
struct VariantResult {
    variant: Variant,
    survivors: Vec<String>,
    forward_path: Vec<(String, f64)>,
    selected: Vec<String>,
    oob_error: f64,
    models_evaluated: usize,
}

fn write_selection_outputs(dir: &Path, trace: &SelectionTrace, outputs: &mut Vec<String>) -> Result<(), CliError> {
    let profile = ImportanceProfile {
        vi_mean: trace.vi_mean.clone(),
        vi_sd: trace.vi_sd.clone(),
        nfor: trace.config.nfor,
        oob_errors: Vec::new(),
    };
    write(
        dir,
        "importance.csv",
        &report::importance_csv(&trace.variables, &profile)?,
        outputs,
    )?;
    write(dir, "importance.svg", &report::importance_figure(&profile), outputs)?;
    write(dir, "selection.svg", &report::selection_figure(trace), outputs)?;
    Ok(())
}

pub fn select(args: &SelectArgs, argv: &[String]) -> Result<(), CliError> {
    let schema_path = args.schema.clone().unwrap_or_else(|| default_schema_path(&args.input));
    let schema = Schema::from_file(&schema_path)?;
    let options = LoadOptions {
        response: args.response.clone(),
        drop_incomplete_rows: args.drop_incomplete,
    };
    let data = load_csv(&args.input, &schema, &options)?;
    let config = selection_config(args);
    config.validate()?;
    ensure_dir(&args.out)?;
    let mut run = Run::new("select", argv);
    run.inputs.push(digest_file(&args.input)?);
    run.inputs.push(digest_file(&schema_path)?);

    let profile = variable_importance(&data.all_features(), &config.vi_forest(), config.nfor)?;
    let names = data.column_names();
    match args.variant {
        Variant::Standard => {
            let trace = run_from_profile(&data, &profile, &config)?;
            let doc = Document::new("selection-trace", &trace).to_json()?;
            write(&args.out, "trace.json", &doc, &mut run.outputs)?;
            write_selection_outputs(&args.out, &trace, &mut run.outputs)?;
            println!("response: {}", trace.response);
            println!("threshold: {:.6}", trace.threshold_value);
            println!("survivors ({}): {}", trace.p_elim(), trace.survivors.join(", "));
            println!(
                "interpretation ({}, OOB {:.4}): {}",
                trace.p_interp(),
                trace.interp_oob,
                trace.interp_set.join(", ")
            );
            match trace.ave_jump {
                Some(j) => println!("ave_jump: {j:.6}"),
                None => println!("ave_jump: undefined (interpretation set is the survivor set)"),
            }
            println!(
                "prediction ({}, OOB {:.4}): {}",
                trace.pred_set.len(),
                trace.pred_oob,
                trace.pred_set.join(", ")
            );
        }
        Variant::Forward | Variant::Exhaustive => {
            let elim = elimination_step(&profile)?;
            let mut evaluator = OobEvaluator::new(&data, config);
            let fwd = forward_selection(&elim.survivors, |v| evaluator.error(v))?;
            let (selected, oob_error) = if args.variant == Variant::Exhaustive {
                let ex = exhaustive_search(&fwd.selected, config.exhaustive_cap, |v| evaluator.error(v))?;
                (ex.selected, ex.oob_error)
            } else {
                (fwd.selected.clone(), fwd.oob_error)
            };
            let named = |ix: &[usize]| ix.iter().map(|&i| names[i].clone()).collect::<Vec<_>>();
            let result = VariantResult {
                variant: args.variant,
                survivors: named(&elim.survivors),
                forward_path: fwd.path.iter().map(|&(v, e)| (names[v].clone(), e)).collect(),
                selected: named(&selected),
                oob_error,
                models_evaluated: evaluator.n_evaluated(),
            };
            let doc = Document::new("selection-variant", &result).to_json()?;
            write(&args.out, "variant.json", &doc, &mut run.outputs)?;
            write(
                &args.out,
                "importance.csv",
                &report::importance_csv(&names, &profile)?,
                &mut run.outputs,
            )?;
            write(
                &args.out,
                "importance.svg",
                &report::importance_figure(&profile),
                &mut run.outputs,
            )?;
            println!(
                "survivors ({}): {}",
                result.survivors.len(),
                result.survivors.join(", ")
            );
            println!(
                "{:?} selection ({}, OOB {:.4}): {}",
                args.variant,
                result.selected.len(),
                oob_error,
                result.selected.join(", ")
            );
        }
    }
    run.finish(&args.out, args, Some(args.seed))
}

fn plot_covariate(args_plot: Option<&String>, spec: &ZISpec) -> Option<String> {
    args_plot
        .cloned()
        .or_else(|| spec.count_covariates.first().cloned())
        .or_else(|| spec.zero_covariates.first().cloned())
}

fn write_fit_outputs(
    dir: &Path,
    fit_report: &FitReport,
    data: &CountDataset,
    plot: Option<&str>,
    outputs: &mut Vec<String>,
) -> Result<String, CliError> {
    let text = report::fit_text(&fit_report.fit, fit_report.gof.as_ref());
    write(dir, "report.txt", &text, outputs)?;
    write(
        dir,
        "coefficients.csv",
        &report::coefficients_csv(&fit_report.fit)?,
        outputs,
    )?;
    write(
        dir,
        "frequencies.svg",
        &report::frequency_figure(&fit_report.fit, data)?,
        outputs,
    )?;
    if let Some(cov) = plot {
        write(
            dir,
            "means.svg",
            &report::mean_figure(&fit_report.fit, data, cov)?,
            outputs,
        )?;
    }
    Ok(text)
}

fn non_empty(names: &[String]) -> Vec<String> {
    names
        .iter()
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

pub fn fit_zi(args: &FitArgs, argv: &[String]) -> Result<(), CliError> {
    let data = CountDataset::from_csv(&args.input, &args.group_col, &args.count_col)?;
    let spec = ZISpec {
        family: args.family.into(),
        count_covariates: non_empty(&args.count_covariates),
        zero_covariates: non_empty(&args.zero_covariates),
    };
    let theta = match args.fixed_theta {
        Some(t) if !(t > 0.0 && t.is_finite()) => return Err(CliError::Usage("--fixed-theta must be positive".into())),
        Some(t) => ThetaMode::Fixed(t),
        None => ThetaMode::Estimate,
    };
    ensure_dir(&args.out)?;
    let mut run = Run::new("fit-zi", argv);
    run.inputs.push(digest_file(&args.input)?);

    let fit = fit_mle_with(
        &spec,
        &data,
        &FitOptions {
            theta,
            ..FitOptions::default()
        },
    )?;
    let gof = match gof_chisq(&fit, &data) {
        Ok(g) => Some(g),
        Err(e) => {
            log::warn!("goodness-of-fit test unavailable: {e}");
            None
        }
    };
    let fit_report = FitReport {
        aic: fit.aic(),
        theta: fit.theta(),
        fit,
        gof,
    };
    let doc = Document::new("zi-fit", &fit_report).to_json()?;
    write(&args.out, "fit.json", &doc, &mut run.outputs)?;
    let plot = plot_covariate(args.plot_covariate.as_ref(), &spec);
    let text = write_fit_outputs(&args.out, &fit_report, &data, plot.as_deref(), &mut run.outputs)?;
    print!("{text}");
    let convergence = fit_report.fit.convergence;
    run.finish(&args.out, args, None)?;
    match convergence {
        Convergence::Converged => {}
        Convergence::MaxIterations => {
            return Err(CliError::Convergence(format!(
                "optimiser stopped after {} iterations without converging; report is flagged",
                fit_report.fit.iterations
            )))
        }
        Convergence::SingularHessian => {
            return Err(CliError::Convergence(
                "Hessian at the optimum is not positive definite; standard errors are unavailable".into(),
            ))
        }
    }
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(e.into()))
}

fn check_digest(recorded: &InputDigest) -> Result<PathBuf, CliError> {
    let path = PathBuf::from(&recorded.path);
    let now = digest_file(&path)?;
    if now.sha256 != recorded.sha256 {
        log::warn!("{} changed since the run (sha256 differs)", recorded.path);
    }
    Ok(path)
}

pub fn report(args: &ReportArgs) -> Result<(), CliError> {
    let manifest = RunManifest::read(&args.run)?;
    let out = args.out.clone().unwrap_or_else(|| args.run.clone());
    ensure_dir(&out)?;
    let mut outputs = Vec::new();
    match manifest.command.as_str() {
        "select" => {
            let trace_path = args.run.join("trace.json");
            if !trace_path.exists() {
                return Err(CliError::Usage(format!(
                    "{} has no trace.json (only the standard variant can be re-rendered)",
                    args.run.display()
                )));
            }
            let doc: Document<SelectionTrace> = read_json(&trace_path)?;
            write_selection_outputs(&out, &doc.body, &mut outputs)?;
        }
        "fit-zi" => {
            let doc: Document<FitReport> = read_json(&args.run.join("fit.json"))?;
            let input = manifest
                .inputs
                .first()
                .ok_or_else(|| CliError::Usage("manifest lists no input".into()))?;
            let path = check_digest(input)?;
            let flag = |k: &str, d: &str| manifest.flags.get(k).and_then(|v| v.as_str()).unwrap_or(d).to_string();
            let data = CountDataset::from_csv(&path, &flag("group_col", "group"), &flag("count_col", "count"))?;
            let plot_flag = manifest
                .flags
                .get("plot_covariate")
                .and_then(|v| v.as_str())
                .map(str::to_string);
            let plot = plot_covariate(plot_flag.as_ref(), &doc.body.fit.spec);
            write_fit_outputs(&out, &doc.body, &data, plot.as_deref(), &mut outputs)?;
        }
        other => return Err(CliError::Usage(format!("nothing to report for a {other:?} run"))),
    }
    println!("re-rendered {} into {}", outputs.join(", "), out.display());
    Ok(())
}
