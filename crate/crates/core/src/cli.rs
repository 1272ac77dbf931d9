//! Command-line orchestration. Every stage reads and writes plain files in the
//! report directory; every file written ends with a config-hash footer.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::cohort::{ingest_cohort, schema_for, write_cohort, ClinicalStatus, Cohort, Schema, ADAS_MAX};
use crate::config::RunConfig;
use crate::convert::run_convert;
use crate::error::{Error, Result};
use crate::eval::report::{
    centroids_csv, fold_mae_series_csv, group_stats_csv, mae_folds_csv, mae_horizons_csv, mae_summary_csv,
    membership_csv, metrics_csv, trajectories_csv, window_diff_csv,
};
use crate::eval::{group_stats, kmeans, run_cv, window_diff_stats};
use crate::forecast::{read_forecasts, write_forecasts, HorizonForecast};
use crate::preprocess::{build_supervised, preprocess, NormalizeScope};
use crate::synth::{extended_months, generate_cohort, write_truth, CohortSpec};

const COHORT_FILE: &str = "cohort.csv";
const SCHEMA_FILE: &str = "schema.toml";
const PREPROCESSED_FILE: &str = "preprocessed.csv";
const PREPROCESSED_SCHEMA_FILE: &str = "preprocessed_schema.toml";
const FORECASTS_FILE: &str = "forecasts.csv";
const PLOT_DIR: &str = "plot_data";
const HISTOGRAM_BIN: f64 = 5.0;

#[derive(Debug, Parser)]
#[command(name = "adprog", version, about = "Cognitive-score forecasting and conversion prediction pipeline")]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every stochastic step; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for all stage outputs; overrides the config.
    #[arg(long, global = true)]
    pub report_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// The `[synth]` section as configured.
    Config,
    /// Extended follow-up with hidden per-patient offsets.
    Offset,
    /// Extended follow-up without offsets, noise or masking.
    Noiseless,
}

#[derive(Debug, clap::Args, Default, Clone)]
pub struct InputArgs {
    /// Cohort file; defaults to the previous stage's output in the report directory.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Column-mapping schema for `--input`.
    #[arg(long)]
    pub schema: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort with hidden ground truth.
    Synth {
        #[arg(long)]
        patients: Option<usize>,
        #[arg(long, value_enum, default_value = "config")]
        preset: Preset,
        /// Patients truncated to three visits.
        #[arg(long)]
        under_visit: Option<usize>,
    },
    /// Read a delimited cohort file and rewrite it in canonical form.
    Ingest(InputArgs),
    /// Visit, month and missingness filters, forward fill and feature selection.
    Preprocess {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        min_visits: Option<usize>,
        /// Comma-separated months every patient must have.
        #[arg(long, value_delimiter = ',')]
        required_months: Option<Vec<u32>>,
        #[arg(long)]
        max_missing: Option<f64>,
        #[arg(long)]
        normalize_scope: Option<NormalizeScope>,
    },
    /// Per-group score statistics, trajectories and window differences.
    Stats(InputArgs),
    /// One-dimensional k-means over all observed scores.
    Cluster {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Patient-level cross-validation of the three forecasters.
    Cv {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        folds: Option<usize>,
    },
    /// Cox conversion probabilities and classification from saved forecasts.
    Convert {
        #[command(flatten)]
        input: InputArgs,
        /// Forecast table written by `cv`.
        #[arg(long)]
        forecasts: Option<PathBuf>,
        #[arg(long)]
        folds: Option<usize>,
    },
    /// Synthesis or ingestion, then every later stage.
    Pipeline {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        patients: Option<usize>,
    },
}

/// Exit status for an error: 2 for configuration problems, 1 otherwise.
pub fn exit_code(error: &Error) -> i32 {
    if error.is_config() {
        2
    } else {
        1
    }
}

/// Files written by one command, with a short human-readable summary.
#[derive(Debug, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub summary: String,
}

struct Ctx {
    config: RunConfig,
    hash: String,
    dir: PathBuf,
    out: Outcome,
}

impl Ctx {
    fn write(&mut self, name: &str, body: &str) -> Result<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut text = body.to_string();
        if !text.is_empty() && !text.ends_with('\n') {
            text.push('\n');
        }
        let _ = writeln!(text, "# config-hash: {}", self.hash);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        self.out.files.push(path);
        Ok(())
    }

    fn write_with(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        let body = String::from_utf8(buf).map_err(|e| Error::Numerical(format!("non-UTF-8 output: {e}")))?;
        self.write(name, &body)
    }

    fn say(&mut self, line: impl AsRef<str>) {
        let _ = writeln!(self.out.summary, "{}", line.as_ref());
    }

    fn write_cohort(&mut self, cohort: &Cohort, base: &Schema, data: &str, schema_name: &str) -> Result<()> {
        let schema = schema_for(cohort, base);
        self.write_with(data, |b| write_cohort(cohort, &schema, b))?;
        self.write(schema_name, &schema.to_toml())
    }

    /// Cohort for a stage: `--input` (or, for the first stage, `paths.input`),
    /// else `default` in the report directory.
    fn load(&self, args: &InputArgs, first_stage: bool, default: (&str, &str)) -> Result<Cohort> {
        let explicit = args.input.clone().or_else(|| {
            if first_stage {
                self.config.paths.input.clone()
            } else {
                None
            }
        });
        let (path, schema) = match explicit {
            Some(p) => {
                let schema = match args.schema.as_ref().or(self.config.paths.schema.as_ref()) {
                    Some(s) => load_schema(s)?,
                    None => Schema::default(),
                };
                (p, schema)
            }
            None => {
                let schema_path = args.schema.clone().unwrap_or_else(|| self.dir.join(default.1));
                let schema = if schema_path.is_file() {
                    load_schema(&schema_path)?
                } else {
                    Schema::default()
                };
                (self.dir.join(default.0), schema)
            }
        };
        if !path.is_file() {
            return Err(Error::Config(format!(
                "input {} does not exist; run the previous stage or pass --input",
                path.display()
            )));
        }
        let cohort = ingest_cohort(&path, &schema)?;
        cohort.validate()?;
        Ok(cohort)
    }

    fn load_preprocessed(&self, args: &InputArgs) -> Result<Cohort> {
        self.load(args, false, (PREPROCESSED_FILE, PREPROCESSED_SCHEMA_FILE))
    }
}

fn load_schema(path: &Path) -> Result<Schema> {
    if !path.is_file() {
        return Err(Error::Config(format!("schema {} does not exist", path.display())));
    }
    Schema::load(path)
}

/// Effective configuration: file, then command-line overrides.
fn effective_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = Some(s);
    }
    if let Some(d) = &cli.report_dir {
        config.paths.report_dir = Some(d.clone());
    }
    match &cli.command {
        Command::Synth {
            patients,
            preset,
            under_visit,
        } => {
            match preset {
                Preset::Config => {}
                Preset::Offset => {
                    config.synth.extra_months = extended_months();
                }
                Preset::Noiseless => {
                    let n = config.synth.n_patients;
                    config.synth = CohortSpec::noiseless(n, 0);
                }
            }
            if let Some(n) = patients {
                config.synth.n_patients = *n;
            }
            if let Some(u) = under_visit {
                config.synth.under_visit_patients = *u;
            }
        }
        Command::Preprocess {
            min_visits,
            required_months,
            max_missing,
            normalize_scope,
            ..
        } => {
            if let Some(v) = min_visits {
                config.preprocess.min_visits = *v;
            }
            if let Some(v) = required_months {
                config.preprocess.required_months = v.clone();
            }
            if let Some(v) = max_missing {
                config.preprocess.max_missing = *v;
            }
            if let Some(v) = normalize_scope {
                config.preprocess.normalize_scope = *v;
            }
        }
        Command::Cluster { k: Some(k), .. } => config.cluster.k = *k,
        Command::Cv { folds: Some(f), .. } => config.cv.folds = *f,
        Command::Convert { folds: Some(f), .. } => config.convert.folds = *f,
        Command::Pipeline { patients: Some(n), .. } => config.synth.n_patients = *n,
        _ => {}
    }
    if let Some(seed) = config.seed {
        config.synth.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    let config = effective_config(cli)?;
    let mut ctx = Ctx {
        hash: config.hash(),
        dir: config.report_dir(),
        config,
        out: Outcome::default(),
    };
    std::fs::create_dir_all(&ctx.dir).map_err(|e| Error::io(&ctx.dir, e))?;
    match &cli.command {
        Command::Synth { .. } => cmd_synth(&mut ctx)?,
        Command::Ingest(args) => cmd_ingest(&mut ctx, args)?,
        Command::Preprocess { input, .. } => cmd_preprocess(&mut ctx, input, true)?,
        Command::Stats(args) => cmd_stats(&mut ctx, args)?,
        Command::Cluster { input, .. } => cmd_cluster(&mut ctx, input)?,
        Command::Cv { input, .. } => {
            cmd_cv(&mut ctx, input)?;
        }
        Command::Convert { input, forecasts, .. } => cmd_convert(&mut ctx, input, forecasts.as_deref(), None)?,
        Command::Pipeline { input, .. } => cmd_pipeline(&mut ctx, input)?,
    }
    Ok(ctx.out)
}

fn cmd_synth(ctx: &mut Ctx) -> Result<()> {
    ctx.config.require_seed()?;
    let synth = generate_cohort(&ctx.config.synth)?;
    ctx.write_cohort(&synth.cohort, &Schema::default(), COHORT_FILE, SCHEMA_FILE)?;
    ctx.write_with("truth.csv", |b| write_truth(&synth.truth, b))?;
    let visits = synth.cohort.n_visits();
    ctx.say(format!("synth: {} patients, {visits} visits", synth.cohort.patients.len()));
    Ok(())
}

fn cmd_ingest(ctx: &mut Ctx, args: &InputArgs) -> Result<()> {
    if args.input.is_none() && ctx.config.paths.input.is_none() {
        return Err(Error::Config("ingest needs --input or paths.input".into()));
    }
    let cohort = ctx.load(args, true, (COHORT_FILE, SCHEMA_FILE))?;
    let base = match args.schema.as_ref().or(ctx.config.paths.schema.as_ref()) {
        Some(s) => load_schema(s)?,
        None => Schema::default(),
    };
    ctx.write_cohort(&cohort, &base, COHORT_FILE, SCHEMA_FILE)?;
    let masked: usize = cohort
        .patients
        .iter()
        .flat_map(|p| &p.visits)
        .map(|v| v.missing_count())
        .sum();
    let summary = format!(
        "patients,visits,features,masked_cells\n{},{},{},{masked}\n",
        cohort.patients.len(),
        cohort.n_visits(),
        cohort.width()
    );
    ctx.write("ingest_summary.csv", &summary)?;
    ctx.say(format!(
        "ingest: {} patients, {} visits, {} features",
        cohort.patients.len(),
        cohort.n_visits(),
        cohort.width()
    ));
    Ok(())
}

fn cmd_preprocess(ctx: &mut Ctx, args: &InputArgs, first_stage: bool) -> Result<()> {
    let cohort = ctx.load(args, first_stage, (COHORT_FILE, SCHEMA_FILE))?;
    let out = preprocess(&cohort, &ctx.config.preprocess)?;
    let waterfall = out.waterfall_csv();
    ctx.write("waterfall.csv", &waterfall)?;
    let mut removed = String::from("stage,patient_id,reason\n");
    for f in &out.filters {
        for (id, reason) in &f.removed {
            let _ = writeln!(removed, "{},{id},{}", f.stage, csv_field(reason));
        }
    }
    ctx.write("filter_removed.csv", &removed)?;
    let mut fill = String::from("patient_id,column\n");
    for (id, col) in &out.fill.fully_missing {
        let _ = writeln!(fill, "{id},{}", csv_field(col));
    }
    ctx.write("fill_report.csv", &fill)?;
    if let Some(sel) = &out.selection {
        let mut s = String::from("group,columns\n");
        for (g, n) in &sel.per_group {
            let _ = writeln!(s, "{},{n}", g.name());
        }
        let _ = writeln!(s, "inputs,{}\ncolumns,{}", sel.n_inputs, sel.n_columns);
        ctx.write("selection_report.csv", &s)?;
    }
    let (set, build) = build_supervised(&out.cohort);
    let summary = format!(
        "rows,patients,features,patients_without_rows\n{},{},{},{}\n",
        set.len(),
        set.patients().len(),
        set.width(),
        build.patients_without_rows.len()
    );
    ctx.write("supervised_summary.csv", &summary)?;
    let dir_schema = ctx.dir.join(SCHEMA_FILE);
    let explicit = args.schema.as_ref().or(if first_stage { ctx.config.paths.schema.as_ref() } else { None });
    let base = match explicit {
        Some(s) => load_schema(s)?,
        None if dir_schema.is_file() => load_schema(&dir_schema)?,
        None => Schema::default(),
    };
    ctx.write_cohort(&out.cohort, &base, PREPROCESSED_FILE, PREPROCESSED_SCHEMA_FILE)?;
    ctx.say(waterfall.trim_end());
    ctx.say(format!("preprocess: {} supervised rows", set.len()));
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn histogram_csv(cohort: &Cohort) -> String {
    let bins = (ADAS_MAX / HISTOGRAM_BIN).ceil() as usize;
    let mut s = String::from("group,bin_start,bin_end,count\n");
    for g in ClinicalStatus::ALL {
        let mut counts = vec![0usize; bins];
        for v in cohort.patients.iter().flat_map(|p| &p.visits) {
            if let (Some(score), Some(cs)) = (v.adas13, v.cs) {
                if cs == g {
                    counts[((score / HISTOGRAM_BIN) as usize).min(bins - 1)] += 1;
                }
            }
        }
        for (b, c) in counts.iter().enumerate() {
            let lo = b as f64 * HISTOGRAM_BIN;
            let _ = writeln!(s, "{},{lo},{},{c}", g.label(), lo + HISTOGRAM_BIN);
        }
    }
    s
}

fn cmd_stats(ctx: &mut Ctx, args: &InputArgs) -> Result<()> {
    let cohort = ctx.load_preprocessed(args)?;
    let stats = group_stats(&cohort);
    ctx.write("group_stats.csv", &group_stats_csv(&stats))?;
    ctx.write("membership.csv", &membership_csv(&stats))?;
    let diffs = window_diff_stats(&cohort, ctx.config.preprocess.month_tolerance);
    ctx.write("window_diff.csv", &window_diff_csv(&diffs))?;
    ctx.write(&format!("{PLOT_DIR}/trajectories.csv"), &trajectories_csv(&stats))?;
    ctx.write(&format!("{PLOT_DIR}/adas_histogram.csv"), &histogram_csv(&cohort))?;
    for (g, s) in &stats.per_group {
        ctx.say(format!("stats: {} mean {:.2} sd {:.2} (n={})", g.label(), s.mean, s.sd, s.count));
    }
    Ok(())
}

fn cmd_cluster(ctx: &mut Ctx, args: &InputArgs) -> Result<()> {
    let seed = ctx.config.require_seed()?;
    let cohort = ctx.load_preprocessed(args)?;
    let mut keys = Vec::new();
    let mut values = Vec::new();
    for p in &cohort.patients {
        for v in &p.visits {
            if let Some(score) = v.adas13 {
                keys.push((p.id.clone(), v.month));
                values.push(vec![score]);
            }
        }
    }
    let result = kmeans(&values, ctx.config.cluster.k, seed, ctx.config.cluster.max_iterations)?;
    ctx.write("centroids.csv", &centroids_csv(&result))?;
    let mut assign = String::from("patient_id,month,adas13,cluster\n");
    for ((id, month), (v, a)) in keys.iter().zip(values.iter().zip(&result.assignments)) {
        let _ = writeln!(assign, "{id},{month},{},{a}", v[0]);
    }
    ctx.write("cluster_assignments.csv", &assign)?;
    let mut hist = String::from("iteration,sse\n");
    for (i, s) in result.sse_history.iter().enumerate() {
        let _ = writeln!(hist, "{i},{s}");
    }
    ctx.write(&format!("{PLOT_DIR}/kmeans_sse.csv"), &hist)?;
    ctx.say(format!("cluster: k={} sse {:.4}", ctx.config.cluster.k, result.sse));
    Ok(())
}

fn cmd_cv(ctx: &mut Ctx, args: &InputArgs) -> Result<Vec<HorizonForecast>> {
    let seed = ctx.config.require_seed()?;
    let cohort = ctx.load_preprocessed(args)?;
    let (set, _) = build_supervised(&cohort);
    if set.is_empty() {
        return Err(Error::NoRecords);
    }
    let report = run_cv(&set, &ctx.config.cv_config(seed))?;
    ctx.write("mae_folds.csv", &mae_folds_csv(&report))?;
    ctx.write("mae_summary.csv", &mae_summary_csv(&report))?;
    ctx.write("mae_horizons.csv", &mae_horizons_csv(&report))?;
    ctx.write(&format!("{PLOT_DIR}/fold_mae.csv"), &fold_mae_series_csv(&report))?;
    let mut folds = String::from("patient_id,fold\n");
    for (id, f) in &report.plan.assignments {
        let _ = writeln!(folds, "{id},{}", f + 1);
    }
    ctx.write("fold_assignments.csv", &folds)?;
    let forecasts: Vec<HorizonForecast> = report.forecasts().cloned().collect();
    ctx.write_with(FORECASTS_FILE, |b| write_forecasts(&forecasts, b))?;
    for (k, s) in &report.summary {
        ctx.say(format!("cv: {k} MAE {:.2}±{:.2}", s.mean, s.sd));
    }
    Ok(forecasts)
}

fn cmd_convert(
    ctx: &mut Ctx,
    args: &InputArgs,
    forecasts_path: Option<&Path>,
    forecasts: Option<Vec<HorizonForecast>>,
) -> Result<()> {
    let seed = ctx.config.require_seed()?;
    let cohort = ctx.load_preprocessed(args)?;
    let forecasts = match forecasts {
        Some(f) => f,
        None => {
            let path = forecasts_path
                .map(Path::to_path_buf)
                .unwrap_or_else(|| ctx.dir.join(FORECASTS_FILE));
            if !path.is_file() {
                return Err(Error::Config(format!(
                    "forecast table {} does not exist; run `cv` first or pass --forecasts",
                    path.display()
                )));
            }
            let file = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
            read_forecasts(file)?
        }
    };
    let tolerance = ctx.config.preprocess.month_tolerance;
    let report = run_convert(&cohort, &forecasts, tolerance, &ctx.config.convert, seed)?;
    ctx.write_with("cox_probabilities.csv", |b| {
        crate::survival::write_probabilities(&report.probabilities, b)
    })?;
    ctx.write_with("predictions.csv", |b| crate::classify::write_predictions(&report.predictions, b))?;
    ctx.write("metrics.csv", &metrics_csv(&report.metrics))?;
    let mut coef = String::from("fold,coefficient,value,penalized\n");
    for (fold, m) in &report.cox_models {
        let penalized = report.penalized_folds.contains(fold);
        for (j, b) in m.beta.iter().enumerate() {
            let _ = writeln!(coef, "{},{},{b},{penalized}", fold + 1, j + 1);
        }
    }
    ctx.write("cox_coefficients.csv", &coef)?;
    let mut excluded = String::from("patient_id,reason\n");
    for (id, reason) in &report.excluded {
        let _ = writeln!(excluded, "{id},{}", csv_field(reason));
    }
    ctx.write("convert_excluded.csv", &excluded)?;
    let m = &report.metrics;
    ctx.say(format!(
        "convert: accuracy {:.4} precision {:.4} recall {:.4} f1 {:.4} (TP {} FP {} FN {} TN {})",
        m.accuracy, m.precision, m.recall, m.f1, m.confusion.tp, m.confusion.fp, m.confusion.fn_, m.confusion.tn
    ));
    Ok(())
}

fn cmd_pipeline(ctx: &mut Ctx, args: &InputArgs) -> Result<()> {
    let none = InputArgs::default();
    if args.input.is_some() || ctx.config.paths.input.is_some() {
        cmd_ingest(ctx, args)?;
    } else {
        cmd_synth(ctx)?;
    }
    cmd_preprocess(ctx, &none, false)?;
    cmd_stats(ctx, &none)?;
    cmd_cluster(ctx, &none)?;
    let forecasts = cmd_cv(ctx, &none)?;
    cmd_convert(ctx, &none, None, Some(forecasts))
}
