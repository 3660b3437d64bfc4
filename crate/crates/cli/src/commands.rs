//! One function per subcommand. Each reads its inputs, calls into the core
//! library and serializes the result; none of them computes anything itself.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use cohortflow_core::estimation::{fit, FitConfig, InflowPolicy, Pooling};
use cohortflow_core::evaluation::{backtest, backtest_with_model, BacktestConfig};
use cohortflow_core::forecast::{run_projection, ScenarioRun, MAX_HORIZON};
use cohortflow_core::ingestion::{
    assign_term_types, generate_synthetic, parse_snapshot_csv, read_model, read_state_space, snapshots_to_csv,
    write_model, InflowMode, SyntheticConfig,
};
use cohortflow_core::{EnrollmentSnapshot, ScenarioSpec, StateSpace, StateVector, TransitionModel};

use crate::error::CliError;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Model whose matrix and inflow drive the simulation
    #[arg(long)]
    pub model: PathBuf,
    /// Students at term 0, split evenly over the enrolled states other than StopOut
    #[arg(long, conflicts_with = "initial")]
    pub students: Option<u64>,
    /// Explicit term-0 headcounts, e.g. "Freshman=4000,Sophomore=3000"
    #[arg(long)]
    pub initial: Option<String>,
    /// Number of terms to simulate, including term 0
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub terms: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = InflowModeArg::FixedPerTerm)]
    pub inflow_mode: InflowModeArg,
    /// Output CSV path
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InflowModeArg {
    FixedPerTerm,
    StochasticRounding,
}

impl From<InflowModeArg> for InflowMode {
    fn from(m: InflowModeArg) -> Self {
        match m {
            InflowModeArg::FixedPerTerm => InflowMode::FixedPerTerm,
            InflowModeArg::StochasticRounding => InflowMode::StochasticRounding,
        }
    }
}

#[derive(Debug, Args)]
pub struct FitOptions {
    /// State space (a space or model JSON); defaults to the standard
    /// Freshman/Sophomore/Junior/Senior/StopOut + Graduated/Departed space
    #[arg(long)]
    pub space: Option<PathBuf>,
    /// Laplace smoothing added to every cell of an enrolled row
    #[arg(long, default_value_t = 0.0)]
    pub alpha: f64,
    /// Weight term pairs by decay^age (most recent pair has weight 1)
    #[arg(long, conflicts_with = "weights")]
    pub decay: Option<f64>,
    /// Explicit per-pair weights, oldest first
    #[arg(long, value_delimiter = ',')]
    pub weights: Option<Vec<f64>>,
    /// How per-term inflow is pooled: mean, weighted-mean or last
    #[arg(long, default_value = "mean")]
    pub inflow_policy: InflowPolicy,
    /// Term types assigned cyclically by term index, e.g. "fall,spring"
    #[arg(long, value_delimiter = ',')]
    pub term_cycle: Option<Vec<String>>,
    /// Only pool pairs whose from-term has this type
    #[arg(long, requires = "term_cycle")]
    pub term_type: Option<String>,
}

impl FitOptions {
    fn config(&self) -> CliResult<FitConfig> {
        let pooling = match (&self.decay, &self.weights) {
            (Some(d), _) => Pooling::Decay(*d),
            (None, Some(w)) => Pooling::Explicit(w.clone()),
            (None, None) => Pooling::Uniform,
        };
        Ok(FitConfig {
            alpha: self.alpha,
            pooling,
            inflow_policy: self.inflow_policy,
            term_type: self.term_type.clone(),
            created_at: Some(chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)),
        })
    }

    fn space(&self) -> CliResult<StateSpace> {
        match &self.space {
            Some(p) => Ok(read_state_space(&read_input(p, "space")?)?),
            None => Ok(StateSpace::default()),
        }
    }

    fn load_data(&self, path: &Path, space: &StateSpace) -> CliResult<Vec<EnrollmentSnapshot>> {
        let mut snaps = load_snapshots(path, space)?;
        if let Some(cycle) = &self.term_cycle {
            assign_term_types(&mut snaps, cycle);
        }
        Ok(snaps)
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Snapshot CSV (term_index,term_label,student_id,state)
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub options: FitOptions,
    /// Output model JSON path
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Starting headcounts, e.g. "Freshman=100,Sophomore=100"
    #[arg(long, conflicts_with = "from_data")]
    pub initial: Option<String>,
    /// Start from the last term of this snapshot CSV
    #[arg(long)]
    pub from_data: Option<PathBuf>,
    /// Steps to project
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..=MAX_HORIZON as u64))]
    pub horizon: u64,
    /// Scenario JSON; adds a scenario projection and per-step deltas
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Json)]
    pub format: OutputFormat,
    /// Output path; stdout when omitted
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct BacktestArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Last term index used for fitting
    #[arg(long)]
    pub train_through: usize,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..=MAX_HORIZON as u64))]
    pub horizon: u64,
    /// Project with this model instead of fitting one on the training terms
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub options: FitOptions,
    /// Count StopOut students in projected and actual totals
    #[arg(long)]
    pub include_stop_out: bool,
    /// Add per-state comparisons to the JSON report
    #[arg(long)]
    pub per_state: bool,
    /// Output path for the JSON report
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn generate(args: &GenerateArgs) -> CliResult<()> {
    let model = load_model(&args.model)?;
    let initial_counts = match (&args.initial, args.students) {
        (Some(spec), _) => parse_initial(spec, &model.space)?,
        (None, Some(n)) => even_split(n, &model.space)?,
        (None, None) => return Err(CliError::Usage("one of --students or --initial is required".into())),
    };
    let cfg = SyntheticConfig {
        true_model: model,
        initial_counts,
        n_terms: args.terms as usize,
        inflow_mode: args.inflow_mode.into(),
        seed: args.seed,
    };
    let snaps = generate_synthetic(&cfg)?;
    write_output(&args.out, &snapshots_to_csv(&snaps)?)?;
    let rows: usize = snaps.iter().map(|s| s.roster.len()).sum();
    eprintln!("wrote {} rows over {} terms to {}", rows, snaps.len(), args.out.display());
    Ok(())
}

pub fn fit_cmd(args: &FitArgs) -> CliResult<()> {
    let space = args.options.space()?;
    let snaps = args.options.load_data(&args.data, &space)?;
    let model = fit(&snaps, &space, &args.options.config()?)?;
    write_output(&args.out, &write_model(&model)?)?;
    print!("{}", fit_summary(&model));
    Ok(())
}

pub fn fit_summary(model: &TransitionModel) -> String {
    let space = &model.space;
    let meta = &model.meta;
    let mut out = String::new();
    out.push_str(&format!("states:     {}\n", space.states().join(", ")));
    out.push_str(&format!("enrolled:   {}\n", space.enrolled().join(", ")));
    out.push_str(&format!("absorbing:  {}\n", space.absorbing().join(", ")));
    out.push_str(&format!("alpha:      {}\n", meta.alpha));
    out.push_str(&format!("term pairs: {}\n", meta.term_pairs.len()));
    for (pair, w) in meta.term_pairs.iter().zip(&meta.weights) {
        out.push_str(&format!("  {} -> {}  weight {}\n", pair.from.label, pair.to.label, w));
    }
    if meta.diagnostics.is_empty() {
        out.push_str("diagnostics: none\n");
    } else {
        out.push_str("diagnostics:\n");
        for d in &meta.diagnostics {
            out.push_str(&format!("  {d}\n"));
        }
    }
    out
}

pub fn project_cmd(args: &ProjectArgs) -> CliResult<()> {
    let model = load_model(&args.model)?;
    let initial = match (&args.initial, &args.from_data) {
        (Some(spec), _) => parse_initial(spec, &model.space)?,
        (None, Some(path)) => {
            let snaps = load_snapshots(path, &model.space)?;
            let last = snaps.last().ok_or_else(|| CliError::Usage(format!("{} has no rows", path.display())))?;
            last.enrolled_counts(&model.space)?
        }
        (None, None) => match &model.meta.latest_counts {
            Some(counts) => StateVector::from_labels(&model.space, counts)?,
            None => {
                return Err(CliError::Usage(
                    "model carries no data counts; pass --initial or --from-data".into(),
                ))
            }
        },
    };
    let scenario = match &args.scenario {
        Some(p) => Some(load_scenario(p)?),
        None => None,
    };
    let run = run_projection(&model, &initial, args.horizon as usize, scenario.as_ref())?;
    let bytes = match args.format {
        OutputFormat::Json => run_to_json(&run)?,
        OutputFormat::Csv => run_to_csv(&run).into_bytes(),
    };
    match &args.out {
        Some(path) => write_output(path, &bytes),
        None => Ok(std::io::stdout().write_all(&bytes)?),
    }
}

pub fn backtest_cmd(args: &BacktestArgs) -> CliResult<()> {
    let cfg = BacktestConfig {
        fit: args.options.config()?,
        horizon: args.horizon as usize,
        include_stop_out: args.include_stop_out,
        per_state: args.per_state,
    };
    let report = match &args.model {
        Some(path) => {
            let model = load_model(path)?;
            let snaps = args.options.load_data(&args.data, &model.space)?;
            backtest_with_model(&snaps, args.train_through, &model, &cfg)?
        }
        None => {
            let space = args.options.space()?;
            let snaps = args.options.load_data(&args.data, &space)?;
            backtest(&snaps, &space, args.train_through, &cfg)?
        }
    };
    if let Some(path) = &args.out {
        let mut json = serde_json::to_vec_pretty(&report).map_err(cohortflow_core::Error::from)?;
        json.push(b'\n');
        write_output(path, &json)?;
    }
    print!("{}", report.to_table());
    Ok(())
}

/// The JSON document written by `project` and returned by the service.
pub fn run_to_json(run: &ScenarioRun) -> CliResult<Vec<u8>> {
    let mut json = serde_json::to_vec_pretty(run).map_err(cohortflow_core::Error::from)?;
    json.push(b'\n');
    Ok(json)
}

/// Long-format CSV: one row per (series, step) with per-state counts and flows.
pub fn run_to_csv(run: &ScenarioRun) -> String {
    let base = &run.baseline;
    let mut header = vec!["series".to_string(), "step".to_string()];
    header.extend(base.states.iter().cloned());
    header.extend(["total", "inflow", "outflow"].map(String::from));
    header.extend(base.absorbing.iter().map(|a| format!("to_{a}")));
    let mut out = header.join(",");
    out.push('\n');
    let series = std::iter::once(("baseline", base)).chain(run.scenario.iter().map(|s| ("scenario", s)));
    for (name, proj) in series {
        for p in &proj.points {
            let mut row = vec![name.to_string(), p.step.to_string()];
            row.extend(p.counts.as_slice().iter().map(f64::to_string));
            row.push(p.total.to_string());
            row.push(p.flows.inflow_total.to_string());
            row.push(p.flows.outflow_total.to_string());
            row.extend(p.flows.per_absorbing.iter().map(f64::to_string));
            out.push_str(&row.join(","));
            out.push('\n');
        }
    }
    out
}

/// Parses "Label=count,Label=count" into a headcount vector over the
/// model's enrolled states; unnamed states start at zero.
pub fn parse_initial(spec: &str, space: &StateSpace) -> CliResult<StateVector> {
    let mut values = BTreeMap::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (label, count) = part
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("expected Label=count, got '{part}'")))?;
        let count: f64 = count
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("'{}' is not a number", count.trim())))?;
        if values.insert(label.trim().to_string(), count).is_some() {
            return Err(CliError::Usage(format!("state '{}' given twice", label.trim())));
        }
    }
    Ok(StateVector::from_labels(space, &values)?)
}

/// Splits `n` students as evenly as possible over the enrolled states other
/// than the stop-out state; earlier states take the remainder.
pub fn even_split(n: u64, space: &StateSpace) -> CliResult<StateVector> {
    let rows: Vec<usize> = (0..space.n_enrolled()).filter(|&r| Some(r) != space.stop_out_row()).collect();
    if rows.is_empty() {
        return Err(CliError::Usage("model has no enrolled state to seed students into".into()));
    }
    let k = rows.len() as u64;
    let mut counts = vec![0.0; space.n_enrolled()];
    for (i, &r) in rows.iter().enumerate() {
        counts[r] = (n / k + u64::from((i as u64) < n % k)) as f64;
    }
    Ok(StateVector::new(counts)?)
}

pub fn load_model(path: &Path) -> CliResult<TransitionModel> {
    Ok(read_model(&read_input(path, "model")?)?)
}

fn load_snapshots(path: &Path, space: &StateSpace) -> CliResult<Vec<EnrollmentSnapshot>> {
    let bytes = read_input(path, "data")?;
    Ok(parse_snapshot_csv(&bytes[..], space)?)
}

fn load_scenario(path: &Path) -> CliResult<ScenarioSpec> {
    let bytes = read_input(path, "scenario")?;
    let spec: ScenarioSpec = serde_json::from_slice(&bytes).map_err(cohortflow_core::Error::from)?;
    Ok(spec)
}

fn read_input(path: &Path, what: &'static str) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::NotFound { what, path: path.to_path_buf() },
        _ => CliError::Read { path: path.to_path_buf(), source: e },
    })
}

fn write_output(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::Write { path: path.to_path_buf(), source: e })
}
