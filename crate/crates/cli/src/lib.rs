//! Experiment driver behind the `fwdgrad` binary.
//!
//! Every output file starts with a schema line and the full run
//! configuration as JSON, so results can be traced back to the exact
//! command that produced them.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use fwdgrad::bench::{self, CurveRow, ScalingRow, TimingConfig, TrainConfig};
use fwdgrad::data::{self, Dataset};
use fwdgrad::optim::{self, OptState};
use fwdgrad::{checkpoint, Error, Method, ModelSpec, RngState, TestFunction};

pub const CURVE_SCHEMA: &str = "fwdgrad-curve/1";
pub const TRAJECTORY_SCHEMA: &str = "fwdgrad-trajectory/1";
pub const SCALING_SCHEMA: &str = "fwdgrad-scaling/1";
pub const REPORT_SCHEMA: &str = "fwdgrad-report/1";

/// Examples generated when `--synthetic` is given; the last fifth is held
/// out for validation.
pub const SYNTHETIC_SIZE: usize = 6000;

#[derive(Debug, Parser)]
#[command(name = "fwdgrad", version, about = "Forward gradient descent experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize Beale or Rosenbrock and write the trajectory.
    Testfunc(TestfuncArgs),
    /// Train a classifier and write loss curves and checkpoints.
    Train(TrainArgs),
    /// Measure base runtime, cost factors and time-to-loss for one model.
    Bench(BenchArgs),
    /// Measure runtime and memory of bias-free MLPs across depths.
    Scaling(ScalingArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Fgd,
    Backprop,
    Both,
}

impl MethodArg {
    pub fn methods(self) -> Vec<Method> {
        match self {
            MethodArg::Fgd => vec![Method::Fgd],
            MethodArg::Backprop => vec![Method::Backprop],
            MethodArg::Both => vec![Method::Fgd, Method::Backprop],
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Directory holding the MNIST training IDX files.
    #[arg(long, default_value = "data/mnist")]
    pub data_dir: PathBuf,
    /// Use generated class blobs instead of MNIST.
    #[arg(long)]
    pub synthetic: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TestfuncArgs {
    /// beale or rosenbrock.
    #[arg(long, default_value = "beale")]
    pub function: TestFunction,
    #[arg(long, value_enum, default_value_t = MethodArg::Both)]
    pub method: MethodArg,
    /// Defaults to 0.01 for Beale and 5e-4 for Rosenbrock.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub decay_k: f64,
    #[arg(long, default_value_t = 2000)]
    pub iters: u64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// logreg, mlp, mlp-small, cnn, cnn-small or mlp-depth-<d>x<w>.
    #[arg(long, default_value = "logreg")]
    pub model: ModelSpec,
    #[arg(long, value_enum, default_value_t = MethodArg::Both)]
    pub method: MethodArg,
    /// Defaults to 1e-4 for logistic regression and 2e-4 otherwise.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value_t = 1e-4)]
    pub decay_k: f64,
    #[arg(long, default_value_t = 1000)]
    pub iters: u64,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    /// Validation loss every this many iterations.
    #[arg(long, default_value_t = 100)]
    pub valid_every: u64,
    /// Validation examples evaluated each time.
    #[arg(long, default_value_t = 1000)]
    pub valid_limit: usize,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Timed iterations per measurement (at least 30).
    #[arg(long, default_value_t = 30)]
    pub timing_iters: usize,
    #[arg(long, default_value_t = 5)]
    pub warmup: usize,
}

#[derive(Debug, Clone, Args)]
pub struct ScalingArgs {
    #[arg(long, value_delimiter = ',', default_value = "1,2,5,10,20")]
    pub depths: Vec<usize>,
    #[arg(long, default_value_t = 256)]
    pub width: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 30)]
    pub timing_iters: usize,
    #[arg(long, default_value_t = 5)]
    pub warmup: usize,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub common: Common,
}

/// Everything that determines a run, echoed into each output file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: &'static str,
    pub model: Option<String>,
    pub function: Option<String>,
    pub method: Option<MethodArg>,
    pub lr: Option<f64>,
    pub decay_k: Option<f64>,
    pub iters: Option<u64>,
    pub batch_size: Option<usize>,
    pub seed: u64,
    /// `synthetic` or the MNIST directory.
    pub data: Option<String>,
    pub out_dir: String,
    pub depths: Option<Vec<usize>>,
    pub width: Option<usize>,
    pub valid_every: Option<u64>,
    pub valid_limit: Option<usize>,
    pub timing: Option<TimingConfig>,
}

impl RunConfig {
    fn base(command: &'static str, common: &Common) -> Self {
        RunConfig {
            command,
            model: None,
            function: None,
            method: None,
            lr: None,
            decay_k: None,
            iters: None,
            batch_size: None,
            seed: common.seed,
            data: None,
            out_dir: common.out_dir.display().to_string(),
            depths: None,
            width: None,
            valid_every: None,
            valid_limit: None,
            timing: None,
        }
    }
}

/// Why a command failed; each kind maps to its own exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Other(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    fn from_data(e: Error) -> Self {
        match e {
            Error::NonFinite { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFinite { .. } => CliError::Numeric(e.to_string()),
            Error::Validation(_) => CliError::Usage(e.to_string()),
            Error::Io(_) | Error::Format { .. } | Error::Length { .. } => CliError::Data(e.to_string()),
            _ => CliError::Other(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

/// Paths written by a command.
#[derive(Debug, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub summary: Vec<String>,
}

pub fn run(cli: Cli) -> Result<Outcome, CliError> {
    match cli.command {
        Command::Testfunc(a) => cmd_testfunc(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Bench(a) => cmd_bench(&a),
        Command::Scaling(a) => cmd_scaling(&a),
    }
}

/// The published learning rate for each architecture.
pub fn default_lr(spec: &ModelSpec) -> f64 {
    match spec {
        ModelSpec::Logreg { .. } => 1e-4,
        _ => 2e-4,
    }
}

fn header(schema: &str, config: &RunConfig, columns: &str) -> Result<String, CliError> {
    let json = serde_json::to_string(config).map_err(|e| CliError::Other(e.to_string()))?;
    Ok(format!("# schema {schema}\n# config {json}\n{columns}\n"))
}

fn write_output(dir: &Path, name: &str, contents: &str, outcome: &mut Outcome) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, contents)?;
    outcome.files.push(path);
    Ok(())
}

fn check_lr(lr: f64) -> Result<f64, CliError> {
    if lr > 0.0 && lr.is_finite() {
        Ok(lr)
    } else {
        Err(CliError::Usage(format!("--lr must be positive, got {lr}")))
    }
}

pub fn cmd_testfunc(a: &TestfuncArgs) -> Result<Outcome, CliError> {
    let f = a.function;
    let lr = check_lr(a.lr.unwrap_or(f.default_lr()))?;
    let mut config = RunConfig::base("testfunc", &a.common);
    config.function = Some(f.name().into());
    config.method = Some(a.method);
    config.lr = Some(lr);
    config.decay_k = Some(a.decay_k);
    config.iters = Some(a.iters);

    let mut csv = header(TRAJECTORY_SCHEMA, &config, "method,iteration,x,y,f")?;
    let mut outcome = Outcome::default();
    for method in a.method.methods() {
        let [x0, y0] = f.default_start();
        let mut params = TestFunction::params(x0, y0);
        let mut state = OptState::new(lr, a.decay_k, RngState::derive(a.common.seed, bench::PERTURB_STREAM))?;
        writeln!(csv, "{method},0,{x0},{y0},{}", f.evaluate(x0, y0)).expect("string write");
        for t in 1..=a.iters {
            optim::step(method, &f, &mut params, &mut state)?;
            let [x, y] = TestFunction::point(&params)?;
            let v = f.evaluate(x, y);
            if !v.is_finite() {
                return Err(CliError::Numeric(format!("non-finite loss {v} at iteration {t}")));
            }
            writeln!(csv, "{method},{t},{x},{y},{v}").expect("string write");
        }
        let [x, y] = TestFunction::point(&params)?;
        outcome
            .summary
            .push(format!("{f} {method}: f({x:.6}, {y:.6}) = {:.6e} after {} steps", f.evaluate(x, y), a.iters));
    }
    write_output(&a.common.out_dir, &format!("testfunc-{f}.csv"), &csv, &mut outcome)?;
    Ok(outcome)
}

/// Loads MNIST, or generates the synthetic set when asked to.
pub fn load_data(d: &DataArgs, seed: u64) -> Result<(Dataset, Dataset), CliError> {
    if d.synthetic {
        let all = data::synthetic(&mut RngState::derive(seed, 3), SYNTHETIC_SIZE, fwdgrad::nn::CLASSES)?;
        return Ok(all.split_tail(SYNTHETIC_SIZE / 5)?);
    }
    data::load_mnist(&d.data_dir).map_err(|e| {
        CliError::Data(format!("{e}\n(pass --synthetic to use generated data instead)"))
    })
}

fn data_label(d: &DataArgs) -> String {
    if d.synthetic {
        "synthetic".into()
    } else {
        d.data_dir.display().to_string()
    }
}

fn train_config(a: &TrainArgs) -> Result<(TrainConfig, RunConfig), CliError> {
    let lr = check_lr(a.lr.unwrap_or(default_lr(&a.model)))?;
    if a.batch_size == 0 || a.iters == 0 {
        return Err(CliError::Usage("--batch-size and --iters must be positive".into()));
    }
    let tc = TrainConfig {
        model: a.model.clone(),
        lr0: lr,
        decay: a.decay_k,
        iters: a.iters,
        batch_size: a.batch_size,
        seed: a.common.seed,
        valid_every: a.valid_every,
        valid_limit: a.valid_limit,
    };
    let mut rc = RunConfig::base("train", &a.common);
    rc.model = Some(a.model.tag());
    rc.method = Some(a.method);
    rc.lr = Some(lr);
    rc.decay_k = Some(a.decay_k);
    rc.iters = Some(a.iters);
    rc.batch_size = Some(a.batch_size);
    rc.data = Some(data_label(&a.data));
    rc.valid_every = Some(a.valid_every);
    rc.valid_limit = Some(a.valid_limit);
    Ok((tc, rc))
}

pub const CURVE_COLUMNS: &str = "method,iteration,wall_ms,train_loss,valid_loss";

pub fn curve_line(r: &CurveRow) -> String {
    let valid = r.valid_loss.map(|v| v.to_string()).unwrap_or_default();
    format!("{},{},{:.3},{},{}", r.method, r.iteration, r.wall_ms, r.train_loss, valid)
}

pub fn cmd_train(a: &TrainArgs) -> Result<Outcome, CliError> {
    let (tc, rc) = train_config(a)?;
    let (train, valid) = load_data(&a.data, a.common.seed)?;
    let mut csv = header(CURVE_SCHEMA, &rc, CURVE_COLUMNS)?;
    let mut outcome = Outcome::default();
    let tag = a.model.tag();
    for method in a.method.methods() {
        let (params, rows) = bench::run_training(&tc, method, &train, &valid, |r| {
            writeln!(csv, "{}", curve_line(r)).expect("string write");
            Ok(())
        })
        .map_err(CliError::from_data)?;
        fs::create_dir_all(&a.common.out_dir)?;
        let ck = a.common.out_dir.join(format!("{tag}-{method}.fgck"));
        checkpoint::save(&ck, &a.model, &params)?;
        outcome.files.push(ck);
        let last = rows.last().expect("at least one iteration");
        outcome.summary.push(format!(
            "{tag} {method}: train loss {:.4}, valid loss {:.4} after {} iterations ({:.1} s)",
            last.train_loss,
            last.valid_loss.unwrap_or(f64::NAN),
            last.iteration,
            last.wall_ms / 1e3
        ));
    }
    write_output(&a.common.out_dir, &format!("train-{tag}.csv"), &csv, &mut outcome)?;
    Ok(outcome)
}

#[derive(Debug, Serialize)]
pub struct ReportFile<'a, T: Serialize> {
    pub schema: &'static str,
    pub config: &'a RunConfig,
    pub report: &'a T,
}

pub fn cmd_bench(a: &BenchArgs) -> Result<Outcome, CliError> {
    let (tc, mut rc) = train_config(&a.train)?;
    rc.command = "bench";
    let timing = TimingConfig {
        warmup: a.warmup,
        iters: a.timing_iters,
    };
    rc.timing = Some(timing);
    let (train, valid) = load_data(&a.train.data, a.train.common.seed)?;
    let report = bench::run_bench(&tc, timing, &train, &valid).map_err(CliError::from_data)?;
    let tag = a.train.model.tag();
    let json = serde_json::to_string_pretty(&ReportFile {
        schema: REPORT_SCHEMA,
        config: &rc,
        report: &report,
    })
    .map_err(|e| CliError::Other(e.to_string()))?;
    let mut outcome = Outcome::default();
    let dir = &a.train.common.out_dir;
    write_output(dir, &format!("bench-{tag}.json"), &(json + "\n"), &mut outcome)?;
    let mut csv = header(CURVE_SCHEMA, &rc, CURVE_COLUMNS)?;
    for r in &report.curves {
        writeln!(csv, "{}", curve_line(r)).expect("string write");
    }
    write_output(dir, &format!("bench-{tag}.csv"), &csv, &mut outcome)?;
    let tf_tb = match report.loss_time.tf_over_tb.value() {
        Some(v) => format!("{v:.3}"),
        None => "unreached".into(),
    };
    outcome.summary.push(format!(
        "{tag}: base {:.3} ms, R_f {:.3}, R_b {:.3}, R_f/R_b {:.3}, T_f/T_b {tf_tb}",
        report.base_runtime_s * 1e3,
        report.rf,
        report.rb,
        report.rf_over_rb
    ));
    if let Some(r) = report.reference {
        outcome.summary.push(format!(
            "published reference: R_f/R_b {:.3}, T_f/T_b {:.3}",
            r.rf_over_rb, r.tf_over_tb
        ));
    }
    Ok(outcome)
}

pub const SCALING_COLUMNS: &str =
    "depth,width,num_params,base_runtime_s,rf,rb,fgd_peak_elements,backprop_peak_elements";

pub fn scaling_line(r: &ScalingRow) -> String {
    format!(
        "{},{},{},{:.6e},{:.4},{:.4},{},{}",
        r.depth, r.width, r.num_params, r.base_runtime_s, r.rf, r.rb, r.fgd_peak_elements, r.backprop_peak_elements
    )
}

pub fn cmd_scaling(a: &ScalingArgs) -> Result<Outcome, CliError> {
    let mut rc = RunConfig::base("scaling", &a.common);
    let timing = TimingConfig {
        warmup: a.warmup,
        iters: a.timing_iters,
    };
    rc.depths = Some(a.depths.clone());
    rc.width = Some(a.width);
    rc.batch_size = Some(a.batch_size);
    rc.data = Some(data_label(&a.data));
    rc.timing = Some(timing);
    let (train, _) = load_data(&a.data, a.common.seed)?;
    let rows = bench::scaling_sweep(&a.depths, a.width, &train, a.batch_size, a.common.seed, timing)?;
    let mut csv = header(SCALING_SCHEMA, &rc, SCALING_COLUMNS)?;
    let mut outcome = Outcome::default();
    for r in &rows {
        writeln!(csv, "{}", scaling_line(r)).expect("string write");
        outcome.summary.push(format!(
            "depth {:>3}: R_f {:.3}, R_b {:.3}, peak elements fgd {} / backprop {}",
            r.depth, r.rf, r.rb, r.fgd_peak_elements, r.backprop_peak_elements
        ));
    }
    write_output(&a.common.out_dir, "scaling.csv", &csv, &mut outcome)?;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn clap_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn defaults_follow_published_rates() {
        let cli = Cli::try_parse_from(["fwdgrad", "train"]).unwrap();
        let Command::Train(a) = cli.command else { panic!("expected train") };
        assert_eq!(a.batch_size, 64);
        assert_eq!(a.decay_k, 1e-4);
        assert_eq!(a.method, MethodArg::Both);
        assert_eq!(default_lr(&a.model), 1e-4);
        assert_eq!(default_lr(&ModelSpec::mlp()), 2e-4);
        assert_eq!(default_lr(&ModelSpec::cnn()), 2e-4);
    }

    #[test]
    fn depths_parse_as_list() {
        let cli = Cli::try_parse_from(["fwdgrad", "scaling", "--depths", "1,4,9"]).unwrap();
        let Command::Scaling(a) = cli.command else { panic!("expected scaling") };
        assert_eq!(a.depths, [1, 4, 9]);
    }

    #[test]
    fn method_expansion() {
        assert_eq!(MethodArg::Both.methods(), [Method::Fgd, Method::Backprop]);
        assert_eq!(MethodArg::Fgd.methods(), [Method::Fgd]);
    }

    #[test]
    fn curve_rows_leave_missing_validation_empty() {
        let row = CurveRow {
            method: Method::Fgd,
            iteration: 3,
            wall_ms: 1.23456,
            train_loss: 0.5,
            valid_loss: None,
        };
        assert_eq!(curve_line(&row), "fgd,3,1.235,0.5,");
        let row = CurveRow { valid_loss: Some(0.25), ..row };
        assert_eq!(curve_line(&row), "fgd,3,1.235,0.5,0.25");
    }

    #[test]
    fn error_kinds_map_to_exit_codes() {
        let numeric: CliError = Error::NonFinite { iteration: 7, value: f64::NAN }.into();
        assert_eq!(numeric.exit_code(), 4);
        assert_eq!(CliError::from(Error::Validation("x".into())).exit_code(), 2);
        assert_eq!(CliError::Data("x".into()).exit_code(), 3);
        assert_eq!(CliError::Other("x".into()).exit_code(), 1);
    }

    #[test]
    fn header_embeds_config_json() {
        let common = Common {
            seed: 5,
            out_dir: "o".into(),
        };
        let h = header("s/1", &RunConfig::base("testfunc", &common), "a,b").unwrap();
        let lines: Vec<_> = h.lines().collect();
        assert_eq!(lines[0], "# schema s/1");
        assert!(lines[1].starts_with("# config {\"command\":\"testfunc\""));
        assert!(lines[1].contains("\"seed\":5"));
        assert_eq!(lines[2], "a,b");
    }
}
