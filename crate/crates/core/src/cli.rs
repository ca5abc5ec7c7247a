//! `holdq` command line: data generation, online runs, cost sweeps, the
//! classifier baseline, gradient checks and report conversion.
//!
//! A run is described by a [`RunSpec`], read from an optional TOML file and
//! then overridden by flags. The fully resolved spec is written to
//! `config.toml` in every output directory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::agent::{parse_trace_csv, run_online, AgentConfig, DualAgent, RunTrace};
use crate::baseline::{run_baseline, BaselineOutcome, ClassifierConfig};
use crate::env::EnvConfig;
use crate::market::{gen_synthetic, load_csv, PriceSeries, SyntheticKind};
use crate::metrics::{align_run, compute_report, emit_report, segment_trades, ReportFormat, ReportRow};
use crate::netcore::gradcheck::{self, GradCheckReport};
use crate::netcore::{save_checkpoint, NetDims};

/// Where prices come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum DataSource {
    Csv { path: PathBuf },
    Synthetic { n: usize, seed: u64, market: SyntheticKind },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic {
            n: 10_000,
            seed: 0,
            market: SyntheticKind::sine(1.0, 50.0),
        }
    }
}

impl DataSource {
    pub fn load(&self) -> crate::Result<PriceSeries> {
        match self {
            DataSource::Csv { path } => load_csv(path),
            DataSource::Synthetic { n, seed, market } => gen_synthetic(market, *n, *seed),
        }
    }
}

/// A transaction cost in price units, or in percent of a reference price.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Cost {
    Absolute(f64),
    Percent(f64),
}

impl Default for Cost {
    fn default() -> Self {
        Cost::Absolute(0.0)
    }
}

impl Cost {
    /// Price-unit cost; percentages are taken of `reference_price`.
    pub fn resolve(self, reference_price: f64) -> anyhow::Result<f64> {
        let c = match self {
            Cost::Absolute(c) => c,
            Cost::Percent(p) => p / 100.0 * reference_price,
        };
        if !(c >= 0.0 && c.is_finite()) {
            bail!("cost must be finite and >= 0, got {self:?}");
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSpec {
    pub out: PathBuf,
    pub cost: Cost,
    /// Cost levels for `sweep`.
    pub sweep_costs: Vec<Cost>,
    pub agent: AgentConfig,
    pub baseline: ClassifierConfig,
    pub data: DataSource,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            out: PathBuf::from("holdq-out"),
            cost: Cost::default(),
            sweep_costs: vec![Cost::Absolute(0.0), Cost::Absolute(0.05), Cost::Absolute(0.2)],
            agent: AgentConfig::default(),
            baseline: ClassifierConfig::default(),
            data: DataSource::default(),
        }
    }
}

impl RunSpec {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run spec serializes to TOML")
    }
}

/// Files written by [`cmd_run`].
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub cost: f64,
    pub trace: RunTrace,
    pub row: ReportRow,
}

fn write(path: &Path, contents: &str) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn prepare_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Metrics of a trader action stream over the prices of `series`.
pub fn evaluate_actions(
    series: &PriceSeries,
    actions: &[crate::market::Action],
    first_t: usize,
    cost: f64,
) -> crate::Result<crate::metrics::MetricsReport> {
    let (aligned, prices) = align_run(actions, &series.closes(), first_t)?;
    Ok(compute_report(&segment_trades(&aligned, &prices, cost)?))
}

fn run_in(spec: &RunSpec, series: &PriceSeries, cost_spec: Cost, dir: &Path) -> anyhow::Result<RunArtifacts> {
    prepare_dir(dir)?;
    let first_close = series.points().first().map(|p| p.close).unwrap_or(1.0);
    let cost = cost_spec.resolve(first_close)?;
    let mut resolved = spec.clone();
    resolved.out = dir.to_path_buf();
    resolved.cost = cost_spec;
    write(&dir.join("config.toml"), &resolved.to_toml())?;

    let env_cfg = EnvConfig::new(cost, spec.agent.horizon)?;
    let mut agent = DualAgent::new(spec.agent)?;
    let trace = run_online(&mut agent, series, &env_cfg)?;
    let report = evaluate_actions(series, &trace.trade_actions, trace.first_t, cost)?;
    let row = ReportRow { cost, report };

    write(&dir.join("trace.csv"), &trace.to_csv())?;
    write(&dir.join("metrics.csv"), &emit_report(std::slice::from_ref(&row), ReportFormat::Csv))?;
    write(&dir.join("metrics.json"), &emit_report(std::slice::from_ref(&row), ReportFormat::Json))?;
    save_checkpoint(agent.theta(), &dir.join("theta.json"))?;
    save_checkpoint(agent.phi(), &dir.join("phi.json"))?;
    Ok(RunArtifacts {
        dir: dir.to_path_buf(),
        cost,
        trace,
        row,
    })
}

/// Online run at `spec.cost`: writes `config.toml`, `trace.csv`,
/// `metrics.{csv,json}`, `theta.json` and `phi.json` under `spec.out`.
pub fn cmd_run(spec: &RunSpec) -> anyhow::Result<RunArtifacts> {
    let series = spec.data.load()?;
    run_in(spec, &series, spec.cost, &spec.out)
}

/// One online run per cost level in `cost_<i>/`, plus `sweep.{csv,json}`.
pub fn cmd_sweep(spec: &RunSpec) -> anyhow::Result<Vec<RunArtifacts>> {
    if spec.sweep_costs.is_empty() {
        bail!("sweep needs at least one cost level");
    }
    let series = spec.data.load()?;
    prepare_dir(&spec.out)?;
    let runs = spec
        .sweep_costs
        .iter()
        .enumerate()
        .map(|(i, &c)| run_in(spec, &series, c, &spec.out.join(format!("cost_{i}"))))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let rows: Vec<ReportRow> = runs.iter().map(|r| r.row.clone()).collect();
    write(&spec.out.join("sweep.csv"), &emit_report(&rows, ReportFormat::Csv))?;
    write(&spec.out.join("sweep.json"), &emit_report(&rows, ReportFormat::Json))?;
    Ok(runs)
}

/// Trains the classifier on the front split and reports on the back split.
pub fn cmd_baseline(spec: &RunSpec) -> anyhow::Result<(BaselineOutcome, ReportRow)> {
    let series = spec.data.load()?;
    prepare_dir(&spec.out)?;
    let cost = spec.cost.resolve(series.points()[0].close)?;
    write(&spec.out.join("config.toml"), &spec.to_toml())?;
    let outcome = run_baseline(&series, cost, &spec.baseline)?;
    let row = ReportRow {
        cost,
        report: outcome.report.clone(),
    };
    write(&spec.out.join("baseline_metrics.csv"), &emit_report(std::slice::from_ref(&row), ReportFormat::Csv))?;
    write(&spec.out.join("baseline_metrics.json"), &emit_report(std::slice::from_ref(&row), ReportFormat::Json))?;
    save_checkpoint(outcome.classifier.network(), &spec.out.join("classifier.json"))?;
    Ok((outcome, row))
}

pub fn cmd_gradcheck(dims: NetDims, seed: u64, cases: usize, corrupt: bool) -> anyhow::Result<GradCheckReport> {
    Ok(gradcheck::run_suite(dims, seed, cases, corrupt)?)
}

#[derive(Debug, Parser)]
#[command(name = "holdq", version, about = "Online cost-aware deep Q-learning trading simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the online learner/trader over one market at one cost.
    Run(RunArgs),
    /// Run the online learner once per cost level.
    Sweep(RunArgs),
    /// Train and evaluate the four-class LSTM baseline.
    Baseline(RunArgs),
    /// Write a synthetic price CSV.
    GenData(GenDataArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Compute a metrics report from a run trace.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Sine,
    Walk,
    Trend,
}

#[derive(Debug, Clone, Args)]
pub struct MarketArgs {
    /// Price CSV (`timestamp,close`).
    #[arg(long, conflicts_with = "kind")]
    pub data: Option<PathBuf>,
    /// Synthetic market kind.
    #[arg(long, value_enum)]
    pub kind: Option<KindArg>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub base: Option<f64>,
    #[arg(long)]
    pub amplitude: Option<f64>,
    #[arg(long)]
    pub period: Option<f64>,
    /// Random-walk increment.
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub drift: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
}

impl MarketArgs {
    fn synthetic(&self, kind: KindArg) -> SyntheticKind {
        let base = self.base.unwrap_or(100.0);
        match kind {
            KindArg::Sine => SyntheticKind::Sine {
                base,
                amplitude: self.amplitude.unwrap_or(1.0),
                period: self.period.unwrap_or(50.0),
            },
            KindArg::Walk => SyntheticKind::RandomWalk {
                base,
                step: self.step.unwrap_or(0.01),
            },
            KindArg::Trend => SyntheticKind::Trend {
                base,
                drift: self.drift.unwrap_or(0.001),
                noise: self.noise.unwrap_or(0.05),
            },
        }
    }

    fn apply(&self, data: &mut DataSource, seed: Option<u64>) {
        if let Some(path) = &self.data {
            *data = DataSource::Csv { path: path.clone() };
            return;
        }
        if let Some(kind) = self.kind {
            let (n0, seed0) = match data {
                DataSource::Synthetic { n, seed, .. } => (*n, *seed),
                DataSource::Csv { .. } => (10_000, 0),
            };
            *data = DataSource::Synthetic {
                n: n0,
                seed: seed0,
                market: self.synthetic(kind),
            };
        }
        if let DataSource::Synthetic { n, seed: s, .. } = data {
            if let Some(v) = self.n {
                *n = v;
            }
            if let Some(v) = seed {
                *s = v;
            }
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// TOML run spec; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub market: MarketArgs,
    /// Seed for the agent, the baseline and synthetic data.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Window length H.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Replay capacity L.
    #[arg(long)]
    pub buffer: Option<usize>,
    /// Minibatch size N.
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lstm_hidden: Option<usize>,
    #[arg(long)]
    pub fc_hidden: Option<usize>,
    /// Feed causally z-scored diffs to the networks.
    #[arg(long)]
    pub zscore: bool,
    /// Cost in price units per unit of position change.
    #[arg(long, conflicts_with = "cost_pct")]
    pub cost: Option<f64>,
    /// Cost in percent of the first close.
    #[arg(long)]
    pub cost_pct: Option<f64>,
    /// Comma-separated sweep costs in price units.
    #[arg(long, value_delimiter = ',', conflicts_with = "costs_pct")]
    pub costs: Option<Vec<f64>>,
    /// Comma-separated sweep costs in percent of the first close.
    #[arg(long, value_delimiter = ',')]
    pub costs_pct: Option<Vec<f64>>,
    /// Baseline training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Baseline training fraction of the series.
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl RunArgs {
    pub fn to_spec(&self) -> anyhow::Result<RunSpec> {
        let mut spec = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                RunSpec::from_toml(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => RunSpec::default(),
        };
        self.market.apply(&mut spec.data, self.seed);
        let a = &mut spec.agent;
        let b = &mut spec.baseline;
        if let Some(v) = self.seed {
            a.seed = v;
            b.seed = v;
        }
        if let Some(v) = self.gamma {
            a.gamma = v;
        }
        if let Some(v) = self.epsilon {
            a.epsilon = v;
        }
        if let Some(v) = self.horizon {
            a.horizon = v;
            b.horizon = v;
        }
        if let Some(v) = self.buffer {
            a.buffer_capacity = v;
        }
        if let Some(v) = self.batch {
            a.batch_size = v;
            b.batch_size = v;
        }
        if let Some(v) = self.lr {
            a.lr = v;
        }
        if let Some(v) = self.lstm_hidden {
            a.lstm_hidden = v;
            b.lstm_hidden = v;
        }
        if let Some(v) = self.fc_hidden {
            a.fc_hidden = v;
            b.fc_hidden = v;
        }
        if self.zscore {
            a.zscore = true;
            b.zscore = true;
        }
        if let Some(v) = self.epochs {
            b.epochs = v;
        }
        if let Some(v) = self.train_fraction {
            b.train_fraction = v;
        }
        if let Some(c) = self.cost {
            spec.cost = Cost::Absolute(c);
        }
        if let Some(p) = self.cost_pct {
            spec.cost = Cost::Percent(p);
        }
        if let Some(cs) = &self.costs {
            spec.sweep_costs = cs.iter().map(|&c| Cost::Absolute(c)).collect();
        }
        if let Some(cs) = &self.costs_pct {
            spec.sweep_costs = cs.iter().map(|&c| Cost::Percent(c)).collect();
        }
        if let Some(out) = &self.out {
            spec.out = out.clone();
        }
        spec.agent.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub market: MarketArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 32)]
    pub horizon: usize,
    #[arg(long, default_value_t = 32)]
    pub lstm_hidden: usize,
    #[arg(long, default_value_t = 16)]
    pub fc_hidden: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of random (network, state, target) draws.
    #[arg(long, default_value_t = 1)]
    pub cases: usize,
    #[arg(long, default_value_t = gradcheck::DEFAULT_TOLERANCE)]
    pub tolerance: f64,
    /// Perturb the analytic gradient before comparing (negative control).
    #[arg(long, hide = true)]
    pub corrupt: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// `trace.csv` from a run.
    #[arg(long)]
    pub trace: PathBuf,
    /// `config.toml` of the same run; supplies data, horizon and cost.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: FormatArg,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => ReportFormat::Csv,
            FormatArg::Json => ReportFormat::Json,
        }
    }
}

fn print_row(label: &str, row: &ReportRow) {
    let r = &row.report;
    println!(
        "{label}: cost={} trade_num={} return_avg={:.4} trade_length={:.2} win_rate={:.1} sharpe_ratio={:.3} cumulative_pnl={:.4}",
        row.cost, r.trade_num, r.return_avg, r.trade_length, r.win_rate, r.sharpe_ratio, r.cumulative_pnl
    );
}

/// Executes a parsed command. `Ok(false)` means a check ran and failed.
pub fn execute(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Run(args) => {
            let art = cmd_run(&args.to_spec()?)?;
            print_row("run", &art.row);
            println!("wrote {}", art.dir.display());
        }
        Command::Sweep(args) => {
            let spec = args.to_spec()?;
            for art in cmd_sweep(&spec)? {
                print_row("sweep", &art.row);
            }
            println!("wrote {}", spec.out.join("sweep.csv").display());
        }
        Command::Baseline(args) => {
            let spec = args.to_spec()?;
            let (outcome, row) = cmd_baseline(&spec)?;
            println!("train accuracy {:.4} over {} samples", outcome.stats.train_accuracy, outcome.stats.samples);
            print_row("baseline", &row);
        }
        Command::GenData(args) => {
            let kind = args.market.kind.unwrap_or(KindArg::Sine);
            let n = args.market.n.unwrap_or(10_000);
            let series = gen_synthetic(&args.market.synthetic(kind), n, args.seed)?;
            series.write_csv(&args.out)?;
            println!("wrote {} prices to {}", series.len(), args.out.display());
        }
        Command::Gradcheck(args) => {
            let dims = NetDims::new(args.horizon, args.lstm_hidden, args.fc_hidden);
            let r = cmd_gradcheck(dims, args.seed, args.cases, args.corrupt)?;
            println!(
                "checked {} gradient entries, max relative error {:.3e} at {}[{}] (analytic {:.6e}, numeric {:.6e})",
                r.checked, r.max_rel_error, r.worst_array, r.worst_offset, r.worst_analytic, r.worst_numeric
            );
            if !r.passes(args.tolerance) {
                eprintln!(
                    "gradient check failed: {}[{}] relative error {:.3e} >= tolerance {:.1e}",
                    r.worst_array, r.worst_offset, r.max_rel_error, args.tolerance
                );
                return Ok(false);
            }
        }
        Command::Report(args) => {
            let text = fs::read_to_string(&args.config)
                .with_context(|| format!("reading {}", args.config.display()))?;
            let spec = RunSpec::from_toml(&text)?;
            let series = spec.data.load()?;
            let cost = spec.cost.resolve(series.points()[0].close)?;
            let trace_text = fs::read_to_string(&args.trace)
                .with_context(|| format!("reading {}", args.trace.display()))?;
            let actions: Vec<_> = parse_trace_csv(&trace_text)?.iter().map(|r| r.trade_action).collect();
            let report = evaluate_actions(&series, &actions, spec.agent.horizon - 1, cost)?;
            let out = emit_report(&[ReportRow { cost, report }], args.format.into());
            match &args.out {
                Some(p) => write(p, &out)?,
                None => print!("{out}"),
            }
        }
    }
    Ok(true)
}

/// Process entry point: 0 on success, 1 on a failed check, 2 on error.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}
