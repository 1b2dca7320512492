use std::path::PathBuf;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use mobility_audit::audit::{BinScheme, Demographic};
use mobility_audit::baseline::BaselineMethod;
use mobility_audit::policy::RankOrder;

#[derive(Debug, Parser)]
#[command(
    name = "mobility-audit",
    version,
    about = "Audit POI mobility panels for demographic coverage bias"
)]
pub struct Cli {
    /// Key-value config file (TOML); keys are flag names. Flags given on the
    /// command line win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads; 0 uses one per core.
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic world with known capture rates.
    Synth(SynthArgs),
    /// Match the crosswalk to the POI directory and report the funnel.
    Link(LinkArgs),
    /// Compare baseline imputation methods on non-event days.
    Impute(ImputeArgs),
    /// Placebo audits of the focal day.
    #[command(subcommand)]
    Audit(AuditCommand),
    /// Ranking and allocation distortions.
    #[command(subcommand)]
    Policy(PolicyCommand),
    /// Binned coverage summaries for plotting.
    Report(ReportArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Link(_) => "link",
            Command::Impute(_) => "impute",
            Command::Audit(AuditCommand::Measurement(_)) => "audit measurement",
            Command::Audit(AuditCommand::Disparate(_)) => "audit disparate",
            Command::Audit(AuditCommand::Joint(_)) => "audit joint",
            Command::Audit(AuditCommand::Interaction(_)) => "audit interaction",
            Command::Policy(PolicyCommand::Rank(_)) => "policy rank",
            Command::Policy(PolicyCommand::Allocate(_)) => "policy allocate",
            Command::Report(_) => "report",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum AuditCommand {
    Measurement(AuditArgs),
    Disparate(AuditArgs),
    Joint(AuditArgs),
    Interaction(AuditArgs),
}

#[derive(Debug, Subcommand)]
pub enum PolicyCommand {
    /// Regress turnout rank on mobility rank, A and R.
    Rank(RankArgs),
    /// Compare allocation by marginal traffic with allocation by turnout.
    Allocate(AllocateArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OutArgs {
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct InputArgs {
    /// Directory holding traffic.csv, admin_visits.csv, crosswalk.csv and
    /// poi_directory.csv.
    #[arg(long, default_value = ".")]
    pub input: PathBuf,

    /// JSON dataset manifest with explicit paths and calendar; overrides
    /// --input.
    #[arg(long, value_name = "FILE")]
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CalendarArgs {
    #[arg(long)]
    pub election_date: Option<NaiveDate>,

    /// Dates never used as baseline inputs or placebo days.
    #[arg(long, value_delimiter = ',')]
    pub exclude_dates: Vec<NaiveDate>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct MatchArgs {
    /// POI categories dropped after matching; "none" keeps every category.
    #[arg(long, value_delimiter = ',', default_value = "school")]
    pub exclude_categories: Vec<String>,

    /// Address token distance at which a match is removed.
    #[arg(long, default_value_t = 3)]
    pub token_threshold: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    Mean,
    Regression,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BaselineArgs {
    #[arg(long, value_enum, default_value_t = BaselineKind::Mean)]
    pub baseline: BaselineKind,

    /// Weekdays on each side of the target.
    #[arg(long, default_value_t = 1)]
    pub window: usize,

    /// Drop POIs whose focal-day marginal traffic is negative.
    #[arg(long)]
    pub exclude_negative_marginal: bool,
}

impl BaselineArgs {
    pub fn method(&self) -> BaselineMethod {
        match self.baseline {
            BaselineKind::Mean => BaselineMethod::Mean(self.window),
            BaselineKind::Regression => BaselineMethod::Regression(self.window),
        }
    }
}

/// Everything needed to get from input tables to focal-day marginals.
#[derive(Debug, Clone, Args, Serialize)]
pub struct StudyArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub calendar: CalendarArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub matching: MatchArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub baseline: BaselineArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// JSON scenario file; flags below override its fields.
    #[arg(long, value_name = "FILE")]
    pub scenario: Option<PathBuf>,

    #[arg(long)]
    pub n_pois: Option<usize>,
    #[arg(long)]
    pub election_date: Option<NaiveDate>,
    #[arg(long)]
    pub c0: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub beta_age: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub beta_race: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub beta_interaction: Option<f64>,
    #[arg(long)]
    pub lambda_min: Option<f64>,
    #[arg(long)]
    pub lambda_max: Option<f64>,
    #[arg(long)]
    pub jitter_sigma: Option<f64>,

    /// Uniform capture.
    #[arg(long)]
    pub null: bool,

    /// Add no captured voters on the election day.
    #[arg(long)]
    pub no_inject: bool,

    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LinkArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub matching: MatchArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutArgs,
}

fn parse_method(s: &str) -> Result<BaselineMethod, String> {
    BaselineMethod::parse(s).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ImputeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub calendar: CalendarArgs,

    /// Methods as METHOD:WINDOW, e.g. mean:2 or regression:1.
    #[arg(long, value_delimiter = ',', value_parser = parse_method, default_value = "mean:1,mean:2,mean:3,mean:4")]
    #[serde(serialize_with = "display_all")]
    pub methods: Vec<BaselineMethod>,

    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutArgs,
}

fn display_all<S: serde::Serializer>(v: &[BaselineMethod], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|m| m.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DemographicArg {
    Age,
    Race,
    Joint,
}

impl From<DemographicArg> for Demographic {
    fn from(d: DemographicArg) -> Self {
        match d {
            DemographicArg::Age => Demographic::Age,
            DemographicArg::Race => Demographic::Race,
            DemographicArg::Joint => Demographic::Joint,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AuditArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub study: StudyArgs,

    /// Demographic for the disparate audit; joint runs the joint procedure.
    #[arg(long, value_enum, default_value_t = DemographicArg::Age)]
    pub demographic: DemographicArg,

    /// Leave the focal day out of the placebo set.
    #[arg(long)]
    pub exclude_focal: bool,

    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrderArg {
    Descending,
    Ascending,
}

impl From<OrderArg> for RankOrder {
    fn from(o: OrderArg) -> Self {
        match o {
            OrderArg::Descending => RankOrder::Descending,
            OrderArg::Ascending => RankOrder::Ascending,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RankArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub study: StudyArgs,

    #[arg(long, value_enum, default_value_t = OrderArg::Descending)]
    pub order: OrderArg,

    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AllocateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub study: StudyArgs,

    /// Bootstrap resamples.
    #[arg(long, default_value_t = 1000)]
    pub bootstrap: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Cut on the share over 65 instead of its median.
    #[arg(long, requires = "split_race")]
    pub split_age: Option<f64>,

    /// Cut on the non-white share instead of its median.
    #[arg(long, requires = "split_age")]
    pub split_race: Option<f64>,

    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutArgs,
}

fn scheme_names<S: serde::Serializer>(v: &[BinScheme], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|b| b.as_str()))
}

fn parse_scheme(s: &str) -> Result<BinScheme, String> {
    BinScheme::parse(s).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReportArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub study: StudyArgs,

    #[arg(
        long,
        value_delimiter = ',',
        value_parser = parse_scheme,
        default_value = "ventile-by-A,ventile-by-R,quartile-heatmap,median-split-by-A-lines"
    )]
    #[serde(serialize_with = "scheme_names")]
    pub schemes: Vec<BinScheme>,

    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutArgs,
}
