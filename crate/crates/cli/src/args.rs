use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "radsafe", version, about = "Radiation dose ledger: records, profiles, cards, sync and PKI")]
pub struct Cli {
    /// Print one JSON document on stdout instead of text.
    #[arg(long, global = true, env = "RADSAFE_JSON")]
    pub json: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a LOCAL or CENTRAL node.
    Serve(ServeArgs),
    #[command(subcommand)]
    Card(CardCommand),
    /// Compute, sign and store one investigation record.
    Record(RecordArgs),
    /// Dose profile of a patient.
    Profile(ProfileArgs),
    /// Project a proposed exam onto a patient's profile. Records nothing.
    Whatif(WhatifArgs),
    #[command(subcommand)]
    Sync(SyncCommand),
    /// Periodic dose report for a time range.
    Report(ReportArgs),
    #[command(subcommand)]
    Scenario(ScenarioCommand),
    #[command(subcommand)]
    Ca(CaCommand),
    #[command(subcommand)]
    Cert(CertCommand),
}

/// Where records live: a running service, or a node data directory opened
/// in-process (the service must not be running on it).
#[derive(Debug, Clone, Args)]
pub struct Target {
    /// Base URL of a running service.
    #[arg(long, env = "RADSAFE_SERVER", conflicts_with = "config")]
    pub server: Option<String>,
    /// Identity file (certificate and key) that signs requests to --server.
    #[arg(long, env = "RADSAFE_IDENTITY")]
    pub identity: Option<PathBuf>,
    /// Node configuration; opens its data directory directly.
    #[arg(long, env = "RADSAFE_CONFIG")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Node configuration (TOML). Every field can be overridden with
    /// RADSAFE_<FIELD>.
    #[arg(long, env = "RADSAFE_CONFIG")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CardKindArg {
    /// Citizen card (CRSC): holds the holder's dose history.
    Citizen,
    /// Professional card (PRSC): signs records.
    Professional,
}

#[derive(Debug, Subcommand)]
pub enum CardCommand {
    /// Issue a new emulated smart card.
    Personalize(PersonalizeArgs),
    /// Show a card's holder, certificate and records.
    Read(CardReadArgs),
}

#[derive(Debug, Args)]
pub struct PersonalizeArgs {
    /// CA directory created by `ca init`.
    #[arg(long)]
    pub ca: PathBuf,
    #[arg(long, value_enum)]
    pub kind: CardKindArg,
    /// Patient id (citizen) or operator name (professional).
    #[arg(long)]
    pub holder: String,
    #[arg(long, env = "RADSAFE_PIN")]
    pub pin: String,
    /// Records a citizen card can hold.
    #[arg(long, default_value_t = radsafe_core::sync::DEFAULT_CARD_CAPACITY)]
    pub capacity: usize,
    #[arg(long, default_value_t = radsafe_core::pki::DEFAULT_LEAF_VALIDITY_DAYS)]
    pub validity_days: i64,
    /// Start of the card certificate's validity (RFC 3339); default now.
    #[arg(long)]
    pub not_before: Option<String>,
    /// Card image to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CardReadArgs {
    #[arg(long)]
    pub card: PathBuf,
    /// Trust bundle; when given every record is verified.
    #[arg(long, env = "RADSAFE_TRUST_BUNDLE")]
    pub trust: Option<PathBuf>,
}

/// Effective-dose input. Give exactly one of --dap, --ctdi, --dlp or
/// --catalog.
#[derive(Debug, Clone, Default, Args)]
pub struct DoseArgs {
    /// Dose-area product, mGy·cm² (radiography).
    #[arg(long, requires_all = ["area", "tissue"], allow_negative_numbers = true)]
    pub dap: Option<f64>,
    /// Irradiated area, cm² (radiography).
    #[arg(long, allow_negative_numbers = true)]
    pub area: Option<f64>,
    /// Exposed tissue group (radiography); repeat or comma-separate.
    #[arg(long, value_delimiter = ',')]
    pub tissue: Vec<String>,
    /// CTDI_vol, mGy (CT); needs --length and --anatomy.
    #[arg(long, requires_all = ["length", "anatomy"], allow_negative_numbers = true)]
    pub ctdi: Option<f64>,
    /// Scan length, cm (CT).
    #[arg(long, allow_negative_numbers = true)]
    pub length: Option<f64>,
    /// Dose-length product, mGy·cm (CT); needs --anatomy.
    #[arg(long, requires = "anatomy", allow_negative_numbers = true)]
    pub dlp: Option<f64>,
    /// CT anatomy key selecting the k-factor.
    #[arg(long)]
    pub anatomy: Option<String>,
    /// Catalog exam whose typical dose stands in for a measurement.
    #[arg(long, conflicts_with_all = ["dap", "ctdi", "dlp"])]
    pub catalog: Option<String>,
}

#[derive(Debug, Args)]
pub struct RecordArgs {
    #[command(flatten)]
    pub target: Target,
    /// Investigation inputs as JSON; replaces the field flags below.
    #[arg(long, conflicts_with_all = ["patient", "exam"])]
    pub input: Option<PathBuf>,
    #[arg(long, required_unless_present = "input")]
    pub patient: Option<String>,
    /// Patient age in years at the exam.
    #[arg(long)]
    pub age: Option<u32>,
    /// When the exam was performed (RFC 3339); default now.
    #[arg(long)]
    pub at: Option<String>,
    #[arg(long, env = "RADSAFE_FACILITY")]
    pub facility: Option<String>,
    /// Operator id; defaults to the signer's certificate name.
    #[arg(long)]
    pub operator: Option<String>,
    #[arg(long, required_unless_present = "input")]
    pub exam: Option<String>,
    #[command(flatten)]
    pub dose: DoseArgs,
    /// Record id (UUID); default random. Resubmitting the same id and
    /// inputs is a no-op.
    #[arg(long)]
    pub record_id: Option<String>,
    /// Professional card image that signs the record.
    #[arg(long)]
    pub prsc: Option<PathBuf>,
    /// PIN for --prsc.
    #[arg(long, env = "RADSAFE_PIN")]
    pub pin: Option<String>,
    /// Patient card image; the new record is also written to it.
    #[arg(long)]
    pub card: Option<PathBuf>,
    /// Trust bundle, needed when no --server or --config is given.
    #[arg(long, env = "RADSAFE_TRUST_BUNDLE")]
    pub trust: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    #[command(flatten)]
    pub target: Target,
    pub patient: String,
    /// RFC 3339 instant or YYYY-MM-DD; default now.
    #[arg(long)]
    pub as_of: Option<String>,
    /// Read the profile from a patient card instead.
    #[arg(long, conflicts_with_all = ["server", "config"])]
    pub card: Option<PathBuf>,
    #[arg(long, env = "RADSAFE_TRUST_BUNDLE")]
    pub trust: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct WhatifArgs {
    #[command(flatten)]
    pub target: Target,
    pub patient: String,
    /// Exam type; without dose flags its catalog dose is used.
    #[arg(long)]
    pub exam: String,
    #[command(flatten)]
    pub dose: DoseArgs,
    #[arg(long)]
    pub as_of: Option<String>,
    #[arg(long, conflicts_with_all = ["server", "config"])]
    pub card: Option<PathBuf>,
    #[arg(long, env = "RADSAFE_TRUST_BUNDLE")]
    pub trust: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum SyncCommand {
    /// Ask a LOCAL service to run a push-then-pull session with CENTRAL now.
    Upstream(UpstreamArgs),
    /// Exchange records between a patient card and a store, both ways.
    Card(SyncCardArgs),
}

#[derive(Debug, Args)]
pub struct UpstreamArgs {
    #[command(flatten)]
    pub target: Target,
}

#[derive(Debug, Args)]
pub struct SyncCardArgs {
    #[command(flatten)]
    pub target: Target,
    #[arg(long)]
    pub card: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub target: Target,
    /// Start, inclusive: RFC 3339 or YYYY-MM-DD.
    #[arg(long)]
    pub from: String,
    /// End, inclusive; a bare date means the end of that day.
    #[arg(long)]
    pub to: String,
    /// CSV goes to stdout as is, in either output mode.
    #[arg(long, value_enum)]
    pub format: Option<ReportFormat>,
}

#[derive(Debug, Subcommand)]
pub enum ScenarioCommand {
    /// Replay a scripted scenario and print its transcript.
    Replay(ReplayArgs),
    /// Names of the built-in scenarios.
    List,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Built-in scenario name.
    #[arg(long = "case", conflicts_with = "file", required_unless_present = "file")]
    pub case: Option<String>,
    /// Scenario file (TOML).
    #[arg(long)]
    pub file: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum CaCommand {
    /// Create a root CA in a new directory.
    Init(CaInitArgs),
}

#[derive(Debug, Args)]
pub struct CaInitArgs {
    #[arg(long)]
    pub dir: PathBuf,
    #[arg(long, default_value = "radsafe root CA")]
    pub name: String,
    #[arg(long, default_value_t = radsafe_core::pki::DEFAULT_CA_VALIDITY_DAYS)]
    pub validity_days: i64,
    /// Start of validity (RFC 3339); default now.
    #[arg(long)]
    pub not_before: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RoleArg {
    Citizen,
    Professional,
    Facility,
}

#[derive(Debug, Subcommand)]
pub enum CertCommand {
    /// Issue a certificate and key pair as an identity file.
    Issue(IssueArgs),
    /// Revoke a certificate and write a fresh CRL.
    Revoke(RevokeArgs),
}

#[derive(Debug, Args)]
pub struct IssueArgs {
    #[arg(long)]
    pub ca: PathBuf,
    #[arg(long)]
    pub name: String,
    #[arg(long, value_enum)]
    pub role: RoleArg,
    #[arg(long, default_value_t = radsafe_core::pki::DEFAULT_LEAF_VALIDITY_DAYS)]
    pub validity_days: i64,
    #[arg(long)]
    pub not_before: Option<String>,
    /// Identity file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Also install the certificate on this running service.
    #[arg(long)]
    pub publish: Option<String>,
}

#[derive(Debug, Args)]
pub struct RevokeArgs {
    #[arg(long)]
    pub ca: PathBuf,
    #[arg(long)]
    pub cert_id: String,
    /// Revocation time (RFC 3339); default now.
    #[arg(long)]
    pub at: Option<String>,
    /// Where to write the CRL; default <ca>/crl.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also install the CRL on this running service.
    #[arg(long)]
    pub publish: Option<String>,
}
