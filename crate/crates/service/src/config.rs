use std::fmt;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ServiceError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum NodeRole {
    Local,
    Central,
}

impl fmt::Display for NodeRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NodeRole::Local => "LOCAL",
            NodeRole::Central => "CENTRAL",
        })
    }
}

/// Service configuration. Every field can be overridden by an environment
/// variable named `RADSAFE_` followed by the upper-cased field name; an
/// empty value clears an optional field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: SocketAddr,
    pub data_dir: PathBuf,
    pub role: NodeRole,
    /// Store identifier reported to peers, e.g. `LOCAL:HOSP-A`.
    pub node_id: String,
    /// Base URL of the CENTRAL service. Required for LOCAL, forbidden for
    /// CENTRAL.
    #[serde(default)]
    pub upstream: Option<String>,
    /// Trust bundle (anchors, certificates, CRLs) as written by `ca init`.
    pub trust_bundle: PathBuf,
    /// FACILITY identity: signs raw-input records and authenticates this
    /// node to its upstream.
    pub identity: PathBuf,
    #[serde(default)]
    pub limit_policy: Option<PathBuf>,
    #[serde(default)]
    pub k_factors: Option<PathBuf>,
    #[serde(default)]
    pub tls_cert: Option<PathBuf>,
    #[serde(default)]
    pub tls_key: Option<PathBuf>,
    #[serde(default = "default_sync_interval")]
    pub sync_interval_secs: u64,
    #[serde(default = "default_skew")]
    pub max_clock_skew_secs: u64,
}

fn default_sync_interval() -> u64 {
    30
}

fn default_skew() -> u64 {
    300
}

pub const ENV_PREFIX: &str = "RADSAFE_";

const FIELDS: &[(&str, bool)] = &[
    ("listen", false),
    ("data_dir", false),
    ("role", false),
    ("node_id", false),
    ("upstream", false),
    ("trust_bundle", false),
    ("identity", false),
    ("limit_policy", false),
    ("k_factors", false),
    ("tls_cert", false),
    ("tls_key", false),
    ("sync_interval_secs", true),
    ("max_clock_skew_secs", true),
];

const PATH_FIELDS: &[&str] = &["data_dir", "trust_bundle", "identity", "limit_policy", "k_factors", "tls_cert", "tls_key"];

impl ServiceConfig {
    /// Reads `path` (if any), applies environment overrides from `env`, and
    /// validates. Relative paths in the file resolve against its directory.
    pub fn load(path: Option<&Path>, env: impl IntoIterator<Item = (String, String)>) -> Result<Self, ServiceError> {
        let mut table = toml::Table::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ServiceError::Config(format!("cannot read {}: {e}", path.display())))?;
            table = text.parse().map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
            let base = path.parent().unwrap_or(Path::new("."));
            for key in PATH_FIELDS {
                if let Some(toml::Value::String(p)) = table.get_mut(*key) {
                    if Path::new(p.as_str()).is_relative() {
                        *p = base.join(&*p).display().to_string();
                    }
                }
            }
        }
        let env: Vec<(String, String)> = env.into_iter().collect();
        for (field, numeric) in FIELDS {
            let var = format!("{ENV_PREFIX}{}", field.to_uppercase());
            let Some((_, value)) = env.iter().find(|(k, _)| *k == var) else { continue };
            if value.is_empty() {
                table.remove(*field);
            } else if *numeric {
                let n: i64 = value.parse().map_err(|_| ServiceError::Config(format!("{var} must be an integer")))?;
                table.insert(field.to_string(), toml::Value::Integer(n));
            } else {
                table.insert(field.to_string(), toml::Value::String(value.clone()));
            }
        }
        let config: ServiceConfig =
            toml::Value::Table(table).try_into().map_err(|e| ServiceError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        let bad = |m: &str| Err(ServiceError::Config(m.to_string()));
        match (self.role, &self.upstream) {
            (NodeRole::Local, None) => return bad("a LOCAL node must have an upstream"),
            (NodeRole::Central, Some(_)) => return bad("a CENTRAL node must not have an upstream"),
            _ => {}
        }
        if self.node_id.trim().is_empty() {
            return bad("node_id must not be empty");
        }
        if self.tls_cert.is_some() != self.tls_key.is_some() {
            return bad("tls_cert and tls_key must be given together");
        }
        if self.sync_interval_secs == 0 {
            return bad("sync_interval_secs must be positive");
        }
        Ok(())
    }
}
