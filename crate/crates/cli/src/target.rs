use radsafe_core::pki::Identity;
use radsafe_service::{open_node, Client, Node, ServiceConfig};

use crate::args::Target;
use crate::error::{CliError, CliResult};
use crate::util::read_json;

pub enum Backend {
    Remote(Client),
    Local { node: Box<Node>, config: ServiceConfig },
}

pub fn load_config(path: Option<&std::path::Path>) -> CliResult<ServiceConfig> {
    if let Some(p) = path {
        if !p.exists() {
            return Err(CliError::new(crate::error::Exit::Usage, "CONFIG", format!("config file {} not found", p.display())));
        }
    }
    Ok(ServiceConfig::load(path, std::env::vars())?)
}

impl Backend {
    /// `None` when neither --server nor --config is given.
    pub fn open(t: &Target) -> CliResult<Option<Self>> {
        if let Some(url) = &t.server {
            let path = t.identity.as_deref().ok_or_else(|| CliError::usage("--server needs --identity"))?;
            let identity: Identity = read_json(path)?;
            return Ok(Some(Backend::Remote(Client::new(url, identity))));
        }
        let Some(path) = &t.config else { return Ok(None) };
        let config = load_config(Some(path))?;
        let node = open_node(&config)?;
        Ok(Some(Backend::Local { node: Box::new(node), config }))
    }

    pub fn require(t: &Target) -> CliResult<Self> {
        Self::open(t)?.ok_or_else(|| CliError::usage("give --server URL (with --identity) or --config FILE"))
    }
}
