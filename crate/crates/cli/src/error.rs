use std::fmt;

use radsafe_core::ledger::LedgerError;
use radsafe_core::pki::PkiError;
use radsafe_core::sync::ScenarioError;
use radsafe_service::node::IngestError;
use radsafe_service::{ClientError, NodeError, ServiceError};

/// Process exit codes. Stable; scripts depend on them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Exit {
    Other = 1,
    /// Bad flags, missing or invalid configuration, unreadable input files.
    Usage = 2,
    /// A signature, chain, PIN or record-id check refused the operation.
    Verification = 3,
    /// Stored data failed re-verification or a log is corrupt.
    Integrity = 4,
    /// The service could not be reached.
    Unreachable = 5,
    /// Dose input or time range outside its domain.
    InvalidInput = 6,
}

#[derive(Debug)]
pub struct CliError {
    pub exit: Exit,
    pub code: String,
    pub message: String,
}

impl CliError {
    pub fn new(exit: Exit, code: &str, message: impl Into<String>) -> Self {
        Self { exit, code: code.to_string(), message: message.into() }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(Exit::Usage, "USAGE", message)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

pub type CliResult<T> = Result<T, CliError>;

impl From<LedgerError> for CliError {
    fn from(e: LedgerError) -> Self {
        let m = e.to_string();
        match e {
            LedgerError::Dose(_) => Self::new(Exit::InvalidInput, "INVALID_DOSE_INPUT", m),
            LedgerError::InvalidRange(_) => Self::new(Exit::InvalidInput, "BAD_RANGE", m),
            LedgerError::Unauthorized(r) => Self::new(Exit::Verification, r.code(), m),
            LedgerError::Signing(p) => p.into(),
            LedgerError::Integrity { .. } | LedgerError::CorruptLog { .. } => Self::new(Exit::Integrity, "INTEGRITY_FAILURE", m),
            LedgerError::Canonical(_) | LedgerError::Io(_) => Self::new(Exit::Other, "STORAGE_ERROR", m),
        }
    }
}

impl From<PkiError> for CliError {
    fn from(e: PkiError) -> Self {
        let m = e.to_string();
        match e {
            PkiError::WrongPin { .. } => Self::new(Exit::Verification, "WRONG_PIN", m),
            PkiError::CardLocked => Self::new(Exit::Verification, "CARD_LOCKED", m),
            PkiError::PinRequired => Self::new(Exit::Verification, "PIN_REQUIRED", m),
            PkiError::CertificateNotValid(_) => Self::new(Exit::Verification, "CERTIFICATE_NOT_VALID", m),
            PkiError::Image(_) => Self::new(Exit::Usage, "CARD_IMAGE", m),
            _ => Self::new(Exit::Other, "PKI_ERROR", m),
        }
    }
}

impl From<NodeError> for CliError {
    fn from(e: NodeError) -> Self {
        match e {
            NodeError::Ledger(l) => l.into(),
            NodeError::Pki(p) => p.into(),
            NodeError::Locked(_) => Self::new(Exit::Other, "DATA_DIR_LOCKED", e.to_string()),
        }
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        let code = e.code();
        match e {
            IngestError::Storage(l) => l.into(),
            _ => Self::new(Exit::Verification, code, e.to_string()),
        }
    }
}

impl From<ServiceError> for CliError {
    fn from(e: ServiceError) -> Self {
        match e {
            ServiceError::Config(m) => Self::new(Exit::Usage, "CONFIG", m),
            ServiceError::Node(n) => n.into(),
            ServiceError::Io(io) => Self::new(Exit::Other, "IO", io.to_string()),
        }
    }
}

impl From<ClientError> for CliError {
    fn from(e: ClientError) -> Self {
        let m = e.to_string();
        match &e {
            ClientError::Transport { .. } => Self::new(Exit::Unreachable, "UNREACHABLE", m),
            ClientError::Api { status, body } => {
                let exit = match (*status, body.error.as_str()) {
                    (_, "INTEGRITY_FAILURE") => Exit::Integrity,
                    (_, "NO_UPSTREAM") => Exit::Usage,
                    (409 | 422, _) => Exit::Verification,
                    (400, "INVALID_DOSE_INPUT" | "BAD_RANGE") => Exit::InvalidInput,
                    (400, _) => Exit::Usage,
                    (503, _) => Exit::Unreachable,
                    _ => Exit::Other,
                };
                Self::new(exit, &body.error, m)
            }
            ClientError::Decode(_) | ClientError::Local(_) => Self::new(Exit::Other, "CLIENT_ERROR", m),
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Ledger(l) => l.into(),
            ScenarioError::Pki(p) => p.into(),
            ScenarioError::Sync(_) => Self::new(Exit::Other, "SYNC", e.to_string()),
            ScenarioError::Parse(_) | ScenarioError::Invalid(_) => Self::new(Exit::Usage, "SCENARIO", e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new(Exit::Other, "IO", e.to_string())
    }
}
