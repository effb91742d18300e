//! LOCAL to CENTRAL synchronization.
//!
//! A session pushes every record CENTRAL has not confirmed, marks the
//! accepted ones durable, then pulls CENTRAL's log from the saved cursor
//! and keeps the records of patients this node already knows. Sessions
//! are serialized per node.

use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use radsafe_core::ledger::{PatientId, RecordId};
use radsafe_core::sync::{BatchEntry, SyncFault};
use serde::{Deserialize, Serialize};

use crate::api::{add_certificates, apply_batch, SyncRequest};
use crate::client::ClientError;
use crate::config::NodeRole;
use crate::AppState;

const PULL_PAGE: usize = 1000;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UpstreamStatus {
    pub reachable: bool,
    pub last_attempt: Option<DateTime<Utc>>,
    pub last_success: Option<DateTime<Utc>>,
    pub last_error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UpstreamReport {
    pub pushed: usize,
    pub confirmed: usize,
    pub push_faults: Vec<SyncFault>,
    pub pulled: usize,
    pub inserted: usize,
    pub cursor: u64,
    /// Patients whose history was fetched in this session.
    pub staged: usize,
}

fn note(st: &AppState, result: Result<(), &ClientError>) {
    let mut s = st.upstream_status.lock().expect("status lock");
    let now = Utc::now();
    s.last_attempt = Some(now);
    match result {
        Ok(()) => {
            s.reachable = true;
            s.last_success = Some(now);
            s.last_error = None;
        }
        Err(e) => {
            s.reachable = false;
            s.last_error = Some(e.to_string());
        }
    }
}

/// One push-then-pull session with the upstream.
pub async fn sync_once(st: &Arc<AppState>) -> Result<UpstreamReport, ClientError> {
    let Some(client) = &st.upstream else { return Ok(UpstreamReport::default()) };
    let _session = st.sync_session.lock().await;
    let result = session(st, client).await;
    note(st, result.as_ref().map(|_| ()));
    result
}

async fn session(st: &Arc<AppState>, client: &crate::Client) -> Result<UpstreamReport, ClientError> {
    let mut report = UpstreamReport::default();
    let (pending, certificates, node_id) = {
        let node = st.node.read().expect("node lock");
        let pending = node.pending_upstream();
        let certs = node.certificates_for(&pending);
        (pending, certs, node.id().to_string())
    };
    if !pending.is_empty() {
        report.pushed = pending.len();
        let entries = pending.iter().map(|e| BatchEntry { durable: false, envelope: e.clone() }).collect();
        let resp = client.sync_push(&SyncRequest { sender: node_id, entries, certificates }).await?;
        let refused: std::collections::BTreeSet<RecordId> = resp.faults.iter().filter_map(|f| f.record_id.clone()).collect();
        let mut node = st.node.write().expect("node lock");
        for env in &pending {
            let Ok(r) = env.decode_record() else { continue };
            if !refused.contains(&r.record_id) {
                node.mark_durable(&r.record_id).map_err(|e| ClientError::Local(e.to_string()))?;
                report.confirmed += 1;
            }
        }
        report.push_faults = resp.faults;
    }

    let mut cursor = st.node.read().expect("node lock").upstream_cursor();
    loop {
        let page = client.pull(cursor, None, PULL_PAGE).await?;
        report.pulled += page.entries.len();
        let mut node = st.node.write().expect("node lock");
        add_certificates(&mut node, page.certificates);
        let wanted: Vec<BatchEntry> = page
            .entries
            .iter()
            .filter(|e| e.envelope.decode_record().is_ok_and(|r| node.knows_patient(&r.patient_id)))
            .map(|e| BatchEntry { durable: true, envelope: e.envelope.clone() })
            .collect();
        let applied = apply_batch(&mut node, &page.sender, &wanted, Utc::now());
        report.inserted += applied.inserted;
        for f in applied.faults {
            tracing::warn!(record = ?f.record_id, code = %f.code, "upstream record refused");
        }
        cursor = page.next_cursor;
        node.set_upstream_cursor(cursor).map_err(|e| ClientError::Local(e.to_string()))?;
        if page.entries.len() < PULL_PAGE {
            break;
        }
    }
    report.cursor = cursor;

    let unstaged = st.node.read().expect("node lock").unstaged_patients();
    for patient in &unstaged {
        stage_from(st, client, patient).await?;
    }
    report.staged = unstaged.len();
    Ok(report)
}

/// Read-source resolution for a patient lookup. A LOCAL node fetches a
/// patient's history from CENTRAL once, on first contact, when it can.
/// Returns the sources consulted.
pub async fn stage_patient(st: &Arc<AppState>, patient: &PatientId) -> Vec<&'static str> {
    if st.config.role == NodeRole::Central {
        return vec!["CENTRAL"];
    }
    if st.node.read().expect("node lock").is_staged(patient) {
        return vec!["LOCAL"];
    }
    let Some(client) = &st.upstream else { return vec!["LOCAL"] };
    match stage_from(st, client, patient).await {
        Ok(()) => {
            note(st, Ok(()));
            vec!["CENTRAL", "LOCAL"]
        }
        Err(e) => {
            note(st, Err(&e));
            tracing::warn!(patient = %patient, error = %e, "upstream unreachable, serving local store only");
            vec!["LOCAL"]
        }
    }
}

async fn stage_from(st: &Arc<AppState>, client: &crate::Client, patient: &PatientId) -> Result<(), ClientError> {
    let mut cursor = 0;
    let mut pages = Vec::new();
    loop {
        let page = client.pull(cursor, Some(patient), PULL_PAGE).await?;
        let done = page.entries.len() < PULL_PAGE;
        cursor = page.next_cursor;
        pages.push(page);
        if done {
            break;
        }
    }
    let mut node = st.node.write().expect("node lock");
    let mut staged = 0;
    for page in pages {
        add_certificates(&mut node, page.certificates);
        let entries: Vec<BatchEntry> =
            page.entries.into_iter().map(|e| BatchEntry { durable: true, envelope: e.envelope }).collect();
        staged += apply_batch(&mut node, &page.sender, &entries, Utc::now()).inserted;
    }
    node.mark_staged(patient).map_err(|e| ClientError::Local(e.to_string()))?;
    tracing::info!(patient = %patient, staged, "staged history from upstream");
    Ok(())
}

/// Runs a session at start, then every `sync_interval_secs` or as soon
/// as a new record is acknowledged.
pub async fn sync_loop(st: Arc<AppState>) {
    let interval = Duration::from_secs(st.config.sync_interval_secs);
    loop {
        match sync_once(&st).await {
            Ok(r) if r.pushed + r.inserted > 0 => {
                tracing::info!(pushed = r.pushed, confirmed = r.confirmed, inserted = r.inserted, cursor = r.cursor, "upstream sync")
            }
            Ok(_) => {}
            Err(e) => tracing::warn!(error = %e, "upstream sync failed"),
        }
        tokio::select! {
            _ = tokio::time::sleep(interval) => {}
            _ = st.sync_wakeup.notified() => {}
        }
    }
}
