//! Authenticated HTTP client for the service API. Used by LOCAL nodes to
//! reach CENTRAL and by the CLI.

use std::time::Duration;

use axum::http::StatusCode;
use chrono::{DateTime, Utc};
use radsafe_core::ledger::{PatientDoseProfile, PatientId, PeriodicReport, Projection};
use radsafe_core::pki::{Certificate, Identity, RevocationList, TrustBundle};
use radsafe_core::sync::SyncBatch;
use reqwest::Method;
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::api::{
    ErrorBody, InvestigationRequest, InvestigationResponse, PkiResponse, StatusResponse, SyncRequest, SyncResponse,
    WhatIfRequest, HDR_NEXT_CURSOR, HDR_READ_SOURCES, OCTET_STREAM,
};
use crate::auth::sign_request;
use crate::node::{HistoryPage, PullPage};
use crate::upstream::UpstreamReport;

const TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("cannot reach {url}: {reason}")]
    Transport { url: String, reason: String },
    #[error("{status} {}: {}", body.error, body.message)]
    Api { status: u16, body: ErrorBody },
    #[error("unexpected response: {0}")]
    Decode(String),
    #[error("local store: {0}")]
    Local(String),
}

impl ClientError {
    /// Machine-readable error code returned by the service, if any.
    pub fn code(&self) -> Option<&str> {
        match self {
            ClientError::Api { body, .. } => Some(&body.error),
            _ => None,
        }
    }

    pub fn status(&self) -> Option<u16> {
        match self {
            ClientError::Api { status, .. } => Some(*status),
            _ => None,
        }
    }
}

pub struct Response {
    pub status: StatusCode,
    pub headers: reqwest::header::HeaderMap,
    pub body: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    identity: Option<Identity>,
    http: reqwest::Client,
}

/// Percent-encodes everything outside the RFC 3986 unreserved set.
pub fn encode_component(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'.' | b'_' | b'~' => out.push(b as char),
            _ => out.push_str(&format!("%{b:02X}")),
        }
    }
    out
}

impl Client {
    pub fn new(base: &str, identity: Identity) -> Self {
        Self::build(base, Some(identity))
    }

    /// Sends unsigned requests; only the public endpoints accept them.
    pub fn anonymous(base: &str) -> Self {
        Self::build(base, None)
    }

    fn build(base: &str, identity: Option<Identity>) -> Self {
        let http = reqwest::Client::builder().timeout(TIMEOUT).build().expect("http client");
        Self { base: base.trim_end_matches('/').to_string(), identity, http }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    /// Sends a signed request; `path_and_query` must already be encoded.
    pub async fn send(
        &self,
        method: Method,
        path_and_query: &str,
        body: Option<(&str, Vec<u8>)>,
        accept: Option<&str>,
    ) -> Result<Response, ClientError> {
        let url = format!("{}{}", self.base, path_and_query);
        let bytes = body.as_ref().map(|(_, b)| b.as_slice()).unwrap_or_default();
        let mut req = self.http.request(method.clone(), &url);
        if let Some(identity) = &self.identity {
            for (k, v) in sign_request(identity, method.as_str(), path_and_query, bytes, Utc::now()) {
                req = req.header(k, v);
            }
        }
        if let Some(a) = accept {
            req = req.header(reqwest::header::ACCEPT, a);
        }
        if let Some((ct, b)) = body {
            req = req.header(reqwest::header::CONTENT_TYPE, ct).body(b);
        }
        let resp = req.send().await.map_err(|e| ClientError::Transport { url: url.clone(), reason: e.to_string() })?;
        let status = resp.status();
        let headers = resp.headers().clone();
        let body = resp
            .bytes()
            .await
            .map_err(|e| ClientError::Transport { url, reason: e.to_string() })?
            .to_vec();
        Ok(Response { status, headers, body })
    }

    /// Decodes a JSON body when the status is one of `ok`, an error body
    /// otherwise.
    fn decode<T: DeserializeOwned>(resp: &Response, ok: &[StatusCode]) -> Result<T, ClientError> {
        if ok.contains(&resp.status) {
            return serde_json::from_slice(&resp.body).map_err(|e| ClientError::Decode(e.to_string()));
        }
        let body = serde_json::from_slice(&resp.body).unwrap_or_else(|_| ErrorBody {
            error: "HTTP_ERROR".into(),
            message: String::from_utf8_lossy(&resp.body).into_owned(),
        });
        Err(ClientError::Api { status: resp.status.as_u16(), body })
    }

    async fn get_json<T: DeserializeOwned>(&self, pq: &str) -> Result<(T, Response), ClientError> {
        let resp = self.send(Method::GET, pq, None, Some("application/json")).await?;
        Ok((Self::decode(&resp, &[StatusCode::OK])?, resp))
    }

    async fn post_json<B: Serialize, T: DeserializeOwned>(
        &self,
        pq: &str,
        body: &B,
        ok: &[StatusCode],
    ) -> Result<(T, StatusCode), ClientError> {
        let bytes = serde_json::to_vec(body).map_err(|e| ClientError::Decode(e.to_string()))?;
        let resp = self.send(Method::POST, pq, Some(("application/json", bytes)), None).await?;
        Ok((Self::decode(&resp, ok)?, resp.status))
    }

    /// The profile and the read sources the service consulted.
    pub async fn profile(
        &self,
        patient: &PatientId,
        as_of: Option<DateTime<Utc>>,
    ) -> Result<(PatientDoseProfile, Vec<String>), ClientError> {
        let mut pq = format!("/patients/{}/profile", encode_component(patient.as_str()));
        if let Some(t) = as_of {
            pq.push_str(&format!("?as_of={}", encode_component(&t.to_rfc3339())));
        }
        let (profile, resp) = self.get_json(&pq).await?;
        let sources = resp
            .headers
            .get(HDR_READ_SOURCES)
            .and_then(|v| v.to_str().ok())
            .map(|s| s.split(',').map(str::to_string).collect())
            .unwrap_or_default();
        Ok((profile, sources))
    }

    pub async fn history(&self, patient: &PatientId, cursor: Option<&str>, limit: usize) -> Result<HistoryPage, ClientError> {
        let mut pq = format!("/patients/{}/history?limit={limit}", encode_component(patient.as_str()));
        if let Some(c) = cursor {
            pq.push_str(&format!("&cursor={}", encode_component(c)));
        }
        Ok(self.get_json(&pq).await?.0)
    }

    pub async fn record(&self, req: &InvestigationRequest) -> Result<InvestigationResponse, ClientError> {
        Ok(self.post_json("/investigations", req, &[StatusCode::CREATED, StatusCode::OK]).await?.0)
    }

    pub async fn whatif(&self, req: &WhatIfRequest) -> Result<Projection, ClientError> {
        Ok(self.post_json("/whatif", req, &[StatusCode::OK]).await?.0)
    }

    /// Pushes a batch. A 422 still carries the outcome, with faults.
    pub async fn sync_push(&self, req: &SyncRequest) -> Result<SyncResponse, ClientError> {
        Ok(self.post_json("/sync", req, &[StatusCode::OK, StatusCode::UNPROCESSABLE_ENTITY]).await?.0)
    }

    pub async fn sync_push_binary(&self, batch: &SyncBatch) -> Result<SyncResponse, ClientError> {
        let bytes = batch.encode().map_err(|e| ClientError::Decode(e.to_string()))?;
        let resp = self.send(Method::POST, "/sync", Some((OCTET_STREAM, bytes)), None).await?;
        Self::decode(&resp, &[StatusCode::OK, StatusCode::UNPROCESSABLE_ENTITY])
    }

    fn pull_query(cursor: u64, patient: Option<&PatientId>, limit: usize) -> String {
        let mut pq = format!("/sync/pull?since_cursor={cursor}&limit={limit}");
        if let Some(p) = patient {
            pq.push_str(&format!("&patient={}", encode_component(p.as_str())));
        }
        pq
    }

    pub async fn pull(&self, cursor: u64, patient: Option<&PatientId>, limit: usize) -> Result<PullPage, ClientError> {
        Ok(self.get_json(&Self::pull_query(cursor, patient, limit)).await?.0)
    }

    /// Binary pull: the batch and the cursor to continue from.
    pub async fn pull_binary(
        &self,
        cursor: u64,
        patient: Option<&PatientId>,
        limit: usize,
    ) -> Result<(SyncBatch, u64), ClientError> {
        let resp = self.send(Method::GET, &Self::pull_query(cursor, patient, limit), None, Some(OCTET_STREAM)).await?;
        if resp.status != StatusCode::OK {
            return Err(Self::decode::<()>(&resp, &[]).unwrap_err());
        }
        let next = resp
            .headers
            .get(HDR_NEXT_CURSOR)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| ClientError::Decode("missing cursor header".into()))?;
        let batch = SyncBatch::decode(&resp.body).map_err(|e| ClientError::Decode(e.to_string()))?;
        Ok((batch, next))
    }

    fn report_query(from: &str, to: &str, format: &str) -> String {
        format!("/reports/periodic?from={}&to={}&format={format}", encode_component(from), encode_component(to))
    }

    pub async fn report(&self, from: &str, to: &str) -> Result<PeriodicReport, ClientError> {
        Ok(self.get_json(&Self::report_query(from, to, "json")).await?.0)
    }

    pub async fn report_csv(&self, from: &str, to: &str) -> Result<String, ClientError> {
        let resp = self.send(Method::GET, &Self::report_query(from, to, "csv"), None, Some("text/csv")).await?;
        if resp.status != StatusCode::OK {
            return Err(Self::decode::<()>(&resp, &[]).unwrap_err());
        }
        String::from_utf8(resp.body).map_err(|e| ClientError::Decode(e.to_string()))
    }

    pub async fn status(&self) -> Result<StatusResponse, ClientError> {
        Ok(self.get_json("/status").await?.0)
    }

    pub async fn sync_upstream(&self) -> Result<UpstreamReport, ClientError> {
        Ok(self.post_json("/sync/upstream", &serde_json::json!({}), &[StatusCode::OK]).await?.0)
    }

    pub async fn bundle(&self) -> Result<TrustBundle, ClientError> {
        Ok(self.get_json("/pki/bundle").await?.0)
    }

    pub async fn add_certificate(&self, cert: &Certificate) -> Result<PkiResponse, ClientError> {
        Ok(self.post_json("/pki/certificates", cert, &[StatusCode::CREATED, StatusCode::OK]).await?.0)
    }

    pub async fn add_crl(&self, crl: &RevocationList) -> Result<PkiResponse, ClientError> {
        Ok(self.post_json("/pki/crls", crl, &[StatusCode::OK]).await?.0)
    }
}
