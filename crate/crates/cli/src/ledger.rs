use std::path::Path;

use chrono::{DateTime, Utc};
use radsafe_core::dose::{DoseEngine, LimitPolicy, SubjectKind};
use radsafe_core::ledger::{
    build_profile, create_record_with_id, profile_from_records, whatif, InvestigationInputs, LedgerError, PatientDoseProfile,
    PatientId,
    ProposedExam, RecordId, RecordKind, RecordVerifier, SignedEnvelope,
};
use radsafe_core::pki::{
    AppendResult, CardCommand, CardContext, CardImage, CardKind, CardResponse, EmulatedCard, Identity, PkiError,
    RecordSigner, TrustStore,
};
use radsafe_core::sync::BatchEntry;
use radsafe_service::api::{IngestStatus, InvestigationRequest, SyncRequest, WhatIfRequest};
use radsafe_service::node::Ingest;
use serde_json::json;

use crate::args::{ProfileArgs, RecordArgs, ReportArgs, ReportFormat, SyncCardArgs, UpstreamArgs, WhatifArgs};
use crate::error::{CliError, CliResult, Exit};
use crate::render;
use crate::target::Backend;
use crate::util::{dose_input, load_trust, msv, opt_time, parse_time, read_json};
use crate::Out;

const HISTORY_PAGE: usize = 500;

/// Loads a professional card and verifies its PIN. The image is saved
/// again either way so failed attempts count.
fn unlock_prsc(path: &Path, pin: Option<&str>) -> CliResult<EmulatedCard> {
    let mut card = CardImage::load(path)?;
    if card.kind() != CardKind::Prsc {
        return Err(CliError::usage(format!("{} is not a professional card", path.display())));
    }
    let pin = pin.ok_or_else(|| CliError::usage("--prsc needs --pin"))?;
    let result = card.unlock(pin, Utc::now());
    CardImage::save(&card, path)?;
    result?;
    Ok(card)
}

fn load_citizen_card(path: &Path) -> CliResult<EmulatedCard> {
    let card = CardImage::load(path)?;
    if card.kind() != CardKind::Crsc {
        return Err(CliError::usage(format!("{} is not a citizen card", path.display())));
    }
    Ok(card)
}

fn append_to_card(card: &mut EmulatedCard, envs: Vec<SignedEnvelope>, trust: &TrustStore, engine: &DoseEngine) -> CliResult<AppendResult> {
    let verifier = RecordVerifier { trust, engine };
    let ctx = CardContext { now: Utc::now(), verifier: Some(&verifier) };
    match card.execute(CardCommand::Append { envelopes: envs }, &ctx)? {
        CardResponse::Appended(r) => Ok(r),
        other => Err(PkiError::Unsupported(format!("unexpected card response {other:?}")).into()),
    }
}

fn mark_on_card(card: &mut EmulatedCard, ids: Vec<RecordId>) -> CliResult<usize> {
    let ctx = CardContext { now: Utc::now(), verifier: None };
    match card.execute(CardCommand::MarkDurable { record_ids: ids }, &ctx)? {
        CardResponse::Marked { count } => Ok(count),
        other => Err(PkiError::Unsupported(format!("unexpected card response {other:?}")).into()),
    }
}

fn build_inputs(a: &RecordArgs, operator: Option<&str>, facility: Option<&str>) -> CliResult<InvestigationInputs> {
    if let Some(path) = &a.input {
        return read_json(path);
    }
    let raw_input = dose_input(&a.dose)?.ok_or_else(|| CliError::usage("give a dose: --dap, --ctdi, --dlp or --catalog"))?;
    Ok(InvestigationInputs {
        patient_id: PatientId::new(a.patient.as_deref().expect("required by clap")),
        patient_age_years: a.age,
        performed_at: opt_time(a.at.as_deref())?,
        facility_id: a
            .facility
            .as_deref()
            .or(facility)
            .ok_or_else(|| CliError::usage("--facility is required"))?
            .to_string(),
        operator_id: a
            .operator
            .as_deref()
            .or(operator)
            .ok_or_else(|| CliError::usage("--operator is required"))?
            .to_string(),
        exam_type: a.exam.clone().expect("required by clap"),
        raw_input,
        kind: RecordKind::Original,
    })
}

fn record_id(a: &RecordArgs) -> RecordId {
    a.record_id.clone().map(RecordId).unwrap_or_else(|| RecordId::random(&mut rand::rng()))
}

struct Recorded {
    status: IngestStatus,
    envelope: SignedEnvelope,
    stored_in: Vec<String>,
}

pub async fn record(a: &RecordArgs) -> CliResult<Out> {
    let backend = Backend::open(&a.target)?;
    let mut prsc = a.prsc.as_deref().map(|p| unlock_prsc(p, a.pin.as_deref())).transpose()?;
    let engine = DoseEngine::builtin();
    let id = record_id(a);

    let (recorded, trust) = match backend {
        Some(Backend::Remote(client)) => {
            let caller: Identity = read_json(a.target.identity.as_deref().expect("checked by Backend::open"))?;
            let req = match &mut prsc {
                Some(card) => {
                    let inputs = build_inputs(a, Some(card.holder()), None)?;
                    let mut trust = TrustStore::from_bundle(client.bundle().await?)?;
                    trust.add_certificate(card.cert().clone());
                    let envelope = create_record_with_id(id, inputs, &engine, card, &trust)?;
                    InvestigationRequest::Envelope { envelope, certificates: vec![card.cert().clone()] }
                }
                None => InvestigationRequest::Raw {
                    record_id: id,
                    inputs: build_inputs(a, Some(&caller.certificate.body.subject.name), None)?,
                },
            };
            let r = client.record(&req).await?;
            let trust = match &a.card {
                Some(_) => Some(TrustStore::from_bundle(client.bundle().await?)?),
                None => None,
            };
            (Recorded { status: r.status, envelope: r.envelope, stored_in: vec![client.base().to_string()] }, trust)
        }
        Some(Backend::Local { mut node, config }) => {
            let facility = config.node_id.strip_prefix("LOCAL:").unwrap_or(&config.node_id).to_string();
            let envelope = match &mut prsc {
                Some(card) => {
                    node.add_certificate(card.cert().clone()).map_err(|r| CliError::from(LedgerError::Unauthorized(r)))?;
                    let inputs = build_inputs(a, Some(card.holder()), Some(&facility))?;
                    create_record_with_id(id, inputs, node.engine(), card, node.trust())?
                }
                None => {
                    let identity: Identity = read_json(&config.identity)?;
                    let mut signer = identity.signer()?;
                    let inputs = build_inputs(a, Some(&identity.certificate.body.subject.name), Some(&facility))?;
                    create_record_with_id(id, inputs, node.engine(), &mut signer, node.trust())?
                }
            };
            let status = match node.ingest(&envelope, "cli", false, Utc::now())? {
                Ingest::Inserted(_) => IngestStatus::Created,
                Ingest::Duplicate(_) => IngestStatus::Duplicate,
            };
            (Recorded { status, envelope, stored_in: vec![node.id().to_string()] }, Some(node.trust().clone()))
        }
        None => {
            if a.card.is_none() {
                return Err(CliError::usage("give --server, --config or a patient --card"));
            }
            let mut trust = load_trust(a.trust.as_deref().ok_or_else(|| CliError::usage("card-only recording needs --trust"))?)?;
            let envelope = match &mut prsc {
                Some(card) => {
                    trust.add_certificate(card.cert().clone());
                    let inputs = build_inputs(a, Some(card.holder()), None)?;
                    create_record_with_id(id, inputs, &engine, card, &trust)?
                }
                None => {
                    let path = a.target.identity.as_deref().ok_or_else(|| CliError::usage("give --prsc or --identity to sign"))?;
                    let identity: Identity = read_json(path)?;
                    let mut signer = identity.signer()?;
                    let inputs = build_inputs(a, Some(&signer.certificate().body.subject.name.clone()), None)?;
                    create_record_with_id(id, inputs, &engine, &mut signer, &trust)?
                }
            };
            (Recorded { status: IngestStatus::Created, envelope, stored_in: vec![] }, Some(trust))
        }
    };
    if let Some(card) = &prsc {
        CardImage::save(card, a.prsc.as_deref().expect("card came from --prsc"))?;
    }

    let Recorded { mut status, envelope, mut stored_in } = recorded;
    if let Some(path) = &a.card {
        let mut card = load_citizen_card(path)?;
        let trust = trust.expect("trust resolved whenever --card is given");
        let res = append_to_card(&mut card, vec![envelope.clone()], &trust, &engine)?;
        if let Some((_, code)) = res.faults.first() {
            return Err(CliError::new(Exit::Verification, code, "the patient card refused the record"));
        }
        if stored_in.is_empty() && res.inserted.is_empty() {
            status = IngestStatus::Duplicate;
        }
        CardImage::save(&card, path)?;
        if res.skipped == 0 {
            stored_in.push(card.store().id().to_string());
        }
    }

    let r = envelope.decode_record()?;
    let status_text = match status {
        IngestStatus::Created => "created",
        IngestStatus::Duplicate => "duplicate",
    };
    Ok(Out::new(
        json!({
            "status": status,
            "record_id": r.record_id,
            "patient_id": r.patient_id,
            "exam_type": r.exam_type,
            "effective_dose_msv": r.effective_msv(),
            "stored_in": stored_in,
            "envelope": envelope,
        }),
        format!(
            "record {} ({status_text})\npatient {} {}: effective dose {}\nstored in {}\n",
            r.record_id,
            r.patient_id,
            r.exam_type,
            msv(r.effective_msv()),
            if stored_in.is_empty() { "-".to_string() } else { stored_in.join(", ") }
        ),
    ))
}

fn empty_profile(patient: &PatientId, as_of: DateTime<Utc>, engine: &DoseEngine, policy: &LimitPolicy) -> CliResult<PatientDoseProfile> {
    Ok(profile_from_records(&[], patient, as_of, policy, SubjectKind::Patient, engine)?)
}

fn card_profile(card: &Path, trust: Option<&Path>, patient: &PatientId, as_of: DateTime<Utc>) -> CliResult<PatientDoseProfile> {
    let card = load_citizen_card(card)?;
    let trust = load_trust(trust.ok_or_else(|| CliError::usage("reading a card needs --trust"))?)?;
    let engine = DoseEngine::builtin();
    let verifier = RecordVerifier { trust: &trust, engine: &engine };
    Ok(build_profile(card.store().envelopes(), patient, as_of, &LimitPolicy::default(), &verifier, &engine)?)
}

pub async fn profile(a: &ProfileArgs) -> CliResult<Out> {
    let as_of = opt_time(a.as_of.as_deref())?;
    let patient = PatientId::new(&a.patient);
    let (profile, sources) = if let Some(card) = &a.card {
        let holder = format!("CARD:{patient}");
        (card_profile(card, a.trust.as_deref(), &patient, as_of)?, vec![holder])
    } else {
        match Backend::require(&a.target)? {
            Backend::Remote(client) => match client.profile(&patient, Some(as_of)).await {
                Ok(x) => x,
                Err(e) if e.code() == Some("UNKNOWN_PATIENT") => {
                    (empty_profile(&patient, as_of, &DoseEngine::builtin(), &LimitPolicy::default())?, vec![])
                }
                Err(e) => return Err(e.into()),
            },
            Backend::Local { node, .. } => {
                let p = match node.profile(&patient, as_of)? {
                    Some(p) => p,
                    None => empty_profile(&patient, as_of, node.engine(), node.policy())?,
                };
                (p, vec![node.id().to_string()])
            }
        }
    };
    let text = render::profile(&profile, &sources);
    Ok(Out::new(json!({"profile": profile, "read_sources": sources}), text))
}

pub async fn whatif_cmd(a: &WhatifArgs) -> CliResult<Out> {
    let as_of = opt_time(a.as_of.as_deref())?;
    let patient = PatientId::new(&a.patient);
    let input = dose_input(&a.dose)?;
    let proposed = ProposedExam { exam_type: a.exam.clone(), input: input.clone() };
    let projection = if let Some(card) = &a.card {
        let profile = card_profile(card, a.trust.as_deref(), &patient, as_of)?;
        whatif(&profile, &proposed, &DoseEngine::builtin(), &LimitPolicy::default())?
    } else {
        match Backend::require(&a.target)? {
            Backend::Remote(client) => {
                let req = WhatIfRequest { patient_id: patient, as_of: Some(as_of), exam_type: a.exam.clone(), input };
                client.whatif(&req).await?
            }
            Backend::Local { node, .. } => node.whatif(&patient, as_of, &proposed)?,
        }
    };
    let text = render::projection(&projection);
    Ok(Out::new(serde_json::to_value(&projection).expect("projection encodes"), text))
}

pub async fn report(a: &ReportArgs) -> CliResult<Out> {
    let csv = a.format == Some(ReportFormat::Csv);
    let report = match Backend::require(&a.target)? {
        Backend::Remote(client) if csv => return Ok(Out::raw(client.report_csv(&a.from, &a.to).await?)),
        Backend::Remote(client) => client.report(&a.from, &a.to).await?,
        Backend::Local { node, .. } => node.report(parse_time(&a.from, false)?, parse_time(&a.to, true)?)?,
    };
    if csv {
        return Ok(Out::raw(report.to_csv()));
    }
    let text = render::report(&report);
    Ok(Out::new(serde_json::to_value(&report).expect("report encodes"), text))
}

pub async fn sync_upstream(a: &UpstreamArgs) -> CliResult<Out> {
    let Backend::Remote(client) = Backend::require(&a.target)? else {
        return Err(CliError::usage("an upstream sync runs inside the LOCAL service; give --server"));
    };
    let r = client.sync_upstream().await?;
    Ok(Out::new(
        serde_json::to_value(&r).expect("report encodes"),
        format!(
            "pushed {} (confirmed {}, refused {}), pulled {} (inserted {}), staged {} patients, cursor {}\n",
            r.pushed,
            r.confirmed,
            r.push_faults.len(),
            r.pulled,
            r.inserted,
            r.staged,
            r.cursor
        ),
    ))
}

pub async fn sync_card(a: &SyncCardArgs) -> CliResult<Out> {
    let mut card = load_citizen_card(&a.card)?;
    let patient = PatientId::new(card.holder());
    let sender = card.store().id().to_string();
    let engine = DoseEngine::builtin();
    let outgoing: Vec<BatchEntry> = card
        .store()
        .envelopes()
        .map(|e| {
            let durable = e.decode_record().is_ok_and(|r| card.store().is_durable(&r.record_id));
            BatchEntry { durable, envelope: e.clone() }
        })
        .collect();

    let mut to_store = json!({});
    let mut incoming: Vec<(SignedEnvelope, bool)> = Vec::new();
    let trust = match Backend::require(&a.target)? {
        Backend::Remote(client) => {
            let r = client.sync_push(&SyncRequest { sender, entries: outgoing, certificates: vec![] }).await?;
            to_store = json!({"inserted": r.inserted, "duplicates": r.duplicates, "faults": r.faults});
            let mut cursor: Option<String> = None;
            loop {
                let page = match client.history(&patient, cursor.as_deref(), HISTORY_PAGE).await {
                    Ok(p) => p,
                    Err(e) if e.code() == Some("UNKNOWN_PATIENT") => break,
                    Err(e) => return Err(e.into()),
                };
                incoming.extend(page.entries.into_iter().map(|e| (e.envelope, e.durable)));
                match page.next_cursor {
                    Some(c) => cursor = Some(c),
                    None => break,
                }
            }
            TrustStore::from_bundle(client.bundle().await?)?
        }
        Backend::Local { mut node, .. } => {
            let (mut inserted, mut duplicates, mut faults) = (0, 0, Vec::new());
            let now = Utc::now();
            for e in &outgoing {
                match node.ingest(&e.envelope, &sender, e.durable, now) {
                    Ok(Ingest::Inserted(_)) => inserted += 1,
                    Ok(Ingest::Duplicate(_)) => duplicates += 1,
                    Err(err) => faults.push(json!({"code": err.code(), "message": err.to_string()})),
                }
            }
            to_store = json!({"inserted": inserted, "duplicates": duplicates, "faults": faults});
            let mut cursor: Option<String> = None;
            loop {
                let page = node.history(&patient, cursor.as_deref(), HISTORY_PAGE)?;
                incoming.extend(page.entries.into_iter().map(|e| (e.envelope, e.durable)));
                match page.next_cursor {
                    Some(c) => cursor = Some(c),
                    None => break,
                }
            }
            node.trust().clone()
        }
    };

    let durable: Vec<RecordId> =
        incoming.iter().filter(|(_, d)| *d).filter_map(|(e, _)| e.decode_record().ok().map(|r| r.record_id)).collect();
    let res = append_to_card(&mut card, incoming.into_iter().map(|(e, _)| e).collect(), &trust, &engine)?;
    let marked = mark_on_card(&mut card, durable)?;
    CardImage::save(&card, &a.card)?;
    let text = format!(
        "card {} -> store: {}\nstore -> card: {} inserted, {} evicted, {} skipped, {} refused; {} marked durable\ncard holds {} records\n",
        card.holder(),
        to_store,
        res.inserted.len(),
        res.evicted.len(),
        res.skipped,
        res.faults.len(),
        marked,
        card.store().len()
    );
    Ok(Out::new(
        json!({"card": card.store().id(), "to_store": to_store, "to_card": res, "marked_durable": marked, "card_records": card.store().len()}),
        text,
    ))
}
