mod common;

use chrono::Duration;
use common::{t0, Fx};
use radsafe_core::ledger::{create_record, PatientId};
use radsafe_core::pki::{
    personalize_card, replace_card, CardCommand, CardContext, CardImage, CardKind, CardRegistry, CardResponse,
    PkiError, RecordSigner, RejectReason, Role, PIN_ATTEMPTS,
};
use radsafe_core::sync::{ReplicaKind, ReplicaStore};

fn ctx(fx: &Fx) -> CardContext<'_> {
    CardContext { now: t0() + Duration::days(1), verifier: Some(&fx.trust) }
}

#[test]
fn personalization_sets_role_and_fresh_keys() {
    let mut fx = Fx::new(20);
    let year = Duration::days(365);
    let c = personalize_card(&fx.ca, CardKind::Crsc, "P1", "1111", 8, t0(), year, &mut fx.rng).unwrap();
    let p = personalize_card(&fx.ca, CardKind::Prsc, "dr-x", "2222", 0, t0(), year, &mut fx.rng).unwrap();
    let p2 = personalize_card(&fx.ca, CardKind::Prsc, "dr-x", "2222", 0, t0(), year, &mut fx.rng).unwrap();
    assert_eq!(c.cert().role(), Role::Citizen);
    assert_eq!(p.cert().role(), Role::Professional);
    assert_ne!(p.cert().id(), p2.cert().id());
    assert_ne!(p.cert().body.public_key, p2.cert().body.public_key);
    assert!(c.store().is_empty());
    assert_eq!(c.store().kind(), ReplicaKind::Card);
}

#[test]
fn expired_ca_cannot_personalize() {
    let mut fx = Fx::new(21);
    let late = t0() + Duration::days(8000);
    let r = personalize_card(&fx.ca, CardKind::Crsc, "P1", "1", 8, late, Duration::days(10), &mut fx.rng);
    assert!(matches!(r, Err(PkiError::Issuance(_))));
}

#[test]
fn pin_gates_signing_and_locks_after_three_misses() {
    let mut fx = Fx::new(22);
    let mut card =
        personalize_card(&fx.ca, CardKind::Prsc, "dr-x", "4321", 0, t0(), Duration::days(365), &mut fx.rng).unwrap();
    let now = t0() + Duration::days(1);
    assert_eq!(card.sign_payload(b"x", now), Err(PkiError::PinRequired));
    card.unlock("4321", now).unwrap();
    let sig = card.sign_payload(b"payload", now).unwrap();
    assert!(card.cert().body.public_key.verify(b"payload", &sig));
    assert!(!card.cert().body.public_key.verify(b"payloae", &sig));
    assert_eq!(card.sign_payload(b"x", now + Duration::days(400)), Err(PkiError::CertificateNotValid(card.cert().id().clone())));

    card.remove();
    for left in (1..PIN_ATTEMPTS).rev() {
        assert_eq!(card.unlock("0000", now), Err(PkiError::WrongPin { remaining: left }));
    }
    assert_eq!(card.unlock("0000", now), Err(PkiError::CardLocked));
    assert_eq!(card.unlock("4321", now), Err(PkiError::CardLocked));
    assert_eq!(card.sign_payload(b"x", now), Err(PkiError::CardLocked));
}

#[test]
fn command_interface_and_image_round_trip() {
    let mut fx = Fx::new(23);
    let mut card =
        personalize_card(&fx.ca, CardKind::Crsc, "P1", "1111", 4, t0(), Duration::days(365), &mut fx.rng).unwrap();
    fx.trust.add_certificate(card.cert().clone());
    let mine = fx.head_ct("P1", t0() + Duration::hours(2), 1.0);
    let theirs = fx.head_ct("P2", t0() + Duration::hours(3), 1.0);
    let mut bad = fx.head_ct("P1", t0() + Duration::hours(4), 1.0);
    bad.signature[3] ^= 0x10;
    let c = ctx(&fx);
    let r = card.execute(CardCommand::Append { envelopes: vec![mine.clone(), theirs, bad] }, &c).unwrap();
    let CardResponse::Appended(res) = r else { panic!("unexpected {r:?}") };
    assert_eq!(res.inserted.len(), 1);
    assert_eq!(res.skipped, 1);
    assert_eq!(res.faults.len(), 1);
    assert_eq!(res.faults[0].1, "BAD_SIGNATURE");
    let r = card.execute(CardCommand::ReadRecords, &c).unwrap();
    assert_eq!(r, CardResponse::Records { envelopes: vec![mine] });

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("card.json");
    CardImage::save(&card, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.contains("\"kind\":\"CRSC\""));
    let mut loaded = CardImage::load(&path).unwrap();
    assert_eq!(loaded.store(), card.store());
    assert_eq!(loaded.sign_payload(b"x", c.now), Err(PkiError::PinRequired));
}

#[test]
fn card_signed_record_is_refused_for_citizen_and_accepted_for_professional() {
    let mut fx = Fx::new(24);
    let mut prsc =
        personalize_card(&fx.ca, CardKind::Prsc, "dr-x", "1", 0, t0(), Duration::days(365), &mut fx.rng).unwrap();
    let mut crsc =
        personalize_card(&fx.ca, CardKind::Crsc, "P1", "1", 4, t0(), Duration::days(365), &mut fx.rng).unwrap();
    fx.trust.add_certificate(prsc.cert().clone());
    fx.trust.add_certificate(crsc.cert().clone());
    let at = t0() + Duration::days(2);
    prsc.unlock("1", at).unwrap();
    crsc.unlock("1", at).unwrap();
    let input = radsafe_core::dose::DoseInput::Catalog { exam: "head".into() };
    let ok = create_record(Fx::inputs("P1", at, "head", input.clone()), &fx.engine, &mut prsc, &fx.trust, &mut fx.rng);
    assert!(ok.is_ok());
    let no = create_record(Fx::inputs("P1", at, "head", input), &fx.engine, &mut crsc, &fx.trust, &mut fx.rng);
    assert!(matches!(no, Err(radsafe_core::ledger::LedgerError::Unauthorized(RejectReason::SignerNotAuthorized))));
}

#[test]
fn replacement_restores_central_history_and_revokes_old_card() {
    let mut fx = Fx::new(25);
    let year = Duration::days(365);
    let old = personalize_card(&fx.ca, CardKind::Crsc, "P1", "1", 8, t0(), year, &mut fx.rng).unwrap();
    fx.trust.add_certificate(old.cert().clone());
    let mut registry = CardRegistry::default();
    registry.register(&old);
    let mut central = ReplicaStore::new(ReplicaKind::Central, "CENTRAL");
    let now = t0() + Duration::days(60);
    for i in 0..5 {
        let env = fx.head_ct("P1", t0() + Duration::days(i + 1), 1.0);
        central.admit(&env, &fx.trust, now, "test").unwrap();
    }
    let other = fx.head_ct("P2", t0() + Duration::days(3), 1.0);
    central.admit(&other, &fx.trust, now, "test").unwrap();

    let mut ca = fx.ca.clone();
    let rep = replace_card(&mut registry, &mut ca, &central, "P1", "9", 8, now, year, &mut fx.rng).unwrap();
    let p1 = PatientId::new("P1");
    let want: std::collections::BTreeSet<_> =
        central.envelopes_for(&p1).iter().map(|e| e.decode_record().unwrap().record_id).collect();
    assert_eq!(rep.card.store().id_set(), want);
    assert_ne!(rep.card.cert().id(), old.cert().id());
    assert_eq!(registry.current("P1"), Some(rep.card.cert().id()));

    fx.trust.add_certificate(rep.card.cert().clone());
    fx.trust.add_crl(rep.crl.clone()).unwrap();
    assert_eq!(fx.trust.verify_chain(old.cert().id(), now + Duration::days(1)), Err(RejectReason::Revoked));
    assert!(fx.trust.verify_chain(old.cert().id(), now - Duration::days(1)).is_ok());

    // capacity below history: most recent first
    let rep2 = replace_card(&mut registry, &mut ca, &central, "P1", "9", 3, now, year, &mut fx.rng).unwrap();
    let newest: Vec<_> = central.envelopes_for(&p1).iter().rev().take(3).map(|e| e.decode_record().unwrap().record_id).collect();
    assert_eq!(rep2.card.store().id_set(), newest.into_iter().collect());

    let unknown = replace_card(&mut registry, &mut ca, &central, "P9", "9", 3, now, year, &mut fx.rng);
    assert!(matches!(unknown, Err(PkiError::UnknownHolder(_))));

    let fresh = personalize_card(&ca, CardKind::Crsc, "P7", "1", 8, t0(), year, &mut fx.rng).unwrap();
    registry.register(&fresh);
    let empty = replace_card(&mut registry, &mut ca, &central, "P7", "1", 8, now, year, &mut fx.rng).unwrap();
    assert!(empty.card.store().is_empty());
}
