use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use brewtask_admin::sim::{simulate, CampaignReport, Profile, SimConfig, SimError};
use brewtask_core::accounts::UserSeed;
use brewtask_core::clock::ManualClock;
use brewtask_core::ingestion::FeedRegistry;
use brewtask_core::kitchen::{DataSource, GoldAnswer};
use brewtask_core::model::{AnswerField, JobDraft, JobId, Money, Role, Unit, UserId, Value, ValueKind};
use brewtask_core::routing::ReservationPolicy;
use brewtask_core::storage::Store;
use brewtask_core::{Platform, PlatformConfig};
use chrono::{TimeZone, Utc};

fn platform(seed: u64) -> (Arc<Platform>, Arc<ManualClock>) {
    let clock = Arc::new(ManualClock::new(Utc.with_ymd_and_hms(2014, 5, 13, 9, 0, 0).unwrap()));
    let p = Platform::new(
        Store::in_memory(),
        clock.clone(),
        PlatformConfig {
            reservation: ReservationPolicy::new(600).unwrap(),
            session_ttl: chrono::Duration::hours(24),
            rng_seed: seed,
        },
        FeedRegistry::new(),
    );
    p.upsert_user(&UserSeed {
        id: "req".into(),
        display_name: None,
        role: Role::Requestor,
        api_key: "k".into(),
    })
    .unwrap();
    (Arc::new(p), clock)
}

/// A published yes/no job with `rows` units, the last `gold` of them gold.
fn job(p: &Platform, rows: usize, gold: usize, publish: bool) -> JobId {
    let req = UserId::new("req");
    let draft = JobDraft {
        title: Some("Relation".into()),
        instructions: Some("yes or no".into()),
        category: Some("Espresso".into()),
        batch_size: Some(3),
        reward: Some(Money::from_cents(3)),
        ui_template_ref: Some("<p>{{text}}</p>".into()),
        fields: vec![AnswerField {
            name: "relation".into(),
            kind: ValueKind::Text,
            required: true,
            options: vec!["yes".into(), "no".into()],
        }],
        mistake_limit: Some(0),
        ..JobDraft::default()
    };
    let job = p.create_job(&req, &draft).unwrap();
    let mut csv = String::from("text\n");
    for i in 0..rows {
        csv.push_str(&format!("s{i}\n"));
    }
    p.attach_data(&req, &job.id, &DataSource::Csv { bytes: csv.into_bytes() })
        .unwrap();
    let answers: Vec<GoldAnswer> = (rows - gold..rows)
        .map(|i| GoldAnswer {
            unit_id: Unit::id_for(&job.id, i as u32),
            values: BTreeMap::from([("relation".to_string(), Value::from("no"))]),
        })
        .collect();
    if !answers.is_empty() {
        p.set_gold(&req, &job.id, &answers).unwrap();
    }
    if publish {
        p.publish(&req, &job.id).unwrap();
    }
    job.id
}

fn config(workers: usize, accuracy: f64, seed: u64) -> SimConfig {
    SimConfig {
        workers,
        profile: Profile {
            accuracy,
            ..Profile::default()
        },
        seed,
        ..SimConfig::default()
    }
}

async fn campaign(rows: usize, gold: usize, cfg: &SimConfig) -> (Arc<Platform>, JobId, CampaignReport) {
    let (p, clock) = platform(cfg.seed);
    let id = job(&p, rows, gold, true);
    let report = simulate(p.clone(), clock, cfg).await.unwrap();
    (p, id, report)
}

fn assert_invariants(p: &Platform, job: &JobId, r: &CampaignReport) {
    let results = p.results(&UserId::new("req"), job).unwrap();
    let mut seen = HashSet::new();
    for u in &results.units {
        for j in &u.judgments {
            assert!(seen.insert((j.worker_id.clone(), u.unit_id.clone())), "duplicate");
        }
        if !u.gold {
            assert!(u.judgments.len() >= 3, "{} under-judged", u.unit_id);
        }
    }
    assert_eq!(r.duplicate_judgments, 0);
    assert!(r.ledger_conserved);
    assert_eq!(r.report_hash, r.compute_hash());
    for w in &r.worker_reports {
        assert_eq!(w.balance_cents, p.balance(&UserId::new(w.worker_id.clone())).unwrap().cents());
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn same_seed_same_report() {
    let cfg = config(10, 0.9, 77);
    let (p, id, a) = campaign(30, 3, &cfg).await;
    assert_invariants(&p, &id, &a);
    let (_, _, b) = campaign(30, 3, &cfg).await;
    assert_eq!(a, b);
    let (_, _, c) = campaign(30, 3, &config(10, 0.9, 78)).await;
    assert_ne!(a.report_hash, c.report_hash);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn accurate_workers_finalize_everything() {
    let (p, id, r) = campaign(27, 0, &config(5, 1.0, 3)).await;
    assert_invariants(&p, &id, &r);
    assert_eq!(r.units_finalized, 27);
    assert_eq!(r.bans, 0);
    assert_eq!(r.min_judgments_per_unit, 3);
    assert!(r.judgments >= 27 * 3);
    assert_eq!(r.total_payout_cents, 3 * r.instances_submitted as i64);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn inaccurate_workers_all_banned_after_first_gold() {
    let (p, id, r) = campaign(30, 3, &config(6, 0.0, 5)).await;
    assert_eq!(r.bans, 6);
    for w in &r.worker_reports {
        assert!(w.banned);
        assert_eq!((w.gold_judgments, w.instances_submitted, w.balance_cents), (1, 1, 0));
    }
    assert_eq!(r.gold_judgments, 6);
    let q = p.quality(&id, &UserId::new("sim-w001")).unwrap();
    assert!(q.banned && q.n_incorrect == 1);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn abandoned_reservations_lapse_and_are_reassigned() {
    let mut cfg = config(6, 1.0, 11);
    cfg.profile.abandon_rate = 0.3;
    let (p, id, r) = campaign(24, 0, &cfg).await;
    assert!(r.instances_abandoned > 0, "{r:?}");
    assert_invariants(&p, &id, &r);
    assert_eq!(r.units_finalized, 24);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_workers_keep_invariants() {
    let mut cfg = config(16, 0.95, 21);
    cfg.parallelism = 8;
    let (p, id, r) = campaign(60, 4, &cfg).await;
    assert_invariants(&p, &id, &r);
}

#[tokio::test]
async fn needs_a_published_job() {
    let (p, clock) = platform(1);
    let draft = job(&p, 3, 0, false);
    let err = simulate(p.clone(), clock.clone(), &config(2, 1.0, 1)).await.unwrap_err();
    assert!(matches!(err, SimError::NoPublishedJobs), "{err}");
    let mut cfg = config(2, 1.0, 1);
    cfg.job = Some(draft);
    let err = simulate(p, clock, &cfg).await.unwrap_err();
    assert!(matches!(err, SimError::JobNotPublished(_)), "{err}");
}
