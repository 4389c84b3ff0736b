//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::http::{Method, StatusCode};
use brewtask_admin::client::ApiClient;
use brewtask_admin::sim::{simulate, CampaignReport, Profile, SimConfig};
use brewtask_core::accounts::UserSeed;
use brewtask_core::analytics::{compliance_rate, fleiss_kappa, RatingMatrix};
use brewtask_core::clock::ManualClock;
use brewtask_core::ingestion::{batch_units, FeedQuery, FeedRegistry, FixtureFeedAdapter};
use brewtask_core::kitchen::{DataSource, GoldAnswer};
use brewtask_core::ledger::RewardSeed;
use brewtask_core::model::{
    AnswerField, Context, GoldOutcome, InstanceId, JobDraft, JobId, Judgment, JudgmentId, Money, RewardId, Role,
    SimilarityRule, SimilaritySpec, Unit, UnitId, UserId, Value, ValueKind, Values,
};
use brewtask_core::quality::{gold_injection_probability, WorkerQualityState};
use brewtask_core::routing::{compose_instance, ReservationPolicy};
use brewtask_core::storage::Store;
use brewtask_core::{Platform, PlatformConfig};
use brewtask_server::{app_state, router, ServerConfig};
use chrono::{TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value as Json;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn start() -> chrono::DateTime<Utc> {
    Utc.with_ymd_and_hms(2014, 5, 13, 9, 0, 0).unwrap()
}

fn platform(seed: u64) -> (Arc<Platform>, Arc<ManualClock>) {
    let clock = Arc::new(ManualClock::new(start()));
    let mut feeds = FeedRegistry::new();
    feeds.register("fixture", FixtureFeedAdapter::new(fixture("feed.json")));
    let p = Platform::new(
        Store::in_memory(),
        clock.clone(),
        PlatformConfig {
            reservation: ReservationPolicy::new(600).unwrap(),
            session_ttl: chrono::Duration::hours(24),
            rng_seed: seed,
        },
        feeds,
    );
    p.upsert_user(&UserSeed {
        id: "req".into(),
        display_name: None,
        role: Role::Requestor,
        api_key: "req-key".into(),
    })
    .unwrap();
    (Arc::new(p), clock)
}

fn relation_draft() -> JobDraft {
    JobDraft {
        title: Some("Relation check".into()),
        instructions: Some("Does the sentence express the relation?".into()),
        category: Some("espresso".into()),
        batch_size: Some(3),
        min_judgments: Some(3),
        reward: Some(Money::from_cents(3)),
        ui_template_ref: Some("<p>{{text}}</p>".into()),
        fields: vec![AnswerField {
            name: "relation".into(),
            kind: ValueKind::Text,
            required: true,
            options: vec!["yes".into(), "no".into()],
        }],
        ..JobDraft::default()
    }
}

fn tagging_draft() -> JobDraft {
    JobDraft {
        title: Some("Tag the photo".into()),
        instructions: Some("Add at least three tags".into()),
        category: Some("cappuccino".into()),
        batch_size: Some(3),
        min_judgments: Some(3),
        reward: Some(Money::from_cents(3)),
        ui_template_ref: Some("<img src=\"{{media_url}}\"><input name=\"tags\">".into()),
        fields: vec![AnswerField {
            name: "tags".into(),
            kind: ValueKind::List,
            required: true,
            options: vec![],
        }],
        similarity: SimilaritySpec::default().with_rule(
            "tags",
            SimilarityRule::SetJaccard {
                threshold: 0.5,
                fold_case: true,
            },
        ),
        mistake_limit: Some(0),
        ..JobDraft::default()
    }
}

fn tags(v: &[&str]) -> Values {
    BTreeMap::from([("tags".to_string(), Value::List(v.iter().map(|s| s.to_string()).collect()))])
}

/// 231 Trento photos from the feed fixture followed by `gold` Helsinki photos
/// carrying gold answers. Returns the published job.
fn tagging_job(p: &Platform, gold: usize) -> JobId {
    let feed: Vec<Json> = serde_json::from_slice(&std::fs::read(fixture("feed.json")).unwrap()).unwrap();
    let (trento, other): (Vec<&Json>, Vec<&Json>) = feed.iter().partition(|i| i["hashtag"] == "trento");
    assert_eq!(trento.len(), 231);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["media_url", "text"]).unwrap();
    for item in trento.iter().chain(other.iter().take(gold)) {
        w.write_record([item["media_url"].as_str().unwrap(), item["text"].as_str().unwrap()])
            .unwrap();
    }
    let bytes = w.into_inner().unwrap();

    let req = UserId::new("req");
    let job = p.create_job(&req, &tagging_draft()).unwrap();
    let summary = p.attach_data(&req, &job.id, &DataSource::Csv { bytes }).unwrap();
    assert_eq!(summary.units, 231 + gold);
    if gold > 0 {
        let answers: Vec<GoldAnswer> = (0..gold)
            .map(|g| GoldAnswer {
                unit_id: Unit::id_for(&job.id, (231 + g) as u32),
                values: tags(&["helsinki", "sea", "harbour"]),
            })
            .collect();
        p.set_gold(&req, &job.id, &answers).unwrap();
    }
    p.publish(&req, &job.id).unwrap();
    job.id
}

fn run_sim(p: Arc<Platform>, clock: Arc<ManualClock>, cfg: &SimConfig) -> CampaignReport {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(4)
        .enable_all()
        .build()
        .unwrap();
    rt.block_on(simulate(p, clock, cfg)).unwrap()
}

// -- batching ---------------------------------------------------------------

fn batching() -> Outcome {
    // oracle: count instances by filling batches one unit at a time
    fn by_filling(units: usize, batch: usize) -> usize {
        let (mut instances, mut open) = (0, 0);
        for _ in 0..units {
            if open == 0 {
                instances += 1;
                open = batch;
            }
            open -= 1;
        }
        instances
    }
    ensure(by_filling(1000, 3) == 334 && by_filling(231, 3) == 77, || "oracle disagrees with figures".into())?;

    let plan = batch_units(1000, 3);
    let sizes: Vec<usize> = plan.ranges().map(|r| r.len()).collect();
    ensure(sizes.len() == 334 && sizes.iter().sum::<usize>() == 1000, || format!("plan {} instances", sizes.len()))?;

    let (p, _) = platform(1);
    let req = UserId::new("req");
    let job = p.create_job(&req, &relation_draft()).unwrap();
    let bytes = std::fs::read(fixture("sentences.csv")).unwrap();
    let sentences = p.attach_data(&req, &job.id, &DataSource::Csv { bytes }).unwrap();
    ensure((sentences.units, sentences.instances) == (1000, 334), || format!("{sentences:?}"))?;

    let job = p.create_job(&req, &tagging_draft()).unwrap();
    let q = FeedQuery::new("fixture", "#trento", 10_000).unwrap();
    let photos = p.attach_data(&req, &job.id, &DataSource::Feed(q)).unwrap();
    ensure((photos.units, photos.instances) == (231, 77), || format!("{photos:?}"))?;
    Ok("1000 -> 334, 231 -> 77".into())
}

// -- gold injection ---------------------------------------------------------

fn state(incorrect: u64, correct: u64) -> WorkerQualityState {
    WorkerQualityState {
        n_incorrect: incorrect,
        n_correct: correct,
        ..WorkerQualityState::new(UserId::new("w"), JobId::new("job-0001"))
    }
}

fn gold_injection() -> Outcome {
    for (i, c, expected) in [(0, 0, 1.0), (1, 3, 0.4), (0, 9, 0.1)] {
        let p = gold_injection_probability(&state(i, c));
        ensure((p - expected).abs() <= 1e-12, || format!("p({i},{c}) = {p}, expected {expected}"))?;
    }
    for i in 0..=50u64 {
        for c in 0..=50u64 {
            let p = gold_injection_probability(&state(i, c));
            ensure((0.0..=1.0).contains(&p) && p > 0.0, || format!("p({i},{c}) = {p} out of range"))?;
            if c < 50 {
                let next = gold_injection_probability(&state(i, c + 1));
                ensure(next < p, || format!("not decreasing in correct at ({i},{c})"))?;
            }
            if i < 50 {
                let next = gold_injection_probability(&state(i + 1, c));
                ensure(next > p || (c == 0 && next == p), || format!("not increasing in incorrect at ({i},{c})"))?;
            }
        }
    }

    let target = gold_injection_probability(&state(1, 3));
    let candidates: Vec<UnitId> = (0..3).map(|i| UnitId::new(format!("u{i}"))).collect();
    let gold: Vec<UnitId> = (0..5).map(|i| UnitId::new(format!("g{i}"))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let n = 10_000;
    let hits = (0..n)
        .filter(|_| compose_instance(&candidates, &gold, target, 3, &mut rng).gold_unit.is_some())
        .count();
    let freq = hits as f64 / n as f64;
    let se = (target * (1.0 - target) / n as f64).sqrt();
    ensure((freq - target).abs() <= 3.0 * se, || format!("frequency {freq} vs {target}, se {se}"))?;

    // the same law through the real claim path: fresh workers always get gold
    let (p, _) = platform(7);
    let job = tagging_job(&p, 5);
    for k in 0..20 {
        let w = UserId::new(format!("fresh{k}"));
        p.upsert_user(&UserSeed {
            id: w.to_string(),
            display_name: None,
            role: Role::Worker,
            api_key: "k".into(),
        })
        .unwrap();
        let inst = p.claim_next(&w, &job, None).unwrap();
        ensure(inst.gold_unit.is_some(), || format!("fresh worker {k} got no gold"))?;
    }
    Ok(format!("p exact, monotone on 51x51, MC {freq:.4} vs {target} (3se = {:.4})", 3.0 * se))
}

// -- Fleiss kappa -----------------------------------------------------------

/// Definitional kappa from raw ratings: agreement counted over every ordered
/// pair of distinct raters within a subject.
fn kappa_oracle(ratings: &[Vec<usize>], k: usize) -> f64 {
    let n = ratings[0].len();
    let mut agree_sum = 0.0;
    let mut totals = vec![0usize; k];
    for subject in ratings {
        let mut agree = 0usize;
        for a in 0..n {
            totals[subject[a]] += 1;
            for b in 0..n {
                if a != b && subject[a] == subject[b] {
                    agree += 1;
                }
            }
        }
        agree_sum += agree as f64 / (n * (n - 1)) as f64;
    }
    let p_bar = agree_sum / ratings.len() as f64;
    let all = (ratings.len() * n) as f64;
    let p_e: f64 = totals.iter().map(|&t| (t as f64 / all).powi(2)).sum();
    (p_bar - p_e) / (1.0 - p_e)
}

fn to_matrix(ratings: &[Vec<usize>], k: usize) -> RatingMatrix {
    RatingMatrix::new(
        ratings
            .iter()
            .map(|s| {
                let mut row = vec![0u32; k];
                for &c in s {
                    row[c] += 1;
                }
                row
            })
            .collect(),
    )
    .unwrap()
}

fn fleiss() -> Outcome {
    for (subjects, raters, cats) in [(1, 2, 2), (10, 3, 4), (20, 6, 5)] {
        let ratings: Vec<Vec<usize>> = (0..subjects).map(|s| vec![s % cats; raters]).collect();
        let kappa = fleiss_kappa(&to_matrix(&ratings, cats)).kappa;
        ensure((kappa - 1.0).abs() <= 1e-9, || format!("perfect agreement gave {kappa}"))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(2014);
    let mut compared = 0;
    let mut worst = 0.0f64;
    while compared < 100 {
        let subjects = rng.random_range(1..=20);
        let raters = rng.random_range(2..=6);
        let cats = rng.random_range(2..=5);
        let ratings: Vec<Vec<usize>> = (0..subjects)
            .map(|_| (0..raters).map(|_| rng.random_range(0..cats)).collect())
            .collect();
        let distinct: HashSet<usize> = ratings.iter().flatten().copied().collect();
        if distinct.len() < 2 {
            // the definitional ratio is 0/0 here
            continue;
        }
        let got = fleiss_kappa(&to_matrix(&ratings, cats)).kappa;
        let want = kappa_oracle(&ratings, cats);
        worst = worst.max((got - want).abs());
        ensure((got - want).abs() <= 1e-9, || format!("{got} vs oracle {want} on {ratings:?}"))?;
        compared += 1;
    }

    let ratings: Vec<Vec<usize>> = (0..2000)
        .map(|_| (0..5).map(|_| rng.random_range(0..4)).collect())
        .collect();
    let random = fleiss_kappa(&to_matrix(&ratings, 4)).kappa;
    ensure(random.abs() < 0.05, || format!("uniform random kappa {random}"))?;
    Ok(format!("max |diff| {worst:.2e} over 100 matrices, random kappa {random:.4}"))
}

// -- simulated campaign -----------------------------------------------------

fn campaign_config(seed: u64, parallelism: usize) -> SimConfig {
    SimConfig {
        workers: 52,
        profile: Profile {
            accuracy: 0.95,
            ..Profile::default()
        },
        seed,
        parallelism,
        ..SimConfig::default()
    }
}

/// Checks the invariants against the platform directly, not the report.
fn audit(p: &Platform, job: &JobId, report: &CampaignReport) -> Result<(), String> {
    let results = p.results(&UserId::new("req"), job).map_err(|e| e.to_string())?;
    let mut pairs = HashSet::new();
    for u in &results.units {
        for j in &u.judgments {
            ensure(pairs.insert((j.worker_id.clone(), u.unit_id.clone())), || {
                format!("duplicate judgment {} on {}", j.worker_id, u.unit_id)
            })?;
        }
        if !u.gold {
            ensure(u.judgments.len() >= 3, || format!("{} has {} judgments", u.unit_id, u.judgments.len()))?;
        }
    }
    let non_gold = results.units.iter().filter(|u| !u.gold).count();
    ensure(non_gold == 231, || format!("{non_gold} non-gold units"))?;
    for w in &report.worker_reports {
        let id = UserId::new(w.worker_id.clone());
        let balance = p.balance(&id).map_err(|e| e.to_string())?;
        let log: i64 = p
            .transactions(&id)
            .map_err(|e| e.to_string())?
            .iter()
            .map(|t| t.amount.cents())
            .sum();
        ensure(balance.cents() == log && !balance.is_negative(), || {
            format!("{} balance {} vs log {log}", w.worker_id, balance.cents())
        })?;
    }
    ensure(report.duplicate_judgments == 0 && report.ledger_conserved, || "report flags a violation".into())?;
    ensure(report.non_gold_judgments >= 231 * 3, || format!("{} non-gold judgments", report.non_gold_judgments))
}

fn campaign() -> Outcome {
    let mut hashes = Vec::new();
    let mut last = None;
    for _ in 0..2 {
        let (p, clock) = platform(2014);
        let job = tagging_job(&p, 10);
        let report = run_sim(p.clone(), clock, &campaign_config(2014, 1));
        audit(&p, &job, &report)?;
        ensure(report.report_hash == report.compute_hash(), || "hash does not match report".into())?;
        hashes.push(report.report_hash.clone());
        last = Some(report);
    }
    ensure(hashes[0] == hashes[1], || format!("hashes differ: {hashes:?}"))?;

    // concurrent workers keep the invariants too
    let (p, clock) = platform(99);
    let job = tagging_job(&p, 10);
    let parallel = run_sim(p.clone(), clock, &campaign_config(99, 8));
    audit(&p, &job, &parallel)?;

    let r = last.unwrap();
    Ok(format!(
        "{} judgments ({} non-gold), min {}/unit, {} bans, {} cents paid, hash {}..",
        r.judgments,
        r.non_gold_judgments,
        r.min_judgments_per_unit,
        r.bans,
        r.total_payout_cents,
        &r.report_hash[..12]
    ))
}

// -- coupon safety ----------------------------------------------------------

fn coupon_safety() -> Outcome {
    let (p, _) = platform(5);
    let codes: Vec<String> = (0..10).map(|i| format!("CAFE-{i:03}")).collect();
    p.upsert_reward(
        &RewardSeed {
            id: RewardId::new("coffee"),
            title: "Coffee".into(),
            price: Money::from_cents(60),
            venue: "Faculty bar".into(),
        },
        &codes,
    )
    .unwrap();
    let workers = 25;
    for i in 0..workers {
        let id = format!("buyer{i:02}");
        p.upsert_user(&UserSeed {
            id: id.clone(),
            display_name: None,
            role: Role::Worker,
            api_key: format!("{id}-key"),
        })
        .unwrap();
        // 150 cents: enough for two coffees, not three
        p.adjust_balance(&UserId::new(id), Money::from_cents(150), "test funds").unwrap();
    }

    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(8)
        .enable_all()
        .build()
        .unwrap();
    let statuses = rt.block_on(async {
        let client = ApiClient::new(router(app_state(p.clone(), &ServerConfig::default())));
        let mut tokens = Vec::new();
        for i in 0..workers {
            let id = format!("buyer{i:02}");
            tokens.push(client.login(&id, &format!("{id}-key")).await.unwrap());
        }
        let mut set = tokio::task::JoinSet::new();
        for attempt in 0..100 {
            let client = client.clone();
            let token = tokens[attempt % workers].clone();
            set.spawn(async move {
                client
                    .send(Method::POST, "/cafe/rewards/coffee/purchase", Some(&token), None, None)
                    .await
                    .unwrap()
            });
        }
        let mut out = Vec::new();
        while let Some(r) = set.join_next().await {
            out.push(r.unwrap());
        }
        out
    });
    ensure(statuses.len() == 100, || "lost attempts".into())?;
    let issued: Vec<&Json> = statuses.iter().filter(|r| r.status == StatusCode::CREATED).map(|r| &r.body).collect();
    let others: HashSet<Option<&str>> =
        statuses.iter().filter(|r| r.status != StatusCode::CREATED).map(|r| r.error_code()).collect();
    ensure(issued.len() == 10, || format!("{} coupons issued", issued.len()))?;
    ensure(others.iter().all(|c| matches!(c, Some("sold_out" | "insufficient_funds"))), || {
        format!("unexpected refusals {others:?}")
    })?;
    let distinct: HashSet<&str> = issued.iter().map(|c| c["code"].as_str().unwrap()).collect();
    ensure(distinct.len() == 10, || format!("{} distinct codes", distinct.len()))?;

    let all = p.all_coupons().unwrap();
    ensure(all.len() == 10 && p.reward(&RewardId::new("coffee")).unwrap().remaining() == 0, || {
        "store disagrees with responses".into()
    })?;
    let mut per_worker: HashMap<String, i64> = HashMap::new();
    for c in &all {
        *per_worker.entry(c.worker_id.to_string()).or_default() += 1;
    }
    for i in 0..workers {
        let id = UserId::new(format!("buyer{i:02}"));
        let bal = p.balance(&id).unwrap().cents();
        let bought = per_worker.get(id.as_str()).copied().unwrap_or(0);
        ensure(bal >= 0 && bal == 150 - 60 * bought, || format!("{id}: balance {bal} after {bought} coupons"))?;
    }
    Ok("10 coupons, 10 distinct codes, 90 refused, balances >= 0".into())
}

// -- ban semantics ----------------------------------------------------------

fn ban_semantics() -> Outcome {
    let (p, clock) = platform(31);
    let job = tagging_job(&p, 10);
    let cfg = SimConfig {
        workers: 8,
        profile: Profile {
            accuracy: 0.0,
            ..Profile::default()
        },
        seed: 31,
        ..SimConfig::default()
    };
    let report = run_sim(p.clone(), clock, &cfg);
    let results = p.results(&UserId::new("req"), &job).unwrap();
    for w in &report.worker_reports {
        let id = UserId::new(w.worker_id.clone());
        let gold_judgments = results
            .units
            .iter()
            .filter(|u| u.gold)
            .flat_map(|u| &u.judgments)
            .filter(|j| j.worker_id == id)
            .count();
        let q = p.quality(&job, &id).unwrap();
        let credits = p.transactions(&id).unwrap();
        ensure(w.banned && q.banned && q.n_incorrect == 1 && q.n_correct == 0, || format!("{id}: {q:?}"))?;
        ensure(gold_judgments == 1 && w.instances_submitted == 1, || {
            format!("{id}: {gold_judgments} gold judgments over {} instances", w.instances_submitted)
        })?;
        ensure(credits.is_empty() && p.balance(&id).unwrap() == Money::ZERO, || format!("{id} was paid"))?;
        let again = p.claim_next(&id, &job, None);
        ensure(matches!(again, Err(brewtask_core::Error::NotEligible)), || format!("{id} could claim: {again:?}"))?;
    }
    Ok(format!("{} of {} workers banned after one gold judgment, 0 cents paid", report.bans, cfg.workers))
}

// -- compliance -------------------------------------------------------------

fn compliance() -> Outcome {
    let at = start();
    let judgments: Vec<Judgment> = (0..791)
        .map(|i| {
            let n_tags = if i < 737 { 3 + i % 4 } else { i % 3 };
            let unit = UnitId::new(format!("job-0001:u{:06}", i % 231));
            let worker = UserId::new(format!("w{}", i / 231));
            Judgment {
                id: JudgmentId(format!("{unit}:{worker}")),
                job_id: JobId::new("job-0001"),
                unit_id: unit,
                worker_id: worker,
                instance_id: InstanceId::new(format!("i{i}")),
                values: BTreeMap::from([(
                    "tags".to_string(),
                    Value::List((0..n_tags).map(|t| format!("tag{t}")).collect()),
                )]),
                context: Context::Unspecified,
                started_at: at,
                submitted_at: at,
                gold_outcome: None::<GoldOutcome>,
            }
        })
        .collect();
    let oracle = judgments
        .iter()
        .filter(|j| j.values["tags"].as_list().is_some_and(|l| l.len() >= 3))
        .count();
    ensure(oracle == 737, || format!("fixture has {oracle} compliant judgments"))?;
    let pct = compliance_rate(&judgments, "tags", 3).unwrap() * 100.0;
    ensure((pct - 93.17).abs() <= 0.01, || format!("{pct:.4}%"))?;
    Ok(format!("{pct:.4}% (737/791)"))
}

fn main() {
    let criteria: Vec<(&str, Duration, fn() -> Outcome)> = vec![
        ("batching 1000->334 and 231->77 exact", Duration::from_secs(1), batching),
        ("gold injection law, 1e-12 and 3 SE", Duration::from_secs(10), gold_injection),
        ("fleiss kappa vs definitional oracle, 1e-9", Duration::from_secs(30), fleiss),
        ("simulated 52-worker campaign", Duration::from_secs(60), campaign),
        ("100 concurrent purchases on 10 codes", Duration::from_secs(10), coupon_safety),
        ("ban after one wrong gold judgment, unpaid", Duration::from_secs(30), ban_semantics),
        ("compliance 737/791 = 93.17% +- 0.01", Duration::from_secs(1), compliance),
    ];
    let mut failed = 0;
    for (name, budget, run) in criteria {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run))
            .unwrap_or_else(|e| {
                Err(e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panicked".into()))
            })
            .and_then(|detail| {
                let took = t.elapsed();
                if took > budget {
                    Err(format!("took {took:.2?}, budget {budget:?}"))
                } else {
                    Ok(detail)
                }
            });
        let took = t.elapsed();
        match outcome {
            Ok(detail) => println!("PASS  {name}  [{took:.2?}]  {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}  [{took:.2?}]  {why}");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
