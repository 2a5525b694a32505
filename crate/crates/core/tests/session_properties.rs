use awac_core::allocator::{ApprovalPolicy, Allocator, TaskKind};
use awac_core::hpm::{HpmParams, IsaScore};
use awac_core::session::{
    owner_of, replay, replay_records, AnomalySchedule, LogRecord, ObjectKind, SessionConfig, SessionEngine, SessionError,
    SessionEvent, SessionPhase, ScheduleParams,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

fn engine(plan: Vec<TaskKind>, approval: ApprovalPolicy, seed: u64) -> SessionEngine {
    let cfg = SessionConfig {
        task_plan: plan,
        approval,
        ..SessionConfig::default()
    };
    let alloc = Allocator::new(cfg.env_config(), HpmParams::default());
    SessionEngine::new("s", cfg, alloc, seed).unwrap()
}

/// Scripted operators: ratings and approvals come from closures, clicks
/// hit most abnormal objects and some normal ones.
fn drive(
    e: &mut SessionEngine,
    seed: u64,
    isa: impl Fn(usize, usize) -> i32,
    approve: impl Fn(usize, usize) -> bool,
) -> Vec<SessionPhase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut live: BTreeMap<u64, (usize, ObjectKind, u64)> = BTreeMap::new();
    let mut sets_seen = 0usize;
    let mut approvals_seen = 0usize;
    let mut phases = vec![e.phase()];
    let mut t = 0;
    e.start(t).unwrap();
    while !e.is_finished() {
        t += 250;
        e.advance(t).unwrap();
        let new: Vec<LogRecord> = e.take_new_records().to_vec();
        for r in &new {
            match &r.event {
                SessionEvent::ObjectSpawn { view, object_id, kind } => {
                    live.insert(*object_id, (*view, *kind, r.t));
                }
                SessionEvent::ObjectExpire { object_id, .. } => {
                    live.remove(object_id);
                }
                SessionEvent::SetEnd { .. } => {
                    live.clear();
                    sets_seen += 1;
                }
                SessionEvent::IsaPrompt { operator, .. } => {
                    let score = IsaScore::new(isa(*operator, sets_seen)).unwrap();
                    e.submit_isa(*operator, score, t).unwrap();
                }
                SessionEvent::ApprovalPrompt { operator, .. } => {
                    e.submit_approval(*operator, approve(*operator, approvals_seen), t).unwrap();
                    approvals_seen += 1;
                }
                _ => {}
            }
        }
        if e.phase() == SessionPhase::InSet {
            let ready: Vec<(u64, usize, ObjectKind)> = live
                .iter()
                .filter(|(_, (_, _, at))| t >= at + 500)
                .map(|(id, (v, k, _))| (*id, *v, *k))
                .collect();
            for (id, view, kind) in ready {
                let p = if kind == ObjectKind::Abnormal { 0.8 } else { 0.2 };
                if rng.random::<f64>() < p {
                    let op = owner_of(e.assignment(), view).unwrap();
                    e.handle_click(op, view, Some(id), t).unwrap();
                    live.remove(&id);
                }
            }
        }
        if phases.last() != Some(&e.phase()) {
            phases.push(e.phase());
        }
    }
    phases
}

fn jsonl(records: &[LogRecord]) -> String {
    records.iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect()
}

#[test]
fn poisson_counts_within_three_sigma() {
    let params = ScheduleParams {
        n_sets: 1,
        n_views: 1,
        set_duration_ms: 60_000,
        abnormal_rate: 3.0,
        normal_rate: 1.5,
        dwell_ms: 4000,
    };
    let draws = 1000;
    let (mut abnormal, mut normal) = (0usize, 0usize);
    let mut counts = Vec::new();
    for seed in 0..draws {
        let s = AnomalySchedule::draw(&params, seed);
        let a = s.count_kind(ObjectKind::Abnormal);
        abnormal += a;
        normal += s.count_kind(ObjectKind::Normal);
        counts.push(a as f64);
    }
    let within = |got: usize, mean: f64| (got as f64 - mean).abs() <= 3.0 * mean.sqrt();
    assert!(within(abnormal, 3.0 * draws as f64), "abnormal {abnormal}");
    assert!(within(normal, 1.5 * draws as f64), "normal {normal}");
    let mean = counts.iter().sum::<f64>() / counts.len() as f64;
    let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (counts.len() - 1) as f64;
    assert!((var / mean - 1.0).abs() < 0.2, "dispersion {}", var / mean);
}

#[test]
fn full_plan_replays_to_identical_ledger() {
    let mut e = engine(TaskKind::ALL.to_vec(), ApprovalPolicy::Interactive, 21);
    drive(&mut e, 5, |op, set| if (op + set) % 2 == 0 { 2 } else { -1 }, |_, i| i % 3 != 0);
    let out = replay(jsonl(e.log()).as_bytes()).unwrap();
    assert!(out.finished);
    assert_eq!(out.ledger, *e.ledger());
    assert_eq!(out.assignment.as_ref(), Some(e.assignment()));
    assert_eq!(out.sets_completed, 24);
    assert_eq!(out.tasks_completed, 8);
    assert!(e.ledger().abnormal_hits > 0 && e.ledger().normal_hits > 0);
    match e.log().last().unwrap().event {
        SessionEvent::SessionEnd { team_total } => assert_eq!(team_total, e.ledger().team_total),
        _ => panic!("log does not end with session_end"),
    }
}

#[test]
fn same_seed_same_log() {
    let run = || {
        let mut e = engine(vec![TaskKind::G, TaskKind::E], ApprovalPolicy::Interactive, 3);
        drive(&mut e, 9, |op, _| if op == 0 { 2 } else { -2 }, |_, _| true);
        jsonl(e.log())
    };
    assert_eq!(run(), run());
}

#[test]
fn phases_follow_the_state_machine() {
    let mut e = engine(vec![TaskKind::G], ApprovalPolicy::Interactive, 1);
    let phases = drive(&mut e, 1, |op, _| if op == 0 { 2 } else { -2 }, |_, _| true);
    use SessionPhase::*;
    assert_eq!(phases.first(), Some(&Created));
    assert_eq!(phases.last(), Some(&Finished));
    // Sampled once per tick; prompts answered within the tick are skipped.
    for pair in phases.windows(2) {
        let ok = matches!(
            pair,
            [Created, InSet]
                | [InSet, IsaPrompt]
                | [InSet, ApprovalPrompt]
                | [InSet, Break]
                | [IsaPrompt, ApprovalPrompt]
                | [IsaPrompt, Break]
                | [ApprovalPrompt, Break]
                | [Break, InSet]
                | [InSet, Finished]
        );
        assert!(ok, "unexpected transition {pair:?} in {phases:?}");
    }
    assert!(phases.contains(&ApprovalPrompt));
}

#[test]
fn decreasing_timestamp_rejected_at_offending_line() {
    let mut e = engine(vec![TaskKind::A], ApprovalPolicy::Interactive, 2);
    drive(&mut e, 2, |_, _| 0, |_, _| true);
    let mut records = e.log().to_vec();
    let k = records.len() / 2;
    records[k].t = records[k - 1].t - 1;
    let err = replay(jsonl(&records).as_bytes()).unwrap_err();
    assert!(matches!(err, SessionError::Replay { line, .. } if line == k + 1), "{err}");

    let mut records = e.log().to_vec();
    records[k].seq += 5;
    assert!(matches!(replay_records(&records), Err(SessionError::Replay { line, .. }) if line == k + 1));
}

#[test]
fn tampered_score_fails_replay() {
    let mut e = engine(vec![TaskKind::A], ApprovalPolicy::Interactive, 2);
    drive(&mut e, 2, |_, _| 0, |_, _| true);
    let mut records = e.log().to_vec();
    let i = records
        .iter()
        .position(|r| matches!(r.event, SessionEvent::ScoreUpdate { .. }))
        .unwrap();
    if let SessionEvent::ScoreUpdate { delta, .. } = &mut records[i].event {
        *delta += 1;
    }
    assert!(replay_records(&records).is_err());
}

fn set_assignments(e: &SessionEngine) -> Vec<Vec<usize>> {
    e.log()
        .iter()
        .filter_map(|r| match &r.event {
            SessionEvent::SetStart { assignment, .. } => Some(assignment.views.clone()),
            _ => None,
        })
        .collect()
}

fn count(e: &SessionEngine, f: impl Fn(&SessionEvent) -> bool) -> usize {
    e.log().iter().filter(|r| f(&r.event)).count()
}

#[test]
fn task_a_has_no_prompts_and_keeps_equal_split() {
    let mut e = engine(vec![TaskKind::A], ApprovalPolicy::Interactive, 4);
    drive(&mut e, 4, |_, _| 2, |_, _| true);
    assert_eq!(count(&e, |ev| matches!(ev, SessionEvent::IsaPrompt { .. })), 0);
    assert_eq!(count(&e, |ev| matches!(ev, SessionEvent::ApprovalPrompt { .. })), 0);
    assert_eq!(set_assignments(&e), vec![vec![3, 3]; 3]);
}

#[test]
fn rejected_approval_leaves_next_assignment_unchanged() {
    let mut e = engine(vec![TaskKind::G], ApprovalPolicy::Interactive, 6);
    // Operator 0 reports overload, operator 1 underload: a shift toward 1 is proposed.
    drive(&mut e, 6, |op, _| if op == 0 { 2 } else { -2 }, |_, _| false);
    assert!(count(&e, |ev| matches!(ev, SessionEvent::ApprovalPrompt { .. })) > 0);
    assert_eq!(set_assignments(&e), vec![vec![3, 3]; 3]);
    assert_eq!(
        count(&e, |ev| matches!(ev, SessionEvent::ReallocationApplied { changed: true, .. })),
        0
    );
}

#[test]
fn accepted_approval_moves_views_to_underloaded_operator() {
    let mut e = engine(vec![TaskKind::G], ApprovalPolicy::Interactive, 6);
    drive(&mut e, 6, |op, _| if op == 0 { 2 } else { -2 }, |_, _| true);
    let a = set_assignments(&e);
    assert_eq!(a[0], vec![3, 3]);
    assert!(a[1][1] > 3, "{a:?}");
}

#[test]
fn task_h_reallocates_without_prompt() {
    let mut e = engine(vec![TaskKind::H], ApprovalPolicy::Interactive, 8);
    drive(&mut e, 8, |op, _| if op == 0 { 2 } else { -2 }, |_, _| true);
    assert_eq!(count(&e, |ev| matches!(ev, SessionEvent::ApprovalPrompt { .. })), 0);
    assert!(count(&e, |ev| matches!(ev, SessionEvent::ReallocationApplied { changed: true, .. })) > 0);
    assert_ne!(set_assignments(&e)[1], vec![3, 3]);
}
