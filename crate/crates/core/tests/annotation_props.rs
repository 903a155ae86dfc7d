use std::sync::Arc;

use lastmeter_core::annotations::{
    classify, schedule, AccessMode, Anchor, AnnotationStore, Category, CategoryPrefs, MessageKey, Outcome, QueuedMessage,
    TriggerEngine, CRITICAL_RADIUS_M, DEFAULT_RADIUS_M, SKIP_BOUND_S, VIBRATION_S,
};
use lastmeter_core::fixtures;
use lastmeter_core::{Point2, Pose};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn corpus() -> AnnotationStore {
    AnnotationStore::load_jsonl(fixtures::GOLDEN_SQUARE_ANNOTATIONS, Arc::new(fixtures::golden_square())).unwrap()
}

#[test]
fn classifier_corpus_agreement() {
    let store = corpus();
    assert_eq!(store.len(), 39);
    let agree = store.all().iter().filter(|a| classify(&a.text) == a.category).count();
    let safety: Vec<_> = store.all().iter().filter(|a| a.category == Category::Safety).collect();
    let recalled = safety.iter().filter(|a| classify(&a.text) == Category::Safety).count();
    assert!(agree >= 31, "agreement {agree}/39");
    assert_eq!(recalled, safety.len());
}

#[test]
fn classify_is_deterministic() {
    for a in corpus().all() {
        assert_eq!(classify(&a.text), classify(&a.text));
    }
}

/// Enumerates every Played/Skipped assignment and keeps the ones that are
/// self-consistent under the 15 s rule. Exactly one should survive.
fn brute_force(queue: &[QueuedMessage], now: f64) -> Vec<Outcome> {
    let order: Vec<&QueuedMessage> = queue
        .iter()
        .filter(|m| m.mode == AccessMode::Auto)
        .chain(queue.iter().filter(|m| m.mode != AccessMode::Auto))
        .collect();
    let n = order.len();
    let mut found = Vec::new();
    for mask in 0u32..(1 << n) {
        let mut free = now;
        let mut ok = true;
        for (i, m) in order.iter().enumerate() {
            let start = free.max(now);
            let played = mask & (1 << i) != 0;
            let late = start - m.trigger_time > SKIP_BOUND_S;
            if played == late {
                ok = false;
                break;
            }
            if played {
                free = start + m.est_duration_s;
            }
        }
        if ok {
            found.push(mask);
        }
    }
    assert_eq!(found.len(), 1, "oracle found {} consistent schedules", found.len());
    (0..n)
        .map(|i| if found[0] & (1 << i) != 0 { Outcome::Played } else { Outcome::Skipped })
        .collect()
}

fn random_queue(rng: &mut ChaCha8Rng, now: f64) -> Vec<QueuedMessage> {
    let n = rng.random_range(0..=10);
    (0..n)
        .map(|i| QueuedMessage {
            key: MessageKey::Annotation(format!("m{i}")),
            mode: if rng.random_bool(0.5) { AccessMode::Auto } else { AccessMode::Prompt },
            trigger_time: now - rng.random_range(0.0..12.0),
            est_duration_s: rng.random_range(0.4..9.0),
        })
        .collect()
}

#[test]
fn scheduler_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let now = rng.random_range(0.0..100.0);
        let q = random_queue(&mut rng, now);
        let got = schedule(&q, now);
        let want = brute_force(&q, now);
        if got.iter().map(|d| d.outcome).collect::<Vec<_>>() != want {
            mismatches += 1;
        }
        let first_prompt = got
            .iter()
            .position(|d| q.iter().any(|m| m.key == d.key && m.mode == AccessMode::Prompt))
            .unwrap_or(got.len());
        assert!(got[first_prompt..]
            .iter()
            .all(|d| q.iter().any(|m| m.key == d.key && m.mode == AccessMode::Prompt)));
        let played: Vec<_> = got.iter().filter(|d| d.outcome == Outcome::Played).collect();
        for w in played.windows(2) {
            assert!(w[0].start_time + w[0].duration_s <= w[1].start_time + 1e-9);
        }
    }
    assert_eq!(mismatches, 0);
}

#[test]
fn scheduler_examples() {
    let auto = |k: &str, d: f64, mode| QueuedMessage {
        key: MessageKey::Annotation(k.into()),
        mode,
        trigger_time: 0.0,
        est_duration_s: d,
    };
    let q = [auto("a", 8.0, AccessMode::Auto), auto("b", 8.0, AccessMode::Auto), auto("c", 8.0, AccessMode::Auto)];
    let d = schedule(&q, 0.0);
    assert_eq!(d.iter().map(|x| x.start_time).collect::<Vec<_>>(), [0.0, 8.0, 16.0]);
    assert_eq!(d.iter().map(|x| x.outcome).collect::<Vec<_>>(), [Outcome::Played, Outcome::Played, Outcome::Skipped]);

    let q = [auto("p", 3.0, AccessMode::Prompt), auto("a", 5.0, AccessMode::Auto)];
    let d = schedule(&q, 0.0);
    assert_eq!(d[0].key, MessageKey::Annotation("a".into()));
    assert_eq!((d[1].start_time, d[1].outcome), (5.0, Outcome::Played));
    assert!(schedule(&[], 0.0).is_empty());
}

#[test]
fn skip_bound_is_closed_at_fifteen() {
    let m = |k: &str, d: f64| QueuedMessage {
        key: MessageKey::Annotation(k.into()),
        mode: AccessMode::Auto,
        trigger_time: 0.0,
        est_duration_s: d,
    };
    let d = schedule(&[m("a", 15.0), m("b", 1.0)], 0.0);
    assert_eq!(d[1].outcome, Outcome::Played);
    let d = schedule(&[m("a", 15.1), m("b", 1.0)], 0.0);
    assert_eq!(d[1].outcome, Outcome::Skipped);
}

fn point_store(category: Category) -> AnnotationStore {
    let mut s = AnnotationStore::new(Arc::new(fixtures::golden_square()));
    s.create("tester", "a note", Anchor::Point(Point2::new(-10.0, -16.0)), Some(category), 0.0)
        .unwrap();
    s
}

fn fires_at(category: Category, d: f64) -> bool {
    let s = point_store(category);
    let pose = Pose::new(Point2::new(-10.0 + d, -16.0), 0.0);
    !TriggerEngine::new().scan(&s, &pose, &CategoryPrefs::default(), 0.0).is_empty()
}

#[test]
fn trigger_radius_boundaries() {
    assert_eq!(CRITICAL_RADIUS_M, 1.5);
    assert_eq!(DEFAULT_RADIUS_M, 1.0);
    for c in Category::ALL {
        let critical = matches!(c, Category::Safety | Category::Accessibility);
        assert_eq!(c.trigger_radius_m(), if critical { 1.5 } else { 1.0 });
    }
    assert!(fires_at(Category::Safety, 1.49));
    assert!(!fires_at(Category::Safety, 1.51));
    assert!(fires_at(Category::Accessibility, 1.49));
    assert!(!fires_at(Category::Accessibility, 1.51));
    assert!(fires_at(Category::Layout, 0.99));
    assert!(!fires_at(Category::Layout, 1.01));
}

#[test]
fn vibration_only_for_safety() {
    assert_eq!(VIBRATION_S, 0.5);
    let mut prefs = CategoryPrefs::default();
    for c in Category::ALL {
        prefs.set(c, AccessMode::Auto);
    }
    for c in Category::ALL {
        let s = point_store(c);
        let ev = TriggerEngine::new().scan(&s, &Pose::new(Point2::new(-10.0, -16.0), 0.0), &prefs, 0.0);
        assert_eq!(ev[0].vibration_s, (c == Category::Safety).then_some(0.5), "{c}");
    }
}

#[test]
fn rearm_needs_exit_and_cooldown() {
    let s = point_store(Category::Safety);
    let prefs = CategoryPrefs::default();
    let at = |d: f64| Pose::new(Point2::new(-10.0 + d, -16.0), 0.0);
    let mut t = TriggerEngine::new();
    assert_eq!(t.scan(&s, &at(1.0), &prefs, 0.0).len(), 1);
    // inside the radius forever: no refire
    assert!(t.scan(&s, &at(1.0), &prefs, 100.0).is_empty());
    // exited but not past the hysteresis band
    assert!(t.scan(&s, &at(1.9), &prefs, 101.0).is_empty());
    assert!(t.scan(&s, &at(1.0), &prefs, 102.0).is_empty());
    assert!(t.scan(&s, &at(2.1), &prefs, 103.0).is_empty());
    assert_eq!(t.scan(&s, &at(1.0), &prefs, 104.0).len(), 1);
    // exit past the band but inside the cooldown
    assert!(t.scan(&s, &at(2.1), &prefs, 110.0).is_empty());
    assert!(t.scan(&s, &at(1.0), &prefs, 163.9).is_empty());
    assert_eq!(t.scan(&s, &at(1.0), &prefs, 164.0).len(), 1);
}

#[test]
fn silent_categories_never_fire() {
    let s = point_store(Category::Safety);
    let mut prefs = CategoryPrefs::default();
    prefs.set(Category::Safety, AccessMode::Silent);
    assert!(TriggerEngine::new()
        .scan(&s, &Pose::new(Point2::new(-10.0, -16.0), 0.0), &prefs, 0.0)
        .is_empty());
}

#[test]
fn store_round_trip_is_exact() {
    let s = corpus();
    let again = AnnotationStore::load_jsonl(&s.to_jsonl(), s.scene().clone()).unwrap();
    assert_eq!(s.all(), again.all());
    assert_eq!(s.to_jsonl(), again.to_jsonl());
}

proptest! {
    #[test]
    fn classify_total(text in "\\PC{0,80}") {
        let c = classify(&text);
        prop_assert_eq!(c, classify(&text));
    }

    #[test]
    fn schedule_never_overlaps(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = random_queue(&mut rng, 50.0);
        let d = schedule(&q, 50.0);
        prop_assert_eq!(d.len(), q.len());
        let mut end = 50.0f64;
        for x in d.iter().filter(|x| x.outcome == Outcome::Played) {
            prop_assert!(x.start_time >= end - 1e-9);
            end = x.start_time + x.duration_s;
        }
    }
}
