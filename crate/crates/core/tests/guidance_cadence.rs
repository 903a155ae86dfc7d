use lastmeter_core::geometry::{relative_bearing, DistanceUnit};
use lastmeter_core::guidance::{compass, start_guidance, CompassLevel, EventKind, GuidanceError, InstructionEvent};
use lastmeter_core::prefs::UserPrefs;
use lastmeter_core::{Point2, Pose, Route};
use proptest::prelude::*;

fn l_route() -> Route {
    Route::from_waypoints(vec![
        Point2::new(0.0, 0.0),
        Point2::new(10.0, 0.0),
        Point2::new(10.0, 10.0),
        Point2::new(20.0, 10.0),
    ])
}

fn along(route: &Route, s: f64) -> Point2 {
    let mut left = s;
    for w in route.waypoints.windows(2) {
        let len = w[0].distance(w[1]);
        if left <= len {
            let f = left / len;
            return Point2::new(w[0].x + (w[1].x - w[0].x) * f, w[0].y + (w[1].y - w[0].y) * f);
        }
        left -= len;
    }
    route.destination()
}

/// Walks the route at 1 m/s, 10 Hz, always facing the session's current target.
fn on_course_run(prefs: UserPrefs) -> Vec<InstructionEvent> {
    let route = l_route();
    let start = Pose::new(route.waypoints[0], 90.0);
    let (mut s, mut log) = start_guidance(route.clone(), prefs, &start, 0.0).unwrap();
    for k in 1..=400u32 {
        let t = k as f64 / 10.0;
        let p = along(&route, t);
        let heading = relative_bearing(&Pose::new(p, 0.0), s.target()).unwrap_or(0.0);
        match s.tick(&Pose::new(p, heading), t) {
            Ok(out) => log.extend(out.events),
            Err(GuidanceError::SessionNotActive) => break,
            Err(e) => panic!("{e}"),
        }
    }
    log
}

fn times(log: &[InstructionEvent], kind: EventKind) -> Vec<f64> {
    log.iter().filter(|e| e.kind == kind).map(|e| e.timestamp).collect()
}

#[test]
fn thirty_meter_cadence() {
    let log = on_course_run(UserPrefs::default());
    // hand-derived: waypoints reached (1 m radius) at 9 s and 19 s, arrival at 29 s,
    // confirms every 10 s from the start
    assert_eq!(times(&log, EventKind::Turn), [0.0, 9.0, 19.0]);
    let confirms = times(&log, EventKind::Confirm);
    assert_eq!(confirms.len(), 2);
    assert!((confirms[0] - 10.0).abs() <= 0.1);
    for w in confirms.windows(2) {
        assert!((w[1] - w[0] - 10.0).abs() <= 0.1);
    }
    assert_eq!(times(&log, EventKind::Arrival), [29.0]);
    assert!(times(&log, EventKind::Deviation).is_empty());
    assert_eq!(log.last().unwrap().kind, EventKind::Arrival);
}

#[test]
fn cadence_text_follows_prefs() {
    let log = on_course_run(UserPrefs::default());
    let c = log.iter().find(|e| e.kind == EventKind::Confirm).unwrap();
    assert_eq!(c.text, "Correct direction, 10 meters");
    let prefs = UserPrefs { unit: DistanceUnit::steps(), ..UserPrefs::default() };
    let log = on_course_run(prefs);
    let c = log.iter().find(|e| e.kind == EventKind::Confirm).unwrap();
    // 10 m / 0.76 m = 13.16 steps
    assert_eq!(c.text, "Correct direction, 13 steps");
}

#[test]
fn runs_are_deterministic() {
    assert_eq!(on_course_run(UserPrefs::default()), on_course_run(UserPrefs::default()));
}

#[test]
fn confirm_period_boundary() {
    let route = Route::from_waypoints(vec![Point2::new(0.0, 0.0), Point2::new(0.0, 50.0)]);
    let pose = Pose::new(Point2::new(0.0, 5.0), 0.0);
    let (mut s, _) = start_guidance(route, UserPrefs::default(), &pose, 0.0).unwrap();
    assert!(s.tick(&pose, 9.99).unwrap().events.is_empty());
    let out = s.tick(&pose, 10.0).unwrap();
    assert_eq!(out.events[0].kind, EventKind::Confirm);
    assert_eq!(out.events[0].text, "Correct direction, 45 meters");
}

#[test]
fn compass_threshold_is_closed() {
    let pose = Pose::new(Point2::new(0.0, 0.0), 0.0);
    for deg in 0..=180 {
        let r = (deg as f64).to_radians();
        let target = Point2::new(10.0 * r.sin(), 10.0 * r.cos());
        let c = compass(&pose, target, 20.0).unwrap();
        let want = if deg <= 20 { CompassLevel::High } else { CompassLevel::Low };
        assert_eq!(c.level, want, "{deg}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tick_stream_invariants(steps in prop::collection::vec((-1.5f64..1.5, -1.5f64..1.5, 0.0f64..360.0), 1..400)) {
        let route = l_route();
        let mut pose = Pose::new(Point2::new(0.0, 0.0), 90.0);
        let (mut s, mut log) = start_guidance(route, UserPrefs::default(), &pose, 0.0).unwrap();
        let mut after_arrival = 0;
        let mut arrivals = 0;
        for (k, (dx, dy, h)) in steps.into_iter().enumerate() {
            let t = (k + 1) as f64 / 10.0 * 5.0;
            pose = Pose::new(Point2::new(pose.position.x + dx, pose.position.y + dy), h);
            match s.tick(&pose, t) {
                Ok(out) => {
                    for e in &out.events {
                        if e.kind == EventKind::Confirm {
                            let c = compass(&pose, s.target(), 20.0).map(|c| c.level).unwrap_or(CompassLevel::High);
                            prop_assert_eq!(c, CompassLevel::High);
                        }
                        if e.kind == EventKind::Arrival {
                            arrivals += 1;
                        }
                    }
                    log.extend(out.events);
                }
                Err(_) => after_arrival += 1,
            }
        }
        prop_assert!(arrivals <= 1);
        if arrivals == 0 {
            prop_assert_eq!(after_arrival, 0);
        }
        let confirms = times(&log, EventKind::Confirm);
        for w in confirms.windows(2) {
            prop_assert!(w[1] - w[0] >= 10.0);
        }
    }
}
