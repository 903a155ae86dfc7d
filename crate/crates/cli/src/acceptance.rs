//! Acceptance checks, one per criterion. Each check returns a short detail
//! string on success and a reason on failure.

use std::collections::BinaryHeap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::{Arc, RwLock};
use std::time::Instant;

use lastmeter_core::annotations::{
    classify, schedule, AccessMode, Anchor, AnnotationStore, Category, CategoryPrefs, MessageKey, Outcome, QueuedMessage,
    TriggerEngine, SKIP_BOUND_S,
};
use lastmeter_core::geometry::{format_distance, relative_bearing, DistanceUnit, DEFAULT_STEP_LENGTH_M};
use lastmeter_core::guidance::{start_guidance, EventKind, GuidanceError, InstructionEvent};
use lastmeter_core::navgrid::{a_star, plan_route, smooth, Cell, NavError, NavGrid, PathCost};
use lastmeter_core::orchestrator::{apply_verbosity, Ports};
use lastmeter_core::scene::Strictness;
use lastmeter_core::prefs::DEFAULT_VERBOSITY_WORDS;
use lastmeter_core::sim::{self, LoadedScenario};
use lastmeter_core::{fixtures, Engine, SceneGraph, EngineEvent, Point2, Pose, Route, SessionContext, UserPrefs};
use lastmeter_server::client::{parse_script, run_script, to_jsonl, ScriptClient};
use lastmeter_server::{serve, AppState, Poi, GOLDEN_EPOCH};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Check = fn(&Path) -> Result<String, String>;

pub const CHECKS: &[(&str, Check)] = &[
    ("planner_oracle", planner_oracle),
    ("smoothing_soundness", smoothing_soundness),
    ("fixture_routes", fixture_routes),
    ("guidance_cadence", guidance_cadence),
    ("constants_table", constants_table),
    ("scheduler_oracle", scheduler_oracle),
    ("classifier_corpus", classifier_corpus),
    ("drift_reproduction", drift_reproduction),
    ("determinism", determinism),
    ("end_to_end_headless", end_to_end_headless),
];

pub fn run_all(data_dir: &Path) -> Vec<CheckResult> {
    CHECKS
        .iter()
        .map(|(name, f)| {
            let r = catch_unwind(AssertUnwindSafe(|| f(data_dir)))
                .unwrap_or_else(|p| Err(p.downcast_ref::<String>().cloned().unwrap_or_else(|| "panicked".into())));
            let (passed, detail) = match r {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            CheckResult { name, passed, detail }
        })
        .collect()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ------------------------------------------------------------------ planner

fn random_grid(rng: &mut ChaCha8Rng, max_side: usize) -> NavGrid {
    let w = rng.random_range(1..=max_side);
    let h = rng.random_range(1..=max_side);
    let density: f64 = rng.random_range(0.0..0.45);
    let mask = (0..w * h).map(|_| rng.random::<f64>() >= density).collect();
    NavGrid::from_mask(Point2::new(0.0, 0.0), 1.0, w, h, mask)
}

fn random_walkable(rng: &mut ChaCha8Rng, grid: &NavGrid) -> Option<Cell> {
    (0..64)
        .map(|_| Cell::new(rng.random_range(0..grid.width), rng.random_range(0..grid.height)))
        .find(|c| grid.is_walkable(*c))
}

#[derive(PartialEq)]
struct Item(f64, u32, u32, usize, usize);

impl Eq for Item {}

impl Ord for Item {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        o.0.total_cmp(&self.0)
    }
}

impl PartialOrd for Item {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}

/// Uniform-cost search with the same no-corner-cutting rule.
fn dijkstra(grid: &NavGrid, start: Cell, goal: Cell) -> Option<PathCost> {
    let walk = |x: i64, y: i64| x >= 0 && y >= 0 && grid.is_walkable(Cell::new(x as usize, y as usize));
    let mut done = vec![false; grid.width * grid.height];
    let mut heap = BinaryHeap::new();
    heap.push(Item(0.0, 0, 0, start.x, start.y));
    while let Some(Item(_, s, d, x, y)) = heap.pop() {
        let i = y * grid.width + x;
        if done[i] {
            continue;
        }
        done[i] = true;
        if (x, y) == (goal.x, goal.y) {
            return Some(PathCost { straight: s, diagonal: d });
        }
        for dx in -1i64..=1 {
            for dy in -1i64..=1 {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if (dx, dy) == (0, 0) || !walk(nx, ny) {
                    continue;
                }
                let diag = dx != 0 && dy != 0;
                if diag && !(walk(nx, y as i64) && walk(x as i64, ny)) {
                    continue;
                }
                let (s2, d2) = if diag { (s, d + 1) } else { (s + 1, d) };
                heap.push(Item(s2 as f64 + d2 as f64 * std::f64::consts::SQRT_2, s2, d2, nx as usize, ny as usize));
            }
        }
    }
    None
}

fn planner_oracle(_: &Path) -> Result<String, String> {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xa5a5);
    let (mut compared, mut mismatches, mut unreachable) = (0, 0, 0);
    while compared < 500 {
        let grid = random_grid(&mut rng, 64);
        let (Some(s), Some(g)) = (random_walkable(&mut rng, &grid), random_walkable(&mut rng, &grid)) else {
            continue;
        };
        let oracle = dijkstra(&grid, s, g);
        let got = match a_star(&grid, s, g) {
            Ok(p) => Some(p.cost),
            Err(NavError::NoPath) => None,
            Err(e) => return Err(format!("a_star error {e}")),
        };
        unreachable += usize::from(oracle.is_none());
        mismatches += usize::from(got != oracle);
        compared += 1;
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure(mismatches == 0, || format!("{mismatches} cost mismatches"))?;
    ensure(secs < 10.0, || format!("took {secs:.2} s"))?;
    Ok(format!("500 grids, 0 mismatches ({unreachable} unreachable pairs), {secs:.2} s"))
}

// ---------------------------------------------------------------- smoothing

fn smoothing_soundness(_: &Path) -> Result<String, String> {
    let scene = fixtures::golden_square();
    let grid = fixtures::golden_grid();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut routes: Vec<(String, Vec<Point2>, &NavGrid)> = Vec::new();
    for (name, goal) in [("emma", fixtures::emma_goal()), ("ben", fixtures::ben_goal())] {
        let r = plan_route(&scene, &grid, &fixtures::ramp_start(), goal).map_err(|e| e.to_string())?;
        routes.push((name.into(), r.waypoints, &grid));
    }
    let walkable: Vec<Cell> = (0..grid.width * grid.height)
        .map(|i| grid.cell_at(i))
        .filter(|c| grid.is_walkable(*c))
        .collect();
    for i in 0..300 {
        let a = grid.center(walkable[rng.random_range(0..walkable.len())]);
        let b = grid.center(walkable[rng.random_range(0..walkable.len())]);
        if let Ok(r) = plan_route(&scene, &grid, &Pose::new(a, 0.0), b) {
            routes.push((format!("golden #{i}"), r.waypoints, &grid));
        }
    }
    let mut random_grids = Vec::new();
    while random_grids.len() < 200 {
        let g = random_grid(&mut rng, 48);
        if let (Some(s), Some(t)) = (random_walkable(&mut rng, &g), random_walkable(&mut rng, &g)) {
            if let Ok(p) = a_star(&g, s, t) {
                random_grids.push((g, p));
            }
        }
    }
    for (i, (g, p)) in random_grids.iter().enumerate() {
        let pts: Vec<Point2> = p.cells.iter().map(|c| g.center(*c)).collect();
        routes.push((format!("random #{i}"), smooth(g, &pts), g));
    }
    let mut segments = 0;
    let mut violations = Vec::new();
    for (name, wps, g) in &routes {
        for w in wps.windows(2) {
            segments += 1;
            if g.line_of_sight(w[0], w[1]) != Ok(true) {
                violations.push(name.clone());
            }
        }
    }
    ensure(violations.is_empty(), || format!("{} violations, first in {}", violations.len(), violations[0]))?;
    Ok(format!("{} routes, {segments} segments, 0 violations", routes.len()))
}

fn fixture_routes(_: &Path) -> Result<String, String> {
    let scene = fixtures::golden_square();
    let grid = fixtures::golden_grid();
    let mut parts = Vec::new();
    for (name, goal) in [("emma", fixtures::emma_goal()), ("ben", fixtures::ben_goal())] {
        let r = plan_route(&scene, &grid, &fixtures::ramp_start(), goal).map_err(|e| e.to_string())?;
        ensure((25.0..=35.0).contains(&r.total_length_m), || format!("{name}: length {:.2}", r.total_length_m))?;
        ensure(r.turning_points() == 2, || format!("{name}: {} turning points", r.turning_points()))?;
        parts.push(format!("{name} {:.2} m / 2 turns", r.total_length_m));
    }
    Ok(parts.join(", "))
}

// ----------------------------------------------------------------- guidance

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

fn guidance_cadence(_: &Path) -> Result<String, String> {
    // 30 m with two turns, walked at 1.0 m/s and sampled at 10 Hz
    let route = Route::from_waypoints(vec![
        Point2::new(0.0, 0.0),
        Point2::new(10.0, 0.0),
        Point2::new(10.0, 10.0),
        Point2::new(20.0, 10.0),
    ]);
    let start = Pose::new(route.waypoints[0], 90.0);
    let (mut s, mut log): (_, Vec<InstructionEvent>) =
        start_guidance(route.clone(), UserPrefs::default(), &start, 0.0).map_err(|e| e.to_string())?;
    for k in 1..=400u32 {
        let t = k as f64 / 10.0;
        let p = along(&route, t);
        let heading = relative_bearing(&Pose::new(p, 0.0), s.target()).unwrap_or(0.0);
        match s.tick(&Pose::new(p, heading), t) {
            Ok(out) => log.extend(out.events),
            Err(GuidanceError::SessionNotActive) => break,
            Err(e) => return Err(e.to_string()),
        }
    }
    let times = |k: EventKind| log.iter().filter(|e| e.kind == k).map(|e| e.timestamp).collect::<Vec<_>>();
    let confirms = times(EventKind::Confirm);
    let turns = times(EventKind::Turn).len();
    let arrivals = times(EventKind::Arrival).len();
    ensure(confirms.len() >= 2, || format!("only {} confirms", confirms.len()))?;
    let mut prev = 0.0;
    for c in &confirms {
        ensure((c - prev - 10.0).abs() <= 0.1, || format!("confirm spacing {:.2} s", c - prev))?;
        prev = *c;
    }
    ensure(turns == 3, || format!("turn count {turns}"))?;
    ensure(arrivals == 1, || format!("arrival count {arrivals}"))?;
    Ok(format!("confirms at {confirms:?} s, turns {turns}, arrivals {arrivals}"))
}

// ---------------------------------------------------------------- constants

fn point_store(category: Category) -> AnnotationStore {
    let mut s = AnnotationStore::new(Arc::new(fixtures::golden_square()));
    s.create("checker", "a note", Anchor::Point(Point2::new(-10.0, -16.0)), Some(category), 0.0)
        .expect("valid anchor");
    s
}

fn fires(category: Category, d: f64) -> bool {
    let pose = Pose::new(Point2::new(-10.0 + d, -16.0), 0.0);
    !TriggerEngine::new()
        .scan(&point_store(category), &pose, &CategoryPrefs::default(), 0.0)
        .is_empty()
}

fn constants_table(_: &Path) -> Result<String, String> {
    ensure(fires(Category::Safety, 1.49) && !fires(Category::Safety, 1.51), || "safety radius".into())?;
    ensure(fires(Category::Accessibility, 1.49) && !fires(Category::Accessibility, 1.51), || "accessibility radius".into())?;
    for c in [Category::Amenity, Category::Layout, Category::Attraction, Category::Experience, Category::Request] {
        ensure(fires(c, 0.99) && !fires(c, 1.01), || format!("{c} radius"))?;
    }

    let steps = |m: f64| format_distance(m, DistanceUnit::steps()).map(|r| r.value).unwrap_or(u64::MAX);
    ensure(DEFAULT_STEP_LENGTH_M == 0.76, || "step length".into())?;
    ensure(steps(0.76) == 1 && steps(7.6) == 10 && steps(3.0 * 0.76) == 3, || "step rendering".into())?;

    // vibration through the engine on a safety trigger
    let mut world = fixtures::golden_world();
    world.store = Arc::new(RwLock::new(point_store(Category::Safety)));
    let mut engine = Engine::new(world, SessionContext::new("checker", UserPrefs::default()));
    let ev = engine.tick(&Pose::new(Point2::new(-10.0, -16.5), 0.0), 0.0);
    let vib: Vec<f64> = ev
        .iter()
        .filter_map(|e| match e {
            EngineEvent::Vibration { duration_s, .. } => Some(*duration_s),
            _ => None,
        })
        .collect();
    ensure(vib == [0.5], || format!("vibrations {vib:?}"))?;

    let line = Route::from_waypoints(vec![Point2::new(0.0, 0.0), Point2::new(0.0, 50.0)]);
    let pose = Pose::new(Point2::new(0.0, 5.0), 0.0);
    let (mut g, _) = start_guidance(line, UserPrefs::default(), &pose, 0.0).map_err(|e| e.to_string())?;
    let early = g.tick(&pose, 9.99).map_err(|e| e.to_string())?.events;
    let on_time = g.tick(&pose, 10.0).map_err(|e| e.to_string())?.events;
    ensure(early.is_empty() && on_time.first().map(|e| e.kind) == Some(EventKind::Confirm), || "confirm period".into())?;

    let msg = |k: &str, d: f64| QueuedMessage {
        key: MessageKey::Annotation(k.into()),
        mode: AccessMode::Auto,
        trigger_time: 0.0,
        est_duration_s: d,
    };
    let at15 = schedule(&[msg("a", 15.0), msg("b", 1.0)], 0.0);
    let past15 = schedule(&[msg("a", 15.01), msg("b", 1.0)], 0.0);
    ensure(
        SKIP_BOUND_S == 15.0 && at15[1].outcome == Outcome::Played && past15[1].outcome == Outcome::Skipped,
        || "skip bound".into(),
    )?;

    let sentence = |n: usize| format!("{}.", vec!["word"; n].join(" "));
    let fits = format!("{} {}", sentence(20), sentence(25));
    let over = format!("{} {}", sentence(20), sentence(26));
    ensure(
        DEFAULT_VERBOSITY_WORDS == 45
            && UserPrefs::default().verbosity_words == 45
            && apply_verbosity(&fits, 45) == fits
            && apply_verbosity(&over, 45) == sentence(20),
        || "verbosity budget".into(),
    )?;
    Ok("radii 1.5/1.0, step 0.76, vibration 0.5, confirm 10, skip 15, verbosity 45".into())
}

// ---------------------------------------------------------------- scheduler

fn brute_force(queue: &[QueuedMessage], now: f64) -> Option<Vec<Outcome>> {
    let order: Vec<&QueuedMessage> = queue
        .iter()
        .filter(|m| m.mode == AccessMode::Auto)
        .chain(queue.iter().filter(|m| m.mode != AccessMode::Auto))
        .collect();
    let n = order.len();
    let mut found = Vec::new();
    'mask: for mask in 0u32..(1 << n) {
        let mut free = now;
        for (i, m) in order.iter().enumerate() {
            let start = free.max(now);
            let played = mask & (1 << i) != 0;
            if played == (start - m.trigger_time > SKIP_BOUND_S) {
                continue 'mask;
            }
            if played {
                free = start + m.est_duration_s;
            }
        }
        found.push(mask);
    }
    (found.len() == 1).then(|| {
        (0..n)
            .map(|i| if found[0] & (1 << i) != 0 { Outcome::Played } else { Outcome::Skipped })
            .collect()
    })
}

fn scheduler_oracle(_: &Path) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5c4e);
    let (mut mismatches, mut order_violations, mut skipped) = (0, 0, 0);
    for _ in 0..1000 {
        let now = rng.random_range(0.0..100.0);
        let n = rng.random_range(0..=10);
        let q: Vec<QueuedMessage> = (0..n)
            .map(|i| QueuedMessage {
                key: MessageKey::Annotation(format!("m{i}")),
                mode: if rng.random_bool(0.5) { AccessMode::Auto } else { AccessMode::Prompt },
                trigger_time: now - rng.random_range(0.0..12.0),
                est_duration_s: rng.random_range(0.4..9.0),
            })
            .collect();
        let got = schedule(&q, now);
        let outcomes: Vec<Outcome> = got.iter().map(|d| d.outcome).collect();
        if brute_force(&q, now).as_ref() != Some(&outcomes) {
            mismatches += 1;
        }
        skipped += outcomes.iter().filter(|o| **o == Outcome::Skipped).count();
        let modes: Vec<AccessMode> = got
            .iter()
            .map(|d| q.iter().find(|m| m.key == d.key).map(|m| m.mode).unwrap_or(AccessMode::Silent))
            .collect();
        if modes.windows(2).any(|w| w[0] == AccessMode::Prompt && w[1] == AccessMode::Auto) {
            order_violations += 1;
        }
    }
    ensure(mismatches == 0 && order_violations == 0, || {
        format!("{mismatches} mismatches, {order_violations} ordering violations")
    })?;
    Ok(format!("1000 queues, 0 mismatches, 0 ordering violations ({skipped} skips exercised)"))
}

// --------------------------------------------------------------- classifier

fn classifier_corpus(data: &Path) -> Result<String, String> {
    let scene = Arc::new(fixtures::golden_square());
    let text = std::fs::read_to_string(data.join("golden_square_annotations.jsonl")).map_err(|e| e.to_string())?;
    let store = AnnotationStore::load_jsonl(&text, scene).map_err(|e| e.to_string())?;
    let total = store.len();
    let agree = store.all().iter().filter(|a| classify(&a.text) == a.category).count();
    let safety: Vec<_> = store.all().iter().filter(|a| a.category == Category::Safety).collect();
    let recalled = safety.iter().filter(|a| classify(&a.text) == Category::Safety).count();
    ensure(total == 39, || format!("corpus has {total} annotations"))?;
    ensure(agree >= 31, || format!("agreement {agree}/{total}"))?;
    ensure(recalled == safety.len(), || format!("safety recall {recalled}/{}", safety.len()))?;
    Ok(format!("agreement {agree}/{total}, safety recall {recalled}/{}", safety.len()))
}

// ---------------------------------------------------------------------- sim

fn drift_reproduction(data: &Path) -> Result<String, String> {
    let sc = LoadedScenario::load(&data.join("scenarios/emma_drift.json")).map_err(|e| e.to_string())?;
    let r = sim::run_scenario(&sc, None).map_err(|e| e.to_string())?.report;
    let d = r.final_goal_distance_m.ok_or("no goal")?;
    ensure(r.engine_arrived, || "engine never declared arrival".into())?;
    ensure((d - 2.0).abs() <= 0.5, || format!("true goal distance {d:.2} m"))?;
    ensure(!r.success, || "run reported success".into())?;
    Ok(format!("engine arrival at {:.1} s, true goal distance {d:.2} m, success=false", r.elapsed_s))
}

fn determinism(data: &Path) -> Result<String, String> {
    let mut n = 0;
    for name in ["emma.json", "ben.json", "emma_random_walk.json", "emma_drift.json", "podium_walk.json"] {
        let sc = LoadedScenario::load(&data.join("scenarios").join(name)).map_err(|e| e.to_string())?;
        for seed in [7, 8] {
            let a = sim::run_scenario(&sc, Some(seed)).map_err(|e| e.to_string())?;
            let b = sim::run_scenario(&sc, Some(seed)).map_err(|e| e.to_string())?;
            ensure(a.transcript == b.transcript, || format!("{name} seed {seed}: transcripts differ"))?;
            let replayed = sim::replay(&a.transcript).map_err(|e| e.to_string())?;
            ensure(replayed == a.report, || format!("{name} seed {seed}: replay report differs"))?;
            n += 1;
        }
    }
    Ok(format!("{n} scenario/seed pairs byte-identical, replay reports equal"))
}

// --------------------------------------------------------------------- e2e

async fn e2e(data: &Path) -> Result<String, String> {
    let scene_text = std::fs::read_to_string(data.join("golden_square.json")).map_err(|e| e.to_string())?;
    let ann = std::fs::read_to_string(data.join("golden_square_annotations.jsonl")).map_err(|e| e.to_string())?;
    let scene = SceneGraph::load(&scene_text, Strictness::Strict).map_err(|e| e.to_string())?;
    let poi = Poi::new(scene, &ann)?;
    let state = Arc::new(AppState::new(vec![poi], Ports::default(), Some(GOLDEN_EPOCH)));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.map_err(|e| e.to_string())?;
    let addr = listener.local_addr().map_err(|e| e.to_string())?;
    tokio::spawn(serve(listener, state.clone()));
    let base = format!("ws://{addr}/ws?poi=golden_square");

    let golden = data.join("golden");
    let script_text = std::fs::read_to_string(golden.join("headless_script.jsonl")).map_err(|e| e.to_string())?;
    let script = parse_script(&script_text).map_err(|e| e.to_string())?;
    let frames = run_script(&format!("{base}&user=alice"), &script).await.map_err(|e| e.to_string())?;

    let ops: Vec<&str> = frames
        .iter()
        .filter(|f| f["type"] == "reply")
        .flat_map(|f| f["actions"].as_array().into_iter().flatten())
        .filter_map(|a| a["op"].as_str())
        .collect();
    let has = |t: &str| frames.iter().any(|f| f["type"] == t);
    ensure(has("route") && has("annotation_trigger") && has("vibration"), || "missing navigate/trigger frames".into())?;
    ensure(ops == ["created", "edited", "deleted"], || format!("mutations {ops:?}"))?;

    let want = std::fs::read_to_string(golden.join("headless_flow.jsonl")).map_err(|e| e.to_string())?;
    let got = to_jsonl(&frames);
    if got != want {
        let i = got.lines().zip(want.lines()).position(|(a, b)| a != b).unwrap_or(got.lines().count().min(want.lines().count()));
        return Err(format!("golden transcript differs at frame {i}"));
    }

    // a note authored in one session is visible to another
    let (mut a, _) = ScriptClient::connect(&format!("{base}&user=alice")).await.map_err(|e| e.to_string())?;
    let (mut b, _) = ScriptClient::connect(&format!("{base}&user=bob")).await.map_err(|e| e.to_string())?;
    a.send(&json!({"type": "query", "text": "Add a note here saying 'Bench wobbles'"}))
        .await
        .map_err(|e| e.to_string())?;
    let r = b
        .send(&json!({"type": "query", "text": "Are there any notes nearby?"}))
        .await
        .map_err(|e| e.to_string())?;
    let seen = r.iter().any(|f: &Value| f["type"] == "reply" && f["text"].as_str().is_some_and(|t| t.contains("Bench wobbles")));
    ensure(seen, || "second session did not see the shared note".into())?;
    Ok(format!("{} frames match golden, mutations created/edited/deleted, store shared across sessions", frames.len()))
}

fn end_to_end_headless(data: &Path) -> Result<String, String> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| e.to_string())?;
    rt.block_on(e2e(data))
}
