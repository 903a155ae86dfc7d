//! Deterministic virtual walker: kinematics, drift, autopilot, scenario runs and replay.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::annotations::{AnnotationStore, Anchor, Category};
use crate::engine::{Engine, EngineEvent};
use crate::geometry::{normalize_deg, signed_bearing, Point2, Pose};
use crate::guidance::{CompassLevel, EventKind};
use crate::navgrid::{approach_point, plan_route, NavGrid, DEFAULT_CLEARANCE_M, DEFAULT_RESOLUTION_M};
use crate::orchestrator::{Ports, SessionContext, World};
use crate::prefs::UserPrefs;
use crate::scene::{SceneGraph, Strictness};

pub const TICK_HZ: u32 = 10;
pub const TICK_S: f64 = 0.1;
pub const DEFAULT_TIMEOUT_S: f64 = 600.0;
pub const DEFAULT_SPEED_MPS: f64 = 1.0;
pub const DEFAULT_TURN_RATE_DPS: f64 = 90.0;
pub const SUCCESS_RADIUS_M: f64 = 1.0;
pub const LANDMARK_RADIUS_M: f64 = 3.0;
/// Autopilot turns in place until the heading error is within this.
pub const ALIGN_DEG: f64 = 5.0;
const SUBSTEP_M: f64 = 0.05;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scenario {path}: {message}")]
    ScenarioLoad { path: String, message: String },
    #[error("transcript line {line}: {message}")]
    Schema { line: usize, message: String },
}

fn load_err(path: &Path, message: impl std::fmt::Display) -> SimError {
    SimError::ScenarioLoad {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

// ------------------------------------------------------------------- walker

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Control {
    Advance,
    TurnLeft,
    TurnRight,
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WalkerState {
    pub true_pose: Pose,
    pub reported_pose: Pose,
    pub speed_mps: f64,
    pub turn_rate_dps: f64,
}

impl WalkerState {
    pub fn new(pose: Pose) -> Self {
        WalkerState {
            true_pose: pose,
            reported_pose: pose,
            speed_mps: DEFAULT_SPEED_MPS,
            turn_rate_dps: DEFAULT_TURN_RATE_DPS,
        }
    }
}

/// Kinematic update of the true pose. Blocked cells stop the walker; an oblique
/// bump slides along the obstacle, a head-on bump pins it.
pub fn step(state: &WalkerState, control: Control, dt_s: f64, grid: &NavGrid) -> WalkerState {
    let mut s = *state;
    if !(dt_s > 0.0 && dt_s <= 1.0) {
        return s;
    }
    match control {
        Control::Stop => {}
        Control::TurnLeft => s.true_pose.heading_deg = normalize_deg(s.true_pose.heading_deg - s.turn_rate_dps * dt_s),
        Control::TurnRight => s.true_pose.heading_deg = normalize_deg(s.true_pose.heading_deg + s.turn_rate_dps * dt_s),
        Control::Advance => {
            let total = s.speed_mps * dt_s;
            let n = (total / SUBSTEP_M).ceil().max(1.0) as usize;
            let d = Point2::from_heading(s.true_pose.heading_deg) * (total / n as f64);
            let mut p = s.true_pose.position;
            for _ in 0..n {
                let candidates = [p + d, p + Point2::new(d.x, 0.0), p + Point2::new(0.0, d.y)];
                match candidates
                    .into_iter()
                    .find(|c| c.distance(p) > 1e-12 && grid.is_walkable_point(*c))
                {
                    Some(c) => p = c,
                    None => break,
                }
            }
            s.true_pose.position = p;
        }
    }
    s.reported_pose = s.true_pose;
    s
}

// -------------------------------------------------------------------- drift

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DriftModel {
    #[default]
    None,
    /// Constant offset once `start_s` has passed and, if given, the walker has
    /// covered `start_progress` of the planned route length.
    Bias {
        offset: Point2,
        #[serde(default)]
        start_s: f64,
        #[serde(default)]
        start_progress: Option<f64>,
    },
    RandomWalk {
        sigma_m_per_sqrt_s: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone)]
pub struct DriftState {
    model: DriftModel,
    rng: ChaCha8Rng,
    walk: Point2,
    bias_on: bool,
}

impl DriftState {
    pub fn new(model: DriftModel, scenario_seed: u64) -> Self {
        let seed = match &model {
            DriftModel::RandomWalk { seed: Some(s), .. } => *s,
            _ => scenario_seed,
        };
        DriftState {
            model,
            rng: ChaCha8Rng::seed_from_u64(seed),
            walk: Point2::default(),
            bias_on: false,
        }
    }

    /// Advances the drift process by `dt_s` and returns the offset at time `t`.
    pub fn advance(&mut self, t: f64, dt_s: f64, progress: f64) -> Point2 {
        match &self.model {
            DriftModel::None => Point2::default(),
            DriftModel::Bias {
                offset,
                start_s,
                start_progress,
            } => {
                if !self.bias_on && t >= *start_s && start_progress.is_none_or(|p| progress >= p) {
                    self.bias_on = true;
                }
                if self.bias_on {
                    *offset
                } else {
                    Point2::default()
                }
            }
            DriftModel::RandomWalk { sigma_m_per_sqrt_s, .. } => {
                if dt_s > 0.0 {
                    let sd = sigma_m_per_sqrt_s * dt_s.sqrt();
                    if let Ok(n) = Normal::new(0.0, sd) {
                        self.walk = self.walk + Point2::new(n.sample(&mut self.rng), n.sample(&mut self.rng));
                    }
                }
                self.walk
            }
        }
    }
}

// ---------------------------------------------------------------- autopilot

/// Follows the compass: stop on arrival or a deviation warning, turn toward
/// the next waypoint until aligned, otherwise walk.
pub fn autopilot_policy(events: &[EngineEvent], compass: Option<(CompassLevel, f64)>) -> Control {
    let saw = |k: EventKind| {
        events
            .iter()
            .any(|e| matches!(e, EngineEvent::Instruction { kind, .. } if *kind == k))
    };
    if saw(EventKind::Arrival) || saw(EventKind::Deviation) {
        return Control::Stop;
    }
    let Some((level, rel)) = compass else {
        return Control::Stop;
    };
    let err = signed_bearing(rel);
    if level == CompassLevel::Low || err.abs() > ALIGN_DEG {
        if err < 0.0 {
            Control::TurnLeft
        } else {
            Control::TurnRight
        }
    } else {
        Control::Advance
    }
}

// ----------------------------------------------------------------- scenario

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartSpec {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub heading: f64,
}

impl StartSpec {
    pub fn pose(&self) -> Pose {
        Pose::new(Point2::new(self.x, self.y), self.heading)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalSpec {
    Class(String),
    Annotation(String),
    Point(Point2),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "action")]
pub enum ScriptOp {
    Advance,
    TurnLeft,
    TurnRight,
    Stop,
    Query { text: String },
    Prefs { delta: Value },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptCommand {
    pub t: f64,
    #[serde(flatten)]
    pub op: ScriptOp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Mode {
    #[default]
    Autopilot,
    Scripted {
        commands: Vec<ScriptCommand>,
    },
    Interactive,
}

fn default_speed() -> f64 {
    DEFAULT_SPEED_MPS
}
fn default_turn_rate() -> f64 {
    DEFAULT_TURN_RATE_DPS
}
fn default_timeout() -> f64 {
    DEFAULT_TIMEOUT_S
}
fn default_user() -> String {
    "sim_walker".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub poi: String,
    #[serde(default)]
    pub annotations: Option<String>,
    pub start: StartSpec,
    #[serde(default)]
    pub goal: Option<GoalSpec>,
    #[serde(default)]
    pub prefs: UserPrefs,
    #[serde(default)]
    pub drift: DriftModel,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_speed")]
    pub speed_mps: f64,
    #[serde(default = "default_turn_rate")]
    pub turn_rate_dps: f64,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    #[serde(default = "default_user")]
    pub user: String,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario, String> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let s: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            format!("{path}: {}", e.into_inner())
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.speed_mps > 0.0 && self.turn_rate_dps > 0.0) {
            return Err("speed_mps and turn_rate_dps must be positive".into());
        }
        if !(self.timeout_s > 0.0) {
            return Err("timeout_s must be positive".into());
        }
        if let Mode::Scripted { commands } = &self.mode {
            if commands.windows(2).any(|w| w[1].t < w[0].t) {
                return Err("mode.commands: commands must be time-ordered".into());
            }
        }
        self.prefs.validate().map_err(|e| format!("prefs.{e}"))
    }
}

/// A scenario with its POI and annotations read from disk.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub scene: Arc<SceneGraph>,
    pub annotations_jsonl: String,
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl LoadedScenario {
    /// Reads a scenario file; its `poi`/`annotations` paths are relative to the file.
    pub fn load(path: &Path) -> Result<LoadedScenario, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| load_err(path, e))?;
        let scenario = Scenario::parse(&text).map_err(|e| load_err(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_scenario(scenario, base)
    }

    pub fn from_scenario(scenario: Scenario, base: &Path) -> Result<LoadedScenario, SimError> {
        let poi_path = resolve(base, &scenario.poi);
        let poi = std::fs::read_to_string(&poi_path).map_err(|e| load_err(&poi_path, e))?;
        let scene = SceneGraph::load(&poi, Strictness::Strict).map_err(|e| load_err(&poi_path, e))?;
        let annotations_jsonl = match &scenario.annotations {
            Some(a) => {
                let p = resolve(base, a);
                std::fs::read_to_string(&p).map_err(|e| load_err(&p, e))?
            }
            None => String::new(),
        };
        Ok(LoadedScenario {
            scenario,
            scene: Arc::new(scene),
            annotations_jsonl,
        })
    }

    pub fn from_parts(scenario: Scenario, scene: SceneGraph, annotations_jsonl: &str) -> LoadedScenario {
        LoadedScenario {
            scenario,
            scene: Arc::new(scene),
            annotations_jsonl: annotations_jsonl.to_string(),
        }
    }
}

// --------------------------------------------------------------- transcript

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    Arrival,
    Stopped,
    Timeout,
    NoRoute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum SimRecord {
    Header {
        v: u32,
        scenario: String,
        seed: u64,
        poi_id: String,
        goal: Option<Point2>,
        start: Pose,
        tick_hz: u32,
    },
    Pose {
        t: f64,
        true_pose: Pose,
        reported_pose: Pose,
    },
    Landmark {
        t: f64,
        object_id: String,
        class: String,
    },
    End {
        t: f64,
        reason: EndReason,
        true_pose: Pose,
        reported_pose: Pose,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum TranscriptLine {
    Sim(SimRecord),
    Engine(EngineEvent),
}

const SIM_TYPES: &[&str] = &["header", "pose", "landmark", "end"];

pub fn parse_transcript(text: &str) -> Result<Vec<TranscriptLine>, SimError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let schema = |m: String| SimError::Schema { line: i + 1, message: m };
        let v: Value = serde_json::from_str(line).map_err(|e| schema(e.to_string()))?;
        let ty = v.get("type").and_then(Value::as_str).ok_or_else(|| schema("missing type".into()))?;
        let rec = if SIM_TYPES.contains(&ty) {
            TranscriptLine::Sim(serde_path_to_error::deserialize(v).map_err(|e| schema(e.to_string()))?)
        } else {
            TranscriptLine::Engine(serde_path_to_error::deserialize(v).map_err(|e| schema(e.to_string()))?)
        };
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerRecord {
    pub t: f64,
    pub annotation_id: String,
    pub category: Category,
    pub vibration_s: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub success: bool,
    pub engine_arrived: bool,
    pub end_reason: Option<EndReason>,
    pub elapsed_s: f64,
    pub path_length_m: f64,
    pub final_goal_distance_m: Option<f64>,
    pub event_counts: BTreeMap<String, usize>,
    pub triggers: Vec<TriggerRecord>,
    pub landmarks: Vec<String>,
}

/// Builds the report from transcript records alone.
pub fn report_from_records(lines: &[TranscriptLine]) -> Result<RunReport, SimError> {
    if lines.is_empty() {
        return Ok(RunReport::default());
    }
    let Some(TranscriptLine::Sim(SimRecord::Header { goal, .. })) = lines.first() else {
        return Err(SimError::Schema {
            line: 1,
            message: "first record must be the header".into(),
        });
    };
    let mut r = RunReport::default();
    let mut track: Vec<Point2> = Vec::new();
    let mut landmarks = BTreeSet::new();
    let mut ended = false;
    for line in lines {
        match line {
            TranscriptLine::Sim(SimRecord::Header { .. }) => {}
            TranscriptLine::Sim(SimRecord::Pose { true_pose, .. }) => track.push(true_pose.position),
            TranscriptLine::Sim(SimRecord::Landmark { class, .. }) => {
                landmarks.insert(class.clone());
            }
            TranscriptLine::Sim(SimRecord::End {
                t, reason, true_pose, ..
            }) => {
                track.push(true_pose.position);
                r.elapsed_s = *t;
                r.end_reason = Some(*reason);
                r.final_goal_distance_m = goal.map(|g| g.distance(true_pose.position));
                ended = true;
            }
            TranscriptLine::Engine(e) => {
                *r.event_counts.entry(e.label().to_string()).or_default() += 1;
                match e {
                    EngineEvent::Instruction {
                        kind: EventKind::Arrival, ..
                    } => r.engine_arrived = true,
                    EngineEvent::AnnotationTrigger {
                        t,
                        annotation_id,
                        category,
                        ..
                    } => r.triggers.push(TriggerRecord {
                        t: *t,
                        annotation_id: annotation_id.clone(),
                        category: *category,
                        vibration_s: None,
                    }),
                    EngineEvent::Vibration { duration_s, .. } => {
                        if let Some(last) = r.triggers.last_mut().filter(|x| x.vibration_s.is_none()) {
                            last.vibration_s = Some(*duration_s);
                        }
                    }
                    _ => {}
                }
            }
        }
    }
    if !ended {
        return Err(SimError::Schema {
            line: lines.len(),
            message: "transcript has no end record".into(),
        });
    }
    r.path_length_m = track.windows(2).map(|w| w[0].distance(w[1])).sum();
    r.success = r.final_goal_distance_m.is_some_and(|d| d <= SUCCESS_RADIUS_M);
    r.landmarks = landmarks.into_iter().collect();
    Ok(r)
}

pub fn replay(transcript: &str) -> Result<RunReport, SimError> {
    report_from_records(&parse_transcript(transcript)?)
}

// --------------------------------------------------------------------- runs

#[derive(Debug, Clone)]
pub struct TrajectorySample {
    pub t: f64,
    pub true_pose: Pose,
    pub reported_pose: Pose,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub transcript: String,
    pub trajectory: Vec<TrajectorySample>,
    pub goal: Option<Point2>,
}

struct Writer {
    text: String,
}

impl Writer {
    fn put<T: Serialize>(&mut self, rec: &T) {
        self.text.push_str(&serde_json::to_string(rec).expect("record serializes"));
        self.text.push('\n');
    }
}

fn resolve_goal(goal: &GoalSpec, scene: &SceneGraph, grid: &NavGrid, store: &AnnotationStore, from: &Pose) -> Option<Point2> {
    match goal {
        GoalSpec::Point(p) => Some(*p),
        GoalSpec::Class(c) => {
            let class = scene.resolve_class(c)?;
            let (o, _) = scene.nearest_by_class(from, &class)?;
            approach_point(grid, o, from.position)
        }
        GoalSpec::Annotation(id) => match &store.get(id)?.anchor {
            Anchor::Point(p) => Some(*p),
            Anchor::Object(oid) => approach_point(grid, scene.object(oid)?, from.position),
        },
    }
}

/// Runs a scenario at 10 Hz. `seed` overrides the scenario seed.
pub fn run_scenario(loaded: &LoadedScenario, seed: Option<u64>) -> Result<RunOutput, SimError> {
    let sc = &loaded.scenario;
    let seed = seed.unwrap_or(sc.seed);
    let bad = |m: String| SimError::ScenarioLoad {
        path: sc.name.clone(),
        message: m,
    };
    if matches!(sc.mode, Mode::Interactive) {
        return Err(bad("interactive scenarios run on the server".into()));
    }
    let scene = loaded.scene.clone();
    let grid = Arc::new(
        NavGrid::build(&scene, DEFAULT_RESOLUTION_M, DEFAULT_CLEARANCE_M).map_err(|e| bad(e.to_string()))?,
    );
    let store = AnnotationStore::load_jsonl(&loaded.annotations_jsonl, scene.clone()).map_err(|e| bad(e.to_string()))?;
    let start = sc.start.pose();
    if !grid.is_walkable_point(start.position) {
        return Err(bad(format!("start {} is not walkable", start.position)));
    }
    let goal = match &sc.goal {
        Some(g) => Some(resolve_goal(g, &scene, &grid, &store, &start).ok_or_else(|| bad(format!("cannot resolve goal {g:?}")))?),
        None => None,
    };
    let world = World {
        scene: scene.clone(),
        grid: grid.clone(),
        store: Arc::new(RwLock::new(store)),
        ports: Ports::default(),
    };
    let mut engine = Engine::new(world, SessionContext::new(&sc.user, sc.prefs.clone()));
    let mut state = WalkerState::new(start);
    state.speed_mps = sc.speed_mps;
    state.turn_rate_dps = sc.turn_rate_dps;
    let mut drift = DriftState::new(sc.drift.clone(), seed);

    let mut w = Writer { text: String::new() };
    w.put(&SimRecord::Header {
        v: 1,
        scenario: sc.name.clone(),
        seed,
        poi_id: scene.poi_id.clone(),
        goal,
        start,
        tick_hz: TICK_HZ,
    });
    let mut trajectory = Vec::new();
    let mut seen_objects = BTreeSet::new();
    let mut walked = 0.0;
    let mut route_len = 0.0;

    let offset = drift.advance(0.0, 0.0, 0.0);
    state.reported_pose = Pose::new(state.true_pose.position + offset, state.true_pose.heading_deg);

    let mut events = Vec::new();
    let mut end_reason = None;
    if let Some(g) = goal {
        match plan_route(&scene, &grid, &state.reported_pose, g) {
            Ok(route) => {
                route_len = route.total_length_m;
                events.extend(engine.start_navigation(route, &state.reported_pose, 0.0));
            }
            Err(e) => {
                log::info!("no route: {e}");
                end_reason = Some(EndReason::NoRoute);
            }
        }
    }
    events.extend(engine.tick(&state.reported_pose, 0.0));
    let note_landmarks = |t: f64, p: Point2, seen: &mut BTreeSet<String>, w: &mut Writer| {
        for o in &scene.objects {
            if o.distance_to(p) <= LANDMARK_RADIUS_M && seen.insert(o.id.clone()) {
                w.put(&SimRecord::Landmark {
                    t,
                    object_id: o.id.clone(),
                    class: o.class_label.clone(),
                });
            }
        }
    };
    note_landmarks(0.0, state.true_pose.position, &mut seen_objects, &mut w);
    w.put(&SimRecord::Pose {
        t: 0.0,
        true_pose: state.true_pose,
        reported_pose: state.reported_pose,
    });
    for e in &events {
        w.put(e);
    }
    trajectory.push(TrajectorySample {
        t: 0.0,
        true_pose: state.true_pose,
        reported_pose: state.reported_pose,
    });

    let script: &[ScriptCommand] = match &sc.mode {
        Mode::Scripted { commands } => commands,
        _ => &[],
    };
    let scripted = matches!(sc.mode, Mode::Scripted { .. });
    let mut next_cmd = 0;
    let mut held = Control::Stop;
    let mut k: u64 = 0;
    let mut t = 0.0;
    if engine.arrived() {
        end_reason = Some(EndReason::Arrival);
    }
    while end_reason.is_none() {
        k += 1;
        t = k as f64 / TICK_HZ as f64;
        let mut tick_events = Vec::new();
        let mut turn_dt = TICK_S;

        let control = if scripted {
            // commands due by t take effect this tick
            while next_cmd < script.len() && script[next_cmd].t <= t {
                let cmd = &script[next_cmd];
                next_cmd += 1;
                match &cmd.op {
                    ScriptOp::Advance => held = Control::Advance,
                    ScriptOp::TurnLeft => held = Control::TurnLeft,
                    ScriptOp::TurnRight => held = Control::TurnRight,
                    ScriptOp::Stop => end_reason = Some(EndReason::Stopped),
                    ScriptOp::Query { text } => match engine.query(text, &state.reported_pose, t) {
                        Ok((_, ev)) => tick_events.extend(ev),
                        Err(e) => log::warn!("query failed: {e}"),
                    },
                    ScriptOp::Prefs { delta } => match engine.apply_prefs(delta, t) {
                        Ok(ev) => tick_events.extend(ev),
                        Err(e) => log::warn!("prefs rejected: {e}"),
                    },
                }
            }
            if end_reason.is_some() {
                for e in &tick_events {
                    w.put(e);
                }
                break;
            }
            held
        } else {
            let compass = engine.compass_now(&state.reported_pose, t).and_then(|c| match c {
                EngineEvent::Compass {
                    level,
                    rel_bearing_to_next,
                    ..
                } => Some((level, rel_bearing_to_next)),
                _ => None,
            });
            let c = autopilot_policy(&events, compass);
            // turns stop once the walker faces the target
            if let (Control::TurnLeft | Control::TurnRight, Some((_, rel))) = (c, compass) {
                turn_dt = (signed_bearing(rel).abs() / state.turn_rate_dps).min(TICK_S);
            }
            c
        };

        let before = state.true_pose.position;
        state = step(&state, control, turn_dt, &grid);
        walked += before.distance(state.true_pose.position);
        let progress = if route_len > 0.0 { walked / route_len } else { 0.0 };
        let offset = drift.advance(t, TICK_S, progress);
        state.reported_pose = Pose::new(state.true_pose.position + offset, state.true_pose.heading_deg);

        tick_events.extend(engine.tick(&state.reported_pose, t));
        note_landmarks(t, state.true_pose.position, &mut seen_objects, &mut w);
        if k % TICK_HZ as u64 == 0 {
            w.put(&SimRecord::Pose {
                t,
                true_pose: state.true_pose,
                reported_pose: state.reported_pose,
            });
        }
        for e in &tick_events {
            w.put(e);
        }
        trajectory.push(TrajectorySample {
            t,
            true_pose: state.true_pose,
            reported_pose: state.reported_pose,
        });
        events = tick_events;

        if engine.arrived() {
            end_reason = Some(EndReason::Arrival);
        } else if !scripted && goal.is_none() {
            end_reason = Some(EndReason::Stopped);
        } else if scripted && next_cmd >= script.len() && !engine.is_guiding() && held == Control::Stop {
            end_reason = Some(EndReason::Stopped);
        } else if t >= sc.timeout_s - 1e-9 {
            end_reason = Some(EndReason::Timeout);
        }
    }
    w.put(&SimRecord::End {
        t,
        reason: end_reason.unwrap_or(EndReason::Stopped),
        true_pose: state.true_pose,
        reported_pose: state.reported_pose,
    });
    let report = replay(&w.text)?;
    Ok(RunOutput {
        report,
        transcript: w.text,
        trajectory,
        goal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn open_grid() -> NavGrid {
        NavGrid::from_mask(Point2::new(-10.0, -10.0), 0.25, 80, 80, vec![true; 6400])
    }

    #[test]
    fn step_examples() {
        let g = open_grid();
        let s = WalkerState::new(Pose::new(Point2::new(0.0, 0.0), 0.0));
        let a = step(&s, Control::Advance, 1.0, &g);
        assert!((a.true_pose.position.y - 1.0).abs() < 1e-9 && a.true_pose.position.x.abs() < 1e-9);
        let l = step(&s, Control::TurnLeft, 0.5, &g);
        assert_eq!(l.true_pose.heading_deg, 315.0);

        let mut mask = vec![true; 6400];
        for x in 0..80 {
            mask[44 * 80 + x] = false; // y in [1, 1.25)
        }
        let wall = NavGrid::from_mask(Point2::new(-10.0, -10.0), 0.25, 80, 80, mask);
        let mut s2 = s;
        for _ in 0..30 {
            s2 = step(&s2, Control::Advance, 0.1, &wall);
        }
        assert!(s2.true_pose.position.y < 1.0 && s2.true_pose.position.y > 0.9);
        assert_eq!(s2.true_pose.heading_deg, 0.0);
        assert!(wall.is_walkable_point(s2.true_pose.position));
    }

    #[test]
    fn autopilot_examples() {
        assert_eq!(autopilot_policy(&[], Some((CompassLevel::Low, 40.0))), Control::TurnRight);
        assert_eq!(autopilot_policy(&[], Some((CompassLevel::High, 0.0))), Control::Advance);
        let arrival = EngineEvent::Instruction {
            t: 0.0,
            kind: EventKind::Arrival,
            text: String::new(),
            rel_bearing: 0.0,
            distance_m: 0.0,
        };
        assert_eq!(autopilot_policy(&[arrival], Some((CompassLevel::High, 0.0))), Control::Stop);
    }

    #[test]
    fn random_walk_is_seeded() {
        let m = DriftModel::RandomWalk {
            sigma_m_per_sqrt_s: 0.3,
            seed: None,
        };
        let run = |seed| {
            let mut d = DriftState::new(m.clone(), seed);
            (1..50).map(|k| d.advance(k as f64 * 0.1, 0.1, 0.0)).collect::<Vec<_>>()
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
    }

    fn scenario(goal: GoalSpec, drift: DriftModel) -> LoadedScenario {
        let sc = Scenario {
            name: "t".into(),
            poi: String::new(),
            annotations: None,
            start: StartSpec {
                x: 0.0,
                y: -19.2,
                heading: 0.0,
            },
            goal: Some(goal),
            prefs: UserPrefs::default(),
            drift,
            mode: Mode::Autopilot,
            seed: 7,
            speed_mps: 1.0,
            turn_rate_dps: 90.0,
            timeout_s: 600.0,
            user: "w".into(),
        };
        LoadedScenario::from_parts(sc, fixtures::golden_square(), fixtures::GOLDEN_SQUARE_ANNOTATIONS)
    }

    #[test]
    fn emma_autopilot_succeeds() {
        let out = run_scenario(&scenario(GoalSpec::Annotation("ann_21".into()), DriftModel::None), None).unwrap();
        let r = &out.report;
        assert!(r.success, "{r:?}");
        assert_eq!(r.event_counts.get("turn"), Some(&3), "{r:?}");
        assert!(r.elapsed_s >= 30.0 && r.elapsed_s <= 60.0, "{r:?}");
        assert!(r.landmarks.iter().any(|c| c == "flower bed"));
        assert_eq!(replay(&out.transcript).unwrap(), *r);
    }

    #[test]
    fn replay_errors() {
        assert_eq!(replay("").unwrap(), RunReport::default());
        let out = run_scenario(&scenario(GoalSpec::Annotation("ann_21".into()), DriftModel::None), None).unwrap();
        let cut: String = out.transcript.lines().take(5).map(|l| format!("{l}\n")).collect();
        assert!(matches!(replay(&cut), Err(SimError::Schema { .. })));
        let half = &out.transcript[..out.transcript.len() - 20];
        assert!(matches!(replay(half), Err(SimError::Schema { .. })));
    }
}
