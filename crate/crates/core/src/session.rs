//! Interactive session: a server-side walker driven by client messages.
//!
//! The wire format is JSON objects discriminated by `"type"`. Every server
//! message carries `"v": 1` and a per-session `"seq"` that increases by one.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::engine::{Engine, EngineEvent};
use crate::geometry::Pose;
use crate::orchestrator::{OrchestratorError, SessionContext, World};
use crate::prefs::UserPrefs;
use crate::sim::{step, Control, WalkerState, TICK_S};

pub const WIRE_VERSION: u32 = 1;
/// Longest control step a client may request at once.
pub const MAX_CONTROL_DT_S: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", deny_unknown_fields)]
pub enum ClientMessage {
    Control { action: Control, dt: f64 },
    Query { text: String },
    Prefs { delta: Value },
}

impl ClientMessage {
    /// Parses one text frame. `"v"` is optional but must be 1 when present.
    pub fn parse(text: &str) -> Result<ClientMessage, String> {
        let mut v: Value = serde_json::from_str(text).map_err(|e| format!("malformed JSON: {e}"))?;
        let obj = v.as_object_mut().ok_or("message must be a JSON object")?;
        if let Some(ver) = obj.remove("v") {
            if ver.as_u64() != Some(WIRE_VERSION as u64) {
                return Err(format!("unsupported version {ver}"));
            }
        }
        match obj.get("type").and_then(Value::as_str) {
            None => return Err("missing \"type\"".into()),
            Some("control" | "query" | "prefs") => {}
            Some(other) => return Err(format!("unknown message type '{other}'")),
        }
        let msg: ClientMessage = serde_path_to_error::deserialize(v).map_err(|e| {
            let path = e.path().to_string();
            if path == "." {
                e.inner().to_string()
            } else {
                format!("{path}: {}", e.inner())
            }
        })?;
        if let ClientMessage::Control { dt, .. } = msg {
            if !(dt > 0.0 && dt <= MAX_CONTROL_DT_S) {
                return Err(format!("dt: must lie in (0, {MAX_CONTROL_DT_S}]"));
            }
        }
        Ok(msg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Schema,
    Internal,
    UnknownPoi,
    PortUnavailable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum SessionEvent {
    State {
        t: f64,
        session_id: String,
        poi_id: String,
        user_id: String,
        pose: Pose,
        guiding: bool,
    },
    Error {
        kind: ErrorKind,
        message: String,
        correlation_id: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ServerBody {
    Engine(EngineEvent),
    Session(SessionEvent),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerMessage {
    pub v: u32,
    pub seq: u64,
    #[serde(flatten)]
    pub body: ServerBody,
}

impl ServerMessage {
    pub fn kind(&self) -> &'static str {
        match &self.body {
            ServerBody::Engine(e) => match e {
                EngineEvent::Instruction { .. } => "instruction",
                other => other.label(),
            },
            ServerBody::Session(SessionEvent::State { .. }) => "state",
            ServerBody::Session(SessionEvent::Error { .. }) => "error",
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server message serializes")
    }
}

/// Error frame for failures that happen before a session exists.
pub fn standalone_error(kind: ErrorKind, message: &str, correlation_id: &str) -> ServerMessage {
    ServerMessage {
        v: WIRE_VERSION,
        seq: 0,
        body: ServerBody::Session(SessionEvent::Error {
            kind,
            message: message.to_string(),
            correlation_id: correlation_id.to_string(),
        }),
    }
}

pub struct LiveSession {
    pub session_id: String,
    pub poi_id: String,
    engine: Engine,
    walker: WalkerState,
    epoch: f64,
    elapsed: f64,
    seq: u64,
}

impl LiveSession {
    /// Opens a session at the POI spawn. `epoch` is the wall time the session
    /// clock starts from; returns the session and its initial state frame.
    pub fn open(session_id: &str, world: World, user_id: &str, prefs: UserPrefs, epoch: f64) -> (LiveSession, Vec<ServerMessage>) {
        let spawn = world.scene.spawn_pose();
        let poi_id = world.scene.poi_id.clone();
        let mut s = LiveSession {
            session_id: session_id.to_string(),
            poi_id,
            engine: Engine::new(world, SessionContext::new(user_id, prefs)),
            walker: WalkerState::new(spawn),
            epoch,
            elapsed: 0.0,
            seq: 0,
        };
        let state = s.state_event();
        let first = s.wrap(ServerBody::Session(state));
        (s, vec![first])
    }

    pub fn now(&self) -> f64 {
        self.epoch + self.elapsed
    }

    pub fn pose(&self) -> Pose {
        self.walker.true_pose
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    fn wrap(&mut self, body: ServerBody) -> ServerMessage {
        let m = ServerMessage {
            v: WIRE_VERSION,
            seq: self.seq,
            body,
        };
        self.seq += 1;
        m
    }

    fn state_event(&self) -> SessionEvent {
        SessionEvent::State {
            t: self.now(),
            session_id: self.session_id.clone(),
            poi_id: self.poi_id.clone(),
            user_id: self.engine.ctx.user_id.clone(),
            pose: self.walker.true_pose,
            guiding: self.engine.is_guiding(),
        }
    }

    fn error(&mut self, kind: ErrorKind, message: String) -> ServerMessage {
        let correlation_id = format!("{}-{}", self.session_id, self.seq);
        self.wrap(ServerBody::Session(SessionEvent::Error {
            kind,
            message,
            correlation_id,
        }))
    }

    fn engine_events(&mut self, events: Vec<EngineEvent>) -> Vec<ServerMessage> {
        events.into_iter().map(|e| self.wrap(ServerBody::Engine(e))).collect()
    }

    /// Handles one raw text frame. The response always ends with a state frame.
    pub fn handle_text(&mut self, text: &str) -> Vec<ServerMessage> {
        match ClientMessage::parse(text) {
            Ok(m) => self.handle(m),
            Err(e) => {
                let err = self.error(ErrorKind::Schema, e);
                vec![err, self.state_frame()]
            }
        }
    }

    fn state_frame(&mut self) -> ServerMessage {
        let state = self.state_event();
        self.wrap(ServerBody::Session(state))
    }

    pub fn handle(&mut self, msg: ClientMessage) -> Vec<ServerMessage> {
        let mut out = self.dispatch(msg);
        out.push(self.state_frame());
        out
    }

    fn dispatch(&mut self, msg: ClientMessage) -> Vec<ServerMessage> {
        match msg {
            ClientMessage::Control { action, dt } => self.control(action, dt),
            ClientMessage::Query { text } => {
                let pose = self.walker.true_pose;
                let now = self.now();
                match self.engine.query(&text, &pose, now) {
                    Ok((_, events)) => self.engine_events(events),
                    Err(OrchestratorError::PortUnavailable(kind, m)) => {
                        vec![self.error(ErrorKind::PortUnavailable, format!("{kind}: {m}"))]
                    }
                }
            }
            ClientMessage::Prefs { delta } => {
                let now = self.now();
                match self.engine.apply_prefs(&delta, now) {
                    Ok(events) => self.engine_events(events),
                    Err(e) => vec![self.error(ErrorKind::Schema, e.to_string())],
                }
            }
        }
    }

    /// Steps the walker in ticks of at most 0.1 s, then reports the compass
    /// while guiding.
    fn control(&mut self, action: Control, dt: f64) -> Vec<ServerMessage> {
        let grid = self.engine.world.grid.clone();
        let mut events = Vec::new();
        let mut left = dt;
        while left > 1e-9 {
            let h = left.min(TICK_S);
            self.walker = step(&self.walker, action, h, &grid);
            self.elapsed += h;
            left -= h;
            let pose = self.walker.true_pose;
            let now = self.now();
            events.extend(
                self.engine
                    .tick(&pose, now)
                    .into_iter()
                    .filter(|e| !matches!(e, EngineEvent::Compass { .. })),
            );
        }
        let pose = self.walker.true_pose;
        let now = self.now();
        events.extend(self.engine.compass_now(&pose, now));
        self.engine_events(events)
    }
}
