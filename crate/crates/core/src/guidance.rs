//! Turn-by-turn instruction state machine and audio compass.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    cardinal_word, format_distance, normalize_deg, relative_bearing, signed_bearing, to_cardinal, to_clock_hour,
    to_egocentric, DirectionFormat, GeometryError, Point2, Pose, Segment,
};
use crate::navgrid::Route;
use crate::prefs::UserPrefs;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    pub arrival_radius_m: f64,
    pub waypoint_radius_m: f64,
    pub deviation_threshold_m: f64,
    pub confirm_period_s: f64,
    pub distance_update_period_s: f64,
    /// Deviation warnings repeat at this period while off route.
    pub deviation_repeat_s: f64,
    pub replan_after_deviations: u32,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            arrival_radius_m: 1.0,
            waypoint_radius_m: 1.0,
            deviation_threshold_m: 2.0,
            confirm_period_s: 10.0,
            distance_update_period_s: 30.0,
            deviation_repeat_s: 5.0,
            replan_after_deviations: 2,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GuidanceError {
    #[error("route has fewer than two waypoints")]
    EmptyRoute,
    #[error("guidance session is not active")]
    SessionNotActive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Turn,
    Confirm,
    Deviation,
    DistanceUpdate,
    Arrival,
    HapticHint,
}

impl EventKind {
    pub const ALL: [EventKind; 6] = [
        EventKind::Turn,
        EventKind::Confirm,
        EventKind::Deviation,
        EventKind::DistanceUpdate,
        EventKind::Arrival,
        EventKind::HapticHint,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::Turn => "turn",
            EventKind::Confirm => "confirm",
            EventKind::Deviation => "deviation",
            EventKind::DistanceUpdate => "distance_update",
            EventKind::Arrival => "arrival",
            EventKind::HapticHint => "haptic_hint",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionEvent {
    pub kind: EventKind,
    pub text: String,
    pub rel_bearing: f64,
    pub distance_m: f64,
    pub timestamp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompassLevel {
    High,
    Low,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompassSignal {
    pub level: CompassLevel,
    pub rel_bearing_to_next: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionState {
    Active,
    Arrived,
    Aborted,
}

pub fn compass(pose: &Pose, target: Point2, aligned_threshold_deg: f64) -> Result<CompassSignal, GeometryError> {
    let b = relative_bearing(pose, target)?;
    let err = b.min(360.0 - b);
    Ok(CompassSignal {
        level: if err <= aligned_threshold_deg {
            CompassLevel::High
        } else {
            CompassLevel::Low
        },
        rel_bearing_to_next: b,
    })
}

fn round_half_away(x: f64) -> f64 {
    x.round()
}

fn is_egocentric(f: DirectionFormat) -> bool {
    matches!(f, DirectionFormat::Egocentric8 | DirectionFormat::EgocentricDegrees)
}

fn distance_text(distance_m: f64, prefs: &UserPrefs) -> String {
    format_distance(distance_m.max(0.0), prefs.unit)
        .map(|r| r.text)
        .unwrap_or_else(|_| "an unknown distance".into())
}

/// Imperative steering phrase: "11 o'clock", "Turn forward-left", ...
fn steer_phrase(rel_bearing: f64, heading_deg: f64, prefs: &UserPrefs) -> String {
    match prefs.direction_format {
        DirectionFormat::ClockFace => format!("{} o'clock", to_clock_hour(rel_bearing)),
        DirectionFormat::Egocentric8 => format!("Turn {}", to_egocentric(rel_bearing, 8)),
        DirectionFormat::EgocentricDegrees => {
            let r = round_half_away(signed_bearing(rel_bearing) / 5.0) * 5.0;
            if r == 0.0 {
                "Straight ahead".to_string()
            } else {
                let side = if r < 0.0 { "left" } else { "right" };
                format!("Turn {side} by {} degrees", r.abs())
            }
        }
        DirectionFormat::Cardinal => {
            let facing = cardinal_word(to_cardinal(normalize_deg(heading_deg)));
            let head = cardinal_word(to_cardinal(normalize_deg(heading_deg + rel_bearing)));
            format!("Facing {facing}. Head {head}")
        }
    }
}

/// Descriptive location phrase for distance updates: "at 11 o'clock", ...
fn locate_phrase(rel_bearing: f64, heading_deg: f64, prefs: &UserPrefs) -> String {
    match prefs.direction_format {
        DirectionFormat::ClockFace => format!("at {} o'clock", to_clock_hour(rel_bearing)),
        DirectionFormat::Egocentric8 => format!("to your {}", to_egocentric(rel_bearing, 8)),
        DirectionFormat::EgocentricDegrees => {
            let r = round_half_away(signed_bearing(rel_bearing) / 5.0) * 5.0;
            if r == 0.0 {
                "straight ahead".to_string()
            } else {
                let side = if r < 0.0 { "left" } else { "right" };
                format!("{} degrees to your {side}", r.abs())
            }
        }
        DirectionFormat::Cardinal => format!(
            "to the {}",
            cardinal_word(to_cardinal(normalize_deg(heading_deg + rel_bearing)))
        ),
    }
}

/// "at 2 o'clock, 5 meters" style location used in spoken descriptions.
pub fn describe_location(rel_bearing: f64, distance_m: f64, prefs: &UserPrefs, heading_deg: f64) -> String {
    format!(
        "{}, {}",
        locate_phrase(rel_bearing, heading_deg, prefs),
        distance_text(distance_m, prefs)
    )
}

/// Renders one instruction. `heading_deg` is only consulted by the cardinal format.
pub fn render_instruction(
    kind: EventKind,
    rel_bearing: f64,
    distance_m: f64,
    prefs: &UserPrefs,
    heading_deg: f64,
) -> String {
    let d = distance_text(distance_m, prefs);
    let wrong_way = prefs.explicit_wrong_way
        && is_egocentric(prefs.direction_format)
        && signed_bearing(rel_bearing).abs() > 135.0;
    match kind {
        EventKind::Turn => format!("{}, {d}", steer_phrase(rel_bearing, heading_deg, prefs)),
        EventKind::Confirm => format!("Correct direction, {d}"),
        EventKind::Deviation if wrong_way => format!("You are heading the wrong way. Turn around, {d}"),
        EventKind::Deviation => format!("Off route. {}, {d}", steer_phrase(rel_bearing, heading_deg, prefs)),
        EventKind::DistanceUpdate => format!(
            "Destination lies {}, {d}",
            locate_phrase(rel_bearing, heading_deg, prefs)
        ),
        EventKind::Arrival => "You have arrived at your destination".to_string(),
        EventKind::HapticHint => "Correct direction".to_string(),
    }
}

pub fn haptic_hint_text(object_class: &str, side: &str) -> String {
    format!("Follow the edge of the {object_class} on your {side}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickOutput {
    pub events: Vec<InstructionEvent>,
    pub compass: CompassSignal,
    pub replan_requested: bool,
}

#[derive(Debug, Clone)]
pub struct GuidanceSession {
    pub route: Route,
    pub prefs: UserPrefs,
    pub config: GuidanceConfig,
    pub segment_index: usize,
    pub last_confirm_time: f64,
    pub last_distance_update_time: f64,
    pub state: SessionState,
    consecutive_deviations: u32,
    last_deviation_time: Option<f64>,
    hinted_segment: Option<usize>,
}

fn bearing_or_ahead(pose: &Pose, target: Point2) -> f64 {
    relative_bearing(pose, target).unwrap_or(0.0)
}

/// Starts guidance along `route` from `pose`; returns the session and its
/// opening instruction (or an immediate Arrival for a zero-length route).
pub fn start_guidance(
    route: Route,
    prefs: UserPrefs,
    pose: &Pose,
    now: f64,
) -> Result<(GuidanceSession, Vec<InstructionEvent>), GuidanceError> {
    start_guidance_with(route, prefs, GuidanceConfig::default(), pose, now)
}

pub fn start_guidance_with(
    route: Route,
    prefs: UserPrefs,
    config: GuidanceConfig,
    pose: &Pose,
    now: f64,
) -> Result<(GuidanceSession, Vec<InstructionEvent>), GuidanceError> {
    if route.waypoints.len() < 2 {
        return Err(GuidanceError::EmptyRoute);
    }
    let mut s = GuidanceSession {
        route,
        prefs,
        config,
        segment_index: 0,
        last_confirm_time: now,
        last_distance_update_time: now,
        state: SessionState::Active,
        consecutive_deviations: 0,
        last_deviation_time: None,
        hinted_segment: None,
    };
    let events = if s.route.is_trivial() {
        s.state = SessionState::Arrived;
        vec![s.arrival_event(pose, now)]
    } else {
        vec![s.turn_event(pose, now)]
    };
    Ok((s, events))
}

impl GuidanceSession {
    pub fn target(&self) -> Point2 {
        self.route.waypoints[(self.segment_index + 1).min(self.route.waypoints.len() - 1)]
    }

    pub fn destination(&self) -> Point2 {
        self.route.destination()
    }

    pub fn is_active(&self) -> bool {
        self.state == SessionState::Active
    }

    pub fn abort(&mut self) {
        self.state = SessionState::Aborted;
    }

    fn event(&self, kind: EventKind, text: String, pose: &Pose, target: Point2, now: f64) -> InstructionEvent {
        InstructionEvent {
            kind,
            text,
            rel_bearing: bearing_or_ahead(pose, target),
            distance_m: pose.position.distance(target),
            timestamp: now,
        }
    }

    fn hint_suffix(&self) -> Option<String> {
        self.route
            .haptic_for(self.segment_index)
            .map(|h| haptic_hint_text(&h.object_class, h.side.as_str()))
    }

    fn turn_event(&self, pose: &Pose, now: f64) -> InstructionEvent {
        let t = self.target();
        let b = bearing_or_ahead(pose, t);
        let mut text = render_instruction(
            EventKind::Turn,
            b,
            pose.position.distance(t),
            &self.prefs,
            pose.heading_deg,
        );
        if let Some(h) = self.hint_suffix() {
            text = format!("{text}. {h}");
        }
        self.event(EventKind::Turn, text, pose, t, now)
    }

    fn arrival_event(&self, pose: &Pose, now: f64) -> InstructionEvent {
        let d = self.destination();
        let text = render_instruction(EventKind::Arrival, 0.0, 0.0, &self.prefs, pose.heading_deg);
        self.event(EventKind::Arrival, text, pose, d, now)
    }

    /// Distance left along the route from the projection onto the current segment.
    pub fn remaining_distance(&self, p: Point2) -> f64 {
        let t = self.target();
        let rest: f64 = self.route.waypoints[self.segment_index + 1..]
            .windows(2)
            .map(|w| w[0].distance(w[1]))
            .sum();
        p.distance(t) + rest
    }

    fn lateral_offset(&self, p: Point2) -> f64 {
        let a = self.route.waypoints[self.segment_index];
        Segment::new(a, self.target()).distance_to(p)
    }

    fn compass_now(&self, pose: &Pose) -> CompassSignal {
        let target = if self.is_active() { self.target() } else { self.destination() };
        compass(pose, target, self.prefs.compass_threshold_deg).unwrap_or(CompassSignal {
            level: CompassLevel::High,
            rel_bearing_to_next: 0.0,
        })
    }

    /// Swaps in a fresh route (after a replan) and announces its first leg.
    pub fn replace_route(&mut self, route: Route, pose: &Pose, now: f64) -> Result<Vec<InstructionEvent>, GuidanceError> {
        if !self.is_active() {
            return Err(GuidanceError::SessionNotActive);
        }
        if route.waypoints.len() < 2 {
            return Err(GuidanceError::EmptyRoute);
        }
        self.route = route;
        self.segment_index = 0;
        self.consecutive_deviations = 0;
        self.last_deviation_time = None;
        self.hinted_segment = None;
        if self.route.is_trivial() {
            self.state = SessionState::Arrived;
            return Ok(vec![self.arrival_event(pose, now)]);
        }
        Ok(vec![self.turn_event(pose, now)])
    }

    pub fn tick(&mut self, pose: &Pose, now: f64) -> Result<TickOutput, GuidanceError> {
        if !self.is_active() {
            return Err(GuidanceError::SessionNotActive);
        }
        let cfg = self.config;
        let p = pose.position;
        let mut events = Vec::new();
        let mut replan_requested = false;

        if p.distance(self.destination()) <= cfg.arrival_radius_m {
            self.state = SessionState::Arrived;
            events.push(self.arrival_event(pose, now));
            return Ok(TickOutput {
                events,
                compass: self.compass_now(pose),
                replan_requested,
            });
        }

        let last_segment = self.route.segment_count() - 1;
        if self.segment_index < last_segment && p.distance(self.target()) <= cfg.waypoint_radius_m {
            while self.segment_index < last_segment && p.distance(self.target()) <= cfg.waypoint_radius_m {
                self.segment_index += 1;
            }
            self.consecutive_deviations = 0;
            self.last_deviation_time = None;
            events.push(self.turn_event(pose, now));
        } else if self.lateral_offset(p) > cfg.deviation_threshold_m {
            let due = self
                .last_deviation_time
                .is_none_or(|t| now - t >= cfg.deviation_repeat_s);
            if due {
                let t = self.target();
                let b = bearing_or_ahead(pose, t);
                let text = render_instruction(EventKind::Deviation, b, p.distance(t), &self.prefs, pose.heading_deg);
                events.push(self.event(EventKind::Deviation, text, pose, t, now));
                self.last_deviation_time = Some(now);
                self.consecutive_deviations += 1;
                if self.consecutive_deviations >= cfg.replan_after_deviations {
                    replan_requested = true;
                    self.consecutive_deviations = 0;
                }
            }
        } else {
            self.consecutive_deviations = 0;
            self.last_deviation_time = None;
            let c = self.compass_now(pose);
            if now - self.last_confirm_time >= cfg.confirm_period_s && c.level == CompassLevel::High {
                let t = self.target();
                let text = render_instruction(EventKind::Confirm, 0.0, p.distance(t), &self.prefs, pose.heading_deg);
                events.push(self.event(EventKind::Confirm, text, pose, t, now));
                self.last_confirm_time = now;
                if self.hinted_segment != Some(self.segment_index) {
                    if let Some(h) = self.hint_suffix() {
                        events.push(self.event(
                            EventKind::HapticHint,
                            format!("Correct direction. {h}"),
                            pose,
                            t,
                            now,
                        ));
                        self.hinted_segment = Some(self.segment_index);
                    }
                }
            } else if now - self.last_distance_update_time >= cfg.distance_update_period_s {
                let d = self.destination();
                let b = bearing_or_ahead(pose, d);
                let text = render_instruction(
                    EventKind::DistanceUpdate,
                    b,
                    self.remaining_distance(p),
                    &self.prefs,
                    pose.heading_deg,
                );
                let mut e = self.event(EventKind::DistanceUpdate, text, pose, d, now);
                e.distance_m = self.remaining_distance(p);
                events.push(e);
                self.last_distance_update_time = now;
            }
        }
        Ok(TickOutput {
            events,
            compass: self.compass_now(pose),
            replan_requested,
        })
    }
}
