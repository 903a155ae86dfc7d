//! Per-walker runtime wiring guidance, annotation triggers, playback and queries.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::annotations::{
    aggregate_prompt, estimate_duration_s, schedule_after, AccessMode, Category, MessageKey, Outcome, QueuedMessage,
    TriggerEngine,
};
use crate::geometry::Pose;
use crate::guidance::{start_guidance, CompassLevel, EventKind, GuidanceSession, InstructionEvent};
use crate::navgrid::{plan_route, Route};
use crate::orchestrator::{handle_query, Action, AgentReply, Intent, OrchestratorError, SessionContext, World};
use crate::prefs::{PrefsError, UserPrefs};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum EngineEvent {
    Instruction {
        t: f64,
        kind: EventKind,
        text: String,
        rel_bearing: f64,
        distance_m: f64,
    },
    Compass {
        t: f64,
        level: CompassLevel,
        rel_bearing_to_next: f64,
    },
    AnnotationTrigger {
        t: f64,
        annotation_id: String,
        category: Category,
        mode: AccessMode,
        text: String,
        distance_m: f64,
    },
    Prompt {
        t: f64,
        text: String,
    },
    Playback {
        t: f64,
        key: MessageKey,
        start_time: f64,
        duration_s: f64,
        outcome: Outcome,
    },
    Vibration {
        t: f64,
        duration_s: f64,
    },
    PrefsUpdate {
        t: f64,
        prefs: UserPrefs,
    },
    Route {
        t: f64,
        route: Route,
    },
    Reply {
        t: f64,
        query: String,
        intent: Intent,
        text: String,
        actions: Vec<Action>,
    },
}

impl EngineEvent {
    pub fn t(&self) -> f64 {
        match self {
            EngineEvent::Instruction { t, .. }
            | EngineEvent::Compass { t, .. }
            | EngineEvent::AnnotationTrigger { t, .. }
            | EngineEvent::Prompt { t, .. }
            | EngineEvent::Playback { t, .. }
            | EngineEvent::Vibration { t, .. }
            | EngineEvent::PrefsUpdate { t, .. }
            | EngineEvent::Route { t, .. }
            | EngineEvent::Reply { t, .. } => *t,
        }
    }

    /// Short label used for per-kind counts: the instruction kind or the event type.
    pub fn label(&self) -> &'static str {
        match self {
            EngineEvent::Instruction { kind, .. } => kind.as_str(),
            EngineEvent::Compass { .. } => "compass",
            EngineEvent::AnnotationTrigger { .. } => "annotation_trigger",
            EngineEvent::Prompt { .. } => "prompt",
            EngineEvent::Playback { .. } => "playback",
            EngineEvent::Vibration { .. } => "vibration",
            EngineEvent::PrefsUpdate { .. } => "prefs_update",
            EngineEvent::Route { .. } => "route",
            EngineEvent::Reply { .. } => "reply",
        }
    }

    fn instruction(e: InstructionEvent) -> Self {
        EngineEvent::Instruction {
            t: e.timestamp,
            kind: e.kind,
            text: e.text,
            rel_bearing: e.rel_bearing,
            distance_m: e.distance_m,
        }
    }
}

#[derive(Debug)]
pub struct Engine {
    pub world: World,
    pub ctx: SessionContext,
    guidance: Option<GuidanceSession>,
    triggers: TriggerEngine,
    channel_free: f64,
    last_compass: Option<CompassLevel>,
}

impl Engine {
    pub fn new(world: World, ctx: SessionContext) -> Self {
        Engine {
            world,
            ctx,
            guidance: None,
            triggers: TriggerEngine::new(),
            channel_free: f64::NEG_INFINITY,
            last_compass: None,
        }
    }

    pub fn prefs(&self) -> &UserPrefs {
        &self.ctx.prefs
    }

    pub fn guidance(&self) -> Option<&GuidanceSession> {
        self.guidance.as_ref()
    }

    pub fn is_guiding(&self) -> bool {
        self.guidance.as_ref().is_some_and(|g| g.is_active())
    }

    pub fn start_navigation(&mut self, route: Route, pose: &Pose, now: f64) -> Vec<EngineEvent> {
        let mut out = vec![EngineEvent::Route {
            t: now,
            route: route.clone(),
        }];
        match start_guidance(route, self.ctx.prefs.clone(), pose, now) {
            Ok((g, events)) => {
                out.extend(events.into_iter().map(EngineEvent::instruction));
                self.guidance = Some(g);
                self.last_compass = None;
                out.extend(self.compass_event(pose, now, true));
            }
            Err(e) => log::warn!("guidance not started: {e}"),
        }
        out
    }

    pub fn stop_navigation(&mut self) {
        if let Some(g) = self.guidance.as_mut() {
            g.abort();
        }
    }

    fn compass_event(&mut self, pose: &Pose, now: f64, force: bool) -> Option<EngineEvent> {
        let g = self.guidance.as_ref().filter(|g| g.is_active())?;
        let c = crate::guidance::compass(pose, g.target(), self.ctx.prefs.compass_threshold_deg).ok()?;
        if !force && self.last_compass == Some(c.level) {
            return None;
        }
        self.last_compass = Some(c.level);
        Some(EngineEvent::Compass {
            t: now,
            level: c.level,
            rel_bearing_to_next: c.rel_bearing_to_next,
        })
    }

    /// Current compass reading, if guidance is running.
    pub fn compass_now(&self, pose: &Pose, now: f64) -> Option<EngineEvent> {
        let g = self.guidance.as_ref().filter(|g| g.is_active())?;
        let c = crate::guidance::compass(pose, g.target(), self.ctx.prefs.compass_threshold_deg).ok()?;
        Some(EngineEvent::Compass {
            t: now,
            level: c.level,
            rel_bearing_to_next: c.rel_bearing_to_next,
        })
    }

    /// One engine step at the reported pose.
    pub fn tick(&mut self, pose: &Pose, now: f64) -> Vec<EngineEvent> {
        let mut out = Vec::new();
        if let Some(g) = self.guidance.as_mut().filter(|g| g.is_active()) {
            match g.tick(pose, now) {
                Ok(tick) => {
                    out.extend(tick.events.into_iter().map(EngineEvent::instruction));
                    if tick.replan_requested {
                        let dest = g.destination();
                        match plan_route(&self.world.scene, &self.world.grid, pose, dest) {
                            Ok(route) => {
                                out.push(EngineEvent::Route {
                                    t: now,
                                    route: route.clone(),
                                });
                                if let Ok(ev) = g.replace_route(route, pose, now) {
                                    out.extend(ev.into_iter().map(EngineEvent::instruction));
                                }
                            }
                            Err(e) => log::info!("replan failed: {e}"),
                        }
                    }
                }
                Err(e) => log::warn!("guidance tick: {e}"),
            }
            out.extend(self.compass_event(pose, now, false));
        }
        out.extend(self.scan_annotations(pose, now));
        out
    }

    fn scan_annotations(&mut self, pose: &Pose, now: f64) -> Vec<EngineEvent> {
        let store = self.world.store.read().expect("store lock");
        let fired = self.triggers.scan(&store, pose, &self.ctx.prefs.category_prefs, now);
        if fired.is_empty() {
            return Vec::new();
        }
        let mut out = Vec::new();
        let mut queue = Vec::new();
        let mut prompted = Vec::new();
        for f in &fired {
            let text = store.get(&f.annotation_id).map(|a| a.text.clone()).unwrap_or_default();
            if f.mode_at_fire == AccessMode::Auto {
                queue.push(QueuedMessage {
                    key: MessageKey::Annotation(f.annotation_id.clone()),
                    mode: AccessMode::Auto,
                    trigger_time: f.trigger_time,
                    est_duration_s: estimate_duration_s(&text),
                });
            } else {
                prompted.push(f.category);
            }
            out.push(EngineEvent::AnnotationTrigger {
                t: now,
                annotation_id: f.annotation_id.clone(),
                category: f.category,
                mode: f.mode_at_fire,
                text,
                distance_m: f.distance_m,
            });
            if let Some(d) = f.vibration_s {
                out.push(EngineEvent::Vibration { t: now, duration_s: d });
            }
        }
        if !prompted.is_empty() {
            let text = aggregate_prompt(&prompted);
            queue.push(QueuedMessage {
                key: MessageKey::Prompt(text.clone()),
                mode: AccessMode::Prompt,
                trigger_time: now,
                est_duration_s: estimate_duration_s(&text),
            });
            out.push(EngineEvent::Prompt { t: now, text });
        }
        for d in schedule_after(&queue, now, self.channel_free) {
            if d.outcome == Outcome::Played {
                self.channel_free = self.channel_free.max(d.start_time + d.duration_s);
            }
            out.push(EngineEvent::Playback {
                t: now,
                key: d.key,
                start_time: d.start_time,
                duration_s: d.duration_s,
                outcome: d.outcome,
            });
        }
        out
    }

    pub fn apply_prefs(&mut self, delta: &Value, now: f64) -> Result<Vec<EngineEvent>, PrefsError> {
        self.ctx.prefs.apply_delta(delta)?;
        Ok(self.prefs_changed(now))
    }

    fn prefs_changed(&mut self, now: f64) -> Vec<EngineEvent> {
        if let Some(g) = self.guidance.as_mut() {
            g.prefs = self.ctx.prefs.clone();
        }
        vec![EngineEvent::PrefsUpdate {
            t: now,
            prefs: self.ctx.prefs.clone(),
        }]
    }

    /// Runs a spoken query and carries out its actions.
    pub fn query(&mut self, text: &str, pose: &Pose, now: f64) -> Result<(AgentReply, Vec<EngineEvent>), OrchestratorError> {
        let (intent, reply) = handle_query(text, &mut self.ctx, &self.world, pose, now)?;
        let mut out = vec![EngineEvent::Reply {
            t: now,
            query: text.to_string(),
            intent,
            text: reply.text.clone(),
            actions: reply.actions.clone(),
        }];
        for a in &reply.actions {
            match a {
                Action::StartNavigation { route } => out.extend(self.start_navigation(route.clone(), pose, now)),
                // dispatch already updated ctx.prefs
                Action::ApplyPrefs { .. } => out.extend(self.prefs_changed(now)),
                Action::Vibrate { duration_s } => out.push(EngineEvent::Vibration {
                    t: now,
                    duration_s: *duration_s,
                }),
                Action::AnnotationMutation { .. } | Action::Chime => {}
            }
        }
        Ok((reply, out))
    }

    pub fn arrived(&self) -> bool {
        self.guidance
            .as_ref()
            .is_some_and(|g| g.state == crate::guidance::SessionState::Arrived)
    }
}
