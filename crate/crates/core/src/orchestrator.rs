//! Query pipeline: text -> intent -> agent -> budgeted reply plus frontend actions.

use std::collections::{BTreeMap, VecDeque};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::annotations::{normalize, Anchor, Annotation, AnnotationError, AnnotationStore, Category, Filter};
use crate::geometry::{format_distance, relative_bearing, Point2, Pose};
use crate::guidance::{describe_location, render_instruction, EventKind};
use crate::navgrid::{approach_point, plan_route, NavError, NavGrid, Route};
use crate::prefs::UserPrefs;
use crate::scene::{self, SceneGraph, SceneObject};

pub const MEMORY_TURNS: usize = 20;
pub const DESCRIBE_RADIUS_M: f64 = 10.0;
pub const NEARBY_NOTES_RADIUS_M: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OrchestratorError {
    #[error("{0} port unavailable: {1}")]
    PortUnavailable(PortKind, String),
}

// ------------------------------------------------------------------ intents

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectAttribute {
    Location,
    Distance,
    Count,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "by", content = "value")]
pub enum AnnotationRef {
    Id(String),
    TextMatch(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Target {
    Class(String),
    Annotation(AnnotationRef),
    Point(Point2),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum AnchorHint {
    Here,
    OnObject(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NoteFilter {
    pub category: Option<Category>,
    pub text: Option<String>,
    pub nearby: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "intent")]
pub enum Intent {
    WhereAmI,
    DescribeSurroundings,
    ObjectQuery { class: String, attribute: ObjectAttribute },
    Navigate { target: Target },
    AnnotationQuery { filter: NoteFilter },
    AnnotationCreate { text: String, anchor_hint: AnchorHint },
    AnnotationEdit { reference: AnnotationRef, new_text: String },
    AnnotationDelete { reference: AnnotationRef },
    Customize { setting: String, value: Value },
    Repeat,
    VisualQuery { question: String },
    WebQuery { question: String },
    MapQuery { question: String },
    Unknown { raw: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MutationOp {
    Created,
    Edited,
    Deleted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "action")]
pub enum Action {
    StartNavigation { route: Route },
    ApplyPrefs { delta: Value },
    AnnotationMutation { op: MutationOp, record: Annotation },
    Chime,
    Vibrate { duration_s: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentReply {
    pub text: String,
    pub actions: Vec<Action>,
}

impl AgentReply {
    fn say(text: impl Into<String>) -> Self {
        AgentReply {
            text: text.into(),
            actions: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub query: String,
    pub reply: String,
}

#[derive(Debug, Clone)]
pub struct SessionContext {
    pub user_id: String,
    pub prefs: UserPrefs,
    pub memory: VecDeque<ChatTurn>,
}

impl SessionContext {
    pub fn new(user_id: &str, prefs: UserPrefs) -> Self {
        SessionContext {
            user_id: user_id.to_string(),
            prefs,
            memory: VecDeque::new(),
        }
    }

    pub fn remember(&mut self, query: &str, reply: &str) {
        if self.memory.len() == MEMORY_TURNS {
            self.memory.pop_front();
        }
        self.memory.push_back(ChatTurn {
            query: query.to_string(),
            reply: reply.to_string(),
        });
    }
}

// -------------------------------------------------------------------- ports

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PortKind {
    Visual,
    Web,
    Map,
}

impl std::fmt::Display for PortKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PortKind::Visual => "visual",
            PortKind::Web => "web",
            PortKind::Map => "map",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortRequest {
    pub kind: PortKind,
    pub question: String,
    pub lat: f64,
    pub lon: f64,
}

pub trait AgentPort: Send + Sync {
    fn ask(&self, req: &PortRequest) -> Result<String, OrchestratorError>;
}

/// Canned answers; the default binding.
#[derive(Debug, Clone, Default)]
pub struct StubPort;

impl AgentPort for StubPort {
    fn ask(&self, req: &PortRequest) -> Result<String, OrchestratorError> {
        Ok(match req.kind {
            PortKind::Visual => "I can't see the camera view right now.",
            PortKind::Web => "I can't search the web right now.",
            PortKind::Map => "I can't reach the map service right now.",
        }
        .to_string())
    }
}

/// Replays answers from a transcript keyed by normalized question.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RecordedPort {
    pub answers: BTreeMap<String, String>,
    #[serde(default)]
    pub fallback: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordedTranscripts {
    #[serde(default)]
    pub visual: RecordedPort,
    #[serde(default)]
    pub web: RecordedPort,
    #[serde(default)]
    pub map: RecordedPort,
}

fn question_key(q: &str) -> String {
    normalize(q)
        .trim_end_matches(|c: char| c.is_ascii_punctuation())
        .to_string()
}

impl RecordedPort {
    pub fn new(entries: impl IntoIterator<Item = (String, String)>) -> Self {
        RecordedPort {
            answers: entries.into_iter().map(|(q, a)| (question_key(&q), a)).collect(),
            fallback: None,
        }
    }
}

impl AgentPort for RecordedPort {
    fn ask(&self, req: &PortRequest) -> Result<String, OrchestratorError> {
        let key = question_key(&req.question);
        self.answers
            .iter()
            .find(|(q, _)| question_key(q) == key)
            .map(|(_, a)| a.clone())
            .or_else(|| self.fallback.clone())
            .ok_or_else(|| OrchestratorError::PortUnavailable(req.kind, "no recorded answer".into()))
    }
}

/// HTTP backend: POSTs the request as JSON and expects `{"answer": "..."}`.
pub struct ExternalPort {
    endpoint: String,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct ExternalAnswer {
    answer: String,
}

impl ExternalPort {
    pub fn new(endpoint: &str, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        ExternalPort {
            endpoint: endpoint.to_string(),
            agent,
        }
    }
}

impl AgentPort for ExternalPort {
    fn ask(&self, req: &PortRequest) -> Result<String, OrchestratorError> {
        let unavailable = |e: ureq::Error| OrchestratorError::PortUnavailable(req.kind, e.to_string());
        let mut resp = self.agent.post(&self.endpoint).send_json(req).map_err(unavailable)?;
        let a: ExternalAnswer = resp.body_mut().read_json().map_err(unavailable)?;
        Ok(a.answer)
    }
}

#[derive(Clone)]
pub struct Ports {
    pub visual: Arc<dyn AgentPort>,
    pub web: Arc<dyn AgentPort>,
    pub map: Arc<dyn AgentPort>,
}

impl Default for Ports {
    fn default() -> Self {
        Ports {
            visual: Arc::new(StubPort),
            web: Arc::new(StubPort),
            map: Arc::new(StubPort),
        }
    }
}

impl Ports {
    pub fn recorded(t: RecordedTranscripts) -> Self {
        Ports {
            visual: Arc::new(t.visual),
            web: Arc::new(t.web),
            map: Arc::new(t.map),
        }
    }

    fn get(&self, kind: PortKind) -> &Arc<dyn AgentPort> {
        match kind {
            PortKind::Visual => &self.visual,
            PortKind::Web => &self.web,
            PortKind::Map => &self.map,
        }
    }
}

impl std::fmt::Debug for Ports {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Ports")
    }
}

// ------------------------------------------------------------------ grammar

/// True if `phrase` occurs in `text` delimited by non-alphanumerics.
fn has(text: &str, phrase: &str) -> bool {
    text.match_indices(phrase).any(|(i, m)| {
        let before = text[..i].chars().next_back();
        let after = text[i + m.len()..].chars().next();
        before.is_none_or(|c| !c.is_alphanumeric()) && after.is_none_or(|c| !c.is_alphanumeric())
    })
}

fn has_any(text: &str, phrases: &[&str]) -> bool {
    phrases.iter().any(|p| has(text, p))
}

/// Byte offset just past the first occurrence of any marker.
fn after_any(text: &str, markers: &[&str]) -> Option<usize> {
    markers
        .iter()
        .filter_map(|m| {
            text.match_indices(m)
                .find(|(i, _)| text[..*i].chars().next_back().is_none_or(|c| !c.is_alphanumeric()))
                .map(|(i, _)| (i, i + m.len()))
        })
        .min()
        .map(|(_, end)| end)
}

const QUOTES: &[char] = &['\'', '"', '‘', '’', '“', '”'];

fn strip_quoted(s: &str) -> String {
    let s = s.trim_start_matches([',', ':', ' ']);
    let s = s.trim_end_matches(['.', ' ']);
    let inner = s.trim_matches(QUOTES).trim();
    inner.to_string()
}

fn strip_articles(s: &str) -> String {
    s.split_whitespace()
        .skip_while(|w| matches!(*w, "the" | "a" | "an" | "my" | "this" | "that"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn clean_phrase(s: &str) -> String {
    let t: String = s
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '_' || c == '-' || c == '.' { c } else { ' ' })
        .collect();
    let t = t.trim_end_matches('.').to_string();
    let words: Vec<&str> = t
        .split_whitespace()
        .filter(|w| !matches!(*w, "please" | "now" | "thanks"))
        .collect();
    strip_articles(&words.join(" "))
}

/// Longest run of words that names a scene class, leftmost first.
fn find_class(scene: &SceneGraph, phrase: &str) -> Option<String> {
    let words: Vec<&str> = phrase
        .split(|c: char| !(c.is_alphanumeric() || c == '-'))
        .filter(|w| !w.is_empty())
        .collect();
    for len in (1..=words.len().min(4)).rev() {
        for start in 0..=words.len() - len {
            if let Some(c) = scene.resolve_class(&words[start..start + len].join(" ")) {
                return Some(c);
            }
        }
    }
    None
}

fn find_annotation_id(norm: &str) -> Option<String> {
    norm.split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .find(|w| {
            w.strip_prefix("ann_")
                .is_some_and(|d| !d.is_empty() && d.chars().all(|c| c.is_ascii_digit()))
        })
        .map(str::to_string)
}

fn find_point(phrase: &str) -> Option<Point2> {
    let nums: Vec<f64> = phrase
        .split(|c: char| !(c.is_ascii_digit() || c == '.' || c == '-'))
        .filter_map(|w| w.parse::<f64>().ok())
        .collect();
    (nums.len() == 2).then(|| Point2::new(nums[0], nums[1]))
}

fn category_word(norm: &str) -> Option<Category> {
    norm.split(|c: char| !c.is_alphanumeric())
        .find_map(|w| w.parse::<Category>().ok())
}

const NOTE_WORDS: &[&str] = &["note", "notes", "annotation", "annotations", "message", "messages"];
const CREATE_VERBS: &[&str] = &["place", "add", "create", "leave", "make", "put", "drop", "write", "record"];
const EDIT_VERBS: &[&str] = &["edit", "change", "update", "modify", "rewrite", "correct"];
const DELETE_VERBS: &[&str] = &["delete", "remove", "erase"];
const NAV_MARKERS: &[&str] = &[
    "guide me to", "take me to", "bring me to", "lead me to", "walk me to", "navigate me to", "navigate to",
    "directions to", "get me to", "how do i get to", "get to", "go to", "head to", "show me the way to", "meet",
];
const CUSTOMIZE_VERBS: &[&str] = &[
    "use", "switch", "set", "change", "prefer", "make", "mute", "silence", "turn off", "turn on", "stop playing",
    "don't play", "do not play", "ask me", "prompt me", "notify me", "speak", "talk", "give me", "be", "measure",
    "play",
];

fn note_ref(norm: &str, tail: &str) -> AnnotationRef {
    if let Some(id) = find_annotation_id(norm) {
        return AnnotationRef::Id(id);
    }
    AnnotationRef::TextMatch(clean_phrase(tail))
}

fn text_after_about(lower: &str) -> Option<usize> {
    after_any(lower, &["about ", "saying ", "that says ", "which says ", "regarding ", "on "])
}

fn parse_create(clean: &str, lower: &str, scene: &SceneGraph) -> Option<Intent> {
    let start = after_any(lower, &["saying", "that says", "which says", "that reads", "reading", ":"]);
    let text = match start {
        Some(i) => strip_quoted(&clean[i..]),
        None => {
            let open = clean.find(['"', '“', '\''].as_ref())?;
            strip_quoted(&clean[open..])
        }
    };
    if text.is_empty() {
        return None;
    }
    let head = &lower[..start.unwrap_or(lower.len())];
    let anchor_hint = after_any(head, &["on the ", "at the ", "by the ", "next to the ", "near the "])
        .and_then(|i| find_class(scene, &head[i..]))
        .map(AnchorHint::OnObject)
        .unwrap_or(AnchorHint::Here);
    Some(Intent::AnnotationCreate { text, anchor_hint })
}

fn parse_edit(clean: &str, lower: &str) -> Option<Intent> {
    let base = after_any(lower, NOTE_WORDS)?;
    let to = [" to say ", " to read ", " to ", " so it says ", " so that it says "]
        .iter()
        .filter_map(|m| lower[base..].find(m).map(|i| (base + i, base + i + m.len())))
        // earliest marker, longest on ties so " to say " beats " to "
        .min_by_key(|&(s, e)| (s, std::cmp::Reverse(e)))?;
    let new_text = strip_quoted(&clean[to.1..]);
    if new_text.is_empty() {
        return None;
    }
    let head = &lower[..to.0];
    let tail = text_after_about(head).map(|i| &head[i..]).unwrap_or("");
    Some(Intent::AnnotationEdit {
        reference: note_ref(head, tail),
        new_text,
    })
}

fn customize(norm: &str, prefs: &UserPrefs) -> Option<(String, Value)> {
    if !has_any(norm, CUSTOMIZE_VERBS) {
        return None;
    }
    if has_any(norm, &["steps", "step"]) && !has_any(norm, &["to the steps", "to the step"]) {
        return Some(("unit".into(), json!({"kind": "steps", "step_length_m": crate::geometry::DEFAULT_STEP_LENGTH_M})));
    }
    if has_any(norm, &["feet", "foot"]) {
        return Some(("unit".into(), json!({"kind": "feet"})));
    }
    if has_any(norm, &["meters", "metres", "meter", "metre"]) {
        return Some(("unit".into(), json!({"kind": "meters"})));
    }
    if has_any(norm, &["clock", "clock face", "o'clock"]) {
        return Some(("direction_format".into(), json!("clock_face")));
    }
    if has_any(norm, &["degrees", "degree"]) {
        return Some(("direction_format".into(), json!("egocentric_degrees")));
    }
    if has_any(norm, &["left and right", "left or right", "egocentric", "left right"]) {
        return Some(("direction_format".into(), json!("egocentric8")));
    }
    if has_any(norm, &["cardinal", "compass directions", "north"]) {
        return Some(("direction_format".into(), json!("cardinal")));
    }
    if let Some(cat) = category_word(norm) {
        let mode = if has_any(norm, &["mute", "silence", "turn off", "stop playing", "don't play", "do not play", "hide"]) {
            Some("silent")
        } else if has_any(norm, &["ask me", "prompt me", "notify me", "prompt", "ask"]) {
            Some("prompt")
        } else if has_any(norm, &["automatically", "auto", "turn on", "always play"]) {
            Some("auto")
        } else {
            None
        };
        if let Some(m) = mode {
            return Some((format!("category_prefs.{}", cat.as_str()), json!(m)));
        }
    }
    if has_any(norm, &["shorter", "more concise", "less detail", "briefer", "brief"]) {
        let v = (prefs.verbosity_words * 2 / 3).max(crate::prefs::MIN_VERBOSITY_WORDS);
        return Some(("verbosity_words".into(), json!(v)));
    }
    if has_any(norm, &["longer", "more detail", "more detailed", "more verbose"]) {
        return Some(("verbosity_words".into(), json!(prefs.verbosity_words + 15)));
    }
    if has_any(norm, &["faster", "slower"]) && has_any(norm, &["speak", "talk", "voice", "read"]) {
        let r = if has(norm, "faster") {
            prefs.voice.rate + 0.25
        } else {
            (prefs.voice.rate - 0.25).max(0.5)
        };
        return Some(("voice.rate".into(), json!(r)));
    }
    if has_any(norm, &["path", "route", "line"]) && has_any(norm, &["color", "colour"]) {
        return color_word(norm).map(|c| ("visual.path_color".into(), json!(c)));
    }
    if has_any(norm, &["marker", "star", "destination"]) && has_any(norm, &["color", "colour"]) {
        return color_word(norm).map(|c| ("visual.marker_color".into(), json!(c)));
    }
    None
}

fn color_word(norm: &str) -> Option<&'static str> {
    const COLORS: &[(&str, &str)] = &[
        ("green", "#00c853"),
        ("pink", "#ff4fa3"),
        ("yellow", "#ffd600"),
        ("blue", "#2962ff"),
        ("red", "#d50000"),
        ("white", "#ffffff"),
        ("orange", "#ff6d00"),
        ("purple", "#aa00ff"),
        ("cyan", "#00e5ff"),
    ];
    COLORS.iter().find(|(w, _)| has(norm, w)).map(|(_, hex)| *hex)
}

/// Deterministic rule grammar. Case and spacing never change the outcome.
pub fn resolve_intent(text: &str, ctx: &SessionContext, scene: &SceneGraph) -> Intent {
    let clean = text.split_whitespace().collect::<Vec<_>>().join(" ");
    if clean.is_empty() {
        return Intent::Unknown { raw: text.to_string() };
    }
    let lower = clean.to_ascii_lowercase();
    let norm = normalize(&clean);
    let notes = has_any(&norm, NOTE_WORDS);

    if has_any(&norm, &["repeat", "say that again", "say it again", "come again", "what did you say"]) {
        return Intent::Repeat;
    }
    if notes && has_any(&norm, DELETE_VERBS) {
        let tail = text_after_about(&lower).map(|i| &lower[i..]).unwrap_or("");
        return Intent::AnnotationDelete {
            reference: note_ref(&norm, tail),
        };
    }
    if notes && has_any(&norm, EDIT_VERBS) {
        if let Some(i) = parse_edit(&clean, &lower) {
            return i;
        }
    }
    if (notes && has_any(&norm, CREATE_VERBS)) || has_any(&norm, &["mark this spot", "mark this place"]) {
        if let Some(i) = parse_create(&clean, &lower, scene) {
            return i;
        }
    }
    if let Some((setting, value)) = customize(&norm, &ctx.prefs) {
        if !has_any(&norm, NAV_MARKERS) || has_any(&norm, &["use", "switch"]) {
            return Intent::Customize { setting, value };
        }
    }
    if let Some(i) = after_any(&lower, NAV_MARKERS) {
        let phrase = clean_phrase(&lower[i..]);
        let target = if let Some(id) = find_annotation_id(&phrase) {
            Target::Annotation(AnnotationRef::Id(id))
        } else if has_any(&phrase, NOTE_WORDS) {
            let tail = text_after_about(&phrase).map(|j| &phrase[j..]).unwrap_or("");
            Target::Annotation(AnnotationRef::TextMatch(clean_phrase(tail)))
        } else if let Some(p) = find_point(&phrase) {
            Target::Point(p)
        } else if let Some(c) = find_class(scene, &phrase) {
            Target::Class(c)
        } else if !phrase.is_empty() {
            Target::Annotation(AnnotationRef::TextMatch(phrase))
        } else {
            return Intent::Unknown { raw: text.to_string() };
        };
        return Intent::Navigate { target };
    }
    if notes {
        let text = text_after_about(&lower)
            .map(|i| clean_phrase(&lower[i..]))
            .filter(|s| !s.is_empty() && category_word(s).is_none());
        return Intent::AnnotationQuery {
            filter: NoteFilter {
                category: category_word(&norm),
                text,
                nearby: has_any(&norm, &["near", "nearby", "around", "here", "close"]),
            },
        };
    }
    if has_any(&norm, &["where am i", "where i am", "my location", "where are we", "my position"]) {
        return Intent::WhereAmI;
    }
    if has_any(
        &norm,
        &[
            "describe", "surroundings", "what is around", "what's around", "what is here", "what's here",
            "look around", "what is near me", "what's near me", "around me", "this place", "this square",
            "this area",
        ],
    ) {
        return Intent::DescribeSurroundings;
    }
    let question = clean.clone();
    if has_any(
        &norm,
        &[
            "see", "look like", "looks like", "occupied", "free", "available", "busy", "crowded", "color", "colour",
            "anyone", "people", "camera",
        ],
    ) {
        return Intent::VisualQuery { question };
    }
    let object_cue = has_any(
        &norm,
        &[
            "where is", "where's", "where are", "how far", "how many", "is there", "are there", "find", "nearest",
            "closest", "locate", "distance", "count", "number of",
        ],
    );
    if let Some(class) = find_class(scene, &norm).filter(|_| object_cue) {
        let attribute = if has_any(&norm, &["how many", "count", "number of"]) {
            ObjectAttribute::Count
        } else if has_any(&norm, &["how far", "distance"]) {
            ObjectAttribute::Distance
        } else {
            ObjectAttribute::Location
        };
        return Intent::ObjectQuery { class, attribute };
    }
    if has_any(
        &norm,
        &[
            "nearest", "closest", "nearby", "near here", "around here", "map", "street", "station", "restaurant",
            "cafe", "café", "pharmacy", "shop", "store", "museum", "theatre", "theater", "hotel", "toilet",
            "restroom", "atm", "bank", "address",
        ],
    ) {
        return Intent::MapQuery { question };
    }
    if has_any(
        &norm,
        &[
            "attraction", "attractions", "history", "who", "when was", "when did", "why", "opening hours", "open",
            "tell me about", "what is", "what's", "search", "look up", "weather", "events",
        ],
    ) {
        return Intent::WebQuery { question };
    }
    Intent::Unknown { raw: text.to_string() }
}

// ---------------------------------------------------------------- verbosity

fn sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    for (k, &(i, c)) in chars.iter().enumerate() {
        if matches!(c, '.' | '!' | '?') {
            let next = chars.get(k + 1).map(|x| x.1);
            if next.is_none_or(char::is_whitespace) {
                let end = i + c.len_utf8();
                let s = text[start..end].trim();
                if !s.is_empty() {
                    out.push(s);
                }
                start = end;
            }
        }
    }
    let rest = text[start..].trim();
    if !rest.is_empty() {
        out.push(rest);
    }
    out
}

fn word_count(s: &str) -> usize {
    s.split_whitespace().count()
}

/// Keeps whole sentences in order while the running word count fits `budget_words`;
/// the first sentence always survives.
pub fn apply_verbosity(text: &str, budget_words: usize) -> String {
    let mut kept: Vec<&str> = Vec::new();
    let mut total = 0;
    for (i, s) in sentences(text).into_iter().enumerate() {
        let n = word_count(s);
        if i > 0 && total + n > budget_words {
            break;
        }
        total += n;
        kept.push(s);
    }
    kept.join(" ")
}

/// Replies never end on a question.
pub fn rewrite_trailing_question(text: &str) -> String {
    let mut parts = sentences(text);
    let Some(last) = parts.pop() else {
        return String::new();
    };
    let Some(q) = last.strip_suffix('?') else {
        return text.trim().to_string();
    };
    let lower = q.to_lowercase();
    const MAP: &[(&str, &str)] = &[
        ("would you like", "you would like"),
        ("do you want", "you want"),
        ("do you need", "you need"),
        ("shall i", "I should"),
        ("should i", "I should"),
        ("can i", "I can"),
    ];
    let rewritten = MAP
        .iter()
        .find(|(p, _)| lower.starts_with(p))
        .map(|(p, r)| format!("Let me know if {r}{}.", &q[p.len()..]))
        .unwrap_or_else(|| "Let me know if you want to know more.".to_string());
    parts.push(&rewritten);
    parts.join(" ")
}

// ----------------------------------------------------------------- dispatch

/// Everything a dispatch may touch besides the per-user context.
#[derive(Debug, Clone)]
pub struct World {
    pub scene: Arc<SceneGraph>,
    pub grid: Arc<NavGrid>,
    pub store: Arc<RwLock<AnnotationStore>>,
    pub ports: Ports,
}

fn title_case(id: &str) -> String {
    id.split(['_', '-', ' '])
        .filter(|w| !w.is_empty())
        .map(|w| {
            let mut c = w.chars();
            c.next()
                .map(|f| f.to_uppercase().collect::<String>() + c.as_str())
                .unwrap_or_default()
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn with_article(class: &str) -> String {
    if matches!(class, "stairs" | "steps") {
        return format!("the {class}");
    }
    let art = if class.starts_with(['a', 'e', 'i', 'o', 'u']) { "an" } else { "a" };
    format!("{art} {class}")
}

fn plural(class: &str, n: usize) -> String {
    if n == 1 || class.ends_with('s') {
        class.to_string()
    } else if class.ends_with("ch") || class.ends_with("sh") || class.ends_with('x') {
        format!("{class}es")
    } else {
        format!("{class}s")
    }
}

fn join_list(items: &[String]) -> String {
    match items.len() {
        0 => String::new(),
        1 => items[0].clone(),
        2 => format!("{} and {}", items[0], items[1]),
        n => format!("{}, and {}", items[..n - 1].join(", "), items[n - 1]),
    }
}

fn region_word(scene: &SceneGraph, p: Point2) -> String {
    let (lo, hi) = scene.walkable.outer.bounds();
    let third = |v: f64, a: f64, b: f64| {
        let f = (v - a) / (b - a);
        if f < 1.0 / 3.0 {
            0
        } else if f > 2.0 / 3.0 {
            2
        } else {
            1
        }
    };
    let ns = ["south", "", "north"][third(p.y, lo.y, hi.y)];
    let ew = ["west", "", "east"][third(p.x, lo.x, hi.x)];
    match (ns.is_empty(), ew.is_empty()) {
        (true, true) => "the center".to_string(),
        (false, true) => format!("the {ns} part"),
        (true, false) => format!("the {ew} part"),
        (false, false) => format!("the {ns}-{ew} part"),
    }
}

fn locate(o: &SceneObject, pose: &Pose, prefs: &UserPrefs, scene: &SceneGraph) -> String {
    let d = scene.describe_object(pose, o);
    describe_location(d.rel_bearing, d.distance_m, prefs, pose.heading_deg)
}

pub fn describe_surroundings(scene: &SceneGraph, pose: &Pose, prefs: &UserPrefs, radius_m: f64) -> String {
    if scene.objects.is_empty() {
        return "I don't have information about objects here yet.".to_string();
    }
    let (lo, hi) = scene.walkable.outer.bounds();
    let size = |m: f64| format_distance(m, prefs.unit).map(|r| r.text).unwrap_or_default();
    let w = size(hi.x - lo.x);
    let h = size(hi.y - lo.y);
    let w_num = w.split_whitespace().next().unwrap_or("").to_string();
    let mut out = vec![format!(
        "{} is an open area of about {} by {}.",
        title_case(&scene.poi_id),
        w_num,
        h
    )];
    let mut mentioned: Vec<&str> = Vec::new();

    let c = Point2::new((lo.x + hi.x) / 2.0, (lo.y + hi.y) / 2.0);
    let area = |o: &SceneObject| o.footprint.half_w * o.footprint.half_d;
    let outer = scene
        .objects
        .iter()
        .filter(|o| o.footprint.contains_point(c, 1e-9))
        .min_by(|a, b| area(a).total_cmp(&area(b)).then_with(|| a.id.cmp(&b.id)));
    if let Some(outer) = outer.filter(|o| o.distance_to(pose.position) <= radius_m) {
        let mut inner: Vec<&SceneObject> = scene
            .objects
            .iter()
            .filter(|o| o.id != outer.id && scene::contains(outer, o))
            .collect();
        inner.sort_by(|a, b| a.id.cmp(&b.id));
        inner.dedup_by(|a, b| a.class_label == b.class_label);
        let sentence = if inner.is_empty() {
            format!("In the center there is {}.", with_article(&outer.class_label))
        } else {
            let names: Vec<String> = inner.iter().map(|o| with_article(&o.class_label)).collect();
            format!(
                "In the center there is {} inside {}.",
                join_list(&names),
                with_article(&outer.class_label)
            )
        };
        mentioned.push(&outer.class_label);
        mentioned.extend(inner.iter().map(|o| o.class_label.as_str()));
        out.push(sentence);
    }

    let mut near: Vec<String> = Vec::new();
    for (o, d) in scene.objects_within(pose, radius_m) {
        if near.len() == 3 {
            break;
        }
        if mentioned.contains(&o.class_label.as_str()) {
            continue;
        }
        mentioned.push(&o.class_label);
        near.push(format!(
            "{} {}",
            with_article(&o.class_label),
            describe_location(d.rel_bearing, d.distance_m, prefs, pose.heading_deg)
        ));
    }
    if !near.is_empty() {
        out.push(format!("Nearby there is {}.", join_list(&near)));
    }
    out.join(" ")
}

fn where_am_i(scene: &SceneGraph, pose: &Pose, prefs: &UserPrefs) -> String {
    let mut out = format!(
        "You are in {} of {}.",
        region_word(scene, pose.position),
        title_case(&scene.poi_id)
    );
    let mut seen: Vec<&str> = Vec::new();
    let mut near = Vec::new();
    for (o, d) in scene.objects_within(pose, DESCRIBE_RADIUS_M) {
        if seen.contains(&o.class_label.as_str()) {
            continue;
        }
        seen.push(&o.class_label);
        near.push(format!(
            "{} {}",
            with_article(&o.class_label),
            describe_location(d.rel_bearing, d.distance_m, prefs, pose.heading_deg)
        ));
        if near.len() == 2 {
            break;
        }
    }
    if near.is_empty() {
        out.push_str(&format!(
            " There are no mapped objects within {}.",
            format_distance(DESCRIBE_RADIUS_M, prefs.unit).map(|r| r.text).unwrap_or_default()
        ));
    } else {
        out.push_str(&format!(" The closest things are {}.", join_list(&near)));
    }
    out
}

enum Resolved<'a> {
    One(&'a Annotation),
    None,
    Ambiguous(Vec<&'a Annotation>),
}

/// Author's own notes first, then the most recent; a tie for most recent is ambiguous.
fn resolve_ref<'a>(store: &'a AnnotationStore, user: &str, r: &AnnotationRef) -> Resolved<'a> {
    match r {
        AnnotationRef::Id(id) => store.get(id).map(Resolved::One).unwrap_or(Resolved::None),
        AnnotationRef::TextMatch(t) => {
            let hits = store.query(&Filter::text(t), None);
            let own: Vec<&Annotation> = hits.iter().copied().filter(|a| a.author == user).collect();
            let mut pool = if own.is_empty() { hits } else { own };
            pool.sort_by(|a, b| b.created_at.total_cmp(&a.created_at).then_with(|| b.id.cmp(&a.id)));
            match pool.as_slice() {
                [] => Resolved::None,
                [a] => Resolved::One(a),
                [a, b, ..] if a.created_at == b.created_at => {
                    let top = a.created_at;
                    Resolved::Ambiguous(pool.into_iter().filter(|x| x.created_at == top).collect())
                }
                [a, ..] => Resolved::One(a),
            }
        }
    }
}

fn ref_words(r: &AnnotationRef) -> String {
    match r {
        AnnotationRef::Id(id) => id.clone(),
        AnnotationRef::TextMatch(t) => format!("about {t}"),
    }
}

fn annotation_error_text(e: &AnnotationError) -> String {
    match e {
        AnnotationError::NotAuthor(_) => "Only the author of that note can change it.".into(),
        AnnotationError::NotFound(_) => "I couldn't find that note.".into(),
        AnnotationError::EmptyText => "The note text is empty, so I didn't save anything.".into(),
        AnnotationError::TextTooLong => "That note is too long to save.".into(),
        other => format!("I couldn't do that: {other}."),
    }
}

fn note_summary(a: &Annotation, pose: &Pose, prefs: &UserPrefs, store: &AnnotationStore) -> String {
    let loc = store
        .anchor_position(&a.anchor)
        .map(|p| {
            let b = relative_bearing(pose, p).unwrap_or(0.0);
            let d = store.anchor_distance(&a.anchor, pose.position).unwrap_or(0.0);
            format!(" {}", describe_location(b, d, prefs, pose.heading_deg))
        })
        .unwrap_or_default();
    format!("\"{}\"{loc}", a.text.trim_end_matches(['.', '!', '?']))
}

fn navigate(ctx: &SessionContext, world: &World, pose: &Pose, target: &Target) -> AgentReply {
    let store = world.store.read().expect("store lock");
    let (name, goal) = match target {
        Target::Point(p) => ("that point".to_string(), Some(*p)),
        Target::Class(c) => match world.scene.nearest_by_class(pose, c) {
            Some((o, _)) => (format!("the {c}"), approach_point(&world.grid, o, pose.position)),
            None => return AgentReply::say(format!("I couldn't find a {c} here.")),
        },
        Target::Annotation(r) => match resolve_ref(&store, &ctx.user_id, r) {
            Resolved::One(a) => {
                let goal = match &a.anchor {
                    Anchor::Point(p) => Some(*p),
                    Anchor::Object(id) => world
                        .scene
                        .object(id)
                        .and_then(|o| approach_point(&world.grid, o, pose.position)),
                };
                ("the note's location".to_string(), goal)
            }
            Resolved::None => {
                return AgentReply::say(format!("I couldn't find a place or note {}.", ref_words(r)));
            }
            Resolved::Ambiguous(v) => {
                return AgentReply::say(format!(
                    "I found {} notes {}. Please name the one you mean by its id.",
                    v.len(),
                    ref_words(r)
                ));
            }
        },
    };
    let Some(goal) = goal else {
        return AgentReply::say(format!("Sorry, I couldn't find a walkable path to {name}."));
    };
    match plan_route(&world.scene, &world.grid, pose, goal) {
        Ok(route) => {
            let first = route.waypoints[1.min(route.waypoints.len() - 1)];
            let b = relative_bearing(pose, first).unwrap_or(0.0);
            let step = render_instruction(
                EventKind::Turn,
                b,
                pose.position.distance(first),
                &ctx.prefs,
                pose.heading_deg,
            );
            let total = format_distance(route.total_length_m, ctx.prefs.unit)
                .map(|r| r.text)
                .unwrap_or_default();
            AgentReply {
                text: format!("Starting navigation to {name}, about {total} away. {step}."),
                actions: vec![Action::StartNavigation { route }],
            }
        }
        Err(NavError::NoPath | NavError::UnreachableDestination | NavError::UnreachableStart) => {
            AgentReply::say(format!("Sorry, I couldn't find a walkable path to {name}."))
        }
        Err(e) => AgentReply::say(format!("Sorry, I can't plan a route there: {e}.")),
    }
}

fn dispatch_inner(
    intent: &Intent,
    ctx: &mut SessionContext,
    world: &World,
    pose: &Pose,
    now: f64,
) -> Result<AgentReply, OrchestratorError> {
    let scene = &world.scene;
    Ok(match intent {
        Intent::WhereAmI => AgentReply::say(where_am_i(scene, pose, &ctx.prefs)),
        Intent::DescribeSurroundings => {
            AgentReply::say(describe_surroundings(scene, pose, &ctx.prefs, DESCRIBE_RADIUS_M))
        }
        Intent::ObjectQuery { class, attribute } => {
            let ranked = scene.ranked_by_class(pose, class);
            match (attribute, ranked.first()) {
                (_, None) => AgentReply::say(format!("I couldn't find a {class} here.")),
                (ObjectAttribute::Count, _) => AgentReply::say(format!(
                    "There {} {} {} here.",
                    if ranked.len() == 1 { "is" } else { "are" },
                    ranked.len(),
                    plural(class, ranked.len())
                )),
                (_, Some((o, _))) => AgentReply::say(format!(
                    "The nearest {class} is {}.",
                    locate(o, pose, &ctx.prefs, scene)
                )),
            }
        }
        Intent::Navigate { target } => navigate(ctx, world, pose, target),
        Intent::AnnotationQuery { filter } => {
            let store = world.store.read().expect("store lock");
            let f = Filter {
                category: filter.category,
                author: None,
                radius_m: filter.nearby.then_some(NEARBY_NOTES_RADIUS_M),
                text: filter.text.clone(),
            };
            let hits = store.query(&f, Some(pose));
            let kind = filter.category.map(|c| format!("{} ", c.as_str())).unwrap_or_default();
            match hits.len() {
                0 => AgentReply::say(format!("I found no {kind}notes matching that.")),
                n => {
                    let noun = if n == 1 { "note" } else { "notes" };
                    let items: Vec<String> = hits
                        .iter()
                        .take(3)
                        .map(|a| format!("{}.", note_summary(a, pose, &ctx.prefs, &store)))
                        .collect();
                    AgentReply::say(format!("I found {n} {kind}{noun}. {}", items.join(" ")))
                }
            }
        }
        Intent::AnnotationCreate { text, anchor_hint } => {
            let anchor = match anchor_hint {
                AnchorHint::Here => Anchor::Point(pose.position),
                AnchorHint::OnObject(class) => match scene.nearest_by_class(pose, class) {
                    Some((o, _)) => Anchor::Object(o.id.clone()),
                    None => return Ok(AgentReply::say(format!("I couldn't find a {class} to attach the note to."))),
                },
            };
            let mut store = world.store.write().expect("store lock");
            match store.create(&ctx.user_id, text, anchor, None, now) {
                Ok(a) => AgentReply {
                    text: format!("Saved your note as {} note.", with_article(a.category.as_str())),
                    actions: vec![Action::AnnotationMutation {
                        op: MutationOp::Created,
                        record: a,
                    }],
                },
                Err(e) => AgentReply::say(annotation_error_text(&e)),
            }
        }
        Intent::AnnotationEdit { reference, new_text } => {
            let mut store = world.store.write().expect("store lock");
            let id = match resolve_ref(&store, &ctx.user_id, reference) {
                Resolved::One(a) => a.id.clone(),
                Resolved::None => return Ok(AgentReply::say(format!("I couldn't find a note {}.", ref_words(reference)))),
                Resolved::Ambiguous(v) => {
                    return Ok(AgentReply::say(format!(
                        "I found {} notes {}. Please tell me which one by its id.",
                        v.len(),
                        ref_words(reference)
                    )))
                }
            };
            match store.edit(&id, &ctx.user_id, new_text, now) {
                Ok(a) => AgentReply {
                    text: "Updated your note.".to_string(),
                    actions: vec![Action::AnnotationMutation {
                        op: MutationOp::Edited,
                        record: a,
                    }],
                },
                Err(e) => AgentReply::say(annotation_error_text(&e)),
            }
        }
        Intent::AnnotationDelete { reference } => {
            let mut store = world.store.write().expect("store lock");
            let id = match resolve_ref(&store, &ctx.user_id, reference) {
                Resolved::One(a) => a.id.clone(),
                Resolved::None => return Ok(AgentReply::say(format!("I couldn't find a note {}.", ref_words(reference)))),
                Resolved::Ambiguous(v) => {
                    return Ok(AgentReply::say(format!(
                        "I found {} notes {}. Please tell me which one by its id.",
                        v.len(),
                        ref_words(reference)
                    )))
                }
            };
            match store.delete(&id, &ctx.user_id) {
                Ok(a) => AgentReply {
                    text: "Deleted the note.".to_string(),
                    actions: vec![Action::AnnotationMutation {
                        op: MutationOp::Deleted,
                        record: a,
                    }],
                },
                Err(e) => AgentReply::say(annotation_error_text(&e)),
            }
        }
        Intent::Customize { setting, value } => {
            let delta = setting_delta(setting, value.clone());
            match ctx.prefs.apply_delta(&delta) {
                Ok(()) => AgentReply {
                    text: format!("Done. I changed your {} setting.", setting.replace(['_', '.'], " ")),
                    actions: vec![Action::ApplyPrefs { delta }],
                },
                Err(e) => AgentReply::say(format!("I couldn't change that setting: {e}.")),
            }
        }
        Intent::Repeat => match ctx.memory.back() {
            Some(t) => AgentReply::say(t.reply.clone()),
            None => AgentReply::say("I have nothing to repeat yet."),
        },
        Intent::VisualQuery { question } => ask_port(world, PortKind::Visual, question, pose)?,
        Intent::WebQuery { question } => ask_port(world, PortKind::Web, question, pose)?,
        Intent::MapQuery { question } => ask_port(world, PortKind::Map, question, pose)?,
        Intent::Unknown { .. } => AgentReply::say(
            "Sorry, I didn't get that. I can tell you where you are, describe what is around you, \
             guide you to an object, and read or write notes.",
        ),
    })
}

fn ask_port(world: &World, kind: PortKind, question: &str, pose: &Pose) -> Result<AgentReply, OrchestratorError> {
    let (lat, lon) = world
        .scene
        .anchor
        .local_to_geo(pose.position)
        .unwrap_or((world.scene.anchor.lat, world.scene.anchor.lon));
    let req = PortRequest {
        kind,
        question: question.to_string(),
        lat,
        lon,
    };
    world.ports.get(kind).ask(&req).map(AgentReply::say)
}

/// Expands a dotted setting path into a nested prefs delta.
pub fn setting_delta(setting: &str, value: Value) -> Value {
    setting
        .rsplit('.')
        .fold(value, |acc, key| json!({ key: acc }))
}

/// Runs an intent; the reply text is budgeted and never ends on a question.
pub fn dispatch(
    intent: &Intent,
    ctx: &mut SessionContext,
    world: &World,
    pose: &Pose,
    now: f64,
) -> Result<AgentReply, OrchestratorError> {
    let mut reply = dispatch_inner(intent, ctx, world, pose, now)?;
    reply.text = rewrite_trailing_question(&apply_verbosity(&reply.text, ctx.prefs.verbosity_words));
    Ok(reply)
}

/// resolve_intent + dispatch + memory update.
pub fn handle_query(
    text: &str,
    ctx: &mut SessionContext,
    world: &World,
    pose: &Pose,
    now: f64,
) -> Result<(Intent, AgentReply), OrchestratorError> {
    let intent = resolve_intent(text, ctx, &world.scene);
    let reply = dispatch(&intent, ctx, world, pose, now)?;
    ctx.remember(text, &reply.text);
    Ok((intent, reply))
}
