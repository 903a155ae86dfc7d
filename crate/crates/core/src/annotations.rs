//! Annotation store, categorization, proximity triggers and playback scheduling.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point2, Pose};
use crate::scene::SceneGraph;

pub const MAX_TEXT_CHARS: usize = 2000;
pub const CRITICAL_RADIUS_M: f64 = 1.5;
pub const DEFAULT_RADIUS_M: f64 = 1.0;
pub const REARM_HYSTERESIS_M: f64 = 0.5;
pub const REARM_COOLDOWN_S: f64 = 60.0;
pub const VIBRATION_S: f64 = 0.5;
pub const SKIP_BOUND_S: f64 = 15.0;
pub const WORDS_PER_SECOND: f64 = 2.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Safety,
    Accessibility,
    Amenity,
    Layout,
    Attraction,
    Experience,
    Request,
}

impl Category {
    pub const ALL: [Category; 7] = [
        Category::Safety,
        Category::Accessibility,
        Category::Amenity,
        Category::Layout,
        Category::Attraction,
        Category::Experience,
        Category::Request,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Category::Safety => "safety",
            Category::Accessibility => "accessibility",
            Category::Amenity => "amenity",
            Category::Layout => "layout",
            Category::Attraction => "attraction",
            Category::Experience => "experience",
            Category::Request => "request",
        }
    }

    pub fn trigger_radius_m(&self) -> f64 {
        match self {
            Category::Safety | Category::Accessibility => CRITICAL_RADIUS_M,
            _ => DEFAULT_RADIUS_M,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_lowercase();
        let s = s.strip_suffix('s').filter(|_| s != "accessibility").unwrap_or(&s);
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s || (s == "amenitie" && *c == Category::Amenity))
            .ok_or_else(|| format!("unknown category '{s}'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccessMode {
    Auto,
    Prompt,
    Silent,
}

/// Per-category access modes. Missing entries fall back to the defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CategoryPrefs(pub BTreeMap<Category, AccessMode>);

impl CategoryPrefs {
    pub fn default_mode(c: Category) -> AccessMode {
        match c {
            Category::Safety | Category::Accessibility => AccessMode::Auto,
            _ => AccessMode::Prompt,
        }
    }

    pub fn mode(&self, c: Category) -> AccessMode {
        self.0.get(&c).copied().unwrap_or_else(|| Self::default_mode(c))
    }

    pub fn set(&mut self, c: Category, m: AccessMode) {
        self.0.insert(c, m);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Anchor {
    Point(Point2),
    Object(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Visibility {
    #[default]
    Public,
}

impl Visibility {
    fn is_public(&self) -> bool {
        *self == Visibility::Public
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Annotation {
    pub id: String,
    pub author: String,
    pub category: Category,
    pub text: String,
    pub anchor: Anchor,
    pub created_at: f64,
    pub updated_at: f64,
    /// Category was chosen by the author; edits keep it.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub pinned: bool,
    #[serde(default, skip_serializing_if = "Visibility::is_public")]
    pub visibility: Visibility,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnnotationError {
    #[error("annotation text is empty")]
    EmptyText,
    #[error("annotation text exceeds {MAX_TEXT_CHARS} characters")]
    TextTooLong,
    #[error("bad anchor: {0}")]
    BadAnchor(String),
    #[error("annotation '{0}' not found")]
    NotFound(String),
    #[error("only the author may change annotation '{0}'")]
    NotAuthor(String),
    #[error("duplicate annotation id '{0}'")]
    DuplicateId(String),
    #[error("line {line}: {path}: {message}")]
    Schema {
        line: usize,
        path: String,
        message: String,
    },
}

// ---------------------------------------------------------------- classifier

const SAFETY_CUES: &[&str] = &[
    "watch out",
    "careful",
    "trip",
    "hazard",
    "danger",
    "steps ahead",
    "branches",
    "mind the",
    "slippery",
];
const REQUEST_CUES: &[&str] = &["tell me", "find out", "let me know", "does anyone know", "can someone"];
const INTERROGATIVES: &[&str] = &[
    "what", "where", "when", "who", "why", "how", "which", "is", "are", "can", "could", "does",
];
const ACCESSIBILITY_CUES: &[&str] = &[
    "ramp",
    "accessible",
    "toilet",
    "handrail",
    "elevator",
    "lift",
    "wheelchair",
    "step-free",
    "open seven days",
    "opening hours",
    "rules",
    "uneven",
    "not level",
];
const AMENITY_CUES: &[&str] = &[
    "café",
    "cafe",
    "coffee",
    "bus",
    "shop",
    "station",
    "bins",
    "services",
    "retail",
    "restaurant",
    "food",
];
const ATTRACTION_CUES: &[&str] = &[
    "history",
    "this statue",
    "flowers",
    "roses",
    "species",
    "gift",
    "yellow",
    "pink",
    "purple",
    "monument",
];
const LAYOUT_CUES: &[&str] = &[
    "layout",
    "entrance",
    "exit",
    "square has",
    "identical",
    "sit to the left",
    "one of two",
    "one of the two",
    "in the center",
];

pub fn normalize(text: &str) -> String {
    text.to_lowercase()
        .replace(['’', '‘'], "'")
        .replace(['\u{2014}', '\u{2013}'], " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// True if `cue` occurs in `text` starting at a word boundary.
fn has_cue(text: &str, cue: &str) -> bool {
    text.match_indices(cue).any(|(i, _)| {
        text[..i]
            .chars()
            .next_back()
            .is_none_or(|c| !c.is_alphanumeric())
    })
}

fn words(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\'' || c == '-'))
        .filter(|w| !w.is_empty())
}

fn is_request(norm: &str) -> bool {
    if norm.trim_end().ends_with('?') {
        return true;
    }
    if words(norm).next().is_some_and(|w| INTERROGATIVES.contains(&w)) {
        return true;
    }
    REQUEST_CUES.iter().any(|c| has_cue(norm, c))
}

/// Rule cascade; earlier categories win when several match.
pub fn classify(text: &str) -> Category {
    let norm = normalize(text);
    let any = |cues: &[&str]| cues.iter().any(|c| has_cue(&norm, c));
    if any(SAFETY_CUES) {
        Category::Safety
    } else if is_request(&norm) {
        Category::Request
    } else if any(ACCESSIBILITY_CUES) {
        Category::Accessibility
    } else if any(AMENITY_CUES) {
        Category::Amenity
    } else if any(ATTRACTION_CUES) {
        Category::Attraction
    } else if any(LAYOUT_CUES) {
        Category::Layout
    } else {
        // first-person narrative and everything unmatched
        Category::Experience
    }
}

// --------------------------------------------------------------------- store

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Filter {
    pub category: Option<Category>,
    pub author: Option<String>,
    pub radius_m: Option<f64>,
    pub text: Option<String>,
}

impl Filter {
    pub fn category(c: Category) -> Self {
        Filter {
            category: Some(c),
            ..Default::default()
        }
    }

    pub fn text(s: &str) -> Self {
        Filter {
            text: Some(s.to_string()),
            ..Default::default()
        }
    }
}

/// Annotations for one POI. Object anchors are resolved against its scene graph.
#[derive(Debug, Clone)]
pub struct AnnotationStore {
    scene: Arc<SceneGraph>,
    items: Vec<Annotation>,
}

impl AnnotationStore {
    pub fn new(scene: Arc<SceneGraph>) -> Self {
        AnnotationStore {
            scene,
            items: Vec::new(),
        }
    }

    pub fn scene(&self) -> &Arc<SceneGraph> {
        &self.scene
    }

    pub fn load_jsonl(text: &str, scene: Arc<SceneGraph>) -> Result<Self, AnnotationError> {
        let mut store = AnnotationStore::new(scene);
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let de = &mut serde_json::Deserializer::from_str(line);
            let a: Annotation = serde_path_to_error::deserialize(de).map_err(|e| AnnotationError::Schema {
                line: n + 1,
                path: e.path().to_string(),
                message: e.inner().to_string(),
            })?;
            store.validate(&a.text, &a.anchor)?;
            if store.get(&a.id).is_some() {
                return Err(AnnotationError::DuplicateId(a.id));
            }
            store.items.push(a);
        }
        Ok(store)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for a in &self.items {
            out.push_str(&serde_json::to_string(a).expect("annotation serializes"));
            out.push('\n');
        }
        out
    }

    fn validate(&self, text: &str, anchor: &Anchor) -> Result<(), AnnotationError> {
        if text.trim().is_empty() {
            return Err(AnnotationError::EmptyText);
        }
        if text.chars().count() > MAX_TEXT_CHARS {
            return Err(AnnotationError::TextTooLong);
        }
        match anchor {
            Anchor::Point(p) if !p.is_valid_local() => {
                Err(AnnotationError::BadAnchor(format!("point {p} is outside the local frame")))
            }
            Anchor::Object(id) if self.scene.object(id).is_none() => {
                Err(AnnotationError::BadAnchor(format!("unknown object '{id}'")))
            }
            _ => Ok(()),
        }
    }

    fn next_id(&self) -> String {
        let max = self
            .items
            .iter()
            .filter_map(|a| a.id.strip_prefix("ann_")?.parse::<u64>().ok())
            .max()
            .unwrap_or(0);
        format!("ann_{:02}", max + 1)
    }

    pub fn create(
        &mut self,
        author: &str,
        text: &str,
        anchor: Anchor,
        category: Option<Category>,
        now: f64,
    ) -> Result<Annotation, AnnotationError> {
        self.validate(text, &anchor)?;
        let a = Annotation {
            id: self.next_id(),
            author: author.to_string(),
            category: category.unwrap_or_else(|| classify(text)),
            text: text.trim().to_string(),
            anchor,
            created_at: now,
            updated_at: now,
            pinned: category.is_some(),
            visibility: Visibility::Public,
        };
        self.items.push(a.clone());
        Ok(a)
    }

    fn owned_mut(&mut self, id: &str, author: &str) -> Result<&mut Annotation, AnnotationError> {
        let a = self
            .items
            .iter_mut()
            .find(|a| a.id == id)
            .ok_or_else(|| AnnotationError::NotFound(id.to_string()))?;
        if a.author != author {
            return Err(AnnotationError::NotAuthor(id.to_string()));
        }
        Ok(a)
    }

    pub fn edit(&mut self, id: &str, author: &str, new_text: &str, now: f64) -> Result<Annotation, AnnotationError> {
        if new_text.trim().is_empty() {
            return Err(AnnotationError::EmptyText);
        }
        if new_text.chars().count() > MAX_TEXT_CHARS {
            return Err(AnnotationError::TextTooLong);
        }
        let a = self.owned_mut(id, author)?;
        a.text = new_text.trim().to_string();
        if !a.pinned {
            a.category = classify(&a.text);
        }
        // timestamps strictly advance even if the caller's clock does not
        a.updated_at = if now > a.updated_at { now } else { a.updated_at + 1e-3 };
        Ok(a.clone())
    }

    /// Sets an author-chosen category, pinning it across later edits.
    pub fn set_category(&mut self, id: &str, author: &str, category: Category, now: f64) -> Result<Annotation, AnnotationError> {
        let a = self.owned_mut(id, author)?;
        a.category = category;
        a.pinned = true;
        a.updated_at = if now > a.updated_at { now } else { a.updated_at + 1e-3 };
        Ok(a.clone())
    }

    pub fn delete(&mut self, id: &str, author: &str) -> Result<Annotation, AnnotationError> {
        self.owned_mut(id, author)?;
        let pos = self.items.iter().position(|a| a.id == id).expect("checked above");
        Ok(self.items.remove(pos))
    }

    pub fn get(&self, id: &str) -> Option<&Annotation> {
        self.items.iter().find(|a| a.id == id)
    }

    pub fn all(&self) -> &[Annotation] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Representative point of an anchor: the point itself or the object center.
    pub fn anchor_position(&self, anchor: &Anchor) -> Option<Point2> {
        match anchor {
            Anchor::Point(p) => Some(*p),
            Anchor::Object(id) => self.scene.object(id).map(|o| o.footprint.center),
        }
    }

    /// Distance from `p` to an anchor; object anchors measure to the footprint.
    pub fn anchor_distance(&self, anchor: &Anchor, p: Point2) -> Option<f64> {
        match anchor {
            Anchor::Point(a) => Some(a.distance(p)),
            Anchor::Object(id) => self.scene.object(id).map(|o| o.distance_to(p)),
        }
    }

    /// Conjunctive filter. A radius filter needs a pose and keeps anchors
    /// strictly closer than the radius. Results are sorted by distance when a
    /// pose is given, otherwise by creation time.
    pub fn query(&self, filter: &Filter, pose: Option<&Pose>) -> Vec<&Annotation> {
        let needle = filter.text.as_deref().map(normalize);
        let mut hits: Vec<(f64, &Annotation)> = Vec::new();
        for a in &self.items {
            if filter.category.is_some_and(|c| c != a.category) {
                continue;
            }
            if filter.author.as_deref().is_some_and(|au| au != a.author) {
                continue;
            }
            if let Some(n) = &needle {
                if !normalize(&a.text).contains(n.as_str()) {
                    continue;
                }
            }
            let d = pose.and_then(|p| self.anchor_distance(&a.anchor, p.position));
            if let Some(r) = filter.radius_m {
                match d {
                    Some(d) if d < r => {}
                    _ => continue,
                }
            }
            hits.push((d.unwrap_or(a.created_at), a));
        }
        hits.sort_by(|x, y| x.0.total_cmp(&y.0).then_with(|| x.1.id.cmp(&y.1.id)));
        hits.into_iter().map(|(_, a)| a).collect()
    }
}

// ------------------------------------------------------------------ triggers

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerEvent {
    pub annotation_id: String,
    pub category: Category,
    pub mode_at_fire: AccessMode,
    pub trigger_time: f64,
    pub distance_m: f64,
    pub vibration_s: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
struct ArmState {
    armed: bool,
    exited: bool,
    last_fire: f64,
}

/// Proximity trigger bookkeeping for one walker.
#[derive(Debug, Clone, Default)]
pub struct TriggerEngine {
    states: HashMap<String, ArmState>,
}

impl TriggerEngine {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn scan(&mut self, store: &AnnotationStore, pose: &Pose, prefs: &CategoryPrefs, now: f64) -> Vec<TriggerEvent> {
        let mut fired = Vec::new();
        for a in store.all() {
            let mode = prefs.mode(a.category);
            if mode == AccessMode::Silent {
                continue;
            }
            let Some(d) = store.anchor_distance(&a.anchor, pose.position) else {
                continue;
            };
            let r = a.category.trigger_radius_m();
            let st = self.states.entry(a.id.clone()).or_insert(ArmState {
                armed: true,
                exited: false,
                last_fire: f64::NEG_INFINITY,
            });
            if !st.armed {
                if d > r + REARM_HYSTERESIS_M {
                    st.exited = true;
                }
                if st.exited && now - st.last_fire >= REARM_COOLDOWN_S {
                    st.armed = true;
                }
            }
            if st.armed && d <= r {
                st.armed = false;
                st.exited = false;
                st.last_fire = now;
                fired.push(TriggerEvent {
                    annotation_id: a.id.clone(),
                    category: a.category,
                    mode_at_fire: mode,
                    trigger_time: now,
                    distance_m: d,
                    vibration_s: (a.category == Category::Safety).then_some(VIBRATION_S),
                });
            }
        }
        fired.sort_by(|x, y| {
            x.distance_m
                .total_cmp(&y.distance_m)
                .then_with(|| x.annotation_id.cmp(&y.annotation_id))
        });
        fired
    }
}

// ---------------------------------------------------------------- playback

const NUMBER_WORDS: [&str; 21] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven",
    "twelve", "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen", "twenty",
];

pub fn number_word(n: usize) -> String {
    NUMBER_WORDS
        .get(n)
        .map(|w| w.to_string())
        .unwrap_or_else(|| n.to_string())
}

/// "two attraction notes nearby"; categories in declaration order.
pub fn aggregate_prompt(categories: &[Category]) -> String {
    let mut counts: BTreeMap<Category, usize> = BTreeMap::new();
    for c in categories {
        *counts.entry(*c).or_default() += 1;
    }
    let parts: Vec<String> = counts
        .iter()
        .map(|(c, n)| {
            let noun = if *n == 1 { "note" } else { "notes" };
            format!("{} {} {}", number_word(*n), c.as_str(), noun)
        })
        .collect();
    format!("{} nearby", parts.join(" and "))
}

pub fn estimate_duration_s(text: &str) -> f64 {
    let n = text.split_whitespace().count().max(1);
    n as f64 / WORDS_PER_SECOND
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum MessageKey {
    Annotation(String),
    Prompt(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueuedMessage {
    pub key: MessageKey,
    pub mode: AccessMode,
    pub trigger_time: f64,
    pub est_duration_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Played,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaybackDecision {
    pub key: MessageKey,
    pub start_time: f64,
    pub duration_s: f64,
    pub outcome: Outcome,
}

/// Single-channel sequential playback: Auto before Prompt, FIFO within each,
/// and anything that would start more than 15 s after its trigger is skipped.
pub fn schedule(queue: &[QueuedMessage], now: f64) -> Vec<PlaybackDecision> {
    schedule_after(queue, now, now)
}

/// Same as [`schedule`] for a channel that stays busy until `channel_free`.
pub fn schedule_after(queue: &[QueuedMessage], now: f64, channel_free: f64) -> Vec<PlaybackDecision> {
    let ordered = queue
        .iter()
        .filter(|m| m.mode == AccessMode::Auto)
        .chain(queue.iter().filter(|m| m.mode == AccessMode::Prompt));
    let mut channel_free = channel_free;
    let mut out = Vec::new();
    for m in ordered {
        let start = channel_free.max(now);
        let outcome = if start - m.trigger_time > SKIP_BOUND_S {
            Outcome::Skipped
        } else {
            channel_free = start + m.est_duration_s;
            Outcome::Played
        };
        out.push(PlaybackDecision {
            key: m.key.clone(),
            start_time: start,
            duration_s: m.est_duration_s,
            outcome,
        });
    }
    out
}
