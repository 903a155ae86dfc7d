//! Per-user presentation and delivery preferences.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::annotations::CategoryPrefs;
use crate::geometry::{DirectionFormat, DistanceUnit};

pub const DEFAULT_VERBOSITY_WORDS: usize = 45;
pub const MIN_VERBOSITY_WORDS: usize = 10;
pub const DEFAULT_COMPASS_THRESHOLD_DEG: f64 = 20.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PrefsError {
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VoicePrefs {
    pub timbre: String,
    pub rate: f64,
}

impl Default for VoicePrefs {
    fn default() -> Self {
        VoicePrefs {
            timbre: "default".into(),
            rate: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VisualPrefs {
    pub path_color: String,
    pub marker_color: String,
}

impl Default for VisualPrefs {
    fn default() -> Self {
        VisualPrefs {
            path_color: "#00c853".into(),
            marker_color: "#ff4fa3".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UserPrefs {
    pub direction_format: DirectionFormat,
    pub unit: DistanceUnit,
    pub verbosity_words: usize,
    pub category_prefs: CategoryPrefs,
    pub voice: VoicePrefs,
    pub visual: VisualPrefs,
    pub visual_condition_note: String,
    pub explicit_wrong_way: bool,
    pub compass_threshold_deg: f64,
}

impl Default for UserPrefs {
    fn default() -> Self {
        UserPrefs {
            direction_format: DirectionFormat::ClockFace,
            unit: DistanceUnit::Meters,
            verbosity_words: DEFAULT_VERBOSITY_WORDS,
            category_prefs: CategoryPrefs::default(),
            voice: VoicePrefs::default(),
            visual: VisualPrefs::default(),
            visual_condition_note: String::new(),
            explicit_wrong_way: true,
            compass_threshold_deg: DEFAULT_COMPASS_THRESHOLD_DEG,
        }
    }
}

fn invalid(path: &str, message: impl Into<String>) -> PrefsError {
    PrefsError::Invalid {
        path: path.into(),
        message: message.into(),
    }
}

fn merge(base: &mut Value, delta: &Value) {
    match (base, delta) {
        (Value::Object(b), Value::Object(d)) => {
            for (k, v) in d {
                match b.get_mut(k) {
                    // tagged enums are replaced wholesale, plain objects merge
                    Some(slot) if slot.is_object() && v.is_object() && v.get("kind").is_none() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, d) => *b = d.clone(),
    }
}

impl UserPrefs {
    pub fn validate(&self) -> Result<(), PrefsError> {
        if self.verbosity_words < MIN_VERBOSITY_WORDS {
            return Err(invalid(
                "verbosity_words",
                format!("must be at least {MIN_VERBOSITY_WORDS}"),
            ));
        }
        if let DistanceUnit::Steps { step_length_m } = self.unit {
            if !(step_length_m > 0.0 && step_length_m.is_finite()) {
                return Err(invalid("unit.step_length_m", "must be positive"));
            }
        }
        if !(self.compass_threshold_deg > 0.0 && self.compass_threshold_deg < 180.0) {
            return Err(invalid("compass_threshold_deg", "must lie in (0, 180)"));
        }
        if !(self.voice.rate > 0.0 && self.voice.rate.is_finite()) {
            return Err(invalid("voice.rate", "must be positive"));
        }
        Ok(())
    }

    pub fn from_json(value: &Value) -> Result<UserPrefs, PrefsError> {
        let p: UserPrefs = serde_path_to_error::deserialize(value.clone())
            .map_err(|e| invalid(&e.path().to_string(), e.inner().to_string()))?;
        p.validate()?;
        Ok(p)
    }

    /// Applies a partial JSON object; the result must validate or nothing changes.
    pub fn apply_delta(&mut self, delta: &Value) -> Result<(), PrefsError> {
        if !delta.is_object() {
            return Err(invalid("", "delta must be a JSON object"));
        }
        let mut v = serde_json::to_value(&*self).expect("prefs serialize");
        merge(&mut v, delta);
        *self = UserPrefs::from_json(&v)?;
        Ok(())
    }
}
