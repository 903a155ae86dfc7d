//! POI scene graph: static objects as oriented boxes, the walkable region,
//! and the spatial queries behind the scene agent.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::geometry::{
    relative_bearing, to_egocentric, GeoAnchor, OrientedBox, Point2, Pose, Segment,
};

const CONTAIN_EPS: f64 = 1e-9;
const TIE_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("duplicate object id `{0}`")]
    DuplicateId(String),
}

impl SceneError {
    fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        SceneError::Schema {
            path: path.into(),
            message: message.into(),
        }
    }
}

/// How unknown keys in a POI document are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strictness {
    Strict,
    #[default]
    Lenient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub id: String,
    pub class_label: String,
    pub aliases: Vec<String>,
    pub footprint: OrientedBox,
}

impl SceneObject {
    /// Distance from `p` to the footprint boundary, zero inside.
    pub fn distance_to(&self, p: Point2) -> f64 {
        self.footprint.distance_to(p)
    }

    /// World-frame footprint edges, counter-clockwise.
    pub fn footprint_edges(&self) -> [Segment; 4] {
        let c = self.footprint.corners();
        [
            Segment::new(c[0], c[1]),
            Segment::new(c[1], c[2]),
            Segment::new(c[2], c[3]),
            Segment::new(c[3], c[0]),
        ]
    }
}

/// Simple polygon given as a vertex ring without the closing repeat.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    pub vertices: Vec<Point2>,
}

impl Polygon {
    pub fn signed_area(&self) -> f64 {
        let v = &self.vertices;
        let n = v.len();
        (0..n).map(|i| v[i].cross(v[(i + 1) % n])).sum::<f64>() / 2.0
    }

    /// Even-odd ray casting; points exactly on an edge may land on either side.
    pub fn contains(&self, p: Point2) -> bool {
        let v = &self.vertices;
        let n = v.len();
        let mut inside = false;
        let mut j = n - 1;
        for i in 0..n {
            let (a, b) = (v[i], v[j]);
            if (a.y > p.y) != (b.y > p.y) {
                let x = (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x;
                if p.x < x {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }

    pub fn edges(&self) -> impl Iterator<Item = Segment> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| Segment::new(self.vertices[i], self.vertices[(i + 1) % n]))
    }

    pub fn bounds(&self) -> (Point2, Point2) {
        let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.vertices {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        (lo, hi)
    }

    fn is_simple(&self) -> bool {
        let edges: Vec<Segment> = self.edges().collect();
        let n = edges.len();
        for i in 0..n {
            for j in (i + 1)..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if adjacent {
                    continue;
                }
                if segments_intersect(edges[i], edges[j]) {
                    return false;
                }
            }
        }
        true
    }

    fn oriented(mut self, ccw: bool) -> Self {
        if (self.signed_area() > 0.0) != ccw {
            self.vertices.reverse();
        }
        self
    }
}

fn orient(a: Point2, b: Point2, c: Point2) -> f64 {
    (b - a).cross(c - a)
}

fn on_segment(a: Point2, b: Point2, p: Point2) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

fn segments_intersect(s: Segment, t: Segment) -> bool {
    let d1 = orient(t.a, t.b, s.a);
    let d2 = orient(t.a, t.b, s.b);
    let d3 = orient(s.a, s.b, t.a);
    let d4 = orient(s.a, s.b, t.b);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(t.a, t.b, s.a))
        || (d2 == 0.0 && on_segment(t.a, t.b, s.b))
        || (d3 == 0.0 && on_segment(s.a, s.b, t.a))
        || (d4 == 0.0 && on_segment(s.a, s.b, t.b))
}

/// Walkable ground: an outer boundary (stored CCW) minus holes (stored CW).
#[derive(Debug, Clone, PartialEq)]
pub struct WalkableRegion {
    pub outer: Polygon,
    pub holes: Vec<Polygon>,
}

impl WalkableRegion {
    pub fn contains(&self, p: Point2) -> bool {
        self.outer.contains(p) && !self.holes.iter().any(|h| h.contains(p))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneGraph {
    pub poi_id: String,
    pub anchor: GeoAnchor,
    pub walkable: WalkableRegion,
    pub objects: Vec<SceneObject>,
    /// Where interactive walkers appear. Defaults to the walkable centroid.
    pub spawn: Option<Pose>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelativeDescription {
    pub rel_bearing: f64,
    pub distance_m: f64,
    pub side: &'static str,
}

const TOP_KEYS: &[&str] = &["poi_id", "anchor", "walkable", "objects", "spawn"];
const OBJECT_KEYS: &[&str] = &["id", "class", "aliases", "center", "yaw_deg", "half_w", "half_d"];

#[derive(Deserialize, Serialize)]
struct RawAnchor {
    lat: f64,
    lon: f64,
}

#[derive(Deserialize, Serialize)]
struct RawObject {
    id: String,
    class: String,
    #[serde(default)]
    aliases: Vec<String>,
    center: [f64; 2],
    yaw_deg: f64,
    half_w: f64,
    half_d: f64,
}

#[derive(Deserialize, Serialize)]
struct RawSpawn {
    x: f64,
    y: f64,
    #[serde(default)]
    heading: f64,
}

#[derive(Deserialize, Serialize)]
struct RawPoi {
    poi_id: String,
    anchor: RawAnchor,
    walkable: Vec<Vec<[f64; 2]>>,
    objects: Vec<RawObject>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    spawn: Option<RawSpawn>,
}

fn check_keys(
    obj: &serde_json::Map<String, Value>,
    allowed: &[&str],
    path: &str,
    strictness: Strictness,
) -> Result<(), SceneError> {
    for key in obj.keys() {
        if !allowed.contains(&key.as_str()) {
            let at = if path.is_empty() {
                key.clone()
            } else {
                format!("{path}.{key}")
            };
            match strictness {
                Strictness::Strict => return Err(SceneError::schema(at, "unknown key")),
                Strictness::Lenient => log::warn!("ignoring unknown POI key `{at}`"),
            }
        }
    }
    Ok(())
}

impl SceneGraph {
    /// Parses and validates a POI document.
    pub fn load(document: &str, strictness: Strictness) -> Result<SceneGraph, SceneError> {
        let value: Value = serde_json::from_str(document)
            .map_err(|e| SceneError::schema("$", format!("invalid JSON: {e}")))?;
        let top = value
            .as_object()
            .ok_or_else(|| SceneError::schema("$", "expected an object"))?;
        check_keys(top, TOP_KEYS, "", strictness)?;
        if let Some(Value::Array(objs)) = top.get("objects") {
            for (i, o) in objs.iter().enumerate() {
                if let Some(o) = o.as_object() {
                    check_keys(o, OBJECT_KEYS, &format!("objects[{i}]"), strictness)?;
                }
            }
        }
        let raw: RawPoi = serde_path_to_error::deserialize(value).map_err(|e| {
            SceneError::schema(e.path().to_string(), e.inner().to_string())
        })?;
        Self::from_raw(raw)
    }

    fn from_raw(raw: RawPoi) -> Result<SceneGraph, SceneError> {
        let anchor = GeoAnchor::new(raw.anchor.lat, raw.anchor.lon)
            .map_err(|e| SceneError::schema("anchor", e.to_string()))?;
        let mut rings = raw.walkable.into_iter();
        let outer = rings
            .next()
            .ok_or_else(|| SceneError::schema("walkable", "missing outer boundary"))?;
        let to_poly = |ring: Vec<[f64; 2]>, idx: usize| -> Result<Polygon, SceneError> {
            if ring.len() < 3 {
                return Err(SceneError::schema(
                    format!("walkable[{idx}]"),
                    "polygon needs at least 3 vertices",
                ));
            }
            let vertices: Vec<Point2> = ring.into_iter().map(Point2::from).collect();
            if vertices.iter().any(|p| !p.is_valid_local()) {
                return Err(SceneError::Geometry(format!(
                    "walkable[{idx}] has a non-finite or out-of-range vertex"
                )));
            }
            let poly = Polygon { vertices };
            if !poly.is_simple() {
                return Err(SceneError::Geometry(format!(
                    "walkable[{idx}] is self-intersecting"
                )));
            }
            if poly.signed_area().abs() < 1e-12 {
                return Err(SceneError::Geometry(format!("walkable[{idx}] has zero area")));
            }
            Ok(poly)
        };
        let outer = to_poly(outer, 0)?.oriented(true);
        let mut holes = Vec::new();
        for (i, ring) in rings.enumerate() {
            let hole = to_poly(ring, i + 1)?.oriented(false);
            if !hole.vertices.iter().all(|v| outer.contains(*v)) {
                return Err(SceneError::Geometry(format!(
                    "walkable[{}] hole is not inside the outer boundary",
                    i + 1
                )));
            }
            holes.push(hole);
        }

        let mut seen = HashSet::new();
        let mut objects = Vec::with_capacity(raw.objects.len());
        for (i, o) in raw.objects.into_iter().enumerate() {
            if !seen.insert(o.id.clone()) {
                return Err(SceneError::DuplicateId(o.id));
            }
            let class_label = o.class.trim().to_lowercase();
            if class_label.is_empty() {
                return Err(SceneError::schema(format!("objects[{i}].class"), "empty class"));
            }
            let footprint = OrientedBox {
                center: Point2::from(o.center),
                yaw_deg: o.yaw_deg,
                half_w: o.half_w,
                half_d: o.half_d,
            };
            if !footprint.is_valid() {
                return Err(SceneError::Geometry(format!(
                    "objects[{i}] (`{}`) has an invalid footprint",
                    o.id
                )));
            }
            objects.push(SceneObject {
                id: o.id,
                class_label,
                aliases: o.aliases.into_iter().map(|a| a.trim().to_lowercase()).collect(),
                footprint,
            });
        }
        let spawn = raw
            .spawn
            .map(|s| Pose::new(Point2::new(s.x, s.y), s.heading));
        Ok(SceneGraph {
            poi_id: raw.poi_id,
            anchor,
            walkable: WalkableRegion { outer, holes },
            objects,
            spawn,
        })
    }

    /// Serializes back to the POI document format.
    pub fn to_json(&self) -> String {
        let mut walkable = vec![ring(&self.walkable.outer)];
        walkable.extend(self.walkable.holes.iter().map(ring));
        let raw = RawPoi {
            poi_id: self.poi_id.clone(),
            anchor: RawAnchor {
                lat: self.anchor.lat,
                lon: self.anchor.lon,
            },
            walkable,
            objects: self
                .objects
                .iter()
                .map(|o| RawObject {
                    id: o.id.clone(),
                    class: o.class_label.clone(),
                    aliases: o.aliases.clone(),
                    center: o.footprint.center.into(),
                    yaw_deg: o.footprint.yaw_deg,
                    half_w: o.footprint.half_w,
                    half_d: o.footprint.half_d,
                })
                .collect(),
            spawn: self.spawn.map(|p| RawSpawn {
                x: p.position.x,
                y: p.position.y,
                heading: p.heading_deg,
            }),
        };
        serde_json::to_string_pretty(&raw).expect("POI serialization cannot fail")
    }

    pub fn object(&self, id: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    /// Pose where interactive sessions start.
    pub fn spawn_pose(&self) -> Pose {
        self.spawn.unwrap_or_else(|| {
            let (lo, hi) = self.walkable.outer.bounds();
            Pose::new(Point2::new((lo.x + hi.x) / 2.0, (lo.y + hi.y) / 2.0), 0.0)
        })
    }

    /// Number of objects per class, sorted by class name.
    pub fn class_counts(&self) -> BTreeMap<&str, usize> {
        let mut m = BTreeMap::new();
        for o in &self.objects {
            *m.entry(o.class_label.as_str()).or_insert(0) += 1;
        }
        m
    }

    /// Maps a spoken object name onto the canonical class label.
    pub fn resolve_class(&self, query: &str) -> Option<String> {
        let q = normalize_name(query);
        if q.is_empty() {
            return None;
        }
        let lookup = |name: &str| {
            self.objects
                .iter()
                .find(|o| o.class_label == name || o.aliases.iter().any(|a| a == name))
                .map(|o| o.class_label.clone())
        };
        if let Some(c) = lookup(&q) {
            return Some(c);
        }
        singular_forms(&q).into_iter().find_map(|s| lookup(&s))
    }

    /// Nearest object of a class by boundary distance; ties go to the smaller id.
    pub fn nearest_by_class(&self, pose: &Pose, class_label: &str) -> Option<(&SceneObject, f64)> {
        let mut best: Option<(&SceneObject, f64)> = None;
        for o in self.objects.iter().filter(|o| o.class_label == class_label) {
            let d = o.distance_to(pose.position);
            best = match best {
                None => Some((o, d)),
                Some((b, bd)) => {
                    if d < bd - TIE_EPS || ((d - bd).abs() <= TIE_EPS && o.id < b.id) {
                        Some((o, d))
                    } else {
                        Some((b, bd))
                    }
                }
            };
        }
        best
    }

    /// All objects of a class ordered by distance (then id).
    pub fn ranked_by_class(&self, pose: &Pose, class_label: &str) -> Vec<(&SceneObject, f64)> {
        let mut v: Vec<_> = self
            .objects
            .iter()
            .filter(|o| o.class_label == class_label)
            .map(|o| (o, o.distance_to(pose.position)))
            .collect();
        v.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.id.cmp(&b.0.id)));
        v
    }

    /// Objects whose footprint lies within `radius_m`, nearest first.
    pub fn objects_within(
        &self,
        pose: &Pose,
        radius_m: f64,
    ) -> Vec<(&SceneObject, RelativeDescription)> {
        if !(radius_m > 0.0) {
            return Vec::new();
        }
        let mut v: Vec<_> = self
            .objects
            .iter()
            .filter_map(|o| {
                let d = o.distance_to(pose.position);
                (d <= radius_m).then(|| (o, describe(pose, o, d)))
            })
            .collect();
        v.sort_by(|a, b| {
            a.1.distance_m
                .total_cmp(&b.1.distance_m)
                .then_with(|| a.0.id.cmp(&b.0.id))
        });
        v
    }

    pub fn describe_object(&self, pose: &Pose, o: &SceneObject) -> RelativeDescription {
        describe(pose, o, o.distance_to(pose.position))
    }
}

fn ring(p: &Polygon) -> Vec<[f64; 2]> {
    p.vertices.iter().map(|v| (*v).into()).collect()
}

fn describe(pose: &Pose, o: &SceneObject, distance_m: f64) -> RelativeDescription {
    // bearing toward the footprint center; standing on the center counts as ahead
    let rel_bearing = relative_bearing(pose, o.footprint.center).unwrap_or(0.0);
    RelativeDescription {
        rel_bearing,
        distance_m,
        side: to_egocentric(rel_bearing, 8),
    }
}

/// True iff every footprint corner of `inner` lies inside `outer`'s footprint.
pub fn contains(outer: &SceneObject, inner: &SceneObject) -> bool {
    inner
        .footprint
        .corners()
        .iter()
        .all(|c| outer.footprint.contains_point(*c, CONTAIN_EPS))
}

fn normalize_name(s: &str) -> String {
    let cleaned: String = s
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '-' { c.to_ascii_lowercase() } else { ' ' })
        .collect();
    let words: Vec<&str> = cleaned
        .split_whitespace()
        .filter(|w| !matches!(*w, "the" | "a" | "an"))
        .collect();
    words.join(" ")
}

fn singular_forms(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    if let Some(stem) = s.strip_suffix("es") {
        out.push(stem.to_string());
    }
    if let Some(stem) = s.strip_suffix('s') {
        out.push(stem.to_string());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn obj(id: &str, class: &str, c: (f64, f64), yaw: f64, hw: f64, hd: f64) -> SceneObject {
        SceneObject {
            id: id.into(),
            class_label: class.into(),
            aliases: vec![],
            footprint: OrientedBox {
                center: Point2::new(c.0, c.1),
                yaw_deg: yaw,
                half_w: hw,
                half_d: hd,
            },
        }
    }

    const MINIMAL: &str = r#"{
        "poi_id": "empty",
        "anchor": {"lat": 51.5, "lon": -0.13},
        "walkable": [[[0,0],[10,0],[10,10],[0,10]]],
        "objects": []
    }"#;

    #[test]
    fn loads_golden_square_counts() {
        let g = fixtures::golden_square();
        assert_eq!(g.objects.len(), 64);
        let c = g.class_counts();
        assert_eq!(c["bench"], 20);
        assert_eq!(c["trash bin"], 26);
        assert_eq!(c["stairs"], 2);
        assert_eq!(c["ramp"], 1);
        assert_eq!(c["podium"], 6);
        assert_eq!(c["flower bed"], 3);
        assert_eq!(c["table tennis table"], 2);
        assert_eq!(c["notice board"], 3);
        assert_eq!(c["statue"], 1);
    }

    #[test]
    fn loads_empty_poi() {
        let g = SceneGraph::load(MINIMAL, Strictness::Strict).unwrap();
        assert!(g.objects.is_empty());
        assert!(g.walkable.outer.signed_area() > 0.0);
    }

    #[test]
    fn rejects_bad_documents() {
        let dup = MINIMAL.replace(
            "\"objects\": []",
            r#""objects": [
                {"id":"a","class":"bench","center":[1,1],"yaw_deg":0,"half_w":1,"half_d":1},
                {"id":"a","class":"bench","center":[5,5],"yaw_deg":0,"half_w":1,"half_d":1}]"#,
        );
        assert_eq!(
            SceneGraph::load(&dup, Strictness::Lenient),
            Err(SceneError::DuplicateId("a".into()))
        );

        let bowtie = MINIMAL.replace("[[0,0],[10,0],[10,10],[0,10]]", "[[0,0],[10,10],[10,0],[0,10]]");
        assert!(matches!(
            SceneGraph::load(&bowtie, Strictness::Lenient),
            Err(SceneError::Geometry(_))
        ));

        let missing = MINIMAL.replace("\"poi_id\": \"empty\",", "");
        match SceneGraph::load(&missing, Strictness::Lenient) {
            Err(SceneError::Schema { message, .. }) => assert!(message.contains("poi_id")),
            other => panic!("{other:?}"),
        }

        let extra = MINIMAL.replace("\"objects\": []", "\"objects\": [], \"colour\": 1");
        assert!(SceneGraph::load(&extra, Strictness::Lenient).is_ok());
        match SceneGraph::load(&extra, Strictness::Strict) {
            Err(SceneError::Schema { path, .. }) => assert_eq!(path, "colour"),
            other => panic!("{other:?}"),
        }

        let bad_field = MINIMAL.replace(
            "\"objects\": []",
            r#""objects": [{"id":"a","class":"bench","center":[1,1],"yaw_deg":"x","half_w":1,"half_d":1}]"#,
        );
        match SceneGraph::load(&bad_field, Strictness::Strict) {
            Err(SceneError::Schema { path, .. }) => assert_eq!(path, "objects[0].yaw_deg"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn hole_outside_is_rejected() {
        let doc = MINIMAL.replace(
            "[[[0,0],[10,0],[10,10],[0,10]]]",
            "[[[0,0],[10,0],[10,10],[0,10]], [[20,20],[21,20],[21,21]]]",
        );
        assert!(matches!(
            SceneGraph::load(&doc, Strictness::Lenient),
            Err(SceneError::Geometry(_))
        ));
    }

    #[test]
    fn resolve_class_synonyms() {
        let g = fixtures::golden_square();
        assert_eq!(g.resolve_class("ping pong table").as_deref(), Some("table tennis table"));
        assert_eq!(g.resolve_class("Statue").as_deref(), Some("statue"));
        assert_eq!(g.resolve_class("the benches").as_deref(), Some("bench"));
        assert_eq!(g.resolve_class("unicorn"), None);
        for q in ["ping pong table", "podiums", "trash can", "the statue"] {
            let once = g.resolve_class(q).unwrap();
            assert_eq!(g.resolve_class(&once).as_deref(), Some(once.as_str()));
        }
    }

    #[test]
    fn nearest_statue_from_ramp() {
        let g = fixtures::golden_square();
        let ramp = g.objects.iter().find(|o| o.class_label == "ramp").unwrap();
        let pose = Pose::new(ramp.footprint.center, 0.0);
        let (s, d) = g.nearest_by_class(&pose, "statue").unwrap();
        assert_eq!(s.class_label, "statue");
        assert!(d > 0.0);
    }

    #[test]
    fn nearest_tie_breaks_by_id() {
        let mut g = SceneGraph::load(MINIMAL, Strictness::Strict).unwrap();
        g.objects.push(obj("podium_2", "podium", (6.0, 5.0), 0.0, 0.5, 0.5));
        g.objects.push(obj("podium_1", "podium", (4.0, 5.0), 0.0, 0.5, 0.5));
        let (o, _) = g.nearest_by_class(&Pose::new(Point2::new(5.0, 5.0), 0.0), "podium").unwrap();
        assert_eq!(o.id, "podium_1");
        let (o, d) = g.nearest_by_class(&Pose::new(Point2::new(6.1, 5.0), 0.0), "podium").unwrap();
        assert_eq!((o.id.as_str(), d), ("podium_2", 0.0));
    }

    #[test]
    fn objects_within_examples() {
        let g = fixtures::golden_square();
        let statue = g.objects.iter().find(|o| o.class_label == "statue").unwrap();
        // stand 3 m south of the statue's footprint, facing north toward it
        let c = statue.footprint.center;
        let pose = Pose::new(Point2::new(c.x, c.y - statue.footprint.half_d - 3.0), 0.0);
        let near = g.objects_within(&pose, 3.0 + 1e-9);
        let hit = near.iter().find(|(o, _)| o.id == statue.id).unwrap();
        assert!(hit.1.rel_bearing.abs() < 1e-9);
        assert_eq!(hit.1.side, "forward");

        let empty = SceneGraph::load(MINIMAL, Strictness::Strict).unwrap();
        assert!(empty.objects_within(&pose, 0.01).is_empty());
    }

    #[test]
    fn objects_within_matches_brute_force() {
        let g = fixtures::golden_square();
        for (i, r) in [0.5, 2.0, 5.0, 12.0, 60.0].iter().enumerate() {
            for k in 0..25 {
                let p = Point2::new(-19.0 + (k as f64) * 1.55, -17.0 + (i as f64) * 7.3);
                let pose = Pose::new(p, 0.0);
                let got: HashSet<&str> =
                    g.objects_within(&pose, *r).iter().map(|(o, _)| o.id.as_str()).collect();
                // brute force: sample each footprint edge densely; only objects
                // within sampling error of the radius are left undecided
                for o in &g.objects {
                    let d = brute_distance(o, p);
                    if d < *r - 1e-3 {
                        assert!(got.contains(o.id.as_str()), "missing {} r={r} p={p}", o.id);
                    } else if d > *r + 1e-3 {
                        assert!(!got.contains(o.id.as_str()), "extra {} r={r} p={p}", o.id);
                    }
                }
            }
        }
    }

    fn brute_distance(o: &SceneObject, p: Point2) -> f64 {
        if o.footprint.contains_point(p, 0.0) {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for e in o.footprint_edges() {
            for s in 0..=2000 {
                let q = e.point_at(s as f64 / 2000.0);
                best = best.min(q.distance(p));
            }
        }
        best
    }

    #[test]
    fn containment() {
        let g = fixtures::golden_square();
        let statue = g.objects.iter().find(|o| o.class_label == "statue").unwrap();
        let central = g.object("flower_bed_central").unwrap();
        assert!(contains(central, statue));
        assert!(!contains(statue, central));
        assert!(contains(statue, statue));
        let west = g.object("flower_bed_west").unwrap();
        assert!(!contains(west, statue));
    }

    #[test]
    fn footprint_edges_examples() {
        let unit = obj("u", "box", (0.0, 0.0), 0.0, 0.5, 0.5);
        let e = unit.footprint_edges();
        let pts: Vec<(f64, f64)> = e.iter().map(|s| (s.a.x, s.a.y)).collect();
        assert_eq!(pts, vec![(-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5)]);
        // CCW: positive signed area
        let poly = Polygon { vertices: e.iter().map(|s| s.a).collect() };
        assert!(poly.signed_area() > 0.0);

        let rotated = obj("r", "box", (0.0, 0.0), 90.0, 0.5, 0.5);
        let mut a: Vec<(i64, i64)> = unit.footprint.corners().iter().map(|p| ((p.x * 1e6).round() as i64, (p.y * 1e6).round() as i64)).collect();
        let mut b: Vec<(i64, i64)> = rotated.footprint.corners().iter().map(|p| ((p.x * 1e6).round() as i64, (p.y * 1e6).round() as i64)).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);

        // yaw 45, extents (1, 2) against a clockwise rotation matrix
        let o = obj("y", "box", (3.0, -1.0), 45.0, 1.0, 2.0);
        let t = 45f64.to_radians();
        for (corner, (u, v)) in o
            .footprint
            .corners()
            .iter()
            .zip([(-1.0, -2.0), (1.0, -2.0), (1.0, 2.0), (-1.0, 2.0)])
        {
            let x = 3.0 + u * t.cos() + v * t.sin();
            let y = -1.0 - u * t.sin() + v * t.cos();
            assert!((corner.x - x).abs() < 1e-12 && (corner.y - y).abs() < 1e-12);
        }
    }

    #[test]
    fn round_trip() {
        let g = fixtures::golden_square();
        let again = SceneGraph::load(&g.to_json(), Strictness::Strict).unwrap();
        assert_eq!(g, again);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn within_is_monotone(x in -20.0f64..20.0, y in -20.0f64..20.0, r1 in 0.1f64..15.0, dr in 0.0f64..10.0) {
                let g = fixtures::golden_square();
                let pose = Pose::new(Point2::new(x, y), 0.0);
                let small: HashSet<String> = g.objects_within(&pose, r1).iter().map(|(o, _)| o.id.clone()).collect();
                let big: HashSet<String> = g.objects_within(&pose, r1 + dr).iter().map(|(o, _)| o.id.clone()).collect();
                prop_assert!(small.is_subset(&big));
            }

            #[test]
            fn nearest_is_minimal(x in -20.0f64..20.0, y in -20.0f64..20.0) {
                let g = fixtures::golden_square();
                let pose = Pose::new(Point2::new(x, y), 0.0);
                for class in ["bench", "podium", "trash bin", "flower bed"] {
                    let (_, d) = g.nearest_by_class(&pose, class).unwrap();
                    for o in g.objects.iter().filter(|o| o.class_label == class) {
                        prop_assert!(d <= o.distance_to(pose.position) + 1e-12);
                    }
                }
            }

            #[test]
            fn containment_is_transitive(
                cx in -5.0f64..5.0, cy in -5.0f64..5.0, yaw in 0.0f64..360.0,
                w in 2.0f64..6.0, d in 2.0f64..6.0,
                s1 in 0.2f64..0.7, s2 in 0.2f64..0.7,
                yaw_b in 0.0f64..360.0, yaw_c in 0.0f64..360.0,
            ) {
                let a = obj("a", "x", (cx, cy), yaw, w, d);
                // b and c are concentric shrinking boxes: containment may or may
                // not hold depending on yaw, but the implication must
                let b = obj("b", "x", (cx, cy), yaw_b, w * s1, d * s1);
                let c = obj("c", "x", (cx, cy), yaw_c, w * s1 * s2, d * s1 * s2);
                if contains(&a, &b) && contains(&b, &c) {
                    prop_assert!(contains(&a, &c));
                }
            }
        }
    }
}
