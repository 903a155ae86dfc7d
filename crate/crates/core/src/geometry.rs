//! Planar POI-local frames, headings, and the direction/distance renderers
//! shared by the planner, the guidance loop and the scene agent.
//!
//! Conventions used throughout the crate:
//! - `x` grows east, `y` grows north, both in meters from the POI origin.
//! - Headings and bearings are degrees clockwise from north in `[0, 360)`.
//! - Rounding is half away from zero (`f64::round`).
//! - Sector boundaries are half-open `[center - w/2, center + w/2)`.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest coordinate magnitude accepted in a POI-local frame.
pub const MAX_LOCAL_COORD_M: f64 = 10_000.0;
/// Mean earth radius used by the equirectangular projection.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;
/// Validity window of the equirectangular projection around an anchor.
pub const GEO_WINDOW_M: f64 = 5_000.0;
/// International foot.
pub const FEET_PER_METER: f64 = 3.28084;
/// Default step length for step-based distances.
pub const DEFAULT_STEP_LENGTH_M: f64 = 0.76;

const ZERO_DISTANCE_EPS: f64 = 1e-9;
const METERS_PER_DEG: f64 = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("target coincides with the current position")]
    ZeroDistance,
    #[error("distance must be non-negative, got {0}")]
    NegativeDistance(f64),
    #[error("point is {0:.1} m from the anchor, outside the 5 km projection window")]
    OutOfWindow(f64),
    #[error("non-finite or out-of-range value: {0}")]
    InvalidValue(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl From<[f64; 2]> for Point2 {
    fn from(v: [f64; 2]) -> Self {
        Point2 { x: v[0], y: v[1] }
    }
}

impl From<Point2> for [f64; 2] {
    fn from(p: Point2) -> Self {
        [p.x, p.y]
    }
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self - other).norm()
    }

    pub fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3D cross product; positive when `other` lies
    /// counter-clockwise (to the left) of `self`.
    pub fn cross(self, other: Point2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn is_valid_local(self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.x.abs() <= MAX_LOCAL_COORD_M
            && self.y.abs() <= MAX_LOCAL_COORD_M
    }

    /// Unit vector pointing along `heading_deg` (clockwise from north).
    pub fn from_heading(heading_deg: f64) -> Point2 {
        let h = normalize_deg(heading_deg);
        // exact axes keep axis-aligned boxes free of rounding noise
        match h {
            0.0 => Point2::new(0.0, 1.0),
            90.0 => Point2::new(1.0, 0.0),
            180.0 => Point2::new(0.0, -1.0),
            270.0 => Point2::new(-1.0, 0.0),
            _ => {
                let r = h.to_radians();
                Point2::new(r.sin(), r.cos())
            }
        }
    }

    /// Absolute heading of this vector, clockwise from north.
    pub fn heading(self) -> f64 {
        normalize_deg(self.x.atan2(self.y).to_degrees())
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, k: f64) -> Point2 {
        Point2::new(self.x * k, self.y * k)
    }
}

impl fmt::Display for Point2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.2}, {:.2})", self.x, self.y)
    }
}

/// Wraps any finite angle into `[0, 360)`.
pub fn normalize_deg(deg: f64) -> f64 {
    let r = deg.rem_euclid(360.0);
    // rem_euclid can return 360.0 for tiny negative inputs
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

/// Maps a relative bearing in `[0, 360)` to the signed error in `(-180, 180]`,
/// negative meaning "to the left".
pub fn signed_bearing(rel_bearing: f64) -> f64 {
    let b = normalize_deg(rel_bearing);
    if b > 180.0 {
        b - 360.0
    } else {
        b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Point2,
    pub heading_deg: f64,
}

impl Pose {
    pub fn new(position: Point2, heading_deg: f64) -> Self {
        Pose {
            position,
            heading_deg: normalize_deg(heading_deg),
        }
    }
}

/// Bearing of `target` relative to the pose heading: 0 is dead ahead,
/// 90 is due right.
pub fn relative_bearing(pose: &Pose, target: Point2) -> Result<f64, GeometryError> {
    let d = target - pose.position;
    if d.norm() <= ZERO_DISTANCE_EPS {
        return Err(GeometryError::ZeroDistance);
    }
    Ok(normalize_deg(d.heading() - pose.heading_deg))
}

/// Clock-face hour for a relative bearing; 0 degrees is 12 o'clock.
pub fn to_clock_hour(rel_bearing: f64) -> u8 {
    let h = (normalize_deg(rel_bearing) / 30.0).round() as u8;
    if h == 0 || h == 12 {
        12
    } else {
        h
    }
}

const EGO8: [&str; 8] = [
    "forward",
    "forward-right",
    "right",
    "backward-right",
    "backward",
    "backward-left",
    "left",
    "forward-left",
];
const EGO4: [&str; 4] = ["forward", "right", "backward", "left"];
const WINDS: [&str; 8] = ["N", "NE", "E", "SE", "S", "SW", "W", "NW"];

fn sector_index(deg: f64, sectors: usize) -> usize {
    let width = 360.0 / sectors as f64;
    let shifted = normalize_deg(deg + width / 2.0);
    ((shifted / width).floor() as usize) % sectors
}

/// Egocentric label on 4 or 8 equal sectors centered on dead ahead.
///
/// Any sector count other than 4 is treated as 8.
pub fn to_egocentric(rel_bearing: f64, sectors: u8) -> &'static str {
    if sectors == 4 {
        EGO4[sector_index(rel_bearing, 4)]
    } else {
        EGO8[sector_index(rel_bearing, 8)]
    }
}

/// 8-wind label for an absolute heading.
pub fn to_cardinal(abs_heading: f64) -> &'static str {
    WINDS[sector_index(abs_heading, 8)]
}

/// Spelled-out wind names, used when speaking cardinal directions.
pub fn cardinal_word(label: &str) -> &'static str {
    match label {
        "N" => "north",
        "NE" => "northeast",
        "E" => "east",
        "SE" => "southeast",
        "S" => "south",
        "SW" => "southwest",
        "W" => "west",
        _ => "northwest",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionFormat {
    #[default]
    ClockFace,
    Egocentric8,
    EgocentricDegrees,
    Cardinal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DistanceUnit {
    Meters,
    Feet,
    Steps { step_length_m: f64 },
}

impl Default for DistanceUnit {
    fn default() -> Self {
        DistanceUnit::Meters
    }
}

impl DistanceUnit {
    pub fn steps() -> Self {
        DistanceUnit::Steps {
            step_length_m: DEFAULT_STEP_LENGTH_M,
        }
    }
}

/// A distance as it is spoken: the integer that appears in the text plus the text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RenderedDistance {
    pub value: u64,
    pub text: String,
}

fn plural(n: u64, one: &str, many: &str) -> String {
    if n == 1 {
        format!("1 {one}")
    } else {
        format!("{n} {many}")
    }
}

pub fn format_distance(meters: f64, unit: DistanceUnit) -> Result<RenderedDistance, GeometryError> {
    if meters.is_nan() {
        return Err(GeometryError::InvalidValue("NaN distance".into()));
    }
    if meters < 0.0 {
        return Err(GeometryError::NegativeDistance(meters));
    }
    let rendered = match unit {
        DistanceUnit::Meters => {
            if meters < 0.5 {
                RenderedDistance {
                    value: 0,
                    text: "less than 1 meter".to_string(),
                }
            } else {
                let v = (meters.round() as u64).max(1);
                RenderedDistance {
                    value: v,
                    text: plural(v, "meter", "meters"),
                }
            }
        }
        DistanceUnit::Feet => {
            let v = (meters * FEET_PER_METER).round() as u64;
            RenderedDistance {
                value: v,
                text: plural(v, "foot", "feet"),
            }
        }
        DistanceUnit::Steps { step_length_m } => {
            if !(step_length_m > 0.0) {
                return Err(GeometryError::InvalidValue(format!(
                    "step length {step_length_m}"
                )));
            }
            let v = (meters / step_length_m).round() as u64;
            RenderedDistance {
                value: v,
                text: plural(v, "step", "steps"),
            }
        }
    };
    Ok(rendered)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoAnchor {
    pub lat: f64,
    pub lon: f64,
}

impl GeoAnchor {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeometryError> {
        let a = GeoAnchor { lat, lon };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.lat.is_finite() && (-90.0..=90.0).contains(&self.lat)) {
            return Err(GeometryError::InvalidValue(format!("latitude {}", self.lat)));
        }
        if !(self.lon.is_finite() && (-180.0..180.0).contains(&self.lon)) {
            return Err(GeometryError::InvalidValue(format!("longitude {}", self.lon)));
        }
        Ok(())
    }

    fn meters_per_deg_lon(&self) -> f64 {
        self.lat.to_radians().cos() * METERS_PER_DEG
    }

    /// Equirectangular projection into the anchor's local frame.
    pub fn geo_to_local(&self, lat: f64, lon: f64) -> Result<Point2, GeometryError> {
        let mut dlon = lon - self.lon;
        if dlon > 180.0 {
            dlon -= 360.0;
        } else if dlon < -180.0 {
            dlon += 360.0;
        }
        let p = Point2::new(
            dlon * self.meters_per_deg_lon(),
            (lat - self.lat) * METERS_PER_DEG,
        );
        let d = p.norm();
        if !d.is_finite() || d > GEO_WINDOW_M {
            return Err(GeometryError::OutOfWindow(d));
        }
        Ok(p)
    }

    /// Inverse of [`GeoAnchor::geo_to_local`]; returns `(lat, lon)`.
    pub fn local_to_geo(&self, p: Point2) -> Result<(f64, f64), GeometryError> {
        let d = p.norm();
        if !d.is_finite() || d > GEO_WINDOW_M {
            return Err(GeometryError::OutOfWindow(d));
        }
        let lat = self.lat + p.y / METERS_PER_DEG;
        let mut lon = self.lon + p.x / self.meters_per_deg_lon();
        if lon >= 180.0 {
            lon -= 360.0;
        } else if lon < -180.0 {
            lon += 360.0;
        }
        Ok((lat, lon))
    }
}

/// Oriented rectangle footprint. `half_w` runs along the box's local
/// east axis and `half_d` along its local north axis before the yaw is applied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub center: Point2,
    pub yaw_deg: f64,
    pub half_w: f64,
    pub half_d: f64,
}

impl OrientedBox {
    /// Local (right, forward) axes in world coordinates.
    fn axes(&self) -> (Point2, Point2) {
        let fwd = Point2::from_heading(self.yaw_deg);
        let right = Point2::from_heading(self.yaw_deg + 90.0);
        (right, fwd)
    }

    pub fn to_world(&self, local: Point2) -> Point2 {
        let (r, f) = self.axes();
        self.center + r * local.x + f * local.y
    }

    pub fn to_local(&self, world: Point2) -> Point2 {
        let (r, f) = self.axes();
        let d = world - self.center;
        Point2::new(d.dot(r), d.dot(f))
    }

    /// Corners in counter-clockwise order starting south-west in the box frame.
    pub fn corners(&self) -> [Point2; 4] {
        let (w, d) = (self.half_w, self.half_d);
        [
            self.to_world(Point2::new(-w, -d)),
            self.to_world(Point2::new(w, -d)),
            self.to_world(Point2::new(w, d)),
            self.to_world(Point2::new(-w, d)),
        ]
    }

    pub fn contains_point(&self, p: Point2, eps: f64) -> bool {
        let l = self.to_local(p);
        l.x.abs() <= self.half_w + eps && l.y.abs() <= self.half_d + eps
    }

    /// Distance from `p` to the footprint; zero inside.
    pub fn distance_to(&self, p: Point2) -> f64 {
        let l = self.to_local(p);
        let dx = (l.x.abs() - self.half_w).max(0.0);
        let dy = (l.y.abs() - self.half_d).max(0.0);
        dx.hypot(dy)
    }

    pub fn is_valid(&self) -> bool {
        self.half_w > 0.0
            && self.half_d > 0.0
            && self.half_w.is_finite()
            && self.half_d.is_finite()
            && self.yaw_deg.is_finite()
            && self.center.is_valid_local()
    }
}

/// Directed segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: Point2,
    pub b: Point2,
}

impl Segment {
    pub fn new(a: Point2, b: Point2) -> Self {
        Segment { a, b }
    }

    pub fn length(&self) -> f64 {
        self.a.distance(self.b)
    }

    /// Parameter of the orthogonal projection of `p`, clamped to `[0, 1]`.
    pub fn project_clamped(&self, p: Point2) -> f64 {
        let d = self.b - self.a;
        let len2 = d.dot(d);
        if len2 == 0.0 {
            return 0.0;
        }
        ((p - self.a).dot(d) / len2).clamp(0.0, 1.0)
    }

    pub fn point_at(&self, t: f64) -> Point2 {
        self.a + (self.b - self.a) * t
    }

    pub fn distance_to(&self, p: Point2) -> f64 {
        self.point_at(self.project_clamped(p)).distance(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pose(x: f64, y: f64, h: f64) -> Pose {
        Pose::new(Point2::new(x, y), h)
    }

    #[test]
    fn bearing_examples() {
        assert_eq!(relative_bearing(&pose(0., 0., 0.), Point2::new(0., 5.)).unwrap(), 0.0);
        assert!((relative_bearing(&pose(0., 0., 0.), Point2::new(5., 0.)).unwrap() - 90.0).abs() < 1e-12);
        assert!((relative_bearing(&pose(0., 0., 90.), Point2::new(0., 5.)).unwrap() - 270.0).abs() < 1e-12);
        assert_eq!(
            relative_bearing(&pose(1., 1., 0.), Point2::new(1., 1.)),
            Err(GeometryError::ZeroDistance)
        );
    }

    /// Independent check: rotate the world offset into the body frame with a
    /// rotation matrix and read the bearing off the body-frame vector.
    #[test]
    fn bearing_matches_rotation_matrix() {
        for h in (0..360).step_by(7) {
            for (tx, ty) in [(3.0, 4.0), (-2.0, 0.5), (0.0, -7.0), (1.0, 1.0)] {
                let th = (h as f64).to_radians();
                // body frame: forward = heading, right = heading + 90
                let fwd = tx * th.sin() + ty * th.cos();
                let right = tx * th.cos() - ty * th.sin();
                let mut expect = right.atan2(fwd).to_degrees();
                if expect < 0.0 {
                    expect += 360.0;
                }
                let got = relative_bearing(&pose(0., 0., h as f64), Point2::new(tx, ty)).unwrap();
                let diff = (got - expect).abs();
                assert!(diff < 1e-9 || (360.0 - diff) < 1e-9, "h={h} got={got} want={expect}");
            }
        }
    }

    #[test]
    fn clock_examples_and_sweep() {
        assert_eq!(to_clock_hour(0.0), 12);
        assert_eq!(to_clock_hour(60.0), 2);
        assert_eq!(to_clock_hour(345.0), 12);
        assert_eq!(to_clock_hour(330.0), 11);
        // table oracle: hour h covers [30h - 15, 30h + 15)
        let mut counts = [0u32; 13];
        for d in 0..360 {
            let want = {
                let mut h = ((d + 15) / 30) % 12;
                if h == 0 {
                    h = 12;
                }
                h as u8
            };
            let got = to_clock_hour(d as f64);
            assert_eq!(got, want, "deg {d}");
            counts[got as usize] += 1;
        }
        assert!(counts[1..].iter().all(|&c| c == 30));
    }

    #[test]
    fn egocentric_examples_and_sweep() {
        assert_eq!(to_egocentric(0.0, 8), "forward");
        assert_eq!(to_egocentric(45.0, 8), "forward-right");
        assert_eq!(to_egocentric(200.0, 4), "backward");
        assert_eq!(to_egocentric(337.5, 8), "forward");
        assert_eq!(to_egocentric(22.5, 8), "forward-right");
        for d in 0..360 {
            let d = d as f64;
            let idx8 = EGO8.iter().position(|l| *l == to_egocentric(d, 8)).unwrap();
            let lo = idx8 as f64 * 45.0 - 22.5;
            let in_sector = (d >= lo && d < lo + 45.0) || (d - 360.0 >= lo && d - 360.0 < lo + 45.0);
            assert!(in_sector, "{d} -> {idx8}");
            let idx4 = EGO4.iter().position(|l| *l == to_egocentric(d, 4)).unwrap();
            let lo4 = idx4 as f64 * 90.0 - 45.0;
            assert!((d >= lo4 && d < lo4 + 90.0) || (d - 360.0 >= lo4 && d - 360.0 < lo4 + 90.0));
        }
    }

    #[test]
    fn cardinal_examples() {
        assert_eq!(to_cardinal(0.0), "N");
        assert_eq!(to_cardinal(180.0), "S");
        assert_eq!(to_cardinal(100.0), "E");
        assert_eq!(to_cardinal(112.5), "SE");
        assert_eq!(to_cardinal(67.4), "NE");
    }

    #[test]
    fn distance_examples() {
        let s = DistanceUnit::steps();
        assert_eq!(format_distance(7.6, s).unwrap().value, 10);
        assert_eq!(format_distance(5.0, DistanceUnit::Meters).unwrap().text, "5 meters");
        // 5 / 0.76 = 6.578... -> 7
        assert_eq!(format_distance(5.0, s).unwrap().text, "7 steps");
        assert_eq!(format_distance(0.3, DistanceUnit::Meters).unwrap().text, "less than 1 meter");
        assert_eq!(format_distance(0.5, DistanceUnit::Meters).unwrap().text, "1 meter");
        assert_eq!(format_distance(1.0, DistanceUnit::Feet).unwrap().text, "3 feet");
        assert!(matches!(
            format_distance(-1.0, DistanceUnit::Meters),
            Err(GeometryError::NegativeDistance(_))
        ));
    }

    #[test]
    fn geo_examples() {
        let a = GeoAnchor::new(51.5113, -0.1367).unwrap();
        let o = a.geo_to_local(51.5113, -0.1367).unwrap();
        assert_eq!(o, Point2::new(0.0, 0.0));

        let z = GeoAnchor::new(0.0, 0.0).unwrap();
        let p = z.geo_to_local(0.001, 0.0).unwrap();
        // haversine oracle for a pure latitude offset
        let dlat = 0.001f64.to_radians();
        let h = (dlat / 2.0).sin().powi(2);
        let hav = 2.0 * EARTH_RADIUS_M * h.sqrt().asin();
        assert!(p.x.abs() < 1e-9);
        assert!((p.y - hav).abs() < 0.1);
        assert!((p.y - 111.19).abs() < 0.01);

        assert!(matches!(z.geo_to_local(0.1, 0.0), Err(GeometryError::OutOfWindow(_))));
        assert!(GeoAnchor::new(91.0, 0.0).is_err());
        assert!(GeoAnchor::new(0.0, 180.0).is_err());
    }

    #[test]
    fn box_geometry() {
        let b = OrientedBox { center: Point2::new(0., 0.), yaw_deg: 0.0, half_w: 0.5, half_d: 0.5 };
        assert_eq!(b.distance_to(Point2::new(0.1, 0.2)), 0.0);
        assert!((b.distance_to(Point2::new(0.0, 3.5)) - 3.0).abs() < 1e-12);
        let r = OrientedBox { yaw_deg: 90.0, half_w: 1.0, half_d: 2.0, ..b };
        // yaw 90: local forward axis points east, so the long side is east-west
        assert!(r.contains_point(Point2::new(1.9, 0.0), 1e-9));
        assert!(!r.contains_point(Point2::new(0.0, 1.9), 1e-9));
    }

    #[test]
    fn segment_distance() {
        let s = Segment::new(Point2::new(0., 0.), Point2::new(10., 0.));
        assert!((s.distance_to(Point2::new(5., 2.5)) - 2.5).abs() < 1e-12);
        assert!((s.distance_to(Point2::new(-3., 4.)) - 5.0).abs() < 1e-12);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn bearing_in_range_and_periodic(
                x in -100.0f64..100.0, y in -100.0f64..100.0,
                tx in -100.0f64..100.0, ty in -100.0f64..100.0,
                h in 0.0f64..360.0,
            ) {
                prop_assume!((tx - x).hypot(ty - y) > 1e-6);
                let p = Pose::new(Point2::new(x, y), h);
                let q = Pose::new(Point2::new(x, y), h + 360.0);
                let a = relative_bearing(&p, Point2::new(tx, ty)).unwrap();
                let b = relative_bearing(&q, Point2::new(tx, ty)).unwrap();
                prop_assert!((0.0..360.0).contains(&a));
                let d = (a - b).abs();
                prop_assert!(d < 1e-9 || (360.0 - d) < 1e-9);
            }

            #[test]
            fn ego8_refines_ego4(d in 0.0f64..360.0) {
                // the 4-sector label is one of the components of the 8-sector label
                let l8 = to_egocentric(d, 8);
                let l4 = to_egocentric(d, 4);
                prop_assert!(l8.split('-').any(|part| part == l4), "{} vs {}", l8, l4);
            }

            #[test]
            fn steps_monotone(a in 0.0f64..500.0, b in 0.0f64..500.0) {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                let u = DistanceUnit::steps();
                prop_assert!(format_distance(lo, u).unwrap().value <= format_distance(hi, u).unwrap().value);
            }

            #[test]
            fn geo_round_trip(
                lat0 in -70.0f64..70.0, lon0 in -179.0f64..179.0,
                x in -3500.0f64..3500.0, y in -3500.0f64..3500.0,
            ) {
                let a = GeoAnchor::new(lat0, lon0).unwrap();
                let (lat, lon) = a.local_to_geo(Point2::new(x, y)).unwrap();
                let back = a.geo_to_local(lat, lon).unwrap();
                prop_assert!((back.x - x).abs() < 0.01 && (back.y - y).abs() < 0.01);
                let (lat2, lon2) = a.local_to_geo(back).unwrap();
                prop_assert!((lat2 - lat).abs() < 1e-6 && (lon2 - lon).abs() < 1e-6);
            }
        }
    }
}
