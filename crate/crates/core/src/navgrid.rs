//! Walkable occupancy grid, A* planning, string-pulling smoothing and
//! haptic-edge detection.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point2, Pose};
use crate::scene::{SceneGraph, SceneObject};

pub const DEFAULT_RESOLUTION_M: f64 = 0.25;
pub const DEFAULT_CLEARANCE_M: f64 = 0.30;
pub const MAX_CELLS: usize = 4_000_000;
/// Endpoints off the walkable grid snap to a walkable cell within this radius.
pub const SNAP_RADIUS_M: f64 = 2.0;

const LOS_EPS: f64 = 1e-9;
const SAME_POINT_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NavError {
    #[error("grid would have {0} cells (limit {MAX_CELLS})")]
    GridTooLarge(usize),
    #[error("resolution {0} m outside [0.05, 1.0]")]
    BadResolution(f64),
    #[error("clearance {0} m must be non-negative")]
    BadClearance(f64),
    #[error("no walkable path between the endpoints")]
    NoPath,
    #[error("endpoint cell {0:?} is not walkable")]
    UnwalkableEndpoint(Cell),
    #[error("destination has no walkable cell within {SNAP_RADIUS_M} m")]
    UnreachableDestination,
    #[error("start has no walkable cell within {SNAP_RADIUS_M} m")]
    UnreachableStart,
    #[error("point {0} lies outside the grid")]
    OutOfBounds(Point2),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub const fn new(x: usize, y: usize) -> Self {
        Cell { x, y }
    }
}

/// Axis-aligned occupancy grid over the POI frame. Cell `(x, y)` spans
/// `origin + [x, x+1) * resolution` east and `origin + [y, y+1) * resolution` north.
#[derive(Debug, Clone, PartialEq)]
pub struct NavGrid {
    pub origin: Point2,
    pub resolution_m: f64,
    pub width: usize,
    pub height: usize,
    walkable: Vec<bool>,
}

impl NavGrid {
    /// Builds a grid straight from a walkability mask (row-major, `y * width + x`).
    pub fn from_mask(
        origin: Point2,
        resolution_m: f64,
        width: usize,
        height: usize,
        walkable: Vec<bool>,
    ) -> Self {
        assert_eq!(walkable.len(), width * height, "mask size mismatch");
        NavGrid {
            origin,
            resolution_m,
            width,
            height,
            walkable,
        }
    }

    /// Rasterizes the walkable region, carving out every object footprint
    /// inflated by `clearance_m`. A cell is walkable iff its center is.
    pub fn build(graph: &SceneGraph, resolution_m: f64, clearance_m: f64) -> Result<NavGrid, NavError> {
        if !(0.05..=1.0).contains(&resolution_m) {
            return Err(NavError::BadResolution(resolution_m));
        }
        if !(clearance_m >= 0.0) {
            return Err(NavError::BadClearance(clearance_m));
        }
        let (lo, hi) = graph.walkable.outer.bounds();
        let width = ((hi.x - lo.x) / resolution_m).ceil().max(1.0) as usize;
        let height = ((hi.y - lo.y) / resolution_m).ceil().max(1.0) as usize;
        let cells = width.saturating_mul(height);
        if cells > MAX_CELLS {
            return Err(NavError::GridTooLarge(cells));
        }
        let mut grid = NavGrid {
            origin: lo,
            resolution_m,
            width,
            height,
            walkable: vec![false; cells],
        };
        for y in 0..height {
            for x in 0..width {
                let c = grid.center(Cell::new(x, y));
                grid.walkable[y * width + x] = graph.walkable.contains(c);
            }
        }
        for o in &graph.objects {
            grid.carve(o, clearance_m);
        }
        Ok(grid)
    }

    fn carve(&mut self, o: &SceneObject, clearance_m: f64) {
        let reach = o.footprint.half_w.hypot(o.footprint.half_d) + clearance_m;
        let c = o.footprint.center;
        let to_range = |lo: f64, hi: f64, origin: f64, n: usize| {
            let a = ((lo - origin) / self.resolution_m).floor().max(0.0) as usize;
            let b = ((hi - origin) / self.resolution_m).ceil().max(0.0) as usize;
            (a.min(n), b.min(n))
        };
        let (x0, x1) = to_range(c.x - reach, c.x + reach, self.origin.x, self.width);
        let (y0, y1) = to_range(c.y - reach, c.y + reach, self.origin.y, self.height);
        for y in y0..y1 {
            for x in x0..x1 {
                let center = self.center(Cell::new(x, y));
                if o.footprint.distance_to(center) <= clearance_m {
                    self.walkable[y * self.width + x] = false;
                }
            }
        }
    }

    pub fn index(&self, c: Cell) -> usize {
        c.y * self.width + c.x
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        Cell::new(index % self.width, index / self.width)
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.x < self.width && c.y < self.height
    }

    pub fn is_walkable(&self, c: Cell) -> bool {
        self.in_bounds(c) && self.walkable[self.index(c)]
    }

    pub fn walkable_count(&self) -> usize {
        self.walkable.iter().filter(|w| **w).count()
    }

    pub fn center(&self, c: Cell) -> Point2 {
        Point2::new(
            self.origin.x + (c.x as f64 + 0.5) * self.resolution_m,
            self.origin.y + (c.y as f64 + 0.5) * self.resolution_m,
        )
    }

    pub fn cell_of(&self, p: Point2) -> Option<Cell> {
        let gx = (p.x - self.origin.x) / self.resolution_m;
        let gy = (p.y - self.origin.y) / self.resolution_m;
        if !(gx >= 0.0 && gy >= 0.0) {
            return None;
        }
        let c = Cell::new(gx.floor() as usize, gy.floor() as usize);
        self.in_bounds(c).then_some(c)
    }

    pub fn is_walkable_point(&self, p: Point2) -> bool {
        self.cell_of(p).is_some_and(|c| self.is_walkable(c))
    }

    fn contains_point(&self, p: Point2) -> bool {
        let gx = (p.x - self.origin.x) / self.resolution_m;
        let gy = (p.y - self.origin.y) / self.resolution_m;
        gx >= -LOS_EPS
            && gy >= -LOS_EPS
            && gx <= self.width as f64 + LOS_EPS
            && gy <= self.height as f64 + LOS_EPS
    }

    /// Nearest walkable cell (by center distance) within `radius_m`; ties go
    /// to the lower cell index.
    pub fn snap(&self, p: Point2, radius_m: f64) -> Option<Cell> {
        if let Some(c) = self.cell_of(p) {
            if self.is_walkable(c) {
                return Some(c);
            }
        }
        let r = (radius_m / self.resolution_m).ceil() as i64 + 1;
        let gx = ((p.x - self.origin.x) / self.resolution_m).floor() as i64;
        let gy = ((p.y - self.origin.y) / self.resolution_m).floor() as i64;
        let mut best: Option<(f64, usize)> = None;
        for y in (gy - r).max(0)..=(gy + r).min(self.height as i64 - 1) {
            for x in (gx - r).max(0)..=(gx + r).min(self.width as i64 - 1) {
                let c = Cell::new(x as usize, y as usize);
                if !self.is_walkable(c) {
                    continue;
                }
                let d = self.center(c).distance(p);
                if d > radius_m {
                    continue;
                }
                let idx = self.index(c);
                if best.is_none_or(|(bd, bi)| d < bd || (d == bd && idx < bi)) {
                    best = Some((d, idx));
                }
            }
        }
        best.map(|(_, i)| self.cell_at(i))
    }

    /// Closed-segment supercover test: true iff every cell the segment `ab`
    /// touches (boundaries included) is walkable.
    pub fn line_of_sight(&self, a: Point2, b: Point2) -> Result<bool, NavError> {
        if !self.contains_point(a) {
            return Err(NavError::OutOfBounds(a));
        }
        if !self.contains_point(b) {
            return Err(NavError::OutOfBounds(b));
        }
        Ok(self.touched_cells(a, b).all(|c| self.is_walkable(c)))
    }

    fn touched_cells(&self, a: Point2, b: Point2) -> impl Iterator<Item = Cell> + '_ {
        let r = self.resolution_m;
        let (ax, ay) = ((a.x - self.origin.x) / r, (a.y - self.origin.y) / r);
        let (bx, by) = ((b.x - self.origin.x) / r, (b.y - self.origin.y) / r);
        let (x0, x1) = (ax.min(bx), ax.max(bx));
        let col_lo = clamp_index((x0 - LOS_EPS - 1.0).ceil(), self.width);
        let col_hi = clamp_index((x1 + LOS_EPS).floor(), self.width);
        let vertical = (bx - ax).abs() < 1e-12;
        let y_at = move |x: f64| ay + (x - ax) * (by - ay) / (bx - ax);
        (col_lo..=col_hi).flat_map(move |i| {
            let (ylo, yhi) = if vertical {
                (ay.min(by), ay.max(by))
            } else {
                let xs = x0.max(i as f64).min(x1);
                let xe = x1.min(i as f64 + 1.0).max(x0);
                let (y1, y2) = (y_at(xs), y_at(xe));
                (y1.min(y2), y1.max(y2))
            };
            let row_lo = clamp_index((ylo - LOS_EPS - 1.0).ceil(), self.height);
            let row_hi = clamp_index((yhi + LOS_EPS).floor(), self.height);
            (row_lo..=row_hi).map(move |j| Cell::new(i, j))
        })
    }

    fn neighbors(&self, c: Cell) -> impl Iterator<Item = (Cell, bool)> + '_ {
        const DIRS: [(i64, i64); 8] = [
            (1, 0),
            (-1, 0),
            (0, 1),
            (0, -1),
            (1, 1),
            (1, -1),
            (-1, 1),
            (-1, -1),
        ];
        DIRS.iter().filter_map(move |&(dx, dy)| {
            let nx = c.x as i64 + dx;
            let ny = c.y as i64 + dy;
            if nx < 0 || ny < 0 {
                return None;
            }
            let n = Cell::new(nx as usize, ny as usize);
            if !self.is_walkable(n) {
                return None;
            }
            let diagonal = dx != 0 && dy != 0;
            if diagonal {
                // no corner cutting
                let side_a = Cell::new(nx as usize, c.y);
                let side_b = Cell::new(c.x, ny as usize);
                if !self.is_walkable(side_a) || !self.is_walkable(side_b) {
                    return None;
                }
            }
            Some((n, diagonal))
        })
    }
}

fn clamp_index(v: f64, n: usize) -> usize {
    if v <= 0.0 {
        0
    } else {
        (v as usize).min(n.saturating_sub(1))
    }
}

/// Cost of an 8-connected path as `straight + diagonal * sqrt(2)`. Keeping the
/// integer counts makes cost equality exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct PathCost {
    pub straight: u32,
    pub diagonal: u32,
}

impl PathCost {
    pub fn value(&self) -> f64 {
        self.straight as f64 + self.diagonal as f64 * SQRT_2
    }

    fn step(self, diagonal: bool) -> PathCost {
        if diagonal {
            PathCost {
                diagonal: self.diagonal + 1,
                ..self
            }
        } else {
            PathCost {
                straight: self.straight + 1,
                ..self
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellPath {
    pub cells: Vec<Cell>,
    pub cost: PathCost,
}

fn octile(a: Cell, b: Cell) -> f64 {
    let dx = a.x.abs_diff(b.x) as f64;
    let dy = a.y.abs_diff(b.y) as f64;
    let (lo, hi) = if dx < dy { (dx, dy) } else { (dy, dx) };
    (hi - lo) + lo * SQRT_2
}

#[derive(PartialEq)]
struct OpenEntry {
    f: f64,
    h: f64,
    index: usize,
}

impl Eq for OpenEntry {}

impl Ord for OpenEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed: BinaryHeap is a max-heap
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| other.h.total_cmp(&self.h))
            .then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for OpenEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// 8-connected A* with the octile heuristic; ties broken by `(f, h, index)`.
pub fn a_star(grid: &NavGrid, start: Cell, goal: Cell) -> Result<CellPath, NavError> {
    for c in [start, goal] {
        if !grid.is_walkable(c) {
            return Err(NavError::UnwalkableEndpoint(c));
        }
    }
    let n = grid.width * grid.height;
    let mut g: Vec<Option<PathCost>> = vec![None; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut open = BinaryHeap::new();
    let si = grid.index(start);
    let gi = grid.index(goal);
    g[si] = Some(PathCost::default());
    let h0 = octile(start, goal);
    open.push(OpenEntry { f: h0, h: h0, index: si });

    while let Some(OpenEntry { index, .. }) = open.pop() {
        if closed[index] {
            continue;
        }
        closed[index] = true;
        if index == gi {
            let mut cells = vec![grid.cell_at(gi)];
            let mut cur = gi;
            while cur != si {
                cur = parent[cur];
                cells.push(grid.cell_at(cur));
            }
            cells.reverse();
            return Ok(CellPath {
                cells,
                cost: g[gi].expect("goal was reached"),
            });
        }
        let here = grid.cell_at(index);
        let base = g[index].expect("popped node has a cost");
        for (next, diagonal) in grid.neighbors(here) {
            let ni = grid.index(next);
            let cand = base.step(diagonal);
            let better = g[ni].is_none_or(|old| cand.value() < old.value());
            if better {
                g[ni] = Some(cand);
                parent[ni] = index;
                // reopen if a cheaper route shows up after closing
                closed[ni] = false;
                let h = octile(next, goal);
                open.push(OpenEntry {
                    f: cand.value() + h,
                    h,
                    index: ni,
                });
            }
        }
    }
    Err(NavError::NoPath)
}

/// String pulling: from each anchor jump to the farthest later point that is
/// still in line of sight, then drop collinear interior points.
pub fn smooth(grid: &NavGrid, points: &[Point2]) -> Vec<Point2> {
    if points.len() <= 2 {
        return points.to_vec();
    }
    let visible = |a: Point2, b: Point2| grid.line_of_sight(a, b).unwrap_or(false);
    let mut out = vec![points[0]];
    let mut anchor = 0;
    while anchor < points.len() - 1 {
        let mut next = anchor + 1;
        for j in (anchor + 2..points.len()).rev() {
            if visible(points[anchor], points[j]) {
                next = j;
                break;
            }
        }
        out.push(points[next]);
        anchor = next;
    }
    // greedy pulling can leave a waypoint whose neighbours see each other
    let mut i = 1;
    while i + 1 < out.len() {
        if visible(out[i - 1], out[i + 1]) {
            out.remove(i);
            i = i.saturating_sub(1).max(1);
        } else {
            i += 1;
        }
    }
    remove_collinear(&out)
}

fn remove_collinear(points: &[Point2]) -> Vec<Point2> {
    let mut out: Vec<Point2> = Vec::with_capacity(points.len());
    for &p in points {
        if let Some(&last) = out.last() {
            if last.distance(p) <= SAME_POINT_EPS {
                continue;
            }
        }
        while out.len() >= 2 {
            let a = out[out.len() - 2];
            let b = out[out.len() - 1];
            let (u, v) = (b - a, p - b);
            let collinear = u.cross(v).abs() <= 1e-9 * u.norm() * v.norm() && u.dot(v) > 0.0;
            if collinear {
                out.pop();
            } else {
                break;
            }
        }
        out.push(p);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn as_str(&self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HapticSegment {
    pub segment_index: usize,
    pub object_id: String,
    pub object_class: String,
    pub side: Side,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub waypoints: Vec<Point2>,
    pub haptic_segments: Vec<HapticSegment>,
    pub total_length_m: f64,
}

impl Route {
    pub fn from_waypoints(waypoints: Vec<Point2>) -> Route {
        let total_length_m = waypoints.windows(2).map(|w| w[0].distance(w[1])).sum();
        Route {
            waypoints,
            haptic_segments: Vec::new(),
            total_length_m,
        }
    }

    /// Start and destination coincide; guidance arrives immediately.
    pub fn is_trivial(&self) -> bool {
        self.total_length_m <= SAME_POINT_EPS
    }

    pub fn destination(&self) -> Point2 {
        *self.waypoints.last().expect("route has waypoints")
    }

    pub fn turning_points(&self) -> usize {
        self.waypoints.len().saturating_sub(2)
    }

    pub fn segment_count(&self) -> usize {
        self.waypoints.len().saturating_sub(1)
    }

    pub fn haptic_for(&self, segment_index: usize) -> Option<&HapticSegment> {
        self.haptic_segments
            .iter()
            .find(|h| h.segment_index == segment_index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HapticParams {
    pub max_gap_m: f64,
    pub max_angle_deg: f64,
    pub min_len_m: f64,
}

impl Default for HapticParams {
    fn default() -> Self {
        HapticParams {
            max_gap_m: 1.0,
            max_angle_deg: 15.0,
            min_len_m: 2.0,
        }
    }
}

/// Lateral offset and overlap of one footprint edge relative to a route segment.
fn edge_alignment(
    p: Point2,
    q: Point2,
    edge: crate::geometry::Segment,
    params: &HapticParams,
) -> Option<(f64, Side)> {
    let len = p.distance(q);
    if len <= SAME_POINT_EPS || edge.length() <= SAME_POINT_EPS {
        return None;
    }
    let u = (q - p) * (1.0 / len);
    let left = Point2::new(-u.y, u.x);
    let e = (edge.b - edge.a) * (1.0 / edge.length());
    if u.cross(e).abs() > params.max_angle_deg.to_radians().sin() {
        return None;
    }
    let ta = (edge.a - p).dot(u);
    let tb = (edge.b - p).dot(u);
    if (tb - ta).abs() <= SAME_POINT_EPS {
        return None;
    }
    let lo = ta.min(tb).max(0.0);
    let hi = ta.max(tb).min(len);
    if hi - lo < params.min_len_m {
        return None;
    }
    let at = |t: f64| {
        let s = (t - ta) / (tb - ta);
        (edge.a + (edge.b - edge.a) * s - p).dot(left)
    };
    let (s_lo, s_hi) = (at(lo), at(hi));
    if s_lo.signum() != s_hi.signum() {
        return None;
    }
    let gap = s_lo.abs().max(s_hi.abs());
    if gap > params.max_gap_m {
        return None;
    }
    let side = if s_lo > 0.0 { Side::Left } else { Side::Right };
    Some((gap, side))
}

/// Tags each route segment with the closest object edge it can trail.
pub fn detect_haptic_segments(
    waypoints: &[Point2],
    graph: &SceneGraph,
    params: &HapticParams,
) -> Vec<HapticSegment> {
    let mut out = Vec::new();
    for (i, w) in waypoints.windows(2).enumerate() {
        let mut best: Option<(f64, &SceneObject, Side)> = None;
        for o in &graph.objects {
            for edge in o.footprint_edges() {
                if let Some((gap, side)) = edge_alignment(w[0], w[1], edge, params) {
                    let better = match best {
                        None => true,
                        Some((bg, bo, _)) => gap < bg || (gap == bg && o.id < bo.id),
                    };
                    if better {
                        best = Some((gap, o, side));
                    }
                }
            }
        }
        if let Some((_, o, side)) = best {
            out.push(HapticSegment {
                segment_index: i,
                object_id: o.id.clone(),
                object_class: o.class_label.clone(),
                side,
            });
        }
    }
    out
}

/// Plans from a pose to a point: snap endpoints, A*, smoothing, haptic tags.
pub fn plan_route(graph: &SceneGraph, grid: &NavGrid, from: &Pose, to: Point2) -> Result<Route, NavError> {
    let start_p = from.position;
    if start_p.distance(to) <= SAME_POINT_EPS {
        return Ok(Route::from_waypoints(vec![start_p, to]));
    }
    let start = grid
        .snap(start_p, SNAP_RADIUS_M)
        .ok_or(NavError::UnreachableStart)?;
    let goal = grid
        .snap(to, SNAP_RADIUS_M)
        .ok_or(NavError::UnreachableDestination)?;
    let path = a_star(grid, start, goal)?;

    let start_exact = grid.is_walkable_point(start_p);
    let goal_exact = grid.is_walkable_point(to);
    let mut points: Vec<Point2> = path.cells.iter().map(|c| grid.center(*c)).collect();
    if start_exact {
        points[0] = start_p;
    }
    if goal_exact {
        let last = points.len() - 1;
        if last == 0 {
            points.push(to);
        } else {
            points[last] = to;
        }
    }
    if points.len() == 1 {
        // start and goal snapped to the same cell
        points.push(points[0]);
    }
    let waypoints = smooth(grid, &points);
    let waypoints = if waypoints.len() < 2 {
        vec![waypoints[0], waypoints[0]]
    } else {
        waypoints
    };
    let mut route = Route::from_waypoints(waypoints);
    route.haptic_segments = detect_haptic_segments(&route.waypoints, graph, &HapticParams::default());
    Ok(route)
}

/// Walkable point from which `object` can be reached: the walkable cell
/// closest to its footprint, ties broken by distance from `from`, then index.
/// Objects enclosed by others (a statue in a flower bed) resolve to the
/// nearest reachable edge of the enclosure.
pub fn approach_point(grid: &NavGrid, object: &SceneObject, from: Point2) -> Option<Point2> {
    let mut best: Option<(f64, f64, usize)> = None;
    for idx in 0..grid.walkable.len() {
        if !grid.walkable[idx] {
            continue;
        }
        let p = grid.center(grid.cell_at(idx));
        // quantize so that mirror-image cells tie exactly
        let d = (object.distance_to(p) * 1e6).round() / 1e6;
        let df = p.distance(from);
        let better = best.is_none_or(|(bd, bf, _)| d < bd || (d == bd && df < bf));
        if better {
            best = Some((d, df, idx));
        }
    }
    best.map(|(_, _, i)| grid.center(grid.cell_at(i)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::scene::Strictness;

    fn square_poi(objects: &str) -> SceneGraph {
        let doc = format!(
            r#"{{"poi_id":"t","anchor":{{"lat":0,"lon":0}},
                "walkable":[[[0,0],[10,0],[10,10],[0,10]]],
                "objects":[{objects}]}}"#
        );
        SceneGraph::load(&doc, Strictness::Strict).unwrap()
    }

    fn grid_from_rows(rows: &[&str]) -> NavGrid {
        // rows[0] is the top (highest y)
        let h = rows.len();
        let w = rows[0].len();
        let mut mask = vec![false; w * h];
        for (r, row) in rows.iter().enumerate() {
            let y = h - 1 - r;
            for (x, ch) in row.chars().enumerate() {
                mask[y * w + x] = ch == '.';
            }
        }
        NavGrid::from_mask(Point2::new(0.0, 0.0), 1.0, w, h, mask)
    }

    #[test]
    fn build_examples() {
        let g = square_poi("");
        let grid = NavGrid::build(&g, 0.5, 0.0).unwrap();
        assert_eq!((grid.width, grid.height), (20, 20));
        assert_eq!(grid.walkable_count(), 400);

        let g = square_poi(r#"{"id":"b","class":"box","center":[5,5],"yaw_deg":0,"half_w":1,"half_d":1}"#);
        let grid = NavGrid::build(&g, 0.5, 0.0).unwrap();
        // enumeration oracle: count cell centers inside the box
        let mut blocked = 0;
        for y in 0..20 {
            for x in 0..20 {
                let (cx, cy) = (0.25 + 0.5 * x as f64, 0.25 + 0.5 * y as f64);
                if (cx - 5.0).abs() <= 1.0 && (cy - 5.0).abs() <= 1.0 {
                    blocked += 1;
                }
            }
        }
        assert_eq!(blocked, 16);
        assert_eq!(400 - grid.walkable_count(), blocked);

        let wide = NavGrid::build(&g, 0.5, 0.30).unwrap();
        for y in 0..20 {
            for x in 0..20 {
                let c = Cell::new(x, y);
                if !grid.is_walkable(c) {
                    assert!(!wide.is_walkable(c));
                }
            }
        }
        assert!(wide.walkable_count() < grid.walkable_count());
    }

    #[test]
    fn build_rejects_bad_parameters() {
        let g = square_poi("");
        assert_eq!(NavGrid::build(&g, 0.01, 0.0), Err(NavError::BadResolution(0.01)));
        assert!(matches!(NavGrid::build(&g, 0.5, -1.0), Err(NavError::BadClearance(_))));
        let big = SceneGraph::load(
            r#"{"poi_id":"big","anchor":{"lat":0,"lon":0},
                "walkable":[[[0,0],[2500,0],[2500,2500],[0,2500]]],"objects":[]}"#,
            Strictness::Strict,
        )
        .unwrap();
        assert!(matches!(NavGrid::build(&big, 0.5, 0.0), Err(NavError::GridTooLarge(_))));
    }

    #[test]
    fn a_star_examples() {
        let grid = grid_from_rows(&["...", ".#.", "..."]);
        let p = a_star(&grid, Cell::new(0, 0), Cell::new(2, 2)).unwrap();
        assert_eq!(p.cost, PathCost { straight: 4, diagonal: 0 });
        assert_eq!(p.cells.len(), 5);

        let p = a_star(&grid, Cell::new(0, 0), Cell::new(0, 0)).unwrap();
        assert_eq!((p.cells.len(), p.cost.value()), (1, 0.0));

        let ring = grid_from_rows(&[".....", ".###.", ".#.#.", ".###.", "....."]);
        assert_eq!(a_star(&ring, Cell::new(0, 0), Cell::new(2, 2)), Err(NavError::NoPath));
        assert_eq!(
            a_star(&ring, Cell::new(1, 1), Cell::new(0, 0)),
            Err(NavError::UnwalkableEndpoint(Cell::new(1, 1)))
        );
    }

    #[test]
    fn smooth_examples() {
        let grid = grid_from_rows(&["..........", "..........", ".........."]);
        let corridor: Vec<Point2> = (0..10).map(|x| grid.center(Cell::new(x, 1))).collect();
        assert_eq!(smooth(&grid, &corridor).len(), 2);

        let l = grid_from_rows(&["...", "##.", "..."]);
        let p = a_star(&l, Cell::new(0, 0), Cell::new(0, 2)).unwrap();
        let pts: Vec<Point2> = p.cells.iter().map(|c| l.center(*c)).collect();
        let s = smooth(&l, &pts);
        for w in s.windows(2) {
            assert!(l.line_of_sight(w[0], w[1]).unwrap());
        }
        assert!(s.len() <= pts.len());

        let two = vec![Point2::new(0.5, 0.5), Point2::new(2.5, 0.5)];
        assert_eq!(smooth(&l, &two), two);
    }

    #[test]
    fn smooth_l_path_has_one_turn() {
        // obstacle occupies the lower-right; the path from bottom-left to
        // top-right must bend once around it
        let grid = grid_from_rows(&[
            "......",
            "......",
            "..####",
            "..####",
        ]);
        let start = Cell::new(0, 0);
        let goal = Cell::new(5, 3);
        let p = a_star(&grid, start, goal).unwrap();
        let pts: Vec<Point2> = p.cells.iter().map(|c| grid.center(*c)).collect();
        let s = smooth(&grid, &pts);
        assert_eq!(s.len(), 3, "{s:?}");
        for w in s.windows(2) {
            assert!(grid.line_of_sight(w[0], w[1]).unwrap());
        }
    }

    #[test]
    fn line_of_sight_examples() {
        let grid = grid_from_rows(&["...", ".#.", "..."]);
        let a = Point2::new(0.5, 0.5);
        assert!(grid.line_of_sight(a, a).unwrap());
        assert!(!grid.line_of_sight(Point2::new(0.5, 1.5), Point2::new(2.5, 1.5)).unwrap());
        assert!(grid.line_of_sight(Point2::new(0.5, 0.5), Point2::new(2.5, 0.5)).unwrap());
        // diagonal through a vertex touches the blocked center cell
        assert!(!grid.line_of_sight(Point2::new(0.5, 0.5), Point2::new(2.5, 2.5)).unwrap());
        assert!(matches!(
            grid.line_of_sight(Point2::new(-1.0, 0.0), a),
            Err(NavError::OutOfBounds(_))
        ));
    }

    #[test]
    fn haptic_examples() {
        // flower bed east of a northbound segment, its west edge 0.8 m away
        let g = square_poi(
            r#"{"id":"bed","class":"flower bed","center":[6.8,5],"yaw_deg":0,"half_w":1,"half_d":3}"#,
        );
        let wps = [Point2::new(5.0, 2.5), Point2::new(5.0, 7.5)];
        let tags = detect_haptic_segments(&wps, &g, &HapticParams::default());
        assert_eq!(tags.len(), 1);
        assert_eq!(tags[0].object_class, "flower bed");
        assert_eq!(tags[0].side, Side::Right);

        let back = [wps[1], wps[0]];
        let tags = detect_haptic_segments(&back, &g, &HapticParams::default());
        assert_eq!(tags[0].side, Side::Left);

        let across = [Point2::new(1.0, 5.0), Point2::new(5.5, 5.0)];
        assert!(detect_haptic_segments(&across, &g, &HapticParams::default()).is_empty());

        let far = [Point2::new(4.3, 2.5), Point2::new(4.3, 7.5)];
        assert!(detect_haptic_segments(&far, &g, &HapticParams::default()).is_empty());
    }

    #[test]
    fn plan_examples() {
        let g = square_poi(r#"{"id":"b","class":"box","center":[5,5],"yaw_deg":0,"half_w":1,"half_d":1}"#);
        let grid = NavGrid::build(&g, DEFAULT_RESOLUTION_M, DEFAULT_CLEARANCE_M).unwrap();
        let from = Pose::new(Point2::new(2.0, 2.0), 0.0);
        let trivial = plan_route(&g, &grid, &from, Point2::new(2.0, 2.0)).unwrap();
        assert!(trivial.is_trivial());
        assert_eq!(trivial.waypoints.len(), 2);

        let r = plan_route(&g, &grid, &from, Point2::new(8.0, 8.0)).unwrap();
        assert!(r.total_length_m >= from.position.distance(Point2::new(8.0, 8.0)));
        for w in r.waypoints.windows(2) {
            assert!(grid.line_of_sight(w[0], w[1]).unwrap());
        }

        // destination deep inside a big blocked object
        let g = square_poi(r#"{"id":"b","class":"box","center":[5,5],"yaw_deg":0,"half_w":3.5,"half_d":3.5}"#);
        let grid = NavGrid::build(&g, DEFAULT_RESOLUTION_M, DEFAULT_CLEARANCE_M).unwrap();
        assert_eq!(
            plan_route(&g, &grid, &from, Point2::new(5.0, 5.0)),
            Err(NavError::UnreachableDestination)
        );
    }

    #[test]
    fn approach_point_is_walkable_and_near() {
        let g = fixtures::golden_square();
        let grid = fixtures::golden_grid();
        let statue = g.objects.iter().find(|o| o.class_label == "statue").unwrap();
        // the statue sits inside a flower bed, so the approach is the bed edge
        assert!(plan_route(&g, &grid, &fixtures::ramp_start(), statue.footprint.center).is_err());
        let p = approach_point(&grid, statue, fixtures::ramp_start().position).unwrap();
        assert!(grid.is_walkable_point(p));
        let bed = g.object("flower_bed_central").unwrap();
        assert!(bed.distance_to(p) < 0.5);
        // approached from the ramp side
        assert!(p.y < bed.footprint.center.y);
    }

    #[test]
    fn fixture_routes_have_two_turns() {
        let g = fixtures::golden_square();
        let grid = fixtures::golden_grid();
        for goal in [fixtures::emma_goal(), fixtures::ben_goal()] {
            let r = plan_route(&g, &grid, &fixtures::ramp_start(), goal).unwrap();
            assert!((25.0..=35.0).contains(&r.total_length_m), "{}", r.total_length_m);
            assert_eq!(r.turning_points(), 2);
            // the middle leg trails the central bed
            assert_eq!(r.haptic_for(1).map(|h| h.object_class.as_str()), Some("flower bed"));
        }
    }

    #[test]
    fn plan_is_deterministic() {
        let g = fixtures::golden_square();
        let grid = fixtures::golden_grid();
        let goal = Point2::new(12.0, 12.0);
        let a = serde_json::to_string(&plan_route(&g, &grid, &fixtures::ramp_start(), goal).unwrap()).unwrap();
        let b = serde_json::to_string(&plan_route(&g, &grid, &fixtures::ramp_start(), goal).unwrap()).unwrap();
        assert_eq!(a, b);
    }
}
