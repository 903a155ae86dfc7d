//! Workloads shared by the benchmarks.

use lastmeter_core::{fixtures, Engine, Point2, Pose, Route, SessionContext, UserPrefs};

/// Poses every 0.1 m along `route`, each facing the next waypoint.
pub fn walk(route: &Route) -> Vec<Pose> {
    let mut out = Vec::new();
    for w in route.waypoints.windows(2) {
        let (a, b) = (w[0], w[1]);
        let heading = (b - a).heading();
        let n = (a.distance(b) / 0.1).ceil().max(1.0) as usize;
        for k in 0..n {
            let f = k as f64 / n as f64;
            out.push(Pose::new(Point2::new(a.x + (b.x - a.x) * f, a.y + (b.y - a.y) * f), heading));
        }
    }
    out
}

/// Engine on the bundled square with stub ports.
pub fn golden_engine() -> Engine {
    Engine::new(fixtures::golden_world(), SessionContext::new("bench", UserPrefs::default()))
}
