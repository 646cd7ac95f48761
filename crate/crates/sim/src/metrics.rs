use crate::episode::{EpisodeLog, InfractionKind};
use crate::error::{Result, SimError};

pub const INFRACTION_KINDS: [InfractionKind; 4] = [
    InfractionKind::Pedestrian,
    InfractionKind::Vehicle,
    InfractionKind::Static,
    InfractionKind::RedLight,
];

pub fn multiplier(kind: InfractionKind) -> f64 {
    match kind {
        InfractionKind::Pedestrian => 0.50,
        InfractionKind::Vehicle => 0.60,
        InfractionKind::Static => 0.65,
        InfractionKind::RedLight => 0.70,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RouteResult {
    /// Completion percentage after the off-route penalty.
    pub completion: f64,
    /// Product of per-event penalty multipliers.
    pub penalty: f64,
    /// Counts ordered as [`INFRACTION_KINDS`].
    pub counts: [usize; 4],
    pub distance: f64,
}

impl RouteResult {
    pub fn new(completion: f64, counts: [usize; 4], distance: f64) -> Self {
        let penalty = INFRACTION_KINDS
            .iter()
            .zip(counts)
            .map(|(&k, n)| multiplier(k).powi(n as i32))
            .product();
        Self {
            completion,
            penalty,
            counts,
            distance,
        }
    }

    pub fn from_log(log: &EpisodeLog) -> Result<Self> {
        Ok(Self::new(
            route_completion(log.completed, log.off_route, log.route_length)?,
            INFRACTION_KINDS.map(|k| log.count(k)),
            log.distance_traveled(),
        ))
    }

    pub fn red_lights(&self) -> usize {
        self.counts[3]
    }

    pub fn score(&self) -> f64 {
        self.completion * self.penalty
    }
}

pub fn route_completion(completed: f64, off_route: f64, route_length: f64) -> Result<f64> {
    if !(route_length > 0.0) {
        return Err(SimError::Argument(format!("route length must be positive, got {route_length}")));
    }
    Ok((100.0 * (completed / route_length) * (1.0 - off_route / route_length)).clamp(0.0, 100.0))
}

/// Returns `(DS, RC)`.
pub fn driving_score(results: &[RouteResult]) -> Result<(f64, f64)> {
    if results.is_empty() {
        return Err(SimError::Argument("driving score over zero routes".into()));
    }
    let n = results.len() as f64;
    let ds = results.iter().map(RouteResult::score).sum::<f64>() / n;
    let rc = results.iter().map(|r| r.completion).sum::<f64>() / n;
    Ok((ds, rc))
}

/// Mean red-light count per route, and per meter driven. The per-meter rate
/// is `None` when no distance was covered.
pub fn red_light_rate(results: &[RouteResult]) -> Result<(f64, Option<f64>)> {
    if results.is_empty() {
        return Err(SimError::Argument("red-light rate over zero routes".into()));
    }
    let total: usize = results.iter().map(RouteResult::red_lights).sum();
    let distance: f64 = results.iter().map(|r| r.distance).sum();
    let per_meter = (distance > 0.0).then(|| total as f64 / distance);
    Ok((total as f64 / results.len() as f64, per_meter))
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkResult {
    pub routes: usize,
    pub ds: f64,
    pub rc: f64,
    pub red_per_route: f64,
    pub red_per_meter: Option<f64>,
}

impl BenchmarkResult {
    pub fn from_routes(results: &[RouteResult]) -> Result<Self> {
        let (ds, rc) = driving_score(results)?;
        let (red_per_route, red_per_meter) = red_light_rate(results)?;
        Ok(Self {
            routes: results.len(),
            ds,
            rc,
            red_per_route,
            red_per_meter,
        })
    }
}

pub const TSV_HEADER: &str = "method\tDS\tRC\tred_per_route\tred_per_meter";

/// One results-table row; an undefined per-meter rate prints as `nan`.
pub fn tsv_row(method: &str, r: &BenchmarkResult) -> String {
    let per_meter = r.red_per_meter.map_or_else(|| "nan".to_string(), |v| format!("{v:.6}"));
    format!("{method}\t{:.3}\t{:.3}\t{:.4}\t{per_meter}", r.ds, r.rc, r.red_per_route)
}
