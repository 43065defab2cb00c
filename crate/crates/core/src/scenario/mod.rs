//! Agents, recorded trajectories, obstacles and the per-agent input profile.

mod io;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{edges, segments_intersect, Vec2};
use crate::scalar::{lit, mean, population_std, Scalar};

pub use io::{load_scenario, load_trajectories, write_scenario, Metadata, ObstacleSpec};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("row {row}: {message}")]
    MalformedRow { row: u64, message: String },
    #[error("row {row}: unknown agent kind {kind:?}")]
    UnknownKind { row: u64, kind: String },
    #[error("row {row}: timestamps of agent {agent} are not strictly increasing")]
    NonMonotone { row: u64, agent: u32 },
    #[error("row {row}: agent {agent} is not sampled at dt = {dt}")]
    IrregularSampling { row: u64, agent: u32, dt: f64 },
    #[error("agent {agent} changes kind at row {row}")]
    KindChanged { row: u64, agent: u32 },
    #[error("no agents")]
    NoAgents,
    #[error("agent {0} has fewer than two samples")]
    TooShort(u32),
    #[error("duplicate agent id {0}")]
    DuplicateId(u32),
    #[error("agent {agent} leaves the scenario bounds")]
    OutOfBounds { agent: u32 },
    #[error("invalid obstacle {id}: {reason}")]
    InvalidObstacle { id: u32, reason: String },
    #[error("invalid metadata: {0}")]
    Metadata(String),
    #[error("zero displacement between start and last observed position")]
    ZeroDisplacement,
    #[error("agent {0} is not a {1}")]
    WrongKind(u32, AgentKind),
    #[error("agent {0} has no speed samples")]
    NoSpeedSamples(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgentKind {
    #[serde(rename = "ped")]
    Pedestrian,
    #[serde(rename = "car")]
    Car,
}

impl AgentKind {
    pub fn tag(self) -> &'static str {
        match self {
            AgentKind::Pedestrian => "ped",
            AgentKind::Car => "car",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ped" | "pedestrian" => Some(AgentKind::Pedestrian),
            "car" | "vehicle" => Some(AgentKind::Car),
            _ => None,
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AgentKind::Pedestrian => "pedestrian",
            AgentKind::Car => "car",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DatasetTag {
    #[serde(rename = "HBS")]
    Hbs,
    #[serde(rename = "DUT")]
    Dut,
    #[serde(rename = "CITR")]
    Citr,
    #[serde(rename = "synthetic")]
    Synthetic,
}

impl DatasetTag {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetTag::Hbs => "HBS",
            DatasetTag::Dut => "DUT",
            DatasetTag::Citr => "CITR",
            DatasetTag::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for DatasetTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Physical footprint of the two agent kinds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct AgentGeometry<T> {
    pub ped_radius: T,
    /// Disc radius used for force evaluation.
    pub car_radius: T,
    /// Rectangle used for collision checks.
    pub car_length: T,
    pub car_width: T,
}

impl<T: Scalar> Default for AgentGeometry<T> {
    fn default() -> Self {
        Self {
            ped_radius: lit(0.3),
            car_radius: lit(1.0),
            car_length: lit(4.0),
            car_width: lit(1.8),
        }
    }
}

impl<T: Scalar> AgentGeometry<T> {
    pub fn radius(&self, kind: AgentKind) -> T {
        match kind {
            AgentKind::Pedestrian => self.ped_radius,
            AgentKind::Car => self.car_radius,
        }
    }
}

/// Start, destination and desired speed of one agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct InputProfile<T> {
    pub start: Vec2<T>,
    pub destination: Vec2<T>,
    pub desired_speed: T,
}

/// A recorded trajectory sampled every `dt` seconds from `t0`.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentTrack<T> {
    pub id: u32,
    pub kind: AgentKind,
    pub t0: T,
    pub dt: T,
    pub positions: Vec<Vec2<T>>,
    pub radius: T,
    /// Explicit profile; derived from the samples when absent.
    pub profile: Option<InputProfile<T>>,
}

impl<T: Scalar> AgentTrack<T> {
    pub fn new(id: u32, kind: AgentKind, t0: T, dt: T, positions: Vec<Vec2<T>>, radius: T) -> Self {
        Self { id, kind, t0, dt, positions, radius, profile: None }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn time_at(&self, k: usize) -> T {
        self.t0 + self.dt * T::from_usize(k).unwrap_or_else(T::nan)
    }

    pub fn end_time(&self) -> T {
        self.time_at(self.positions.len().saturating_sub(1))
    }

    /// Per-step speeds `|Δx| / dt`; one fewer than the number of samples.
    pub fn speeds(&self) -> Vec<T> {
        self.positions.windows(2).map(|w| w[0].distance(w[1]) / self.dt).collect()
    }

    /// Unit headings per sample. The first sample copies the first displacement,
    /// and zero-displacement steps keep the previous heading.
    pub fn headings(&self) -> Vec<Vec2<T>> {
        headings_of(&self.positions)
    }

    /// Linear interpolation of the recorded position at time `t`, clamped to the track.
    pub fn position_at(&self, t: T) -> Vec2<T> {
        let n = self.positions.len();
        if n == 0 {
            return Vec2::zero();
        }
        let s = (t - self.t0) / self.dt;
        if s <= T::zero() {
            return self.positions[0];
        }
        let last = T::from_usize(n - 1).unwrap_or_else(T::zero);
        if s >= last {
            return self.positions[n - 1];
        }
        let k = s.floor();
        let i = k.to_usize().unwrap_or(0).min(n - 2);
        self.positions[i].lerp(self.positions[i + 1], s - k)
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        if self.positions.len() < 2 {
            return Err(ScenarioError::TooShort(self.id));
        }
        if !(self.dt > T::zero()) || !(self.radius > T::zero()) {
            return Err(ScenarioError::Metadata(format!(
                "agent {} needs positive dt and radius",
                self.id
            )));
        }
        if self.positions.iter().any(|p| !p.is_finite()) {
            return Err(ScenarioError::Metadata(format!("agent {} has non-finite positions", self.id)));
        }
        Ok(())
    }
}

/// Headings for a sampled polyline (see [`AgentTrack::headings`]).
pub fn headings_of<T: Scalar>(positions: &[Vec2<T>]) -> Vec<Vec2<T>> {
    let n = positions.len();
    let mut out = Vec::with_capacity(n);
    let fallback = Vec2::new(T::one(), T::zero());
    let first = positions
        .windows(2)
        .find_map(|w| (w[1] - w[0]).normalized())
        .unwrap_or(fallback);
    let mut prev = first;
    for i in 0..n {
        if i == 0 {
            out.push(first);
            continue;
        }
        if let Some(h) = (positions[i] - positions[i - 1]).normalized() {
            prev = h;
        }
        out.push(prev);
    }
    out
}

/// Static obstacle: an open polyline or a closed polygon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct Obstacle<T> {
    pub id: u32,
    pub vertices: Vec<Vec2<T>>,
    pub closed: bool,
}

impl<T: Scalar> Obstacle<T> {
    pub fn polygon(id: u32, vertices: Vec<Vec2<T>>) -> Self {
        Self { id, vertices, closed: true }
    }

    pub fn polyline(id: u32, vertices: Vec<Vec2<T>>) -> Self {
        Self { id, vertices, closed: false }
    }

    /// Axis-aligned rectangle as a closed polygon.
    pub fn rect(id: u32, min: Vec2<T>, max: Vec2<T>) -> Self {
        Self::polygon(
            id,
            vec![min, Vec2::new(max.x, min.y), max, Vec2::new(min.x, max.y)],
        )
    }

    pub fn is_polygon(&self) -> bool {
        self.closed && self.vertices.len() >= 3
    }

    pub fn edges(&self) -> impl Iterator<Item = (Vec2<T>, Vec2<T>)> + '_ {
        edges(&self.vertices, self.closed)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |reason: &str| ScenarioError::InvalidObstacle { id: self.id, reason: reason.into() };
        if self.vertices.len() < 2 {
            return Err(bad("needs at least two vertices"));
        }
        if self.vertices.iter().any(|v| !v.is_finite()) {
            return Err(bad("non-finite vertex"));
        }
        let es: Vec<_> = self.edges().collect();
        let m = es.len();
        for i in 0..m {
            for j in (i + 1)..m {
                let adjacent = j == i + 1 || (self.is_polygon() && i == 0 && j == m - 1);
                if adjacent {
                    continue;
                }
                if segments_intersect(es[i].0, es[i].1, es[j].0, es[j].1) {
                    return Err(bad("self-intersecting"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct Bounds<T> {
    pub min: Vec2<T>,
    pub max: Vec2<T>,
}

impl<T: Scalar> Bounds<T> {
    pub fn contains(&self, p: Vec2<T>) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    /// Smallest box around all points; `None` when there are none.
    pub fn enclosing<'a, I: IntoIterator<Item = &'a Vec2<T>>>(points: I) -> Option<Self> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let (mut min, mut max) = (first, first);
        for p in it {
            min = Vec2::new(min.x.min(p.x), min.y.min(p.y));
            max = Vec2::new(max.x.max(p.x), max.y.max(p.y));
        }
        Some(Self { min, max })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario<T> {
    pub id: String,
    pub dataset: DatasetTag,
    pub tracks: Vec<AgentTrack<T>>,
    pub obstacles: Vec<Obstacle<T>>,
    pub pixel_to_meter: T,
    pub bounds: Bounds<T>,
}

impl<T: Scalar> Scenario<T> {
    /// Builds a scenario with bounds enclosing all tracks and obstacles.
    pub fn new(
        id: impl Into<String>,
        dataset: DatasetTag,
        tracks: Vec<AgentTrack<T>>,
        obstacles: Vec<Obstacle<T>>,
    ) -> Result<Self, ScenarioError> {
        let bounds = Bounds::enclosing(
            tracks
                .iter()
                .flat_map(|t| t.positions.iter())
                .chain(obstacles.iter().flat_map(|o| o.vertices.iter())),
        )
        .ok_or(ScenarioError::NoAgents)?;
        let s = Self { id: id.into(), dataset, tracks, obstacles, pixel_to_meter: T::one(), bounds };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.tracks.is_empty() {
            return Err(ScenarioError::NoAgents);
        }
        if !(self.pixel_to_meter > T::zero()) {
            return Err(ScenarioError::Metadata("pixel_to_meter must be positive".into()));
        }
        let mut seen = HashSet::new();
        for t in &self.tracks {
            if !seen.insert(t.id) {
                return Err(ScenarioError::DuplicateId(t.id));
            }
            t.validate()?;
            if t.positions.iter().any(|&p| !self.bounds.contains(p)) {
                return Err(ScenarioError::OutOfBounds { agent: t.id });
            }
        }
        for o in &self.obstacles {
            o.validate()?;
        }
        Ok(())
    }

    pub fn track(&self, id: u32) -> Option<&AgentTrack<T>> {
        self.tracks.iter().find(|t| t.id == id)
    }

    pub fn pedestrians(&self) -> impl Iterator<Item = &AgentTrack<T>> {
        self.tracks.iter().filter(|t| t.kind == AgentKind::Pedestrian)
    }

    pub fn cars(&self) -> impl Iterator<Item = &AgentTrack<T>> {
        self.tracks.iter().filter(|t| t.kind == AgentKind::Car)
    }

    /// Common sampling step of the tracks (the first track's `dt`).
    pub fn dt(&self) -> T {
        self.tracks.first().map(|t| t.dt).unwrap_or_else(|| lit(0.5))
    }
}

/// How the destination is extrapolated from the last observed position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DestinationMode {
    /// `x_st + l·(x_gt − x_st)`.
    #[default]
    Literal,
    /// `x_st + l·unit(x_gt − x_st)`.
    Normalized,
}

/// Extends the observed start-to-end displacement to a destination point.
pub fn estimate_destination<T: Scalar>(
    track: &AgentTrack<T>,
    l_des: T,
    mode: DestinationMode,
) -> Result<Vec2<T>, ScenarioError> {
    let start = *track.positions.first().ok_or(ScenarioError::TooShort(track.id))?;
    let last = *track.positions.last().ok_or(ScenarioError::TooShort(track.id))?;
    extend_destination(start, last, l_des, mode)
}

pub fn extend_destination<T: Scalar>(
    start: Vec2<T>,
    last: Vec2<T>,
    l_des: T,
    mode: DestinationMode,
) -> Result<Vec2<T>, ScenarioError> {
    let d = last - start;
    if d.norm_sq() == T::zero() {
        return Err(ScenarioError::ZeroDisplacement);
    }
    Ok(match mode {
        DestinationMode::Literal => start + d * l_des,
        DestinationMode::Normalized => start + d / d.norm() * l_des,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedEstimate<T> {
    pub value: T,
    /// No sample exceeded the walking threshold; `value` is the overall mean.
    pub fallback: bool,
}

/// Mean of the speeds strictly above `v_walk`, falling back to the overall mean.
pub fn walking_speed<T: Scalar>(speeds: &[T], v_walk: T) -> Option<SpeedEstimate<T>> {
    let walking: Vec<T> = speeds.iter().copied().filter(|&s| s > v_walk).collect();
    match mean(&walking) {
        Some(value) => Some(SpeedEstimate { value, fallback: false }),
        None => mean(speeds).map(|value| SpeedEstimate { value, fallback: true }),
    }
}

/// `mean + 0.5·std` with the population standard deviation.
pub fn car_speed<T: Scalar>(speeds: &[T]) -> Option<T> {
    Some(mean(speeds)? + population_std(speeds)? * lit(0.5))
}

pub fn estimate_desired_speed_pedestrian<T: Scalar>(
    track: &AgentTrack<T>,
    v_walk: T,
) -> Result<SpeedEstimate<T>, ScenarioError> {
    if track.kind != AgentKind::Pedestrian {
        return Err(ScenarioError::WrongKind(track.id, AgentKind::Pedestrian));
    }
    walking_speed(&track.speeds(), v_walk).ok_or(ScenarioError::NoSpeedSamples(track.id))
}

pub fn estimate_desired_speed_car<T: Scalar>(track: &AgentTrack<T>) -> Result<T, ScenarioError> {
    if track.kind != AgentKind::Car {
        return Err(ScenarioError::WrongKind(track.id, AgentKind::Car));
    }
    car_speed(&track.speeds()).ok_or(ScenarioError::NoSpeedSamples(track.id))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct ProfileConfig<T> {
    pub l_des: T,
    pub v_walk: T,
    pub destination_mode: DestinationMode,
}

impl<T: Scalar> Default for ProfileConfig<T> {
    fn default() -> Self {
        Self { l_des: lit(5.0), v_walk: lit(0.8), destination_mode: DestinationMode::Literal }
    }
}

/// Input profile of a track; an explicit profile takes precedence. The flag reports
/// a pedestrian speed fallback.
pub fn derive_profile<T: Scalar>(
    track: &AgentTrack<T>,
    cfg: &ProfileConfig<T>,
) -> Result<(InputProfile<T>, bool), ScenarioError> {
    if let Some(p) = track.profile {
        return Ok((p, false));
    }
    let start = track.positions[0];
    let destination = estimate_destination(track, cfg.l_des, cfg.destination_mode)?;
    let (desired_speed, flagged) = match track.kind {
        AgentKind::Pedestrian => {
            let est = estimate_desired_speed_pedestrian(track, cfg.v_walk)?;
            (est.value, est.fallback)
        }
        AgentKind::Car => (estimate_desired_speed_car(track)?, false),
    };
    Ok((InputProfile { start, destination, desired_speed }, flagged))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    type V = Vec2<f64>;

    fn track(kind: AgentKind, pts: &[(f64, f64)]) -> AgentTrack<f64> {
        AgentTrack::new(1, kind, 0.0, 0.5, pts.iter().map(|&(x, y)| V::new(x, y)).collect(), 0.3)
    }

    #[test]
    fn destination_literal_examples() {
        let t = track(AgentKind::Pedestrian, &[(0.0, 0.0), (1.0, 0.0)]);
        assert_eq!(estimate_destination(&t, 5.0, DestinationMode::Literal).unwrap(), V::new(5.0, 0.0));
        let t = track(AgentKind::Pedestrian, &[(2.0, 1.0), (3.0, 3.0)]);
        assert_eq!(estimate_destination(&t, 5.0, DestinationMode::Literal).unwrap(), V::new(7.0, 11.0));
    }

    #[test]
    fn destination_normalized_extends_by_length() {
        let t = track(AgentKind::Pedestrian, &[(0.0, 0.0), (3.0, 4.0)]);
        let d = estimate_destination(&t, 5.0, DestinationMode::Normalized).unwrap();
        assert_relative_eq!(d.x, 3.0);
        assert_relative_eq!(d.y, 4.0);
    }

    #[test]
    fn destination_zero_displacement() {
        let t = track(AgentKind::Pedestrian, &[(2.0, 2.0), (3.0, 2.0), (2.0, 2.0)]);
        assert!(matches!(
            estimate_destination(&t, 5.0, DestinationMode::Literal),
            Err(ScenarioError::ZeroDisplacement)
        ));
    }

    #[test]
    fn pedestrian_speed_examples() {
        let t = track(AgentKind::Pedestrian, &[(0.0, 0.0), (0.6, 0.0), (1.2, 0.0), (1.8, 0.0)]);
        let est = estimate_desired_speed_pedestrian(&t, 0.8).unwrap();
        assert_relative_eq!(est.value, 1.2, epsilon = 1e-12);
        assert!(!est.fallback);

        let est = walking_speed(&[0.5, 1.0, 1.5], 0.8).unwrap();
        assert_relative_eq!(est.value, 1.25);

        let est = walking_speed(&[0.3, 0.3, 0.3], 0.8).unwrap();
        assert_relative_eq!(est.value, 0.3);
        assert!(est.fallback);
    }

    #[test]
    fn car_speed_examples() {
        assert_relative_eq!(car_speed(&[5.0, 5.0, 5.0]).unwrap(), 5.0);
        assert_relative_eq!(car_speed(&[4.0, 6.0]).unwrap(), 5.5);
        assert_relative_eq!(car_speed(&[3.0]).unwrap(), 3.0);
        let t = track(AgentKind::Pedestrian, &[(0.0, 0.0), (1.0, 0.0)]);
        assert!(estimate_desired_speed_car(&t).is_err());
    }

    #[test]
    fn headings_copy_first_and_hold_on_pause() {
        let t = track(AgentKind::Pedestrian, &[(0.0, 0.0), (0.0, 1.0), (0.0, 1.0), (1.0, 1.0)]);
        let h = t.headings();
        assert_eq!(h[0], V::new(0.0, 1.0));
        assert_eq!(h[1], V::new(0.0, 1.0));
        assert_eq!(h[2], V::new(0.0, 1.0));
        assert_eq!(h[3], V::new(1.0, 0.0));
    }

    #[test]
    fn self_intersecting_obstacle_rejected() {
        let bow = Obstacle::polygon(
            3,
            vec![V::new(0.0, 0.0), V::new(1.0, 1.0), V::new(1.0, 0.0), V::new(0.0, 1.0)],
        );
        assert!(bow.validate().is_err());
        assert!(Obstacle::rect(4, V::new(0.0, 0.0), V::new(1.0, 1.0)).validate().is_ok());
        assert!(Obstacle::polyline(5, vec![V::new(0.0, 0.0)]).validate().is_err());
    }

    proptest! {
        #[test]
        fn destination_is_translation_equivariant(
            sx in -50.0..50.0f64, sy in -50.0..50.0f64,
            gx in -50.0..50.0f64, gy in -50.0..50.0f64,
            tx in -100.0..100.0f64, ty in -100.0..100.0f64,
            l in 0.5..10.0f64,
        ) {
            prop_assume!((gx - sx).abs() + (gy - sy).abs() > 1e-3);
            let (s, g, t) = (V::new(sx, sy), V::new(gx, gy), V::new(tx, ty));
            for mode in [DestinationMode::Literal, DestinationMode::Normalized] {
                let a = extend_destination(s, g, l, mode).unwrap() + t;
                let b = extend_destination(s + t, g + t, l, mode).unwrap();
                prop_assert!((a - b).norm() < 1e-9 * (1.0 + a.norm()));
            }
        }

        #[test]
        fn speed_estimators_are_permutation_invariant(
            mut speeds in proptest::collection::vec(0.0..3.0f64, 1..20),
            seed in any::<u64>(),
        ) {
            let a = walking_speed(&speeds, 0.8).unwrap();
            let c = car_speed(&speeds).unwrap();
            let mut s = seed;
            for i in (1..speeds.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                speeds.swap(i, (s >> 33) as usize % (i + 1));
            }
            let b = walking_speed(&speeds, 0.8).unwrap();
            prop_assert!((a.value - b.value).abs() < 1e-12);
            prop_assert_eq!(a.fallback, b.fallback);
            prop_assert!((c - car_speed(&speeds).unwrap()).abs() < 1e-12);
        }
    }
}
