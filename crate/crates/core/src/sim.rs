//! Fixed-order scheduler (plan → detect → decide → act) advancing a world of agents.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::force::{
    car_following, compose_acceleration, frontal_corridor, integrate, longitudinal_avoidance, reactive_stop,
    AgentState, Directive, ForceError, MotionMode,
};
use crate::game::{
    build_payoff_matrix, compute_features, select_leader, solve_stackelberg, strategy_directive, FeatureContext,
    GameError, PairFeatures, PayoffConfig, StrategyKind,
};
use crate::geometry::{angle_between_deg, Vec2};
use crate::params::{GameParams, ParamError, SfmParams};
use crate::planner::{plan, segment_clear, smooth_path};
use crate::scalar::{lit, to_f64, Scalar};
use crate::scenario::{
    derive_profile, AgentGeometry, AgentKind, AgentTrack, DatasetTag, InputProfile, Obstacle, ProfileConfig,
    Scenario, ScenarioError,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("non-finite state for agent {agent} at t={t}: {dump}")]
    NonFinite { agent: u32, t: f64, dump: String },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error("invalid simulation setting: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ConflictClass {
    CarFollowing,
    PedPed,
    PedCarReactive,
    PedToCars,
    PedsToCar,
}

impl ConflictClass {
    pub fn is_complex(self) -> bool {
        matches!(self, ConflictClass::PedToCars | ConflictClass::PedsToCar)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConflictStatus {
    Active,
    Resolved,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Conflict<T> {
    pub id: u64,
    pub class: ConflictClass,
    /// Sorted agent ids.
    pub participants: Vec<u32>,
    pub detected_at: T,
    /// Time offset and location of the predicted closest approach.
    pub predicted_time: T,
    pub predicted_point: Vec2<T>,
    pub status: ConflictStatus,
}

/// Closest approach of two constant-velocity agents within `[0, horizon]`:
/// `(time, gap, midpoint)`.
pub fn closest_approach<T: Scalar>(a: &AgentState<T>, b: &AgentState<T>, horizon: T) -> (T, T, Vec2<T>) {
    let p = a.position - b.position;
    let w = a.velocity - b.velocity;
    let ww = w.norm_sq();
    let t = if ww > T::zero() { (-p.dot(w) / ww).max(T::zero()).min(horizon) } else { T::zero() };
    let gap = (p + w * t).norm();
    let mid = ((a.position + a.velocity * t) + (b.position + b.velocity * t)) * lit(0.5);
    (t, gap, mid)
}

/// Headings within this angle count as the same direction of travel (degrees).
const PARALLEL_DEG: f64 = 30.0;
/// Pedestrians slower than this have no meaningful crossing direction (m/s).
const MOVING_SPEED: f64 = 0.05;

fn classify_pair<T: Scalar>(
    a: &AgentState<T>,
    b: &AgentState<T>,
    params: &SfmParams<T>,
    geometry: &AgentGeometry<T>,
) -> Option<ConflictClass> {
    let parallel = |x: &AgentState<T>, y: &AgentState<T>| {
        let ang = angle_between_deg(x.heading, y.heading);
        ang < lit(PARALLEL_DEG) || ang > lit(180.0 - PARALLEL_DEG)
    };
    match (a.kind, b.kind) {
        (AgentKind::Pedestrian, AgentKind::Pedestrian) => Some(ConflictClass::PedPed),
        (AgentKind::Car, AgentKind::Car) => {
            (angle_between_deg(a.heading, b.heading) < lit(PARALLEL_DEG)).then_some(ConflictClass::CarFollowing)
        }
        _ => {
            let (ped, car) = if a.kind == AgentKind::Pedestrian { (a, b) } else { (b, a) };
            let corridor = frontal_corridor(car, params, geometry.car_width, ped.radius);
            if corridor.distance_to(ped.position) == T::zero() {
                Some(ConflictClass::PedCarReactive)
            } else if ped.speed() > lit(MOVING_SPEED) && !parallel(ped, car) {
                Some(ConflictClass::PedsToCar)
            } else {
                // front/back encounters are left to the longitudinal-avoidance force
                None
            }
        }
    }
}

/// Pairwise conflicts among `agents`: pairs within view range whose predicted
/// constant-velocity gap over the horizon drops below `S_C·(r_i + r_j)`.
/// Pedestrian/car crossings are reported pairwise as [`ConflictClass::PedsToCar`].
pub fn detect_conflicts<T: Scalar>(
    agents: &[&AgentState<T>],
    params: &SfmParams<T>,
    geometry: &AgentGeometry<T>,
    horizon: T,
    clock: T,
) -> Vec<Conflict<T>> {
    let mut out = Vec::new();
    for (k, a) in agents.iter().enumerate() {
        for b in &agents[k + 1..] {
            if a.position.distance(b.position) > params.view_range {
                continue;
            }
            let (t, gap, point) = closest_approach(a, b, horizon);
            if gap >= params.s_c * (a.radius + b.radius) {
                continue;
            }
            if let Some(class) = classify_pair(a, b, params, geometry) {
                let mut participants = vec![a.id, b.id];
                participants.sort_unstable();
                out.push(Conflict {
                    id: 0,
                    class,
                    participants,
                    detected_at: clock,
                    predicted_time: t,
                    predicted_point: point,
                    status: ConflictStatus::Active,
                });
            }
        }
    }
    out
}

/// Competing directives for one agent in one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidates<T> {
    pub stop: Option<Directive<T>>,
    pub game: Option<(StrategyKind, Directive<T>)>,
    pub follow: Option<Directive<T>>,
}

impl<T> Default for Candidates<T> {
    fn default() -> Self {
        Self { stop: None, game: None, follow: None }
    }
}

/// Cars: stop > game > follow > free flow. Pedestrians: game > free flow
/// (free flow includes the longitudinal-avoidance goal).
pub fn prioritize<T: Scalar>(kind: AgentKind, c: &Candidates<T>) -> (Directive<T>, MotionMode) {
    if kind == AgentKind::Car {
        if let Some(d) = c.stop {
            return (d, MotionMode::Stop);
        }
    }
    if let Some((s, d)) = c.game {
        return (d, MotionMode::GameAction(s));
    }
    if kind == AgentKind::Car {
        if let Some(d) = c.follow {
            return (d, MotionMode::Follow);
        }
    }
    (Directive::FreeFlow, MotionMode::FreeFlow)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelOptions {
    /// Solve complex conflicts with games; otherwise agents stay on social forces.
    pub games: bool,
    /// Cars replay their recorded trajectories.
    pub ghost_cars: bool,
}

impl ModelOptions {
    pub fn gsfm() -> Self {
        Self { games: true, ghost_cars: false }
    }

    /// Classical social force model: no games, cars follow their recorded paths.
    pub fn sfm_baseline() -> Self {
        Self { games: false, ghost_cars: true }
    }
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self::gsfm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialVelocity {
    /// Velocity of the first recorded displacement.
    #[default]
    Observed,
    Rest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct SimConfig<T> {
    pub dt: T,
    pub detect_interval: T,
    pub horizon: T,
    pub completion_radius: T,
    /// Time over which a deceleration directive reaches its target speed.
    pub response_time: T,
    /// Simulated span; defaults to the last recorded timestamp.
    #[serde(default)]
    pub duration: Option<T>,
    pub params: SfmParams<T>,
    /// Per-agent overrides (group calibration).
    #[serde(default)]
    pub agent_params: BTreeMap<u32, SfmParams<T>>,
    pub game: GameParams<T>,
    pub payoffs: PayoffConfig,
    pub options: ModelOptions,
    #[serde(default)]
    pub geometry: AgentGeometry<T>,
    #[serde(default)]
    pub profile: ProfileConfig<T>,
    /// Agents replaying their recorded tracks.
    #[serde(default)]
    pub ghosts: BTreeSet<u32>,
    #[serde(default)]
    pub initial_velocity: InitialVelocity,
}

impl<T: Scalar> SimConfig<T> {
    pub fn for_dataset(tag: DatasetTag) -> Self {
        let payoffs = PayoffConfig::shipped();
        Self {
            dt: lit(0.1),
            detect_interval: lit(0.5),
            horizon: lit(5.0),
            completion_radius: lit(1.0),
            response_time: lit(0.5),
            duration: None,
            params: SfmParams::for_dataset(tag),
            agent_params: BTreeMap::new(),
            game: payoffs.weights_for(tag),
            payoffs,
            options: ModelOptions::default(),
            geometry: AgentGeometry::default(),
            profile: ProfileConfig::default(),
            ghosts: BTreeSet::new(),
            initial_velocity: InitialVelocity::default(),
        }
    }

    pub fn params_for(&self, id: u32) -> &SfmParams<T> {
        self.agent_params.get(&id).unwrap_or(&self.params)
    }

    fn validate(&self) -> Result<(), SimError> {
        let z = T::zero();
        if !(self.dt > z && self.detect_interval >= self.dt && self.horizon > z && self.response_time > z) {
            return Err(SimError::Config("dt, detect_interval, horizon and response_time must be positive".into()));
        }
        if !(self.completion_radius >= z) {
            return Err(SimError::Config("completion_radius must be non-negative".into()));
        }
        self.params.validate()?;
        for p in self.agent_params.values() {
            p.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Spawn,
    Done,
    ConflictOpened,
    GameSolved,
    ConflictResolved,
    ModeChanged,
}

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Event {
    pub t: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agent: Option<u32>,
    pub kind: EventKind,
    pub payload: serde_json::Value,
}

pub fn write_event_log<W: Write>(events: &[Event], mut out: W) -> std::io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AgentStatus {
    Pending,
    Active,
    Done,
}

#[derive(Debug, Clone)]
pub struct SimAgent<T> {
    pub state: AgentState<T>,
    pub status: AgentStatus,
    pub ghost: bool,
    pub t0: T,
    pub params: SfmParams<T>,
    /// `(time, position)` samples while active.
    pub history: Vec<(T, Vec2<T>)>,
    pub follow: Option<u32>,
    pub conflict: Option<u64>,
    pub strategy: Option<StrategyKind>,
    /// Input profile had to fall back (no walking samples or no displacement).
    pub profile_flagged: bool,
    track: usize,
}

#[derive(Debug, Clone)]
struct ActiveGame<T> {
    conflict: Conflict<T>,
    leader: u32,
    followers: Vec<u32>,
    keys: Vec<((u8, i64), (u8, i64))>,
    clear_ticks: u32,
}

/// Simulation state; advance with [`World::step`].
#[derive(Debug, Clone)]
pub struct World<T> {
    pub clock: T,
    pub agents: Vec<SimAgent<T>>,
    pub obstacles: Vec<Obstacle<T>>,
    pub resolved: Vec<Conflict<T>>,
    pub events: Vec<Event>,
    pub config: SimConfig<T>,
    games: Vec<ActiveGame<T>>,
    tracks: Vec<AgentTrack<T>>,
    start: T,
    step_index: u64,
    detect_every: u64,
    next_conflict_id: u64,
}

const WAYPOINT_REACHED: f64 = 0.5;

fn initial_state<T: Scalar>(
    track: &AgentTrack<T>,
    profile: InputProfile<T>,
    config: &SimConfig<T>,
    obstacles: &[Obstacle<T>],
) -> AgentState<T> {
    let mut state = AgentState::at_rest(track.id, track.kind, track.radius, profile);
    if profile.start != profile.destination {
        let waypoints = match plan(obstacles, profile.start, profile.destination, track.radius) {
            Ok(path) => smooth_path(&path, obstacles, track.radius).waypoints,
            Err(_) => vec![profile.start, profile.destination],
        };
        state.waypoints = waypoints[1..].to_vec();
        if let Some(h) = (state.waypoints[0] - profile.start).normalized() {
            state.heading = h;
        }
    }
    if config.initial_velocity == InitialVelocity::Observed && track.positions.len() >= 2 {
        state = state.with_velocity((track.positions[1] - track.positions[0]) / track.dt);
    }
    state
}

fn fallback_profile<T: Scalar>(track: &AgentTrack<T>) -> InputProfile<T> {
    InputProfile { start: track.positions[0], destination: track.positions[0], desired_speed: T::zero() }
}

impl<T: Scalar> World<T> {
    pub fn new(scenario: &Scenario<T>, config: SimConfig<T>) -> Result<Self, SimError> {
        config.validate()?;
        scenario.validate()?;
        let ratio = (config.detect_interval / config.dt).round().to_u64().unwrap_or(1).max(1);
        let mut agents = Vec::with_capacity(scenario.tracks.len());
        for (k, track) in scenario.tracks.iter().enumerate() {
            let ghost = config.ghosts.contains(&track.id) || (config.options.ghost_cars && track.kind == AgentKind::Car);
            let (profile, flagged) = match derive_profile(track, &config.profile) {
                Ok(p) => p,
                Err(ScenarioError::ZeroDisplacement) | Err(ScenarioError::NoSpeedSamples(_)) => {
                    (fallback_profile(track), true)
                }
                Err(e) => return Err(e.into()),
            };
            let state = initial_state(track, profile, &config, &scenario.obstacles);
            agents.push(SimAgent {
                state,
                status: AgentStatus::Pending,
                ghost,
                t0: track.t0,
                params: *config.params_for(track.id),
                history: Vec::new(),
                follow: None,
                conflict: None,
                strategy: None,
                profile_flagged: flagged,
                track: k,
            });
        }
        agents.sort_by_key(|a| a.state.id);
        let start = scenario.tracks.iter().map(|t| t.t0).fold(T::infinity(), T::min);
        let mut world = Self {
            clock: start,
            agents,
            obstacles: scenario.obstacles.clone(),
            resolved: Vec::new(),
            events: Vec::new(),
            config,
            games: Vec::new(),
            tracks: scenario.tracks.clone(),
            start,
            step_index: 0,
            detect_every: ratio,
            next_conflict_id: 1,
        };
        world.spawn_and_finish();
        Ok(world)
    }

    fn log(&mut self, agent: Option<u32>, kind: EventKind, payload: serde_json::Value) {
        self.events.push(Event { t: to_f64(self.clock), agent, kind, payload });
    }

    fn index_of(&self, id: u32) -> Option<usize> {
        self.agents.binary_search_by_key(&id, |a| a.state.id).ok()
    }

    fn agent(&self, id: u32) -> Option<&SimAgent<T>> {
        self.index_of(id).map(|k| &self.agents[k])
    }

    fn is_active(&self, id: u32) -> bool {
        self.agent(id).is_some_and(|a| a.status == AgentStatus::Active)
    }

    /// Active agents whose mode is a game action, each mapped to its conflict id.
    pub fn game_assignments(&self) -> BTreeMap<u32, u64> {
        self.agents.iter().filter_map(|a| a.conflict.map(|c| (a.state.id, c))).collect()
    }

    pub fn active_conflicts(&self) -> Vec<&Conflict<T>> {
        self.games.iter().map(|g| &g.conflict).collect()
    }

    fn ghost_state(&self, k: usize, t: T) -> (Vec2<T>, Vec2<T>) {
        let track = &self.tracks[self.agents[k].track];
        let p = track.position_at(t);
        let h = track.dt;
        let ahead = track.position_at(t + h);
        let v = if t + h <= track.end_time() { (ahead - p) / h } else { (p - track.position_at(t - h)) / h };
        (p, v)
    }

    fn spawn_and_finish(&mut self) {
        let eps = self.config.dt * lit(1e-6);
        for k in 0..self.agents.len() {
            let clock = self.clock;
            match self.agents[k].status {
                AgentStatus::Pending if self.agents[k].t0 <= clock + eps => {
                    if self.agents[k].ghost {
                        let (p, v) = self.ghost_state(k, clock);
                        let a = &mut self.agents[k];
                        a.state.position = p;
                        a.state = a.state.clone().with_velocity(v);
                    }
                    self.agents[k].status = AgentStatus::Active;
                    let pos = self.agents[k].state.position;
                    self.agents[k].history.push((clock, pos));
                    let id = self.agents[k].state.id;
                    self.log(Some(id), EventKind::Spawn, json!({"ghost": self.agents[k].ghost}));
                }
                _ => {}
            }
            let a = &self.agents[k];
            if a.status != AgentStatus::Active {
                continue;
            }
            let finished = if a.ghost {
                clock >= self.tracks[a.track].end_time() - eps
            } else {
                a.state.position.distance(a.state.profile.destination) <= self.config.completion_radius
                    || a.state.profile.start == a.state.profile.destination
            };
            if finished {
                self.agents[k].status = AgentStatus::Done;
                self.agents[k].strategy = None;
                let id = self.agents[k].state.id;
                self.log(Some(id), EventKind::Done, serde_json::Value::Null);
            }
        }
    }

    fn active_states(&self) -> Vec<AgentState<T>> {
        self.agents
            .iter()
            .filter(|a| a.status == AgentStatus::Active)
            .map(|a| a.state.clone())
            .collect()
    }

    /// Conflict detection, car-following assignment and game management.
    fn detect_and_decide(&mut self) -> Result<(), SimError> {
        let states = self.active_states();
        let refs: Vec<&AgentState<T>> = states.iter().collect();
        let found = detect_conflicts(&refs, &self.config.params, &self.config.geometry, self.config.horizon, self.clock);

        for a in self.agents.iter_mut() {
            a.follow = None;
        }
        for c in found.iter().filter(|c| c.class == ConflictClass::CarFollowing) {
            let (a, b) = (c.participants[0], c.participants[1]);
            let (sa, sb) = (self.agent(a).unwrap().state.clone(), self.agent(b).unwrap().state.clone());
            let (follower, leader) = if (sb.position - sa.position).dot(sa.heading) > T::zero() { (a, b) } else { (b, a) };
            let k = self.index_of(follower).unwrap();
            let d_new = self.agents[k].state.position.distance(self.agent(leader).unwrap().state.position);
            let keep = match self.agents[k].follow.and_then(|cur| self.agent(cur)) {
                Some(cur) => cur.state.position.distance(self.agents[k].state.position) <= d_new,
                None => false,
            };
            if !keep {
                self.agents[k].follow = Some(leader);
            }
        }

        if !self.config.options.games {
            return Ok(());
        }
        let crossing: Vec<&Conflict<T>> = found.iter().filter(|c| c.class == ConflictClass::PedsToCar).collect();
        let pair_set: BTreeSet<(u32, u32)> = crossing.iter().map(|c| (c.participants[0], c.participants[1])).collect();
        let has_pair = |a: u32, b: u32| pair_set.contains(&(a.min(b), a.max(b)));

        // resolve or keep running games
        let mut still = Vec::new();
        let games = std::mem::take(&mut self.games);
        for mut g in games {
            g.followers.retain(|&f| self.is_active(f));
            let alive = self.is_active(g.leader) && !g.followers.is_empty();
            let conflicting = g.followers.iter().any(|&f| has_pair(g.leader, f));
            g.clear_ticks = if conflicting { 0 } else { g.clear_ticks + 1 };
            if !alive || g.clear_ticks >= 2 {
                self.release(g);
            } else {
                still.push(g);
            }
        }
        self.games = still;

        // free pedestrians joining a running game led by their car
        let in_game: BTreeSet<u32> = self.agents.iter().filter_map(|a| a.conflict.map(|_| a.state.id)).collect();
        let kind_of = |w: &Self, id: u32| w.agent(id).map(|a| a.state.kind);
        let mut joined = BTreeSet::new();
        for c in &crossing {
            let (a, b) = (c.participants[0], c.participants[1]);
            let (ped, car) = if kind_of(self, a) == Some(AgentKind::Pedestrian) { (a, b) } else { (b, a) };
            if in_game.contains(&ped) || joined.contains(&ped) {
                continue;
            }
            if let Some(g) = self.games.iter_mut().find(|g| g.leader == car) {
                g.followers.push(ped);
                g.followers.sort_unstable();
                g.keys.clear();
                joined.insert(ped);
            }
        }

        // new games over connected components of free agents
        let mut parent: BTreeMap<u32, u32> = BTreeMap::new();
        fn root(parent: &mut BTreeMap<u32, u32>, x: u32) -> u32 {
            let p = *parent.entry(x).or_insert(x);
            if p == x {
                return x;
            }
            let r = root(parent, p);
            parent.insert(x, r);
            r
        }
        let mut first_time: BTreeMap<u32, T> = BTreeMap::new();
        for c in &crossing {
            let (a, b) = (c.participants[0], c.participants[1]);
            if in_game.contains(&a) || in_game.contains(&b) || joined.contains(&a) || joined.contains(&b) {
                continue;
            }
            let (ra, rb) = (root(&mut parent, a), root(&mut parent, b));
            if ra != rb {
                parent.insert(ra.max(rb), ra.min(rb));
            }
            for id in [a, b] {
                let e = first_time.entry(id).or_insert(c.predicted_time);
                *e = e.min(c.predicted_time);
            }
        }
        let ids: Vec<u32> = parent.keys().copied().collect();
        let mut components: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        for id in ids {
            let r = root(&mut parent, id);
            components.entry(r).or_default().push(id);
        }
        for members in components.into_values() {
            let cars: Vec<u32> = members.iter().copied().filter(|&m| kind_of(self, m) == Some(AgentKind::Car)).collect();
            let peds: Vec<u32> =
                members.iter().copied().filter(|&m| kind_of(self, m) == Some(AgentKind::Pedestrian)).collect();
            if cars.is_empty() || peds.is_empty() {
                continue;
            }
            let recognizer = cars
                .iter()
                .copied()
                .min_by(|a, b| first_time[a].partial_cmp(&first_time[b]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(b)));
            let member_states: Vec<&AgentState<T>> = members.iter().map(|&m| &self.agent(m).unwrap().state).collect();
            let Some(leader) = select_leader(&member_states, recognizer) else { continue };
            let class = if cars.len() > 1 { ConflictClass::PedToCars } else { ConflictClass::PedsToCar };
            let first = crossing
                .iter()
                .filter(|c| c.participants.contains(&leader))
                .min_by(|a, b| a.predicted_time.partial_cmp(&b.predicted_time).unwrap_or(std::cmp::Ordering::Equal))
                .copied();
            let (predicted_time, predicted_point) =
                first.map(|c| (c.predicted_time, c.predicted_point)).unwrap_or((T::zero(), Vec2::zero()));
            let mut participants: Vec<u32> = peds.clone();
            participants.push(leader);
            participants.sort_unstable();
            let conflict = Conflict {
                id: self.next_conflict_id,
                class,
                participants: participants.clone(),
                detected_at: self.clock,
                predicted_time,
                predicted_point,
                status: ConflictStatus::Active,
            };
            self.next_conflict_id += 1;
            self.log(
                None,
                EventKind::ConflictOpened,
                json!({"conflict": conflict.id, "class": class, "participants": participants, "leader": leader}),
            );
            self.games.push(ActiveGame { conflict, leader, followers: peds, keys: Vec::new(), clear_ticks: 0 });
        }

        // (re-)solve games whose situation changed
        let noai = |id: u32| crossing.iter().filter(|c| c.participants.contains(&id)).count();
        for k in 0..self.games.len() {
            let g = &self.games[k];
            let leader = self.agent(g.leader).unwrap();
            let mut lctx = FeatureContext::new(&self.config.game);
            lctx.active_interactions = noai(g.leader);
            lctx.yielding_elsewhere = leader.state.mode == MotionMode::Stop;
            let fctx = FeatureContext::new(&self.config.game);
            let mut pairs = Vec::with_capacity(g.followers.len());
            for &f in &g.followers {
                let fs = &self.agent(f).unwrap().state;
                pairs.push(PairFeatures {
                    follower: f,
                    follower_kind: fs.kind,
                    leader_view: compute_features(&leader.state, fs, &lctx),
                    follower_view: compute_features(fs, &leader.state, &fctx),
                });
            }
            let keys: Vec<_> = pairs.iter().map(|p| (p.leader_view.resolve_key(), p.follower_view.resolve_key())).collect();
            if keys == g.keys {
                continue;
            }
            let matrix =
                build_payoff_matrix(g.leader, leader.state.kind, &pairs, &self.config.payoffs, &self.config.game)?;
            let sol = solve_stackelberg(&matrix);
            let (cid, lid, followers) = (g.conflict.id, g.leader, g.followers.clone());
            self.games[k].keys = keys;
            let assign = |w: &mut Self, id: u32, s: StrategyKind| {
                let i = w.index_of(id).unwrap();
                w.agents[i].strategy = Some(s);
                w.agents[i].conflict = Some(cid);
            };
            assign(self, lid, sol.leader);
            for (&f, &s) in followers.iter().zip(&sol.followers) {
                assign(self, f, s);
            }
            let fs: Vec<_> = followers.iter().zip(&sol.followers).map(|(f, s)| json!([f, s])).collect();
            self.log(
                None,
                EventKind::GameSolved,
                json!({"conflict": cid, "leader": lid, "leader_strategy": sol.leader, "followers": fs}),
            );
        }
        Ok(())
    }

    fn release(&mut self, g: ActiveGame<T>) {
        let mut c = g.conflict;
        c.status = ConflictStatus::Resolved;
        for id in c.participants.iter().copied() {
            if let Some(k) = self.index_of(id) {
                if self.agents[k].conflict == Some(c.id) {
                    self.agents[k].conflict = None;
                    self.agents[k].strategy = None;
                }
            }
        }
        self.log(None, EventKind::ConflictResolved, json!({"conflict": c.id}));
        self.resolved.push(c);
    }

    fn game_opponent(&self, id: u32, snapshot: &[AgentState<T>]) -> Option<AgentState<T>> {
        let agent = self.agent(id)?;
        let cid = agent.conflict?;
        let g = self.games.iter().find(|g| g.conflict.id == cid)?;
        let find = |oid: u32| snapshot.iter().find(|s| s.id == oid).cloned();
        if g.leader == id {
            g.followers
                .iter()
                .filter_map(|&f| find(f))
                .min_by(|a, b| {
                    let (da, db) = (a.position.distance(agent.state.position), b.position.distance(agent.state.position));
                    da.partial_cmp(&db).unwrap_or(std::cmp::Ordering::Equal)
                })
        } else {
            find(g.leader)
        }
    }

    fn candidates(&self, k: usize, snapshot: &[AgentState<T>]) -> Result<Candidates<T>, SimError> {
        let a = &self.agents[k];
        let mut c = Candidates::default();
        if a.state.kind == AgentKind::Car {
            let peds: Vec<&AgentState<T>> = snapshot.iter().filter(|s| s.kind == AgentKind::Pedestrian).collect();
            c.stop = reactive_stop(&a.state, &peds, &a.params, self.config.geometry.car_width);
            if let Some(leader) = a.follow.and_then(|l| snapshot.iter().find(|s| s.id == l)) {
                c.follow = Some(car_following(&a.state, leader, &a.params));
            }
        }
        if let Some(s) = a.strategy {
            if let Some(opp) = self.game_opponent(a.state.id, snapshot) {
                c.game = Some((s, strategy_directive(&a.state, s, &opp, &a.params)?));
            }
        }
        Ok(c)
    }

    /// Advances the world by one time step.
    pub fn step(&mut self) -> Result<(), SimError> {
        if self.step_index % self.detect_every == 0 {
            self.detect_and_decide()?;
        }
        let dt = self.config.dt;
        let snapshot = self.active_states();
        let refs: Vec<&AgentState<T>> = snapshot.iter().collect();
        let mut updates = Vec::new();
        for k in 0..self.agents.len() {
            let a = &self.agents[k];
            if a.status != AgentStatus::Active || a.ghost {
                continue;
            }
            let (directive, mode) = prioritize(a.state.kind, &self.candidates(k, &snapshot)?);
            let mut state = a.state.clone();
            state.temp_goal = None;
            if state.kind == AgentKind::Pedestrian && a.params.w_p > T::zero() {
                let mut cars: Vec<&AgentState<T>> = snapshot.iter().filter(|s| s.kind == AgentKind::Car).collect();
                cars.sort_by(|x, y| {
                    let (dx, dy) = (x.position.distance(state.position), y.position.distance(state.position));
                    dx.partial_cmp(&dy).unwrap_or(std::cmp::Ordering::Equal).then(x.id.cmp(&y.id))
                });
                state.temp_goal = cars.iter().find_map(|car| longitudinal_avoidance(&state, car, &a.params));
            }
            let acc = compose_acceleration(&state, &refs, &self.obstacles, &a.params, directive, self.config.response_time);
            let mut next = integrate(&state, acc, dt).map_err(|e| self.non_finite(k, e))?;
            next.mode = mode;
            self.advance_waypoint(&mut next);
            updates.push((k, next));
        }
        for (k, next) in updates {
            let before = self.agents[k].state.mode;
            let id = next.id;
            let after = next.mode;
            self.agents[k].state = next;
            if before != after {
                self.log(Some(id), EventKind::ModeChanged, json!({"from": before, "to": after}));
            }
        }
        self.step_index += 1;
        self.clock = self.start + dt * T::from_u64(self.step_index).unwrap_or_else(T::nan);
        let clock = self.clock;
        for k in 0..self.agents.len() {
            if self.agents[k].status != AgentStatus::Active {
                continue;
            }
            if self.agents[k].ghost {
                let (p, v) = self.ghost_state(k, clock);
                let a = &mut self.agents[k];
                a.state.position = p;
                a.state.velocity = v;
                if let Some(h) = v.normalized() {
                    a.state.heading = h;
                }
            }
            let pos = self.agents[k].state.position;
            self.agents[k].history.push((clock, pos));
        }
        self.spawn_and_finish();
        Ok(())
    }

    fn advance_waypoint(&self, s: &mut AgentState<T>) {
        while s.next_waypoint + 1 < s.waypoints.len() {
            let reached = s.position.distance(s.waypoints[s.next_waypoint]) <= lit(WAYPOINT_REACHED);
            let skip = !self.obstacles.is_empty()
                && segment_clear(s.position, s.waypoints[s.next_waypoint + 1], &self.obstacles, s.radius);
            if reached || skip {
                s.next_waypoint += 1;
            } else {
                break;
            }
        }
    }

    fn non_finite(&self, k: usize, e: ForceError) -> SimError {
        let a = &self.agents[k];
        SimError::NonFinite {
            agent: a.state.id,
            t: to_f64(self.clock),
            dump: format!("{e}; position={:?} velocity={:?} mode={:?}", a.state.position, a.state.velocity, a.state.mode),
        }
    }

    pub fn all_settled(&self) -> bool {
        self.agents.iter().all(|a| a.status == AgentStatus::Done)
    }
}

/// Simulated trajectory of one agent, sampled at its recorded timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTrack<T> {
    pub id: u32,
    pub kind: AgentKind,
    pub ghost: bool,
    pub t0: T,
    pub dt: T,
    pub positions: Vec<Vec2<T>>,
    pub done: bool,
    /// The simulated span ended before the agent reached its destination.
    pub partial: bool,
    pub profile_flagged: bool,
}

#[derive(Debug, Clone)]
pub struct SimOutput<T> {
    pub tracks: Vec<SimTrack<T>>,
    pub events: Vec<Event>,
    pub end_time: T,
}

impl<T: Scalar> SimOutput<T> {
    pub fn track(&self, id: u32) -> Option<&SimTrack<T>> {
        self.tracks.iter().find(|t| t.id == id)
    }

    /// Simulated trajectories as a scenario on the recorded time grid.
    pub fn to_scenario(&self, original: &Scenario<T>) -> Scenario<T> {
        let mut s = original.clone();
        for t in s.tracks.iter_mut() {
            if let Some(sim) = self.track(t.id) {
                t.positions = sim.positions.clone();
            }
        }
        s
    }

    /// CSV with columns `agent_id,kind,t,x,y` (metric), agents in id order.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| SimError::Io(std::io::Error::other(e.to_string()));
        w.write_record(["agent_id", "kind", "t", "x", "y"]).map_err(err)?;
        for t in &self.tracks {
            for (k, p) in t.positions.iter().enumerate() {
                let time = t.t0 + t.dt * T::from_usize(k).unwrap_or_else(T::nan);
                w.write_record([
                    t.id.to_string(),
                    t.kind.tag().to_string(),
                    to_f64(time).to_string(),
                    to_f64(p.x).to_string(),
                    to_f64(p.y).to_string(),
                ])
                .map_err(err)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Piecewise-linear interpolation of a time-ordered history, clamped at both ends.
pub fn resample<T: Scalar>(history: &[(T, Vec2<T>)], t: T) -> Vec2<T> {
    match history {
        [] => Vec2::zero(),
        [(t0, p0), ..] if t <= *t0 => *p0,
        [.., (tn, pn)] if t >= *tn => *pn,
        _ => {
            let k = history.partition_point(|(ti, _)| *ti <= t);
            let (ta, pa) = history[k - 1];
            let (tb, pb) = history[k];
            if tb > ta {
                pa.lerp(pb, (t - ta) / (tb - ta))
            } else {
                pb
            }
        }
    }
}

/// Simulates a scenario and returns trajectories aligned with the recorded timestamps.
pub fn run<T: Scalar>(scenario: &Scenario<T>, config: &SimConfig<T>) -> Result<SimOutput<T>, SimError> {
    let (world, end) = run_world(scenario, config)?;
    let tracks = world
        .agents
        .iter()
        .map(|a| {
            let real = &world.tracks[a.track];
            let positions = if a.ghost {
                real.positions.clone()
            } else {
                (0..real.len()).map(|k| resample(&a.history, real.time_at(k))).collect()
            };
            SimTrack {
                id: a.state.id,
                kind: a.state.kind,
                ghost: a.ghost,
                t0: real.t0,
                dt: real.dt,
                positions,
                done: a.status == AgentStatus::Done,
                partial: !a.ghost && a.status != AgentStatus::Done,
                profile_flagged: a.profile_flagged,
            }
        })
        .collect();
    Ok(SimOutput { tracks, events: world.events, end_time: end })
}

/// Runs the world to the end of the simulated span and returns it with the end time.
pub fn run_world<T: Scalar>(scenario: &Scenario<T>, config: &SimConfig<T>) -> Result<(World<T>, T), SimError> {
    let mut world = World::new(scenario, config.clone())?;
    let last = scenario.tracks.iter().map(|t| t.end_time()).fold(T::neg_infinity(), T::max);
    let end = match config.duration {
        Some(d) => world.start + d,
        None => last,
    };
    let eps = config.dt * lit(1e-6);
    while world.clock < end - eps && !world.all_settled() {
        world.step()?;
    }
    Ok((world, end))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    type V = Vec2<f64>;

    fn state(id: u32, kind: AgentKind, pos: V, vel: V) -> AgentState<f64> {
        let radius = if kind == AgentKind::Car { 1.0 } else { 0.3 };
        let profile = InputProfile { start: pos, destination: pos + vel * 100.0, desired_speed: vel.norm() };
        AgentState::at_rest(id, kind, radius, profile).with_velocity(vel)
    }

    fn straight(id: u32, kind: AgentKind, from: V, vel: V, n: usize) -> AgentTrack<f64> {
        let radius = if kind == AgentKind::Car { 1.0 } else { 0.3 };
        AgentTrack::new(id, kind, 0.0, 0.5, (0..n).map(|k| from + vel * (0.5 * k as f64)).collect(), radius)
    }

    #[test]
    fn orthogonal_pedestrians_conflict() {
        let p = SfmParams::<f64>::default();
        let g = AgentGeometry::default();
        let a = state(1, AgentKind::Pedestrian, V::new(-2.0, 0.0), V::new(1.0, 0.0));
        let b = state(2, AgentKind::Pedestrian, V::new(0.0, -2.0), V::new(0.0, 1.0));
        let (t, gap, point) = closest_approach(&a, &b, 5.0);
        assert_relative_eq!(t, 2.0);
        assert_relative_eq!(gap, 0.0);
        assert_relative_eq!(point.norm(), 0.0);
        let found = detect_conflicts(&[&a, &b], &p, &g, 5.0, 0.0);
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].class, ConflictClass::PedPed);
    }

    #[test]
    fn car_behind_car_follows() {
        let p = SfmParams::<f64>::default();
        let g = AgentGeometry::default();
        let a = state(1, AgentKind::Car, V::new(0.0, 0.0), V::new(6.0, 0.0));
        let b = state(2, AgentKind::Car, V::new(12.0, 0.0), V::new(4.0, 0.0));
        let found = detect_conflicts(&[&a, &b], &p, &g, 5.0, 0.0);
        assert_eq!(found[0].class, ConflictClass::CarFollowing);
    }

    #[test]
    fn diverging_agents_do_not_conflict() {
        let p = SfmParams::<f64>::default();
        let g = AgentGeometry::default();
        let a = state(1, AgentKind::Pedestrian, V::new(-6.0, 0.0), V::new(-1.0, 0.0));
        let b = state(2, AgentKind::Pedestrian, V::new(6.0, 0.0), V::new(1.0, 0.0));
        assert!(detect_conflicts(&[&a, &b], &p, &g, 5.0, 0.0).is_empty());
    }

    #[test]
    fn crossing_and_reactive_classes() {
        let p = SfmParams::<f64>::default();
        let g = AgentGeometry::default();
        let car = state(1, AgentKind::Car, V::new(-15.0, 0.0), V::new(5.0, 0.0));
        let ped = state(2, AgentKind::Pedestrian, V::new(0.0, -3.0), V::new(0.0, 1.3));
        assert_eq!(detect_conflicts(&[&car, &ped], &p, &g, 5.0, 0.0)[0].class, ConflictClass::PedsToCar);
        let ahead = state(3, AgentKind::Pedestrian, V::new(-11.0, 0.0), V::new(0.0, 1.3));
        assert_eq!(detect_conflicts(&[&car, &ahead], &p, &g, 5.0, 0.0)[0].class, ConflictClass::PedCarReactive);
    }

    #[test]
    fn priority_lattice() {
        let stop = Directive::Decelerate(0.0);
        let game = (StrategyKind::Continue, Directive::FreeFlow);
        let follow = Directive::SteerToward(V::new(1.0, 0.0));
        let all = Candidates { stop: Some(stop), game: Some(game), follow: Some(follow) };
        assert_eq!(prioritize(AgentKind::Car, &all), (stop, MotionMode::Stop));
        let no_stop = Candidates { stop: None, ..all };
        assert_eq!(prioritize(AgentKind::Car, &no_stop).1, MotionMode::GameAction(StrategyKind::Continue));
        let only_follow = Candidates { stop: None, game: None, follow: Some(follow) };
        assert_eq!(prioritize(AgentKind::Car, &only_follow), (follow, MotionMode::Follow));
        assert_eq!(prioritize::<f64>(AgentKind::Pedestrian, &Candidates::default()).1, MotionMode::FreeFlow);
        assert_eq!(prioritize(AgentKind::Pedestrian, &all).1, MotionMode::GameAction(StrategyKind::Continue));
    }

    #[test]
    fn resample_interpolates_and_clamps() {
        let h = vec![(0.0, V::new(0.0, 0.0)), (1.0, V::new(2.0, 0.0))];
        assert_eq!(resample(&h, 0.5), V::new(1.0, 0.0));
        assert_eq!(resample(&h, -1.0), V::new(0.0, 0.0));
        assert_eq!(resample(&h, 3.0), V::new(2.0, 0.0));
    }

    #[test]
    fn single_pedestrian_walks_straight() {
        let track = straight(1, AgentKind::Pedestrian, V::zero(), V::new(1.25, 0.0), 17);
        let mut track = track;
        track.profile = Some(InputProfile { start: V::zero(), destination: V::new(10.0, 0.0), desired_speed: 1.25 });
        let scenario = Scenario::new("walk", DatasetTag::Synthetic, vec![track], vec![]).unwrap();
        let mut cfg = SimConfig::for_dataset(DatasetTag::Synthetic);
        cfg.initial_velocity = InitialVelocity::Rest;
        cfg.duration = Some(20.0);
        let (world, _) = run_world(&scenario, &cfg).unwrap();
        let a = &world.agents[0];
        assert_eq!(a.status, AgentStatus::Done);
        assert!(a.history.iter().all(|(_, p)| p.y.abs() < 1e-12));
        let arrival = a.history.last().unwrap().0;
        assert!((arrival - 8.0).abs() <= 0.5, "arrival {arrival}");
    }

    #[test]
    fn agent_at_destination_finishes_immediately() {
        let mut track = straight(1, AgentKind::Pedestrian, V::zero(), V::zero(), 3);
        track.positions[1] = V::new(0.5, 0.0);
        track.profile = Some(InputProfile { start: V::zero(), destination: V::zero(), desired_speed: 1.0 });
        let scenario = Scenario::new("idle", DatasetTag::Synthetic, vec![track], vec![]).unwrap();
        let out = run(&scenario, &SimConfig::for_dataset(DatasetTag::Synthetic)).unwrap();
        assert!(out.tracks[0].done);
        assert!(out.tracks[0].positions.iter().all(|p| *p == V::zero()));
    }

    fn crossing_scenario() -> Scenario<f64> {
        let mut car = straight(1, AgentKind::Car, V::new(-30.0, 0.0), V::new(5.0, 0.0), 25);
        car.profile = Some(InputProfile { start: V::new(-30.0, 0.0), destination: V::new(30.0, 0.0), desired_speed: 5.0 });
        let mut ped = straight(2, AgentKind::Pedestrian, V::new(0.0, -8.0), V::new(0.0, 1.3), 25);
        ped.profile = Some(InputProfile { start: V::new(0.0, -8.0), destination: V::new(0.0, 8.0), desired_speed: 1.3 });
        Scenario::new("cross", DatasetTag::Synthetic, vec![car, ped], vec![]).unwrap()
    }

    #[test]
    fn crossing_opens_game_with_car_leading() {
        let s = crossing_scenario();
        let mut cfg = SimConfig::for_dataset(DatasetTag::Synthetic);
        cfg.duration = Some(30.0);
        let out = run(&s, &cfg).unwrap();
        let opened: Vec<_> = out.events.iter().filter(|e| e.kind == EventKind::ConflictOpened).collect();
        assert!(!opened.is_empty());
        assert_eq!(opened[0].payload["leader"], 1);
        assert!(out.events.iter().any(|e| e.kind == EventKind::GameSolved));
        assert!(out.tracks.iter().all(|t| t.done));
    }

    #[test]
    fn runs_are_deterministic() {
        let s = crossing_scenario();
        let cfg = SimConfig::for_dataset(DatasetTag::Synthetic);
        let (a, b) = (run(&s, &cfg).unwrap(), run(&s, &cfg).unwrap());
        let (mut ca, mut cb) = (Vec::new(), Vec::new());
        a.write_csv(&mut ca).unwrap();
        b.write_csv(&mut cb).unwrap();
        assert_eq!(ca, cb);
        assert_eq!(a.events, b.events);
    }

    #[test]
    fn ghosts_replay_recorded_tracks() {
        let s = crossing_scenario();
        let mut cfg = SimConfig::for_dataset(DatasetTag::Synthetic);
        cfg.options = ModelOptions::sfm_baseline();
        let out = run(&s, &cfg).unwrap();
        assert_eq!(out.track(1).unwrap().positions, s.tracks[0].positions);
        assert!(out.track(1).unwrap().ghost);
        assert!(!out.events.iter().any(|e| e.kind == EventKind::ConflictOpened));
    }

    #[test]
    fn game_modes_trace_to_active_conflicts() {
        let s = crossing_scenario();
        let cfg = SimConfig::for_dataset(DatasetTag::Synthetic);
        let mut world = World::new(&s, cfg).unwrap();
        for _ in 0..150 {
            world.step().unwrap();
            let active: BTreeSet<u64> = world.active_conflicts().iter().map(|c| c.id).collect();
            for a in &world.agents {
                if let MotionMode::GameAction(_) = a.state.mode {
                    assert!(a.conflict.is_some_and(|c| active.contains(&c)) || a.status == AgentStatus::Done);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn detection_is_symmetric(
            ax in -10.0..10.0f64, ay in -10.0..10.0f64, bx in -10.0..10.0f64, by in -10.0..10.0f64,
            avx in -2.0..2.0f64, avy in -2.0..2.0f64, bvx in -6.0..6.0f64, bvy in -6.0..6.0f64, car in any::<bool>(),
        ) {
            let p = SfmParams::<f64>::default();
            let g = AgentGeometry::default();
            let a = state(1, AgentKind::Pedestrian, V::new(ax, ay), V::new(avx, avy));
            let kind = if car { AgentKind::Car } else { AgentKind::Pedestrian };
            let b = state(2, kind, V::new(bx, by), V::new(bvx, bvy));
            let ab = detect_conflicts(&[&a, &b], &p, &g, 5.0, 0.0);
            let ba = detect_conflicts(&[&b, &a], &p, &g, 5.0, 0.0);
            prop_assert_eq!(ab, ba);
        }
    }
}
