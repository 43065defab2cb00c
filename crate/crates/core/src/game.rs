//! Stackelberg games for complex pedestrian/car conflicts: situation features,
//! payoff matrices, the subgame-perfect solution and strategy execution.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::force::{car_decelerated_speed, AgentState, Directive};
use crate::geometry::{directed_angle_deg, segments_intersect};
use crate::params::{GameParams, SfmParams};
use crate::scalar::{lit, Scalar};
use crate::scenario::{AgentKind, DatasetTag};

pub const PAYOFF_SCHEMA: &str = "sharedspace.payoffs/1";
const DEFAULT_PAYOFFS: &str = include_str!("../config/payoffs.json");

#[derive(Debug, Error, PartialEq)]
pub enum GameError {
    #[error("payoff table has no cell for leader {leader:?} / follower {follower:?}")]
    MissingBaseCell { leader: StrategyKind, follower: StrategyKind },
    #[error("strategy {strategy:?} is not admissible for {kind}")]
    Inadmissible { kind: AgentKind, strategy: StrategyKind },
    #[error("payoff configuration: {0}")]
    Config(String),
    #[error("a game needs a leader and at least one follower")]
    TooFewPlayers,
}

/// Declaration order is the tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StrategyKind {
    Continue,
    Decelerate,
    Deviate,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 3] = [StrategyKind::Continue, StrategyKind::Decelerate, StrategyKind::Deviate];

    pub fn admissible(kind: AgentKind) -> &'static [StrategyKind] {
        match kind {
            AgentKind::Pedestrian => &Self::ALL,
            AgentKind::Car => &Self::ALL[..2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Leader,
    Follower,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Feature {
    Noai,
    CarStopped,
    MinDist,
    CompetitorSpeed,
    OwnSpeed,
    Angle,
}

/// Situation features of agent `i` facing opponent `j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct FeatureVector<T> {
    pub noai: T,
    pub car_stopped: T,
    pub min_dist: T,
    pub competitor_speed: T,
    pub own_speed: T,
    pub angle_class: u8,
}

impl<T: Scalar> FeatureVector<T> {
    pub fn zero() -> Self {
        Self {
            noai: T::zero(),
            car_stopped: T::zero(),
            min_dist: T::zero(),
            competitor_speed: T::zero(),
            own_speed: T::zero(),
            angle_class: 0,
        }
    }

    pub fn value(&self, f: Feature) -> T {
        match f {
            Feature::Noai => self.noai,
            Feature::CarStopped => self.car_stopped,
            Feature::MinDist => self.min_dist,
            Feature::CompetitorSpeed => self.competitor_speed,
            Feature::OwnSpeed => self.own_speed,
            Feature::Angle => T::from_u8(self.angle_class).unwrap_or_else(T::zero),
        }
    }

    /// Changes in this key trigger re-solving a running game.
    pub fn resolve_key(&self) -> (u8, i64) {
        (self.angle_class, self.min_dist.floor().to_i64().unwrap_or(0))
    }
}

/// Five-band classification of θ ∈ [0°, 360°).
pub fn angle_class<T: Scalar>(theta: T) -> u8 {
    let t = theta.to_f64().unwrap_or(0.0);
    if t < 16.0 || t > 344.0 {
        8
    } else if t <= 42.0 || t >= 318.0 {
        7
    } else if t <= 65.0 || t >= 295.0 {
        6
    } else if t <= 90.0 || t >= 270.0 {
        5
    } else {
        1
    }
}

/// World facts needed for `i`'s features that are not part of the two agent states.
#[derive(Debug, Clone, Copy)]
pub struct FeatureContext<T> {
    pub active_interactions: usize,
    pub yielding_elsewhere: bool,
    pub min_dis: T,
    /// `S_high` as a multiple of the desired speed.
    pub high_speed_factor: T,
}

impl<T: Scalar> FeatureContext<T> {
    pub fn new(game: &GameParams<T>) -> Self {
        Self { active_interactions: 0, yielding_elsewhere: false, min_dis: game.min_dis, high_speed_factor: lit(1.2) }
    }
}

pub fn compute_features<T: Scalar>(i: &AgentState<T>, j: &AgentState<T>, ctx: &FeatureContext<T>) -> FeatureVector<T> {
    let is_car = i.kind == AgentKind::Car;
    let d = i.position.distance(j.position);
    let n = (i.position - j.position).normalized().unwrap_or(-i.heading);
    let theta = directed_angle_deg(j.heading, n);
    let one = T::one();
    let flag = |b: bool| if b { one } else { T::zero() };
    FeatureVector {
        noai: if is_car { T::from_usize(ctx.active_interactions).unwrap_or_else(T::zero) } else { T::zero() },
        car_stopped: flag(is_car && ctx.yielding_elsewhere),
        min_dist: (ctx.min_dis - d).max(T::zero()),
        competitor_speed: flag(j.speed() < j.profile.desired_speed),
        own_speed: if is_car {
            i.speed()
        } else {
            flag(i.speed() > i.profile.desired_speed * ctx.high_speed_factor)
        },
        angle_class: angle_class(theta),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightKey {
    CarSpeed,
    PedSpeed,
    CompetitorSpeed,
    Noai,
    Stopped,
    FollowerAngle,
    ContinueAngle,
    DecelerateAngle,
    DeviateAngle,
    /// Unit weight, for features already expressed in payoff units.
    One,
}

impl WeightKey {
    pub fn of<T: Scalar>(self, g: &GameParams<T>) -> T {
        match self {
            WeightKey::CarSpeed => g.car_speed,
            WeightKey::PedSpeed => g.ped_speed,
            WeightKey::CompetitorSpeed => g.competitor_speed,
            WeightKey::Noai => g.noai,
            WeightKey::Stopped => g.stopped,
            WeightKey::FollowerAngle => g.follower_angle,
            WeightKey::ContinueAngle => g.continue_angle,
            WeightKey::DecelerateAngle => g.decelerate_angle,
            WeightKey::DeviateAngle => g.deviate_angle,
            WeightKey::One => T::one(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseCell {
    pub leader: StrategyKind,
    pub follower: StrategyKind,
    pub leader_payoff: f64,
    pub follower_payoff: f64,
}

/// Adds `weight · feature` to `role`'s payoff in every cell where it plays `strategy`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Applicability {
    pub role: Role,
    pub strategy: StrategyKind,
    pub feature: Feature,
    pub weight: WeightKey,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayoffConfig {
    pub schema: String,
    pub base: Vec<BaseCell>,
    pub applicability: Vec<Applicability>,
    #[serde(default)]
    pub weights: BTreeMap<String, GameParams<f64>>,
}

impl PayoffConfig {
    pub fn from_json(text: &str) -> Result<Self, GameError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| GameError::Config(e.to_string()))?;
        if cfg.schema != PAYOFF_SCHEMA {
            return Err(GameError::Config(format!("unsupported schema {:?}", cfg.schema)));
        }
        if cfg.base.iter().any(|c| !c.leader_payoff.is_finite() || !c.follower_payoff.is_finite()) {
            return Err(GameError::Config("non-finite base payoff".into()));
        }
        Ok(cfg)
    }

    /// Table shipped with the crate.
    pub fn shipped() -> Self {
        Self::from_json(DEFAULT_PAYOFFS).expect("shipped payoff table is valid")
    }

    pub fn base_cell(&self, leader: StrategyKind, follower: StrategyKind) -> Result<&BaseCell, GameError> {
        self.base
            .iter()
            .find(|c| c.leader == leader && c.follower == follower)
            .ok_or(GameError::MissingBaseCell { leader, follower })
    }

    pub fn weights_for<T: Scalar>(&self, tag: DatasetTag) -> GameParams<T> {
        match self.weights.get(tag.as_str()) {
            Some(g) => GameParams {
                car_speed: lit(g.car_speed),
                ped_speed: lit(g.ped_speed),
                competitor_speed: lit(g.competitor_speed),
                noai: lit(g.noai),
                stopped: lit(g.stopped),
                follower_angle: lit(g.follower_angle),
                min_dis: lit(g.min_dis),
                continue_angle: lit(g.continue_angle),
                decelerate_angle: lit(g.decelerate_angle),
                deviate_angle: lit(g.deviate_angle),
            },
            None => GameParams::for_dataset(tag),
        }
    }

    fn adjustment<T: Scalar>(&self, role: Role, strategy: StrategyKind, f: &FeatureVector<T>, w: &GameParams<T>) -> T {
        self.applicability
            .iter()
            .filter(|a| a.role == role && a.strategy == strategy)
            .fold(T::zero(), |acc, a| acc + a.weight.of(w) * f.value(a.feature))
    }
}

/// Payoffs over the product of admissible strategies. Follower payoffs depend only
/// on the leader's strategy and their own; the leader's payoff on the whole profile.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PayoffMatrix<T> {
    pub leader: u32,
    pub followers: Vec<u32>,
    pub leader_strategies: Vec<StrategyKind>,
    pub follower_strategies: Vec<Vec<StrategyKind>>,
    /// Indexed by `leader_index · profiles + profile_index`.
    pub leader_payoffs: Vec<T>,
    /// `follower_payoffs[f][leader_index][strategy_index]`.
    pub follower_payoffs: Vec<Vec<Vec<T>>>,
}

impl<T: Scalar> PayoffMatrix<T> {
    pub fn profiles(&self) -> usize {
        self.follower_strategies.iter().map(Vec::len).product()
    }

    /// Mixed-radix index of a follower profile; the first follower is most significant.
    pub fn profile_index(&self, choice: &[usize]) -> usize {
        choice
            .iter()
            .zip(&self.follower_strategies)
            .fold(0, |acc, (&c, s)| acc * s.len() + c)
    }

    pub fn profile(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.follower_strategies.len()];
        for (slot, s) in out.iter_mut().zip(&self.follower_strategies).rev() {
            *slot = index % s.len();
            index /= s.len();
        }
        out
    }

    pub fn leader_payoff(&self, leader_index: usize, choice: &[usize]) -> T {
        self.leader_payoffs[leader_index * self.profiles() + self.profile_index(choice)]
    }

    pub fn is_complete(&self) -> bool {
        let n = self.leader_strategies.len();
        !self.leader_strategies.is_empty()
            && self.follower_strategies.iter().all(|s| !s.is_empty())
            && self.leader_payoffs.len() == n * self.profiles()
            && self.follower_payoffs.len() == self.follower_strategies.len()
            && self
                .follower_payoffs
                .iter()
                .zip(&self.follower_strategies)
                .all(|(p, s)| p.len() == n && p.iter().all(|row| row.len() == s.len()))
            && self.leader_payoffs.iter().all(|v| v.is_finite())
    }
}

/// Features of one leader/follower pair, seen from each side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairFeatures<T> {
    pub follower: u32,
    pub follower_kind: AgentKind,
    pub leader_view: FeatureVector<T>,
    pub follower_view: FeatureVector<T>,
}

pub fn build_payoff_matrix<T: Scalar>(
    leader: u32,
    leader_kind: AgentKind,
    pairs: &[PairFeatures<T>],
    config: &PayoffConfig,
    weights: &GameParams<T>,
) -> Result<PayoffMatrix<T>, GameError> {
    if pairs.is_empty() {
        return Err(GameError::TooFewPlayers);
    }
    let leader_strategies = StrategyKind::admissible(leader_kind).to_vec();
    let follower_strategies: Vec<Vec<StrategyKind>> =
        pairs.iter().map(|p| StrategyKind::admissible(p.follower_kind).to_vec()).collect();

    let mut follower_payoffs = Vec::with_capacity(pairs.len());
    // leader's per-follower contribution: [follower][leader strategy][follower strategy]
    let mut leader_parts = Vec::with_capacity(pairs.len());
    for (p, strategies) in pairs.iter().zip(&follower_strategies) {
        let mut fp = Vec::with_capacity(leader_strategies.len());
        let mut lp = Vec::with_capacity(leader_strategies.len());
        for &sl in &leader_strategies {
            let ladj = config.adjustment(Role::Leader, sl, &p.leader_view, weights);
            let mut frow = Vec::with_capacity(strategies.len());
            let mut lrow = Vec::with_capacity(strategies.len());
            for &sf in strategies {
                let cell = config.base_cell(sl, sf)?;
                frow.push(lit::<T>(cell.follower_payoff) + config.adjustment(Role::Follower, sf, &p.follower_view, weights));
                lrow.push(lit::<T>(cell.leader_payoff) + ladj);
            }
            fp.push(frow);
            lp.push(lrow);
        }
        follower_payoffs.push(fp);
        leader_parts.push(lp);
    }

    let mut m = PayoffMatrix {
        leader,
        followers: pairs.iter().map(|p| p.follower).collect(),
        leader_strategies,
        follower_strategies,
        leader_payoffs: Vec::new(),
        follower_payoffs,
    };
    let profiles = m.profiles();
    let mut leader_payoffs = Vec::with_capacity(m.leader_strategies.len() * profiles);
    for l in 0..m.leader_strategies.len() {
        for idx in 0..profiles {
            let choice = m.profile(idx);
            let u = choice
                .iter()
                .enumerate()
                .fold(T::zero(), |acc, (f, &c)| acc + leader_parts[f][l][c]);
            leader_payoffs.push(u);
        }
    }
    m.leader_payoffs = leader_payoffs;
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GameSolution {
    pub leader: StrategyKind,
    pub followers: Vec<StrategyKind>,
    pub leader_index: usize,
    pub follower_indices: Vec<usize>,
}

/// First index of the maximum; earlier entries win ties.
fn first_argmax<T: Scalar>(values: impl IntoIterator<Item = T>) -> usize {
    let mut best = 0;
    let mut best_v: Option<T> = None;
    for (k, v) in values.into_iter().enumerate() {
        if best_v.map_or(true, |b| v > b) {
            best = k;
            best_v = Some(v);
        }
    }
    best
}

/// Subgame-perfect equilibrium: followers best-respond independently to each leader
/// strategy, and the leader maximizes against those responses.
pub fn solve_stackelberg<T: Scalar>(m: &PayoffMatrix<T>) -> GameSolution {
    let responses: Vec<Vec<usize>> = (0..m.leader_strategies.len())
        .map(|l| m.follower_payoffs.iter().map(|fp| first_argmax(fp[l].iter().copied())).collect())
        .collect();
    let l = first_argmax(responses.iter().enumerate().map(|(l, r)| m.leader_payoff(l, r)));
    let follower_indices = responses[l].clone();
    GameSolution {
        leader: m.leader_strategies[l],
        followers: follower_indices
            .iter()
            .zip(&m.follower_strategies)
            .map(|(&c, s)| s[c])
            .collect(),
        leader_index: l,
        follower_indices,
    }
}

/// The fastest participant leads; cars take precedence over pedestrians, and among
/// several cars the first to recognize the conflict. Remaining ties go to the lower id.
pub fn select_leader<T: Scalar>(participants: &[&AgentState<T>], first_recognizer: Option<u32>) -> Option<u32> {
    if participants.len() < 2 {
        return None;
    }
    let cars: Vec<&&AgentState<T>> = participants.iter().filter(|a| a.kind == AgentKind::Car).collect();
    if cars.len() > 1 {
        if let Some(r) = first_recognizer.filter(|r| cars.iter().any(|c| c.id == *r)) {
            return Some(r);
        }
    }
    let pool: Vec<&&AgentState<T>> = if cars.is_empty() { participants.iter().collect() } else { cars };
    pool.into_iter()
        .min_by(|a, b| {
            b.speed()
                .partial_cmp(&a.speed())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.id.cmp(&b.id))
        })
        .map(|a| a.id)
}

/// Motion directive realizing `strategy` for `agent` against `opponent`.
pub fn strategy_directive<T: Scalar>(
    agent: &AgentState<T>,
    strategy: StrategyKind,
    opponent: &AgentState<T>,
    params: &SfmParams<T>,
) -> Result<Directive<T>, GameError> {
    if !StrategyKind::admissible(agent.kind).contains(&strategy) {
        return Err(GameError::Inadmissible { kind: agent.kind, strategy });
    }
    let d = agent.position.distance(opponent.position);
    let e_j = opponent.heading;
    let x_j = opponent.position;
    Ok(match (agent.kind, strategy) {
        (AgentKind::Car, StrategyKind::Continue) => Directive::FreeFlow,
        (AgentKind::Car, _) => Directive::Decelerate(car_decelerated_speed(agent.speed(), d, params.d_min_pc)),
        (AgentKind::Pedestrian, StrategyKind::Continue) => {
            let front = x_j + e_j * params.s_a;
            let back = x_j - e_j * (params.s_a / lit(2.0));
            if segments_intersect(agent.position, agent.profile.destination, front, back) {
                Directive::SteerToward(front)
            } else {
                Directive::FreeFlow
            }
        }
        (AgentKind::Pedestrian, StrategyKind::Decelerate) => {
            if d <= agent.radius + opponent.radius + T::one() {
                Directive::Decelerate(T::zero())
            } else {
                Directive::Decelerate(agent.speed() / lit(2.0))
            }
        }
        (AgentKind::Pedestrian, StrategyKind::Deviate) => {
            if d <= params.view_range {
                Directive::SteerToward(x_j - e_j * params.s_d)
            } else {
                Directive::FreeFlow
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec2;
    use crate::scenario::InputProfile;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    type V = Vec2<f64>;

    fn agent(id: u32, kind: AgentKind, pos: V, vel: V, dest: V, vd: f64) -> AgentState<f64> {
        let radius = if kind == AgentKind::Car { 1.0 } else { 0.3 };
        let profile = InputProfile { start: pos, destination: dest, desired_speed: vd };
        AgentState::at_rest(id, kind, radius, profile).with_velocity(vel)
    }

    /// Enumerates every profile and keeps those consistent with tie-broken best responses.
    fn brute_force(m: &PayoffMatrix<f64>) -> (usize, Vec<usize>) {
        let mut best: Option<(usize, Vec<usize>, f64)> = None;
        for l in 0..m.leader_strategies.len() {
            for idx in 0..m.profiles() {
                let choice = m.profile(idx);
                let consistent = choice.iter().enumerate().all(|(f, &c)| {
                    let row = &m.follower_payoffs[f][l];
                    row.iter().enumerate().all(|(k, &v)| v < row[c] || (v == row[c] && k >= c))
                });
                if !consistent {
                    continue;
                }
                let u = m.leader_payoff(l, &choice);
                if best.as_ref().map_or(true, |b| u > b.2) {
                    best = Some((l, choice, u));
                }
            }
        }
        let (l, c, _) = best.unwrap();
        (l, c)
    }

    fn random_matrix(rng: &mut ChaCha8Rng) -> PayoffMatrix<f64> {
        let nl = rng.random_range(1..=3);
        let nf = rng.random_range(1..=3);
        let follower_strategies: Vec<Vec<StrategyKind>> =
            (0..nf).map(|_| StrategyKind::ALL[..rng.random_range(1..=3)].to_vec()).collect();
        let mut m = PayoffMatrix {
            leader: 0,
            followers: (1..=nf as u32).collect(),
            leader_strategies: StrategyKind::ALL[..nl].to_vec(),
            follower_strategies,
            leader_payoffs: vec![],
            follower_payoffs: vec![],
        };
        m.leader_payoffs = (0..nl * m.profiles()).map(|_| rng.random_range(-3..=3) as f64).collect();
        m.follower_payoffs = m
            .follower_strategies
            .iter()
            .map(|s| (0..nl).map(|_| (0..s.len()).map(|_| rng.random_range(-3..=3) as f64).collect()).collect())
            .collect();
        m
    }

    #[test]
    fn solver_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let m = random_matrix(&mut rng);
            assert!(m.is_complete());
            let s = solve_stackelberg(&m);
            assert_eq!((s.leader_index, s.follower_indices.clone()), brute_force(&m));
        }
    }

    #[test]
    fn dominant_leader_strategy() {
        let m = PayoffMatrix {
            leader: 0,
            followers: vec![1],
            leader_strategies: vec![StrategyKind::Continue, StrategyKind::Decelerate],
            follower_strategies: vec![vec![StrategyKind::Continue, StrategyKind::Decelerate]],
            leader_payoffs: vec![5.0, 5.0, 1.0, 1.0],
            follower_payoffs: vec![vec![vec![0.0, 1.0], vec![1.0, 0.0]]],
        };
        let s = solve_stackelberg(&m);
        assert_eq!(s.leader, StrategyKind::Continue);
        assert_eq!(s.followers, vec![StrategyKind::Decelerate]);
    }

    #[test]
    fn angle_bands() {
        assert_eq!(angle_class(10.0), 8);
        assert_eq!(angle_class(100.0), 1);
        assert_eq!(angle_class(16.0), 7);
        assert_eq!(angle_class(344.0), 7);
        assert_eq!(angle_class(344.5), 8);
        assert_eq!(angle_class(42.0), 7);
        assert_eq!(angle_class(42.5), 6);
        assert_eq!(angle_class(318.0), 7);
        assert_eq!(angle_class(317.9), 6);
        assert_eq!(angle_class(295.0), 6);
        assert_eq!(angle_class(90.0), 5);
        assert_eq!(angle_class(270.0), 5);
        assert_eq!(angle_class(269.9), 1);
    }

    #[test]
    fn features_of_crossing_pair() {
        let g = GameParams::<f64>::default();
        let car = agent(1, AgentKind::Car, V::new(-10.0, 0.0), V::new(5.0, 0.0), V::new(50.0, 0.0), 5.0);
        let ped = agent(2, AgentKind::Pedestrian, V::new(-3.0, 0.5), V::new(0.0, 1.0), V::new(-3.0, 10.0), 1.3);
        let mut ctx = FeatureContext::new(&g);
        let f = compute_features(&ped, &car, &ctx);
        assert_eq!(f.angle_class, 8);
        assert_eq!(f.own_speed, 0.0);
        assert_eq!(f.competitor_speed, 0.0);
        assert_relative_eq!(f.min_dist, 0.0);
        ctx.active_interactions = 2;
        ctx.yielding_elsewhere = true;
        let f = compute_features(&car, &ped, &ctx);
        assert_eq!((f.noai, f.car_stopped, f.own_speed), (2.0, 1.0, 5.0));
        assert_relative_eq!(f.min_dist, 0.0);
        assert_eq!(f.competitor_speed, 1.0);

        let near = agent(3, AgentKind::Pedestrian, V::new(-7.0, 0.0), V::new(0.0, 2.0), V::new(-7.0, 10.0), 1.3);
        let f = compute_features(&near, &car, &FeatureContext::new(&g));
        assert_relative_eq!(f.min_dist, 4.0);
        assert_eq!(f.own_speed, 1.0);
        let at = agent(4, AgentKind::Pedestrian, V::new(-3.0, 0.0), V::zero(), V::new(-3.0, 10.0), 1.3);
        assert_eq!(compute_features(&at, &car, &FeatureContext::new(&g)).min_dist, 0.0);
    }

    fn pair(leader_view: FeatureVector<f64>, follower_view: FeatureVector<f64>) -> PairFeatures<f64> {
        PairFeatures { follower: 2, follower_kind: AgentKind::Pedestrian, leader_view, follower_view }
    }

    #[test]
    fn zero_features_give_base_ordinals() {
        let cfg = PayoffConfig::shipped();
        let g = GameParams::<f64>::default();
        let z = FeatureVector::zero();
        let m = build_payoff_matrix(1, AgentKind::Car, &[pair(z, z)], &cfg, &g).unwrap();
        assert!(m.is_complete());
        for (l, &sl) in m.leader_strategies.iter().enumerate() {
            for (f, &sf) in m.follower_strategies[0].iter().enumerate() {
                let cell = cfg.base_cell(sl, sf).unwrap();
                assert_eq!(m.leader_payoff(l, &[f]), cell.leader_payoff);
                assert_eq!(m.follower_payoffs[0][l][f], cell.follower_payoff);
            }
        }
    }

    #[test]
    fn car_stopped_adds_to_yielding_cells() {
        let cfg = PayoffConfig::shipped();
        let g = GameParams::<f64>::default();
        let z = FeatureVector::zero();
        let stopped = FeatureVector { car_stopped: 1.0, ..z };
        let base = build_payoff_matrix(1, AgentKind::Car, &[pair(z, z)], &cfg, &g).unwrap();
        let m = build_payoff_matrix(1, AgentKind::Car, &[pair(stopped, z)], &cfg, &g).unwrap();
        for l in 0..2 {
            for f in 0..3 {
                let delta = m.leader_payoff(l, &[f]) - base.leader_payoff(l, &[f]);
                let expect = if m.leader_strategies[l] == StrategyKind::Decelerate { 2.0 } else { 0.0 };
                assert_eq!(delta, expect);
            }
        }
        assert_eq!(m.follower_payoffs, base.follower_payoffs);
    }

    #[test]
    fn doubling_weights_doubles_adjustments() {
        let cfg = PayoffConfig::shipped();
        let g = GameParams::<f64>::default();
        let fv = FeatureVector { noai: 1.0, car_stopped: 1.0, min_dist: 2.5, competitor_speed: 1.0, own_speed: 4.0, angle_class: 7 };
        let z = FeatureVector::zero();
        let base = build_payoff_matrix(1, AgentKind::Car, &[pair(z, z)], &cfg, &g).unwrap();
        let one = build_payoff_matrix(1, AgentKind::Car, &[pair(fv, fv)], &cfg, &g).unwrap();
        let two = build_payoff_matrix(1, AgentKind::Car, &[pair(fv, fv)], &cfg, &g.scaled(2.0)).unwrap();
        for k in 0..base.leader_payoffs.len() {
            let a1 = one.leader_payoffs[k] - base.leader_payoffs[k];
            let a2 = two.leader_payoffs[k] - base.leader_payoffs[k];
            // MinDist carries a unit weight that does not scale
            let min_dist_part = if k < 3 { 2.5 } else { 0.0 };
            assert_relative_eq!(a2 - min_dist_part, 2.0 * (a1 - min_dist_part), epsilon = 1e-12);
        }
    }

    #[test]
    fn shipped_weights_match_defaults() {
        let cfg = PayoffConfig::shipped();
        for tag in [DatasetTag::Hbs, DatasetTag::Dut, DatasetTag::Citr, DatasetTag::Synthetic] {
            assert_eq!(cfg.weights_for::<f64>(tag), GameParams::for_dataset(tag));
        }
        for l in StrategyKind::admissible(AgentKind::Car) {
            for f in StrategyKind::admissible(AgentKind::Pedestrian) {
                assert!(cfg.base_cell(*l, *f).is_ok());
            }
        }
    }

    #[test]
    fn missing_cell_is_config_error() {
        let mut cfg = PayoffConfig::shipped();
        cfg.base.pop();
        let z = FeatureVector::<f64>::zero();
        let err = build_payoff_matrix(1, AgentKind::Car, &[pair(z, z)], &cfg, &GameParams::default()).unwrap_err();
        assert!(matches!(err, GameError::MissingBaseCell { .. }));
        assert!(PayoffConfig::from_json("{\"schema\":\"other/9\",\"base\":[],\"applicability\":[]}").is_err());
    }

    #[test]
    fn leader_selection() {
        let car = agent(1, AgentKind::Car, V::zero(), V::new(5.0, 0.0), V::new(10.0, 0.0), 5.0);
        let p1 = agent(2, AgentKind::Pedestrian, V::zero(), V::new(1.3, 0.0), V::new(10.0, 0.0), 1.3);
        let p2 = agent(3, AgentKind::Pedestrian, V::zero(), V::new(1.3, 0.0), V::new(10.0, 0.0), 1.3);
        assert_eq!(select_leader(&[&p1, &car, &p2], None), Some(1));
        let car_b = agent(4, AgentKind::Car, V::zero(), V::new(3.0, 0.0), V::new(10.0, 0.0), 5.0);
        assert_eq!(select_leader(&[&car, &car_b, &p1], Some(4)), Some(4));
        assert_eq!(select_leader(&[&p2, &p1], None), Some(2));
        assert_eq!(select_leader(&[&p2], None), None);
    }

    #[test]
    fn directives() {
        let p = SfmParams::<f64>::default();
        let car = agent(1, AgentKind::Car, V::new(-20.0, 0.0), V::new(5.0, 0.0), V::new(50.0, 0.0), 5.0);
        let ped = agent(2, AgentKind::Pedestrian, V::new(0.0, -3.0), V::new(0.0, 1.3), V::new(0.0, 10.0), 1.3);
        let Directive::Decelerate(v) = strategy_directive(&car, StrategyKind::Decelerate, &ped, &p).unwrap() else {
            panic!()
        };
        let d = car.position.distance(ped.position);
        assert_relative_eq!(v, 5.0 - 25.0 / (d - 7.8), max_relative = 1e-12);
        assert_eq!(strategy_directive(&car, StrategyKind::Continue, &ped, &p).unwrap(), Directive::FreeFlow);
        assert!(strategy_directive(&car, StrategyKind::Deviate, &ped, &p).is_err());

        // crossing line intersects the car's swept segment only once the car is close
        let near_car = agent(1, AgentKind::Car, V::new(-2.0, 0.0), V::new(5.0, 0.0), V::new(50.0, 0.0), 5.0);
        assert_eq!(
            strategy_directive(&ped, StrategyKind::Continue, &near_car, &p).unwrap(),
            Directive::SteerToward(V::new(4.0, 0.0))
        );
        assert_eq!(strategy_directive(&ped, StrategyKind::Continue, &car, &p).unwrap(), Directive::FreeFlow);
        assert_eq!(
            strategy_directive(&ped, StrategyKind::Deviate, &near_car, &p).unwrap(),
            Directive::SteerToward(V::new(-8.0, 0.0))
        );
        // out of view: no detour
        assert_eq!(strategy_directive(&ped, StrategyKind::Deviate, &car, &p).unwrap(), Directive::FreeFlow);
        assert_eq!(
            strategy_directive(&ped, StrategyKind::Continue, &car, &p).unwrap(),
            Directive::FreeFlow
        );
        assert_eq!(
            strategy_directive(&ped, StrategyKind::Decelerate, &car, &p).unwrap(),
            Directive::Decelerate(0.65)
        );
        let close = agent(1, AgentKind::Car, V::new(0.0, -1.2), V::new(5.0, 0.0), V::new(50.0, 0.0), 5.0);
        let stop = agent(2, AgentKind::Pedestrian, V::new(0.0, -3.0), V::new(0.0, 1.3), V::new(0.0, 10.0), 1.3);
        assert_eq!(strategy_directive(&stop, StrategyKind::Decelerate, &close, &p).unwrap(), Directive::Decelerate(0.0));
    }

    proptest! {
        #[test]
        fn angle_partition_total(theta in 0.0..360.0f64) {
            prop_assert!([8u8, 7, 6, 5, 1].contains(&angle_class(theta)));
        }

        #[test]
        fn constant_shift_keeps_solution(seed in any::<u64>(), shift in -100i32..100, who in 0usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_matrix(&mut rng);
            let mut shifted = m.clone();
            if who == 0 || who > shifted.follower_payoffs.len() {
                shifted.leader_payoffs.iter_mut().for_each(|v| *v += shift as f64);
            } else {
                shifted.follower_payoffs[who - 1].iter_mut().flatten().for_each(|v| *v += shift as f64);
            }
            prop_assert_eq!(solve_stackelberg(&m), solve_stackelberg(&shifted));
        }

        #[test]
        fn cars_never_deviate(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let fv = |rng: &mut ChaCha8Rng| FeatureVector {
                noai: rng.random_range(0..3) as f64,
                car_stopped: rng.random_range(0..2) as f64,
                min_dist: rng.random_range(0.0..7.0),
                competitor_speed: rng.random_range(0..2) as f64,
                own_speed: rng.random_range(0.0..8.0),
                angle_class: [8u8, 7, 6, 5, 1][rng.random_range(0..5)],
            };
            let pairs: Vec<_> = (0..rng.random_range(1..4)).map(|k| PairFeatures {
                follower: k + 2,
                follower_kind: AgentKind::Pedestrian,
                leader_view: fv(&mut rng),
                follower_view: fv(&mut rng),
            }).collect();
            let m = build_payoff_matrix(1, AgentKind::Car, &pairs, &PayoffConfig::shipped(), &GameParams::default()).unwrap();
            prop_assert!(solve_stackelberg(&m).leader != StrategyKind::Deviate);
        }
    }
}
