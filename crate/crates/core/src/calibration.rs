//! Genetic-algorithm calibration against recorded scenarios, and the staged
//! universal → individual → grouped workflow producing the model variants.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use log::warn;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{cluster_fs, cluster_pca, ClusterError, ClusteringConfig, ClusteringReport};
use crate::game::StrategyKind;
use crate::geometry::Vec2;
use crate::params::{GameParams, SfmParams};
use crate::scenario::{AgentKind, DatasetTag, Scenario};
use crate::seeds;
use crate::sim::{run, Event, EventKind, SimConfig, SimError, SimOutput};

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("no overlapping timesteps for agent {0}")]
    NoOverlap(u32),
    #[error("nothing to score")]
    Empty,
    #[error("unknown agent {agent} in scenario {scenario}")]
    MissingAgent { scenario: String, agent: u32 },
    #[error("invalid GA configuration: {0}")]
    Config(String),
    #[error("stage {stage} requires {missing}, which has not been run")]
    StageDependency { stage: Stage, missing: Stage },
    #[error("unknown parameter {0}")]
    UnknownParameter(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
}

type Result<T> = std::result::Result<T, CalibrationError>;

/// Calibratable quantities under their conventional symbols.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ParamName {
    #[serde(rename = "V_PP")]
    StrengthPp,
    #[serde(rename = "V_PC")]
    StrengthPc,
    #[serde(rename = "V_CP")]
    StrengthCp,
    #[serde(rename = "sigma_PP")]
    SigmaPp,
    #[serde(rename = "sigma_PC")]
    SigmaPc,
    #[serde(rename = "lambda")]
    Lambda,
    #[serde(rename = "S_D")]
    SafeDeviation,
    #[serde(rename = "tau")]
    Tau,
    #[serde(rename = "view_range")]
    ViewRange,
    #[serde(rename = "D_min_PC")]
    DMinPc,
    #[serde(rename = "S_A")]
    SafeAcceleration,
    #[serde(rename = "S_C")]
    SafeConflict,
    #[serde(rename = "G_car_speed")]
    GCarSpeed,
    #[serde(rename = "G_ped_speed")]
    GPedSpeed,
    #[serde(rename = "G_competitor_speed")]
    GCompetitorSpeed,
    #[serde(rename = "G_noai")]
    GNoai,
    #[serde(rename = "G_stopped")]
    GStopped,
    #[serde(rename = "G_follower_angle")]
    GFollowerAngle,
    #[serde(rename = "G_min_dis")]
    GMinDis,
    #[serde(rename = "G_continue_angle")]
    GContinueAngle,
    #[serde(rename = "G_decelerate_angle")]
    GDecelerateAngle,
    #[serde(rename = "G_deviate_angle")]
    GDeviateAngle,
}

/// Parameters grouped by the clustering step.
pub const CLUSTER_PARAMS: [ParamName; 7] = [
    ParamName::StrengthPp,
    ParamName::StrengthPc,
    ParamName::StrengthCp,
    ParamName::SigmaPp,
    ParamName::SigmaPc,
    ParamName::Lambda,
    ParamName::SafeDeviation,
];

pub const GAME_WEIGHTS: [ParamName; 10] = [
    ParamName::GCarSpeed,
    ParamName::GPedSpeed,
    ParamName::GCompetitorSpeed,
    ParamName::GNoai,
    ParamName::GStopped,
    ParamName::GFollowerAngle,
    ParamName::GMinDis,
    ParamName::GContinueAngle,
    ParamName::GDecelerateAngle,
    ParamName::GDeviateAngle,
];

impl ParamName {
    pub const ALL: [ParamName; 22] = [
        Self::StrengthPp,
        Self::StrengthPc,
        Self::StrengthCp,
        Self::SigmaPp,
        Self::SigmaPc,
        Self::Lambda,
        Self::SafeDeviation,
        Self::Tau,
        Self::ViewRange,
        Self::DMinPc,
        Self::SafeAcceleration,
        Self::SafeConflict,
        Self::GCarSpeed,
        Self::GPedSpeed,
        Self::GCompetitorSpeed,
        Self::GNoai,
        Self::GStopped,
        Self::GFollowerAngle,
        Self::GMinDis,
        Self::GContinueAngle,
        Self::GDecelerateAngle,
        Self::GDeviateAngle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::StrengthPp => "V_PP",
            Self::StrengthPc => "V_PC",
            Self::StrengthCp => "V_CP",
            Self::SigmaPp => "sigma_PP",
            Self::SigmaPc => "sigma_PC",
            Self::Lambda => "lambda",
            Self::SafeDeviation => "S_D",
            Self::Tau => "tau",
            Self::ViewRange => "view_range",
            Self::DMinPc => "D_min_PC",
            Self::SafeAcceleration => "S_A",
            Self::SafeConflict => "S_C",
            Self::GCarSpeed => "G_car_speed",
            Self::GPedSpeed => "G_ped_speed",
            Self::GCompetitorSpeed => "G_competitor_speed",
            Self::GNoai => "G_noai",
            Self::GStopped => "G_stopped",
            Self::GFollowerAngle => "G_follower_angle",
            Self::GMinDis => "G_min_dis",
            Self::GContinueAngle => "G_continue_angle",
            Self::GDecelerateAngle => "G_decelerate_angle",
            Self::GDeviateAngle => "G_deviate_angle",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| CalibrationError::UnknownParameter(s.to_string()))
    }

    /// Search range used when no bounds file overrides it.
    pub fn default_bounds(self) -> (f64, f64) {
        match self {
            Self::StrengthPp => (0.0, 5.0),
            Self::StrengthPc => (0.0, 20.0),
            Self::StrengthCp => (0.0, 10.0),
            Self::SigmaPp => (0.05, 1.5),
            Self::SigmaPc => (0.05, 2.0),
            Self::Lambda => (0.0, 1.0),
            Self::SafeDeviation => (1.0, 12.0),
            Self::Tau => (0.2, 2.0),
            Self::ViewRange => (5.0, 25.0),
            Self::DMinPc => (2.0, 15.0),
            Self::SafeAcceleration => (1.0, 10.0),
            Self::SafeConflict => (1.0, 12.0),
            Self::GMinDis => (1.0, 12.0),
            _ => (0.0, 15.0),
        }
    }

    pub fn is_game(self) -> bool {
        GAME_WEIGHTS.contains(&self)
    }

    pub fn get(self, p: &ModelParams) -> f64 {
        let (s, g) = (&p.sfm, &p.game);
        match self {
            Self::StrengthPp => s.strength_pp,
            Self::StrengthPc => s.strength_pc,
            Self::StrengthCp => s.strength_cp,
            Self::SigmaPp => s.sigma_pp,
            Self::SigmaPc => s.sigma_pc,
            Self::Lambda => s.lambda,
            Self::SafeDeviation => s.s_d,
            Self::Tau => s.tau,
            Self::ViewRange => s.view_range,
            Self::DMinPc => s.d_min_pc,
            Self::SafeAcceleration => s.s_a,
            Self::SafeConflict => s.s_c,
            Self::GCarSpeed => g.car_speed,
            Self::GPedSpeed => g.ped_speed,
            Self::GCompetitorSpeed => g.competitor_speed,
            Self::GNoai => g.noai,
            Self::GStopped => g.stopped,
            Self::GFollowerAngle => g.follower_angle,
            Self::GMinDis => g.min_dis,
            Self::GContinueAngle => g.continue_angle,
            Self::GDecelerateAngle => g.decelerate_angle,
            Self::GDeviateAngle => g.deviate_angle,
        }
    }

    pub fn set(self, p: &mut ModelParams, v: f64) {
        let (s, g) = (&mut p.sfm, &mut p.game);
        let slot = match self {
            Self::StrengthPp => &mut s.strength_pp,
            Self::StrengthPc => &mut s.strength_pc,
            Self::StrengthCp => &mut s.strength_cp,
            Self::SigmaPp => &mut s.sigma_pp,
            Self::SigmaPc => &mut s.sigma_pc,
            Self::Lambda => &mut s.lambda,
            Self::SafeDeviation => &mut s.s_d,
            Self::Tau => &mut s.tau,
            Self::ViewRange => &mut s.view_range,
            Self::DMinPc => &mut s.d_min_pc,
            Self::SafeAcceleration => &mut s.s_a,
            Self::SafeConflict => &mut s.s_c,
            Self::GCarSpeed => &mut g.car_speed,
            Self::GPedSpeed => &mut g.ped_speed,
            Self::GCompetitorSpeed => &mut g.competitor_speed,
            Self::GNoai => &mut g.noai,
            Self::GStopped => &mut g.stopped,
            Self::GFollowerAngle => &mut g.follower_angle,
            Self::GMinDis => &mut g.min_dis,
            Self::GContinueAngle => &mut g.continue_angle,
            Self::GDecelerateAngle => &mut g.decelerate_angle,
            Self::GDeviateAngle => &mut g.deviate_angle,
        };
        *slot = v;
    }
}

impl fmt::Display for ParamName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The full calibratable parameter set of one model instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub sfm: SfmParams<f64>,
    pub game: GameParams<f64>,
}

impl ModelParams {
    pub fn for_dataset(tag: DatasetTag) -> Self {
        let base = SimConfig::<f64>::for_dataset(tag);
        Self { sfm: base.params, game: base.game }
    }
}

/// Entry of a parameter-bounds file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterBound {
    pub name: ParamName,
    pub default: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Dataset defaults with the built-in search ranges, for every parameter.
pub fn bounds_table(tag: DatasetTag) -> Vec<ParameterBound> {
    let defaults = ModelParams::for_dataset(tag);
    ParamName::ALL
        .iter()
        .map(|&name| {
            let (lower, upper) = name.default_bounds();
            ParameterBound { name, default: name.get(&defaults), lower, upper }
        })
        .collect()
}

fn lookup_bounds(table: &[ParameterBound], name: ParamName) -> (f64, f64) {
    table.iter().find(|b| b.name == name).map_or_else(|| name.default_bounds(), |b| (b.lower, b.upper))
}

/// Named values with their search box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub names: Vec<ParamName>,
    pub values: Vec<f64>,
    pub bounds: Vec<(f64, f64)>,
}

impl ParameterVector {
    pub fn from_params(names: &[ParamName], params: &ModelParams, table: &[ParameterBound]) -> Self {
        let bounds: Vec<(f64, f64)> = names.iter().map(|&n| lookup_bounds(table, n)).collect();
        let values = names.iter().zip(&bounds).map(|(n, (lo, hi))| n.get(params).clamp(*lo, *hi)).collect();
        Self { names: names.to_vec(), values, bounds }
    }

    pub fn with_values(&self, values: &[f64]) -> Self {
        Self { values: values.to_vec(), ..self.clone() }
    }

    pub fn apply(&self, params: &mut ModelParams) {
        for (n, v) in self.names.iter().zip(&self.values) {
            n.set(params, *v);
        }
    }

    pub fn applied(&self, base: &ModelParams) -> ModelParams {
        let mut p = *base;
        self.apply(&mut p);
        p
    }

    /// Which clustering parameters are present.
    pub fn cluster_mask(&self) -> [bool; 7] {
        CLUSTER_PARAMS.map(|p| self.names.contains(&p))
    }

    pub fn in_bounds(&self) -> bool {
        self.values.iter().zip(&self.bounds).all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    /// Per-gene mutation probability.
    pub mutation_rate: f64,
    /// Initial mutation standard deviation as a fraction of each range.
    pub mutation_scale: f64,
    /// Factor the mutation scale has shrunk by at the last generation.
    pub mutation_anneal: f64,
    pub elite: usize,
    pub tournament: usize,
    /// Stop after this many generations without improvement.
    pub stagnation: usize,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population: 50,
            generations: 150,
            crossover_rate: 0.9,
            mutation_rate: 0.2,
            mutation_scale: 0.1,
            mutation_anneal: 0.01,
            elite: 2,
            tournament: 3,
            stagnation: 30,
            seed: 0,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if self.population < 2 {
            return Err(CalibrationError::Config("population must be at least 2".into()));
        }
        if !unit(self.crossover_rate) || !unit(self.mutation_rate) {
            return Err(CalibrationError::Config("rates must lie in [0, 1]".into()));
        }
        if !(self.mutation_scale >= 0.0) || !(self.mutation_anneal > 0.0 && self.mutation_anneal <= 1.0) {
            return Err(CalibrationError::Config("mutation scale must be ≥ 0 and anneal in (0, 1]".into()));
        }
        if self.elite > self.population || self.tournament == 0 {
            return Err(CalibrationError::Config("elite ≤ population and tournament ≥ 1 required".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaResult {
    pub best: Vec<f64>,
    pub fitness: f64,
    /// Best-so-far fitness after each generation, starting with the initial population.
    pub trace: Vec<f64>,
    pub generations: usize,
    pub evaluations: usize,
    /// Evaluations that returned a non-finite value.
    pub invalid: usize,
}

/// Minimizes `objective` over the box `bounds`.
///
/// `initial` individuals (clamped) seed the population; the rest is uniform.
pub fn ga_optimize<F>(objective: F, bounds: &[(f64, f64)], initial: &[Vec<f64>], cfg: &GaConfig) -> Result<GaResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    cfg.validate()?;
    if bounds.iter().any(|(lo, hi)| !(lo <= hi) || !lo.is_finite() || !hi.is_finite()) {
        return Err(CalibrationError::Config("bounds must be finite with lower ≤ upper".into()));
    }
    let mut rng = seeds::stream(cfg.seed, "ga");
    let clamp = |x: &[f64]| -> Vec<f64> { x.iter().zip(bounds).map(|(v, (lo, hi))| v.clamp(*lo, *hi)).collect() };
    let mut pop: Vec<Vec<f64>> = initial.iter().take(cfg.population).map(|x| clamp(x)).collect();
    while pop.len() < cfg.population {
        pop.push(bounds.iter().map(|&(lo, hi)| if hi > lo { rng.random_range(lo..=hi) } else { lo }).collect());
    }

    let mut invalid = 0usize;
    let mut evaluate = |batch: &[Vec<f64>]| -> Vec<f64> {
        let raw: Vec<f64> = batch.par_iter().map(|x| objective(x)).collect();
        raw.into_iter()
            .map(|f| {
                if f.is_finite() {
                    f
                } else {
                    invalid += 1;
                    f64::INFINITY
                }
            })
            .collect()
    };

    let mut fit = evaluate(&pop);
    let mut evaluations = pop.len();
    let argmin = |f: &[f64]| (0..f.len()).fold(0, |b, i| if f[i] < f[b] { i } else { b });
    let b = argmin(&fit);
    let (mut best, mut best_fit) = (pop[b].clone(), fit[b]);
    let mut trace = vec![best_fit];
    let mut stagnant = 0;
    let mut generations = 0;

    for g in 0..cfg.generations {
        generations = g + 1;
        let frac = g as f64 / cfg.generations.max(1) as f64;
        let sigma = cfg.mutation_scale * cfg.mutation_anneal.powf(frac);
        let mut order: Vec<usize> = (0..pop.len()).collect();
        order.sort_by(|&a, &b| fit[a].total_cmp(&fit[b]).then(a.cmp(&b)));

        let mut next: Vec<Vec<f64>> = order[..cfg.elite].iter().map(|&i| pop[i].clone()).collect();
        let mut next_fit: Vec<f64> = order[..cfg.elite].iter().map(|&i| fit[i]).collect();
        let mut children = Vec::with_capacity(cfg.population - cfg.elite);
        while next.len() + children.len() < cfg.population {
            let mut pick = || {
                let mut w = rng.random_range(0..pop.len());
                for _ in 1..cfg.tournament {
                    let c = rng.random_range(0..pop.len());
                    if fit[c] < fit[w] || (fit[c] == fit[w] && c < w) {
                        w = c;
                    }
                }
                w
            };
            let (a, b) = (pick(), pick());
            let mut child = if rng.random::<f64>() < cfg.crossover_rate {
                pop[a].iter().zip(&pop[b]).map(|(x, y)| if rng.random::<bool>() { *x } else { *y }).collect()
            } else {
                pop[a].clone()
            };
            for (v, (lo, hi)) in child.iter_mut().zip(bounds) {
                if cfg.mutation_rate > 0.0 && sigma > 0.0 && rng.random::<f64>() < cfg.mutation_rate {
                    let sd = sigma * (hi - lo);
                    if sd > 0.0 {
                        let n = Normal::new(0.0, sd).expect("positive deviation");
                        *v = (*v + n.sample(&mut rng)).clamp(*lo, *hi);
                    }
                }
            }
            children.push(child);
        }
        next_fit.extend(evaluate(&children));
        evaluations += children.len();
        next.extend(children);
        pop = next;
        fit = next_fit;

        let b = argmin(&fit);
        if fit[b] < best_fit {
            best_fit = fit[b];
            best = pop[b].clone();
            stagnant = 0;
        } else {
            stagnant += 1;
        }
        trace.push(best_fit);
        if cfg.stagnation > 0 && stagnant >= cfg.stagnation {
            break;
        }
    }
    if invalid > 0 {
        warn!("{invalid} objective evaluations were non-finite and scored as worst");
    }
    Ok(GaResult { best, fitness: best_fit, trace, generations, evaluations, invalid })
}

/// Mean distance between two paths sampled on the same grid, over their common prefix.
pub fn mean_displacement(real: &[Vec2<f64>], sim: &[Vec2<f64>]) -> Option<f64> {
    let n = real.len().min(sim.len());
    (n > 0).then(|| real.iter().zip(sim).take(n).map(|(a, b)| a.distance(*b)).sum::<f64>() / n as f64)
}

/// Mean over simulated (non-replayed) agents of their mean displacement; `only` restricts the agents.
pub fn scenario_position_error(real: &Scenario<f64>, sim: &SimOutput<f64>, only: Option<&BTreeSet<u32>>) -> Result<f64> {
    let mut per_agent = Vec::new();
    for t in sim.tracks.iter().filter(|t| !t.ghost && only.is_none_or(|s| s.contains(&t.id))) {
        let r = real
            .track(t.id)
            .ok_or_else(|| CalibrationError::MissingAgent { scenario: real.id.clone(), agent: t.id })?;
        per_agent.push(mean_displacement(&r.positions, &t.positions).ok_or(CalibrationError::NoOverlap(t.id))?);
    }
    mean_of(&per_agent).ok_or(CalibrationError::Empty)
}

fn mean_of(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Mean over scenarios of the per-scenario position error (lower is better).
pub fn fitness_position(runs: &[(&Scenario<f64>, &SimOutput<f64>)]) -> Result<f64> {
    let per = runs.iter().map(|(r, s)| scenario_position_error(r, s, None)).collect::<Result<Vec<_>>>()?;
    mean_of(&per).ok_or(CalibrationError::Empty)
}

/// Simulates only `target` while every other agent replays its recorded track.
pub fn fitness_individual(scenario: &Scenario<f64>, target: u32, config: &SimConfig<f64>) -> Result<f64> {
    let real = scenario
        .track(target)
        .ok_or_else(|| CalibrationError::MissingAgent { scenario: scenario.id.clone(), agent: target })?;
    let mut cfg = config.clone();
    cfg.ghosts = scenario.tracks.iter().map(|t| t.id).filter(|&id| id != target).collect();
    cfg.ghosts.remove(&target);
    cfg.options.ghost_cars = cfg.options.ghost_cars && real.kind != AgentKind::Car;
    let out = run(scenario, &cfg)?;
    let sim = out.track(target).ok_or(CalibrationError::NoOverlap(target))?;
    mean_displacement(&real.positions, &sim.positions).ok_or(CalibrationError::NoOverlap(target))
}

/// A recorded game decision for one agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionAnnotation {
    pub scenario: String,
    pub agent: u32,
    pub decision: StrategyKind,
}

/// First strategy each agent was assigned by a solved game.
pub fn simulated_decisions(events: &[Event]) -> BTreeMap<u32, StrategyKind> {
    let mut out = BTreeMap::new();
    for e in events.iter().filter(|e| e.kind == EventKind::GameSolved) {
        let p = &e.payload;
        if let (Some(l), Ok(s)) = (p["leader"].as_u64(), serde_json::from_value(p["leader_strategy"].clone())) {
            out.entry(l as u32).or_insert(s);
        }
        for f in p["followers"].as_array().into_iter().flatten() {
            if let (Some(id), Ok(s)) = (f[0].as_u64(), serde_json::from_value(f[1].clone())) {
                out.entry(id as u32).or_insert(s);
            }
        }
    }
    out
}

/// Averages ±1 match indicators over agents, then over scenarios with at least one agent.
pub fn decision_score(per_scenario: &[Vec<bool>]) -> Option<f64> {
    let means: Vec<f64> = per_scenario
        .iter()
        .filter(|m| !m.is_empty())
        .map(|m| m.iter().map(|&ok| if ok { 1.0 } else { -1.0 }).sum::<f64>() / m.len() as f64)
        .collect();
    mean_of(&means)
}

/// Decision agreement in [−1, 1] (higher is better); agents without a simulated decision count as mismatches.
pub fn fitness_decision<C>(scenarios: &[Scenario<f64>], annotations: &[DecisionAnnotation], config_for: C) -> Result<f64>
where
    C: Fn(&Scenario<f64>) -> SimConfig<f64>,
{
    let mut per = Vec::new();
    for s in scenarios {
        let ann: Vec<&DecisionAnnotation> = annotations.iter().filter(|a| a.scenario == s.id).collect();
        let ann: Vec<&DecisionAnnotation> = ann
            .into_iter()
            .filter(|a| {
                let known = s.track(a.agent).is_some();
                if !known {
                    warn!("annotation for unknown agent {} in {} skipped", a.agent, s.id);
                }
                known
            })
            .collect();
        if ann.is_empty() {
            continue;
        }
        let out = run(s, &config_for(s))?;
        let sim = simulated_decisions(&out.events);
        per.push(ann.iter().map(|a| sim.get(&a.agent) == Some(&a.decision)).collect());
    }
    decision_score(&per).ok_or(CalibrationError::Empty)
}

/// Stages of the calibration workflow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    /// Universal parameters.
    S1,
    /// Individual parameters per pedestrian.
    S2,
    /// PCA + k-means grouping.
    S3,
    /// Forward selection of grouping parameters.
    S4,
    /// Group calibration on the PCA groups.
    S5,
    /// k-means grouping on the selected parameters.
    S6,
    /// Group calibration of the selected parameters only.
    S7,
    /// Group calibration of all grouping parameters on the selection-based groups.
    S8,
}

impl Stage {
    pub const ALL: [Stage; 8] = [Self::S1, Self::S2, Self::S3, Self::S4, Self::S5, Self::S6, Self::S7, Self::S8];

    pub fn requires(self) -> &'static [Stage] {
        match self {
            Self::S1 => &[],
            Self::S2 => &[Self::S1],
            Self::S3 | Self::S4 => &[Self::S2],
            Self::S5 => &[Self::S3],
            Self::S6 => &[Self::S4],
            Self::S7 | Self::S8 => &[Self::S6],
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|st| st.to_string().eq_ignore_ascii_case(s.trim()))
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Checks that each requested stage has its prerequisites among `done` or earlier requested stages.
pub fn check_stages(requested: &BTreeSet<Stage>, done: &BTreeSet<Stage>) -> Result<()> {
    for &st in requested {
        for &need in st.requires() {
            if !done.contains(&need) && !(requested.contains(&need) && need < st) {
                return Err(CalibrationError::StageDependency { stage: st, missing: need });
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkflowConfig {
    /// GA settings for universal and group stages.
    pub ga: GaConfig,
    /// GA settings for the per-pedestrian stage.
    pub individual_ga: GaConfig,
    pub universal_params: Vec<ParamName>,
    pub game_params: Vec<ParamName>,
    /// Run the second universal sub-step on the payoff weights.
    pub calibrate_game: bool,
    pub individual_params: Vec<ParamName>,
    pub bounds: Vec<ParameterBound>,
    pub clustering: ClusteringConfig,
}

impl Default for WorkflowConfig {
    fn default() -> Self {
        Self {
            ga: GaConfig::default(),
            individual_ga: GaConfig::default(),
            universal_params: CLUSTER_PARAMS.to_vec(),
            game_params: GAME_WEIGHTS.to_vec(),
            calibrate_game: true,
            individual_params: CLUSTER_PARAMS.to_vec(),
            bounds: Vec::new(),
            clustering: ClusteringConfig::default(),
        }
    }
}

/// A pedestrian of one scenario.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AgentRef {
    pub scenario: String,
    pub agent: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniversalFit {
    pub params: ModelParams,
    pub sfm: ParameterVector,
    pub sfm_fitness: f64,
    pub sfm_trace: Vec<f64>,
    /// `"decision"` or `"position"`; absent when the payoff sub-step was skipped.
    pub game_objective: Option<String>,
    pub game_fitness: Option<f64>,
    pub game_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndividualFit {
    pub agent: AgentRef,
    pub values: ParameterVector,
    pub fitness: f64,
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupFit {
    pub group: usize,
    pub members: Vec<AgentRef>,
    pub values: ParameterVector,
    pub params: SfmParams<f64>,
    pub fitness: Option<f64>,
    pub trace: Vec<f64>,
}

/// A calibrated model: universal parameters plus per-group pedestrian overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelVariant {
    pub name: String,
    pub universal: ModelParams,
    pub groups: Vec<GroupFit>,
    pub flags: Vec<String>,
}

impl ModelVariant {
    pub fn universal(name: &str, params: ModelParams) -> Self {
        Self { name: name.into(), universal: params, groups: Vec::new(), flags: Vec::new() }
    }

    /// Simulation settings for `scenario` with this variant's parameters applied.
    pub fn config_for(&self, base: &SimConfig<f64>, scenario: &Scenario<f64>) -> SimConfig<f64> {
        let mut cfg = base.clone();
        cfg.params = self.universal.sfm;
        cfg.game = self.universal.game;
        cfg.agent_params.clear();
        for g in &self.groups {
            for m in g.members.iter().filter(|m| m.scenario == scenario.id) {
                cfg.agent_params.insert(m.agent, g.params);
            }
        }
        cfg
    }
}

pub const REPORT_SCHEMA: &str = "sharedspace.calibration/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub schema: String,
    pub dataset: DatasetTag,
    pub seed: u64,
    pub completed: BTreeSet<Stage>,
    pub universal: Option<UniversalFit>,
    pub individual: Vec<IndividualFit>,
    pub pca: Option<ClusteringReport>,
    pub fs: Option<ClusteringReport>,
    pub variants: BTreeMap<String, ModelVariant>,
    pub flags: Vec<String>,
}

impl CalibrationReport {
    pub fn new(dataset: DatasetTag, seed: u64) -> Self {
        Self {
            schema: REPORT_SCHEMA.into(),
            dataset,
            seed,
            completed: BTreeSet::new(),
            universal: None,
            individual: Vec::new(),
            pca: None,
            fs: None,
            variants: BTreeMap::new(),
            flags: Vec::new(),
        }
    }

    /// Rows of the clustering matrix, one per individually calibrated pedestrian.
    pub fn feature_matrix(&self) -> (Vec<String>, Vec<Vec<f64>>) {
        let cols = self.individual.first().map_or_else(Vec::new, |f| f.values.names.iter().map(|n| n.to_string()).collect());
        (cols, self.individual.iter().map(|f| f.values.values.clone()).collect())
    }
}

/// Recorded scenarios plus optional decision annotations and base simulation settings.
pub struct CalibrationInput<'a> {
    pub scenarios: &'a [Scenario<f64>],
    pub decisions: &'a [DecisionAnnotation],
    pub base: &'a SimConfig<f64>,
}

impl CalibrationInput<'_> {
    fn simulate(&self, s: &Scenario<f64>, variant: &ModelVariant) -> std::result::Result<SimOutput<f64>, SimError> {
        run(s, &variant.config_for(self.base, s))
    }

    fn pedestrians(&self) -> Vec<AgentRef> {
        self.scenarios
            .iter()
            .flat_map(|s| {
                s.pedestrians()
                    .filter(|t| !self.base.ghosts.contains(&t.id))
                    .map(|t| AgentRef { scenario: s.id.clone(), agent: t.id })
                    .collect::<Vec<_>>()
            })
            .collect()
    }
}

/// Mean position error of `variant` over the scenarios; `members` restricts the scored agents.
fn position_objective(input: &CalibrationInput<'_>, variant: &ModelVariant, members: Option<&[AgentRef]>) -> f64 {
    let mut per = Vec::new();
    for s in input.scenarios {
        let only: Option<BTreeSet<u32>> =
            members.map(|m| m.iter().filter(|r| r.scenario == s.id).map(|r| r.agent).collect());
        if only.as_ref().is_some_and(|o| o.is_empty()) {
            continue;
        }
        let score = input
            .simulate(s, variant)
            .map_err(CalibrationError::from)
            .and_then(|out| scenario_position_error(s, &out, only.as_ref()));
        match score {
            Ok(v) => per.push(v),
            Err(_) => return f64::INFINITY,
        }
    }
    mean_of(&per).unwrap_or(f64::INFINITY)
}

fn run_universal(input: &CalibrationInput<'_>, cfg: &WorkflowConfig, seed: u64) -> Result<UniversalFit> {
    let start = ModelParams { sfm: input.base.params, game: input.base.game };
    let space = ParameterVector::from_params(&cfg.universal_params, &start, &cfg.bounds);
    let objective = |x: &[f64]| position_objective(input, &ModelVariant::universal("", space.with_values(x).applied(&start)), None);
    let res = ga_optimize(objective, &space.bounds, &[space.values.clone()], &cfg.ga.with_seed(seeds::substream(seed, "S1/sfm")))?;
    let sfm = space.with_values(&res.best);
    let mut params = sfm.applied(&start);
    let mut fit = UniversalFit {
        params,
        sfm,
        sfm_fitness: res.fitness,
        sfm_trace: res.trace,
        game_objective: None,
        game_fitness: None,
        game_trace: Vec::new(),
    };
    if cfg.calibrate_game && !cfg.game_params.is_empty() {
        let gspace = ParameterVector::from_params(&cfg.game_params, &params, &cfg.bounds);
        let gseed = cfg.ga.with_seed(seeds::substream(seed, "S1/game"));
        let by_decision = !input.decisions.is_empty();
        let res = if by_decision {
            let objective = |x: &[f64]| {
                let v = ModelVariant::universal("", gspace.with_values(x).applied(&params));
                fitness_decision(input.scenarios, input.decisions, |s| v.config_for(input.base, s)).map_or(f64::INFINITY, |d| -d)
            };
            ga_optimize(objective, &gspace.bounds, &[gspace.values.clone()], &gseed)?
        } else {
            let objective =
                |x: &[f64]| position_objective(input, &ModelVariant::universal("", gspace.with_values(x).applied(&params)), None);
            ga_optimize(objective, &gspace.bounds, &[gspace.values.clone()], &gseed)?
        };
        params = gspace.with_values(&res.best).applied(&params);
        fit.params = params;
        fit.game_objective = Some(if by_decision { "decision" } else { "position" }.into());
        fit.game_fitness = Some(if by_decision { -res.fitness } else { res.fitness });
        fit.game_trace = if by_decision { res.trace.iter().map(|f| -f).collect() } else { res.trace };
    }
    Ok(fit)
}

/// Fitness change (m) below which a parameter counts as having no effect.
pub const INSENSITIVE_TOLERANCE: f64 = 1e-4;

/// Resets, one coordinate at a time, values whose reset to `reference` costs less
/// than [`INSENSITIVE_TOLERANCE`]; parameters a pedestrian never exercises would
/// otherwise keep arbitrary GA values.
pub fn revert_insensitive<F: Fn(&[f64]) -> f64>(objective: &F, mut best: Vec<f64>, mut fitness: f64, reference: &[f64]) -> (Vec<f64>, f64) {
    for i in 0..best.len() {
        if best[i] == reference[i] {
            continue;
        }
        let mut trial = best.clone();
        trial[i] = reference[i];
        let f = objective(&trial);
        if f.is_finite() && f <= fitness + INSENSITIVE_TOLERANCE {
            best = trial;
            fitness = f;
        }
    }
    (best, fitness)
}

fn run_individual(input: &CalibrationInput<'_>, cfg: &WorkflowConfig, universal: &ModelParams, seed: u64) -> Result<Vec<IndividualFit>> {
    let space = ParameterVector::from_params(&cfg.individual_params, universal, &cfg.bounds);
    input
        .pedestrians()
        .into_par_iter()
        .map(|agent| {
            let scenario = input.scenarios.iter().find(|s| s.id == agent.scenario).expect("listed scenario");
            let base = ModelVariant::universal("", *universal).config_for(input.base, scenario);
            let objective = |x: &[f64]| {
                let mut c = base.clone();
                c.agent_params.insert(agent.agent, space.with_values(x).applied(universal).sfm);
                fitness_individual(scenario, agent.agent, &c).unwrap_or(f64::INFINITY)
            };
            let name = format!("S2/{}/{}", agent.scenario, agent.agent);
            let ga = cfg.individual_ga.with_seed(seeds::substream(seed, &name));
            let res = ga_optimize(objective, &space.bounds, &[space.values.clone()], &ga)?;
            let (best, fitness) = revert_insensitive(&objective, res.best, res.fitness, &space.values);
            Ok(IndividualFit { agent, values: space.with_values(&best), fitness, trace: res.trace })
        })
        .collect()
}

fn run_groups(
    input: &CalibrationInput<'_>,
    cfg: &WorkflowConfig,
    report: &CalibrationReport,
    clustering: &ClusteringReport,
    names: &[ParamName],
    name: &str,
    seed: u64,
) -> Result<ModelVariant> {
    let universal = report.universal.as_ref().map(|u| u.params).ok_or(CalibrationError::StageDependency {
        stage: Stage::S5,
        missing: Stage::S1,
    })?;
    let mut variant = ModelVariant::universal(name, universal);
    let space = ParameterVector::from_params(names, &universal, &cfg.bounds);
    let single = clustering.k < 2;
    if single {
        variant.flags.push("single_group".into());
    }
    for g in 0..clustering.k.max(1) {
        let members: Vec<AgentRef> = clustering
            .assignments
            .iter()
            .zip(&report.individual)
            .filter(|(a, _)| **a == g)
            .map(|(_, f)| f.agent.clone())
            .collect();
        if single || names.is_empty() {
            variant.groups.push(GroupFit {
                group: g,
                members,
                values: space.clone(),
                params: universal.sfm,
                fitness: None,
                trace: Vec::new(),
            });
            continue;
        }
        let objective = |x: &[f64]| {
            let mut v = ModelVariant::universal("", universal);
            v.groups.push(GroupFit {
                group: g,
                members: members.clone(),
                values: space.with_values(x),
                params: space.with_values(x).applied(&universal).sfm,
                fitness: None,
                trace: Vec::new(),
            });
            position_objective(input, &v, Some(&members))
        };
        let ga = cfg.ga.with_seed(seeds::substream(seed, &format!("{name}/group{g}")));
        let res = ga_optimize(objective, &space.bounds, &[space.values.clone()], &ga)?;
        let values = space.with_values(&res.best);
        variant.groups.push(GroupFit {
            group: g,
            members,
            params: values.applied(&universal).sfm,
            values,
            fitness: Some(res.fitness),
            trace: res.trace,
        });
    }
    Ok(variant)
}

/// Runs the requested stages, continuing from `prior` when given.
pub fn run_calibration_workflow(
    input: &CalibrationInput<'_>,
    cfg: &WorkflowConfig,
    stages: &BTreeSet<Stage>,
    prior: Option<CalibrationReport>,
    dataset: DatasetTag,
    seed: u64,
) -> Result<CalibrationReport> {
    let mut report = prior.unwrap_or_else(|| CalibrationReport::new(dataset, seed));
    let mut stages = stages.clone();
    // selection and grouping on the selected parameters are one computation
    if stages.contains(&Stage::S4) || stages.contains(&Stage::S6) {
        stages.insert(Stage::S4);
        stages.insert(Stage::S6);
    }
    check_stages(&stages, &report.completed)?;

    for &st in &stages {
        match st {
            Stage::S1 => {
                let u = run_universal(input, cfg, seed)?;
                report.variants.insert("GSFM-U".into(), ModelVariant::universal("GSFM-U", u.params));
                report.universal = Some(u);
            }
            Stage::S2 => {
                let u = report.universal.as_ref().expect("checked dependency").params;
                report.individual = run_individual(input, cfg, &u, seed)?;
            }
            Stage::S3 => {
                let (cols, rows) = report.feature_matrix();
                let ids: Vec<u32> = (0..rows.len() as u32).collect();
                report.pca = Some(cluster_pca(&ids, &cols, &rows, &cfg.clustering, seeds::substream(seed, "S3"))?);
            }
            Stage::S4 => {
                let (cols, rows) = report.feature_matrix();
                let ids: Vec<u32> = (0..rows.len() as u32).collect();
                report.fs = Some(cluster_fs(&ids, &cols, &rows, &cfg.clustering, seeds::substream(seed, "S4"))?);
            }
            Stage::S6 => {}
            Stage::S5 => {
                let c = report.pca.clone().expect("checked dependency");
                let v = run_groups(input, cfg, &report, &c, &cfg.individual_params, "GSFM-M1", seed)?;
                report.variants.insert(v.name.clone(), v);
            }
            Stage::S7 => {
                let c = report.fs.clone().expect("checked dependency");
                let names = c.selected_columns.iter().map(|s| ParamName::parse(s)).collect::<Result<Vec<_>>>()?;
                let v = run_groups(input, cfg, &report, &c, &names, "GSFM-M3", seed)?;
                report.variants.insert(v.name.clone(), v);
            }
            Stage::S8 => {
                let c = report.fs.clone().expect("checked dependency");
                let v = run_groups(input, cfg, &report, &c, &cfg.individual_params, "GSFM-M2", seed)?;
                report.variants.insert(v.name.clone(), v);
            }
        }
        report.completed.insert(st);
    }
    for c in [&report.pca, &report.fs].into_iter().flatten() {
        if c.k < 2 {
            let flag = format!("{:?}: single group", c.method);
            if !report.flags.contains(&flag) {
                report.flags.push(flag);
            }
        }
    }
    Ok(report)
}

/// Simulates every scenario with `variant` (for evaluation and plotting).
pub fn simulate_variant(
    scenarios: &[Scenario<f64>],
    base: &SimConfig<f64>,
    variant: &ModelVariant,
) -> std::result::Result<Vec<SimOutput<f64>>, SimError> {
    scenarios.iter().map(|s| run(s, &variant.config_for(base, s))).collect()
}
