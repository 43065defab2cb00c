//! Trajectory metrics: length-adjusted ADE/FDE, speed deviation and collision index.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{OrientedRect, Vec2};
use crate::scalar::{lit, to_f64, Scalar};
use crate::scenario::{headings_of, AgentGeometry, AgentKind, AgentTrack, Scenario};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("trajectories have no overlapping samples")]
    NoOverlap,
    #[error("speed deviation needs at least two samples")]
    TooShort,
    #[error("no scenarios to aggregate")]
    Empty,
    #[error("simulated scenario lacks agent {0}")]
    MissingAgent(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct MetricsConfig<T> {
    /// Reference trajectory length in samples.
    pub k0: usize,
    pub geometry: AgentGeometry<T>,
}

impl<T: Scalar> Default for MetricsConfig<T> {
    fn default() -> Self {
        Self { k0: 20, geometry: AgentGeometry::default() }
    }
}

fn adjust<T: Scalar>(value: T, k0: usize, k: usize) -> T {
    value * T::from_usize(k0).unwrap_or_else(T::nan) / T::from_usize(k).unwrap_or_else(T::nan)
}

fn overlap<T>(real: &[Vec2<T>], sim: &[Vec2<T>]) -> Result<usize, MetricsError> {
    match real.len().min(sim.len()) {
        0 => Err(MetricsError::NoOverlap),
        k => Ok(k),
    }
}

/// `(k₀/k)·mean_t |real_t − sim_t|` over the `k` aligned samples.
pub fn aade<T: Scalar>(real: &[Vec2<T>], sim: &[Vec2<T>], k0: usize) -> Result<T, MetricsError> {
    let k = overlap(real, sim)?;
    let sum: T = real.iter().zip(sim).take(k).map(|(r, s)| r.distance(*s)).sum();
    Ok(adjust(sum / T::from_usize(k).unwrap_or_else(T::nan), k0, k))
}

/// `(k₀/k)·|real_final − sim_final|` at the last aligned sample.
pub fn afde<T: Scalar>(real: &[Vec2<T>], sim: &[Vec2<T>], k0: usize) -> Result<T, MetricsError> {
    let k = overlap(real, sim)?;
    Ok(adjust(real[k - 1].distance(sim[k - 1]), k0, k))
}

/// `(k₀/k)·mean |v_real − v_sim|` over `k` aligned speed samples.
pub fn speed_deviation_of_speeds<T: Scalar>(real: &[T], sim: &[T], k0: usize) -> Result<T, MetricsError> {
    let k = real.len().min(sim.len());
    if k == 0 {
        return Err(MetricsError::NoOverlap);
    }
    let sum: T = real.iter().zip(sim).take(k).map(|(a, b)| (*a - *b).abs()).sum();
    Ok(adjust(sum / T::from_usize(k).unwrap_or_else(T::nan), k0, k))
}

/// Speed deviation from positions; speeds by forward difference on the `dt` grid.
pub fn speed_deviation<T: Scalar>(real: &[Vec2<T>], sim: &[Vec2<T>], dt: T, k0: usize) -> Result<T, MetricsError> {
    let k = overlap(real, sim)?;
    if k < 2 {
        return Err(MetricsError::TooShort);
    }
    let speeds = |p: &[Vec2<T>]| -> Vec<T> { p[..k].windows(2).map(|w| w[0].distance(w[1]) / dt).collect() };
    speed_deviation_of_speeds(&speeds(real), &speeds(sim), k0)
}

/// Raw and `k₀/k`-adjusted collision index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CollisionIndex<T> {
    pub raw: T,
    pub adjusted: T,
}

/// Fraction of the pedestrian's samples at which its disc overlaps any car rectangle.
/// Car samples are matched by timestamp; cars absent at a time do not count.
pub fn collision_index<T: Scalar>(
    ped: &AgentTrack<T>,
    cars: &[&AgentTrack<T>],
    geometry: &AgentGeometry<T>,
    k0: usize,
) -> Result<CollisionIndex<T>, MetricsError> {
    let k = ped.positions.len();
    if k == 0 {
        return Err(MetricsError::NoOverlap);
    }
    let headings: Vec<Vec<Vec2<T>>> = cars.iter().map(|c| headings_of(&c.positions)).collect();
    let mut hits = 0usize;
    for (step, &p) in ped.positions.iter().enumerate() {
        let t = ped.time_at(step);
        let hit = cars.iter().zip(&headings).any(|(car, hs)| {
            let s = ((t - car.t0) / car.dt).round();
            let Some(idx) = s.to_i64() else { return false };
            if idx < 0 || idx as usize >= car.positions.len() || ((t - car.t0) / car.dt - s).abs() > lit(1e-6) {
                return false;
            }
            let rect = OrientedRect {
                center: car.positions[idx as usize],
                heading: hs[idx as usize],
                length: geometry.car_length,
                width: geometry.car_width,
            };
            rect.overlaps_disc(p, ped.radius)
        });
        hits += usize::from(hit);
    }
    let raw = T::from_usize(hits).unwrap_or_else(T::nan) / T::from_usize(k).unwrap_or_else(T::nan);
    Ok(CollisionIndex { raw, adjusted: adjust(raw, k0, k) })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentMetrics<T> {
    pub id: u32,
    pub kind: AgentKind,
    pub samples: usize,
    pub aade: T,
    pub afde: T,
    pub sd: T,
    /// Pedestrians only.
    pub ci: Option<CollisionIndex<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioMetrics<T> {
    pub scenario: String,
    pub agents: Vec<AgentMetrics<T>>,
}

/// Per-agent metrics of one scenario. `skip` lists agents that were replayed rather
/// than simulated; they are not scored but still occupy space for the collision index.
pub fn evaluate_scenario<T: Scalar>(
    real: &Scenario<T>,
    sim: &Scenario<T>,
    skip: &BTreeSet<u32>,
    cfg: &MetricsConfig<T>,
) -> Result<ScenarioMetrics<T>, MetricsError> {
    let sim_cars: Vec<&AgentTrack<T>> = sim.cars().collect();
    let mut agents = Vec::new();
    for r in &real.tracks {
        if skip.contains(&r.id) {
            continue;
        }
        let s = sim.track(r.id).ok_or(MetricsError::MissingAgent(r.id))?;
        let ci = match r.kind {
            AgentKind::Pedestrian => Some(collision_index(s, &sim_cars, &cfg.geometry, cfg.k0)?),
            AgentKind::Car => None,
        };
        agents.push(AgentMetrics {
            id: r.id,
            kind: r.kind,
            samples: r.positions.len().min(s.positions.len()),
            aade: aade(&r.positions, &s.positions, cfg.k0)?,
            afde: afde(&r.positions, &s.positions, cfg.k0)?,
            sd: speed_deviation(&r.positions, &s.positions, r.dt, cfg.k0)?,
            ci,
        });
    }
    Ok(ScenarioMetrics { scenario: real.id.clone(), agents })
}

/// Scores of one agent kind, averaged over agents within a scenario and then
/// over scenarios (unweighted).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KindSummary<T> {
    pub aade: T,
    pub afde: T,
    pub sd: T,
    pub ci: Option<T>,
    pub ci_adjusted: Option<T>,
    pub agents: usize,
    pub scenarios: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport<T> {
    pub pedestrians: Option<KindSummary<T>>,
    pub cars: Option<KindSummary<T>>,
    pub per_scenario: Vec<ScenarioMetrics<T>>,
}

fn summarize<T: Scalar>(scenarios: &[ScenarioMetrics<T>], kind: AgentKind) -> Option<KindSummary<T>> {
    let mut acc = [T::zero(); 5];
    let (mut n_scen, mut n_agents) = (0usize, 0usize);
    for s in scenarios {
        let rows: Vec<&AgentMetrics<T>> = s.agents.iter().filter(|a| a.kind == kind).collect();
        if rows.is_empty() {
            continue;
        }
        let n = T::from_usize(rows.len()).unwrap_or_else(T::nan);
        let mean = |f: &dyn Fn(&AgentMetrics<T>) -> T| rows.iter().map(|a| f(a)).sum::<T>() / n;
        acc[0] += mean(&|a| a.aade);
        acc[1] += mean(&|a| a.afde);
        acc[2] += mean(&|a| a.sd);
        acc[3] += mean(&|a| a.ci.map_or(T::zero(), |c| c.raw));
        acc[4] += mean(&|a| a.ci.map_or(T::zero(), |c| c.adjusted));
        n_scen += 1;
        n_agents += rows.len();
    }
    if n_scen == 0 {
        return None;
    }
    let m = T::from_usize(n_scen).unwrap_or_else(T::nan);
    let ped = kind == AgentKind::Pedestrian;
    Some(KindSummary {
        aade: acc[0] / m,
        afde: acc[1] / m,
        sd: acc[2] / m,
        ci: ped.then(|| acc[3] / m),
        ci_adjusted: ped.then(|| acc[4] / m),
        agents: n_agents,
        scenarios: n_scen,
    })
}

pub fn aggregate<T: Scalar>(scenarios: Vec<ScenarioMetrics<T>>) -> Result<MetricsReport<T>, MetricsError> {
    if scenarios.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(MetricsReport {
        pedestrians: summarize(&scenarios, AgentKind::Pedestrian),
        cars: summarize(&scenarios, AgentKind::Car),
        per_scenario: scenarios,
    })
}

/// One row of the metrics table.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow<T> {
    pub dataset: String,
    pub variant: String,
    pub kind: AgentKind,
    pub summary: Option<KindSummary<T>>,
}

/// Pedestrian and car rows of one report, in that order.
pub fn report_rows<T: Scalar>(dataset: &str, variant: &str, report: &MetricsReport<T>) -> Vec<MetricsRow<T>> {
    [(AgentKind::Pedestrian, report.pedestrians), (AgentKind::Car, report.cars)]
        .into_iter()
        .map(|(kind, summary)| MetricsRow { dataset: dataset.into(), variant: variant.into(), kind, summary })
        .collect()
}

fn cell<T: Scalar>(v: Option<T>) -> String {
    v.map(|x| format!("{:.6}", to_f64(x))).unwrap_or_default()
}

/// CSV with one row per (dataset, variant, kind); empty cells where a score does not apply.
pub fn write_metrics_csv<T: Scalar, W: Write>(rows: &[MetricsRow<T>], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| std::io::Error::other(e.to_string());
    w.write_record(["dataset", "variant", "kind", "aADE", "aFDE", "SD", "CI", "CI_adjusted", "agents", "scenarios"])
        .map_err(io)?;
    for r in rows {
        let s = r.summary;
        w.write_record([
            r.dataset.clone(),
            r.variant.clone(),
            r.kind.tag().to_string(),
            cell(s.map(|s| s.aade)),
            cell(s.map(|s| s.afde)),
            cell(s.map(|s| s.sd)),
            cell(s.and_then(|s| s.ci)),
            cell(s.and_then(|s| s.ci_adjusted)),
            s.map(|s| s.agents.to_string()).unwrap_or_default(),
            s.map(|s| s.scenarios.to_string()).unwrap_or_default(),
        ])
        .map_err(io)?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    type V = Vec2<f64>;

    fn line(n: usize, y: f64) -> Vec<V> {
        (0..n).map(|k| V::new(k as f64, y)).collect()
    }

    #[test]
    fn aade_examples() {
        assert_eq!(aade(&line(20, 0.0), &line(20, 0.0), 20).unwrap(), 0.0);
        assert_relative_eq!(aade(&line(20, 0.0), &line(20, 1.0), 20).unwrap(), 1.0);
        assert_relative_eq!(aade(&line(40, 0.0), &line(40, 1.0), 20).unwrap(), 0.5);
        assert_eq!(aade::<f64>(&[], &line(3, 0.0), 20), Err(MetricsError::NoOverlap));
    }

    #[test]
    fn afde_examples() {
        assert_eq!(afde(&line(20, 0.0), &line(20, 0.0), 20).unwrap(), 0.0);
        assert_relative_eq!(afde(&line(20, 0.0), &line(20, 2.0), 20).unwrap(), 2.0);
        assert_relative_eq!(afde(&line(80, 0.0), &line(80, 2.0), 20).unwrap(), 0.5);
    }

    #[test]
    fn speed_deviation_examples() {
        assert_eq!(speed_deviation_of_speeds(&[1.0, 1.2], &[1.0, 1.2], 2).unwrap(), 0.0);
        assert_relative_eq!(speed_deviation_of_speeds(&[1.0; 20], &[0.8; 20], 20).unwrap(), 0.2, epsilon = 1e-12);
        assert_relative_eq!(speed_deviation_of_speeds(&[1.0, 1.0], &[0.5, 1.5], 2).unwrap(), 0.5);
        // positions: real 1 m/s, simulated 0.5 m/s on a 1 s grid
        let slow: Vec<V> = (0..21).map(|k| V::new(0.5 * k as f64, 0.0)).collect();
        assert_relative_eq!(speed_deviation(&line(21, 0.0), &slow, 1.0, 20).unwrap(), 0.5);
    }

    fn track(id: u32, kind: AgentKind, pts: Vec<V>) -> AgentTrack<f64> {
        let radius = if kind == AgentKind::Car { 1.0 } else { 0.3 };
        AgentTrack::new(id, kind, 0.0, 0.5, pts, radius)
    }

    #[test]
    fn collision_index_examples() {
        let g = AgentGeometry::default();
        let car = track(1, AgentKind::Car, line(10, 0.0));
        let far = track(2, AgentKind::Pedestrian, line(10, 10.0));
        assert_eq!(collision_index(&far, &[&car], &g, 10).unwrap().raw, 0.0);
        let inside = track(3, AgentKind::Pedestrian, line(10, 0.0));
        let ci = collision_index(&inside, &[&car], &g, 10).unwrap();
        assert_eq!((ci.raw, ci.adjusted), (1.0, 1.0));
        let mut pts = line(10, 10.0);
        pts[3] = V::new(3.0, 0.5);
        pts[7] = V::new(7.5, -1.0);
        let two = track(4, AgentKind::Pedestrian, pts);
        assert_relative_eq!(collision_index(&two, &[&car], &g, 10).unwrap().raw, 0.2);
        assert_relative_eq!(collision_index(&two, &[&car], &g, 20).unwrap().adjusted, 0.4);
    }

    fn scenario_metrics(name: &str, ped_aade: f64) -> ScenarioMetrics<f64> {
        ScenarioMetrics {
            scenario: name.into(),
            agents: vec![AgentMetrics {
                id: 1,
                kind: AgentKind::Pedestrian,
                samples: 20,
                aade: ped_aade,
                afde: 0.0,
                sd: 0.0,
                ci: Some(CollisionIndex { raw: 0.0, adjusted: 0.0 }),
            }],
        }
    }

    #[test]
    fn aggregation_is_unweighted_over_scenarios() {
        let single = aggregate(vec![scenario_metrics("a", 0.4)]).unwrap();
        assert_eq!(single.pedestrians.unwrap().aade, 0.4);
        let two = aggregate(vec![scenario_metrics("a", 0.4), scenario_metrics("b", 0.8)]).unwrap();
        assert_relative_eq!(two.pedestrians.unwrap().aade, 0.6);
        assert!(two.cars.is_none());
        assert_eq!(aggregate::<f64>(vec![]), Err(MetricsError::Empty));
    }

    #[test]
    fn car_rows_have_no_collision_index() {
        let car = track(1, AgentKind::Car, line(10, 0.0));
        let ped = track(2, AgentKind::Pedestrian, line(10, 5.0));
        let s = Scenario::new("s", crate::scenario::DatasetTag::Synthetic, vec![car, ped], vec![]).unwrap();
        let m = evaluate_scenario(&s, &s, &BTreeSet::new(), &MetricsConfig::default()).unwrap();
        let report = aggregate(vec![m]).unwrap();
        let rows = report_rows("synthetic", "GSFM_U", &report);
        let mut buf = Vec::new();
        write_metrics_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[1], "synthetic,GSFM_U,ped,0.000000,0.000000,0.000000,0.000000,0.000000,1,1");
        assert_eq!(lines[2], "synthetic,GSFM_U,car,0.000000,0.000000,0.000000,,,1,1");

        let skip: BTreeSet<u32> = [1].into();
        let m = evaluate_scenario(&s, &s, &skip, &MetricsConfig::default()).unwrap();
        let rows = report_rows("synthetic", "SFM_BASELINE", &aggregate(vec![m]).unwrap());
        let mut buf = Vec::new();
        write_metrics_csv(&rows, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().lines().nth(2).unwrap().ends_with("car,,,,,,,"));
    }

    proptest! {
        #[test]
        fn k0_scaling_law(n in 2usize..60, off in 0.0..3.0f64, k0 in 1usize..40) {
            let real = line(n, 0.0);
            let sim: Vec<V> = real.iter().enumerate().map(|(k, p)| *p + V::new(0.0, off * (k % 3) as f64)).collect();
            let base = aade(&real, &sim, k0).unwrap();
            prop_assert!((aade(&real, &sim, 2 * k0).unwrap() - 2.0 * base).abs() <= 1e-9 * (1.0 + base));
            let fde = afde(&real, &sim, k0).unwrap();
            prop_assert!((afde(&real, &sim, 4 * k0).unwrap() - 4.0 * fde).abs() <= 1e-9 * (1.0 + fde));
            let sd = speed_deviation(&real, &sim, 0.5, k0).unwrap();
            prop_assert!((speed_deviation(&real, &sim, 0.5, 2 * k0).unwrap() - 2.0 * sd).abs() <= 1e-9 * (1.0 + sd));
            // unadjusted when k = k0
            let plain: f64 = real.iter().zip(&sim).map(|(a, b)| a.distance(*b)).sum::<f64>() / n as f64;
            prop_assert!((aade(&real, &sim, n).unwrap() - plain).abs() <= 1e-12);
        }

        #[test]
        fn ci_rigid_motion_invariant(rot in 0.0..360.0f64, tx in -20.0..20.0f64, ty in -20.0..20.0f64, off in -3.0..3.0f64) {
            let g = AgentGeometry::default();
            let tf = |p: V| p.rotated_deg(rot) + V::new(tx, ty);
            let car_pts = line(12, 0.0);
            let ped_pts: Vec<V> = (0..12).map(|k| V::new(6.0, off + 0.4 * k as f64 - 2.0)).collect();
            let a = collision_index(&track(2, AgentKind::Pedestrian, ped_pts.clone()), &[&track(1, AgentKind::Car, car_pts.clone())], &g, 12).unwrap();
            let b = collision_index(
                &track(2, AgentKind::Pedestrian, ped_pts.into_iter().map(tf).collect()),
                &[&track(1, AgentKind::Car, car_pts.into_iter().map(tf).collect())],
                &g,
                12,
            ).unwrap();
            prop_assert_eq!(a.raw, b.raw);
        }
    }
}
