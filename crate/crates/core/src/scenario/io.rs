//! Trajectory CSV (`agent_id,kind,t,x,y`) and JSON metadata.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AgentGeometry, AgentKind, AgentTrack, Bounds, DatasetTag, InputProfile, Obstacle, Scenario, ScenarioError};
use crate::geometry::Vec2;
use crate::scalar::{to_f64, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoordinateUnits {
    /// CSV coordinates are multiplied by `pixel_to_meter`.
    #[default]
    Pixel,
    /// CSV coordinates are already metric.
    Meter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ObstacleSpec {
    Points(Vec<[f64; 2]>),
    Full {
        id: u32,
        vertices: Vec<[f64; 2]>,
        #[serde(default = "default_closed")]
        closed: bool,
    },
}

fn default_closed() -> bool {
    true
}

/// Companion metadata file of a trajectory CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    #[serde(default)]
    pub id: Option<String>,
    pub dataset: DatasetTag,
    pub dt: f64,
    pub pixel_to_meter: f64,
    #[serde(default)]
    pub coordinates: CoordinateUnits,
    #[serde(default)]
    pub obstacles: Vec<ObstacleSpec>,
    /// Metric bounds; computed from the data when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Bounds<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<AgentGeometry<f64>>,
    /// Explicit input profiles keyed by agent id (metric).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub profiles: BTreeMap<String, InputProfile<f64>>,
}

impl Metadata {
    pub fn from_path(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| ScenarioError::Metadata(e.to_string()))
    }
}

fn parse_field<T: Scalar>(raw: &str, row: u64, name: &str) -> Result<T, ScenarioError> {
    let v: T = raw.trim().parse().map_err(|_| ScenarioError::MalformedRow {
        row,
        message: format!("cannot parse {name} from {raw:?}"),
    })?;
    if !v.is_finite() {
        return Err(ScenarioError::MalformedRow { row, message: format!("non-finite {name}") });
    }
    Ok(v)
}

fn conv<T: Scalar>(x: f64) -> T {
    T::from_f64(x).unwrap_or_else(T::nan)
}

fn conv_point<T: Scalar>(p: [f64; 2], scale: f64) -> Vec2<T> {
    Vec2::new(conv(p[0] * scale), conv(p[1] * scale))
}

struct Pending<T> {
    id: u32,
    kind: AgentKind,
    t0: T,
    last_t: T,
    positions: Vec<Vec2<T>>,
}

/// Parses a trajectory CSV against its metadata.
pub fn load_trajectories<T: Scalar, R: Read>(
    reader: R,
    meta: &Metadata,
) -> Result<Scenario<T>, ScenarioError> {
    if !(meta.pixel_to_meter > 0.0) || !(meta.dt > 0.0) {
        return Err(ScenarioError::Metadata("pixel_to_meter and dt must be positive".into()));
    }
    let scale_f64 = match meta.coordinates {
        CoordinateUnits::Pixel => meta.pixel_to_meter,
        CoordinateUnits::Meter => 1.0,
    };
    let scale: T = conv(scale_f64);
    let dt: T = conv(meta.dt);
    let tol: T = conv(1e-6 * meta.dt.max(1.0));

    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut order: Vec<Pending<T>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| ScenarioError::MalformedRow {
            row: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let row = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != 5 {
            return Err(ScenarioError::MalformedRow {
                row,
                message: format!("expected 5 fields, found {}", rec.len()),
            });
        }
        let id: u32 = rec[0].trim().parse().map_err(|_| ScenarioError::MalformedRow {
            row,
            message: format!("invalid agent id {:?}", &rec[0]),
        })?;
        let kind = AgentKind::parse(&rec[1])
            .ok_or_else(|| ScenarioError::UnknownKind { row, kind: rec[1].to_string() })?;
        let t: T = parse_field(&rec[2], row, "t")?;
        let x: T = parse_field(&rec[3], row, "x")?;
        let y: T = parse_field(&rec[4], row, "y")?;
        let p = Vec2::new(x * scale, y * scale);

        match order.iter_mut().find(|a| a.id == id) {
            Some(agent) => {
                if agent.kind != kind {
                    return Err(ScenarioError::KindChanged { row, agent: id });
                }
                if t <= agent.last_t {
                    return Err(ScenarioError::NonMonotone { row, agent: id });
                }
                if ((t - agent.last_t) - dt).abs() > tol {
                    return Err(ScenarioError::IrregularSampling { row, agent: id, dt: meta.dt });
                }
                agent.last_t = t;
                agent.positions.push(p);
            }
            None => order.push(Pending { id, kind, t0: t, last_t: t, positions: vec![p] }),
        }
    }
    if order.is_empty() {
        return Err(ScenarioError::NoAgents);
    }

    let geometry: AgentGeometry<T> = meta
        .geometry
        .map(|g| AgentGeometry {
            ped_radius: conv(g.ped_radius),
            car_radius: conv(g.car_radius),
            car_length: conv(g.car_length),
            car_width: conv(g.car_width),
        })
        .unwrap_or_default();

    let mut tracks = Vec::with_capacity(order.len());
    for a in order {
        let mut track = AgentTrack::new(a.id, a.kind, a.t0, dt, a.positions, geometry.radius(a.kind));
        if let Some(p) = meta.profiles.get(&a.id.to_string()) {
            track.profile = Some(InputProfile {
                start: p.start.cast(),
                destination: p.destination.cast(),
                desired_speed: conv(p.desired_speed),
            });
        }
        tracks.push(track);
    }

    let mut obstacles = Vec::with_capacity(meta.obstacles.len());
    for (i, spec) in meta.obstacles.iter().enumerate() {
        let o = match spec {
            ObstacleSpec::Points(pts) => Obstacle {
                id: i as u32,
                vertices: pts.iter().map(|&p| conv_point(p, scale_f64)).collect(),
                closed: pts.len() >= 3,
            },
            ObstacleSpec::Full { id, vertices, closed } => Obstacle {
                id: *id,
                vertices: vertices.iter().map(|&p| conv_point(p, scale_f64)).collect(),
                closed: *closed,
            },
        };
        obstacles.push(o);
    }

    let bounds = match meta.bounds {
        Some(b) => Bounds { min: b.min.cast(), max: b.max.cast() },
        None => Bounds::enclosing(
            tracks
                .iter()
                .flat_map(|t| t.positions.iter())
                .chain(obstacles.iter().flat_map(|o| o.vertices.iter())),
        )
        .ok_or(ScenarioError::NoAgents)?,
    };

    let scenario = Scenario {
        id: meta.id.clone().unwrap_or_else(|| "scenario".into()),
        dataset: meta.dataset,
        tracks,
        obstacles,
        pixel_to_meter: conv(meta.pixel_to_meter),
        bounds,
    };
    scenario.validate()?;
    Ok(scenario)
}

/// Loads a trajectory CSV together with its JSON metadata file.
pub fn load_scenario<T: Scalar>(csv_path: &Path, meta_path: &Path) -> Result<Scenario<T>, ScenarioError> {
    let meta = Metadata::from_path(meta_path)?;
    let file = File::open(csv_path).map_err(|source| ScenarioError::Io {
        path: csv_path.display().to_string(),
        source,
    })?;
    let mut s = load_trajectories(file, &meta)?;
    if meta.id.is_none() {
        if let Some(stem) = csv_path.file_stem() {
            s.id = stem.to_string_lossy().into_owned();
        }
    }
    Ok(s)
}

/// Writes metric coordinates and a metadata record that reloads to the same scenario.
pub fn write_scenario<T: Scalar, W1: Write, W2: Write>(
    scenario: &Scenario<T>,
    csv_out: W1,
    meta_out: W2,
) -> Result<(), ScenarioError> {
    let io_err = |e: std::io::Error| ScenarioError::Io { path: "<writer>".into(), source: e };
    let mut w = csv::Writer::from_writer(csv_out);
    w.write_record(["agent_id", "kind", "t", "x", "y"])
        .map_err(|e| ScenarioError::Metadata(e.to_string()))?;
    for track in &scenario.tracks {
        for (k, p) in track.positions.iter().enumerate() {
            w.write_record([
                track.id.to_string(),
                track.kind.tag().to_string(),
                track.time_at(k).to_string(),
                p.x.to_string(),
                p.y.to_string(),
            ])
            .map_err(|e| ScenarioError::Metadata(e.to_string()))?;
        }
    }
    w.flush().map_err(io_err)?;

    let geometry = {
        let mut g = AgentGeometry::<f64>::default();
        if let Some(t) = scenario.pedestrians().next() {
            g.ped_radius = to_f64(t.radius);
        }
        if let Some(t) = scenario.cars().next() {
            g.car_radius = to_f64(t.radius);
        }
        g
    };
    let profiles = scenario
        .tracks
        .iter()
        .filter_map(|t| {
            t.profile.map(|p| {
                (
                    t.id.to_string(),
                    InputProfile {
                        start: p.start.cast(),
                        destination: p.destination.cast(),
                        desired_speed: to_f64(p.desired_speed),
                    },
                )
            })
        })
        .collect();
    let meta = Metadata {
        id: Some(scenario.id.clone()),
        dataset: scenario.dataset,
        dt: to_f64(scenario.dt()),
        pixel_to_meter: to_f64(scenario.pixel_to_meter),
        coordinates: CoordinateUnits::Meter,
        obstacles: scenario
            .obstacles
            .iter()
            .map(|o| ObstacleSpec::Full {
                id: o.id,
                vertices: o.vertices.iter().map(|v| [to_f64(v.x), to_f64(v.y)]).collect(),
                closed: o.closed,
            })
            .collect(),
        bounds: Some(Bounds { min: scenario.bounds.min.cast(), max: scenario.bounds.max.cast() }),
        geometry: Some(geometry),
        profiles,
    };
    let mut meta_out = meta_out;
    serde_json::to_writer_pretty(&mut meta_out, &meta).map_err(|e| ScenarioError::Metadata(e.to_string()))?;
    meta_out.write_all(b"\n").map_err(io_err)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(scale: f64) -> Metadata {
        Metadata {
            id: Some("s".into()),
            dataset: DatasetTag::Synthetic,
            dt: 0.5,
            pixel_to_meter: scale,
            coordinates: CoordinateUnits::Pixel,
            obstacles: vec![],
            bounds: None,
            geometry: None,
            profiles: BTreeMap::new(),
        }
    }

    #[test]
    fn empty_file_has_no_agents() {
        let err = load_trajectories::<f64, _>("agent_id,kind,t,x,y\n".as_bytes(), &meta(1.0)).unwrap_err();
        assert_eq!(err.to_string(), "no agents");
    }

    #[test]
    fn minimal_pedestrian_file() {
        let csv = "agent_id,kind,t,x,y\n1,ped,0,0,0\n1,ped,0.5,0.5,0\n1,ped,1.0,1.0,0\n1,ped,1.5,1.5,0\n";
        let s = load_trajectories::<f64, _>(csv.as_bytes(), &meta(1.0)).unwrap();
        assert_eq!(s.tracks.len(), 1);
        assert_eq!(s.tracks[0].dt, 0.5);
        assert_eq!(s.tracks[0].len(), 4);
        assert_eq!(s.tracks[0].kind, AgentKind::Pedestrian);
    }

    #[test]
    fn pixel_scale_applied() {
        let csv = "agent_id,kind,t,x,y\n1,ped,0,100,200\n1,ped,0.5,110,200\n";
        let s = load_trajectories::<f64, _>(csv.as_bytes(), &meta(0.05)).unwrap();
        assert_eq!(s.tracks[0].positions[0], Vec2::new(5.0, 10.0));
    }

    #[test]
    fn errors_carry_row_numbers() {
        let csv = "agent_id,kind,t,x,y\n1,ped,0,0,0\n1,ped,0.5,abc,0\n";
        match load_trajectories::<f64, _>(csv.as_bytes(), &meta(1.0)) {
            Err(ScenarioError::MalformedRow { row, .. }) => assert_eq!(row, 3),
            other => panic!("unexpected {other:?}"),
        }
        let csv = "agent_id,kind,t,x,y\n1,ped,0,0,0\n1,ped,0.5,1,0\n1,ped,0.5,2,0\n";
        match load_trajectories::<f64, _>(csv.as_bytes(), &meta(1.0)) {
            Err(ScenarioError::NonMonotone { row, agent }) => assert_eq!((row, agent), (4, 1)),
            other => panic!("unexpected {other:?}"),
        }
        let csv = "agent_id,kind,t,x,y\n1,ped,0,0,0\n2,bike,0,1,0\n";
        match load_trajectories::<f64, _>(csv.as_bytes(), &meta(1.0)) {
            Err(ScenarioError::UnknownKind { row, kind }) => assert_eq!((row, kind.as_str()), (3, "bike")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn interleaved_rows_keep_first_appearance_order() {
        let csv = "agent_id,kind,t,x,y\n7,car,0,0,0\n3,ped,0,5,5\n7,car,0.5,1,0\n3,ped,0.5,5,6\n";
        let s = load_trajectories::<f64, _>(csv.as_bytes(), &meta(1.0)).unwrap();
        let ids: Vec<_> = s.tracks.iter().map(|t| t.id).collect();
        assert_eq!(ids, vec![7, 3]);
        assert_eq!(s.tracks[0].radius, 1.0);
        assert_eq!(s.tracks[1].radius, 0.3);
    }

    #[test]
    fn obstacle_coordinate_lists_are_scaled() {
        let mut m = meta(0.5);
        m.obstacles = vec![ObstacleSpec::Points(vec![[0.0, 0.0], [2.0, 0.0], [2.0, 2.0]])];
        let csv = "agent_id,kind,t,x,y\n1,ped,0,4,4\n1,ped,0.5,5,4\n";
        let s = load_trajectories::<f64, _>(csv.as_bytes(), &m).unwrap();
        assert!(s.obstacles[0].closed);
        assert_eq!(s.obstacles[0].vertices[2], Vec2::new(1.0, 1.0));
    }
}
