use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::Serialize;

use sharedspace::calibration::{
    run_calibration_workflow, AgentRef, CalibrationError, CalibrationInput, CalibrationReport, ModelParams,
    ModelVariant, Stage, REPORT_SCHEMA,
};
use sharedspace::clustering::{
    cluster_fs, cluster_pca, pca_reduce, select_columns, standardize, ClusterError, ClusteringReport,
};
use sharedspace::metrics::{aggregate, evaluate_scenario, report_rows, write_metrics_csv};
use sharedspace::plot::{clusters_svg, trajectories_svg};
use sharedspace::seeds;
use sharedspace::sim::{run, write_event_log, ModelOptions, SimConfig};
use sharedspace::{Scenario, Vec2f};

use crate::config::{Loaded, VariantTag};
use crate::failure::{input, internal, Failure, Result};

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| internal(format!("cannot create {}: {e}", dir.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| internal(format!("cannot write {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(internal)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn report_path(cfg: &Loaded, out: &Path) -> PathBuf {
    cfg.run.calibration.as_deref().map_or_else(|| out.join("calibration.json"), |p| cfg.resolve(p))
}

fn load_report(path: &Path) -> Result<Option<CalibrationReport>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path).map_err(|e| input(format!("cannot read {}: {e}", path.display())))?;
    let report: CalibrationReport =
        serde_json::from_str(&text).map_err(|e| input(format!("{}: {e}", path.display())))?;
    if report.schema != REPORT_SCHEMA {
        return Err(input(format!("{}: unsupported report schema {:?}", path.display(), report.schema)));
    }
    Ok(Some(report))
}

fn requested_variants(cfg: &Loaded, flags: &[VariantTag]) -> Vec<VariantTag> {
    let mut v = if flags.is_empty() { cfg.run.variants.clone() } else { flags.to_vec() };
    if v.is_empty() {
        v.push(VariantTag::GsfmU);
    }
    let mut seen = BTreeSet::new();
    v.retain(|t| seen.insert(*t));
    v
}

/// Model of a variant tag: calibrated parameters where a report provides them,
/// dataset defaults for the universal and baseline models otherwise.
fn resolve_variant(tag: VariantTag, report: Option<&CalibrationReport>, base: &SimConfig<f64>) -> Result<ModelVariant> {
    let found = report.and_then(|r| r.variants.get(tag.report_name()));
    match (tag, found) {
        (_, Some(v)) => Ok(v.clone()),
        (VariantTag::GsfmU | VariantTag::SfmBaseline, None) => {
            Ok(ModelVariant::universal(tag.report_name(), ModelParams { sfm: base.params, game: base.game }))
        }
        (_, None) => Err(Failure::Dependency(format!(
            "variant {} needs a calibration report containing {}; run calibrate first",
            tag.as_str(),
            tag.report_name()
        ))),
    }
}

fn variant_config(tag: VariantTag, base: &SimConfig<f64>) -> SimConfig<f64> {
    let mut c = base.clone();
    if tag == VariantTag::SfmBaseline {
        c.options = ModelOptions::sfm_baseline();
    }
    c
}

fn sim_dir(out: &Path, tag: VariantTag) -> PathBuf {
    out.join("sim").join(tag.as_str())
}

pub fn simulate(cfg: &Loaded, out: &Path, plot: bool, variants: &[VariantTag]) -> Result<()> {
    let scenarios = cfg.scenarios()?;
    let base = cfg.sim_config()?;
    let report = load_report(&report_path(cfg, out))?;
    for tag in requested_variants(cfg, variants) {
        let variant = resolve_variant(tag, report.as_ref(), &base)?;
        let vbase = variant_config(tag, &base);
        let dir = sim_dir(out, tag);
        for s in &scenarios {
            let sim = run(s, &variant.config_for(&vbase, s)).map_err(|e| internal(format!("scenario {}: {e}", s.id)))?;
            let mut csv = Vec::new();
            sim.write_csv(&mut csv).map_err(internal)?;
            write_file(&dir.join(format!("{}.csv", s.id)), &csv)?;
            let mut log = Vec::new();
            write_event_log(&sim.events, &mut log).map_err(internal)?;
            write_file(&dir.join(format!("{}.events.jsonl", s.id)), &log)?;
            if plot {
                write_file(&dir.join(format!("{}.svg", s.id)), trajectories_svg(s, Some(&sim)).as_bytes())?;
            }
        }
    }
    Ok(())
}

/// Reads a simulated trajectory CSV back onto the recorded scenario's tracks.
fn load_simulated(real: &Scenario, path: &Path) -> Result<Scenario> {
    if !path.exists() {
        return Err(Failure::MissingArtifact(format!("simulation output not found: {}; run simulate first", path.display())));
    }
    let bad = |e: &dyn std::fmt::Display| input(format!("{}: {e}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| bad(&e))?;
    let mut tracks: BTreeMap<u32, Vec<Vec2f>> = BTreeMap::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| bad(&e))?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let id: u32 = field(0).parse().map_err(|e| bad(&e))?;
        let x: f64 = field(3).parse().map_err(|e| bad(&e))?;
        let y: f64 = field(4).parse().map_err(|e| bad(&e))?;
        tracks.entry(id).or_default().push(Vec2f::new(x, y));
    }
    let mut sim = real.clone();
    for t in sim.tracks.iter_mut() {
        t.positions = tracks.remove(&t.id).ok_or_else(|| {
            Failure::MissingArtifact(format!("{} has no trajectory for agent {}", path.display(), t.id))
        })?;
    }
    Ok(sim)
}

pub fn evaluate(cfg: &Loaded, out: &Path, variants: &[VariantTag]) -> Result<()> {
    let scenarios = cfg.scenarios()?;
    let base = cfg.sim_config()?;
    let mut rows = Vec::new();
    for tag in requested_variants(cfg, variants) {
        let dir = sim_dir(out, tag);
        let mut per = Vec::new();
        for s in &scenarios {
            let sim = load_simulated(s, &dir.join(format!("{}.csv", s.id)))?;
            let mut skip = base.ghosts.clone();
            if tag == VariantTag::SfmBaseline {
                skip.extend(s.cars().map(|t| t.id));
            }
            per.push(evaluate_scenario(s, &sim, &skip, &cfg.run.metrics).map_err(|e| input(format!("scenario {}: {e}", s.id)))?);
        }
        let report = aggregate(per).map_err(internal)?;
        rows.extend(report_rows(cfg.run.dataset.as_str(), tag.as_str(), &report));
    }
    let mut csv = Vec::new();
    write_metrics_csv(&rows, &mut csv).map_err(internal)?;
    write_file(&out.join("metrics.csv"), &csv)
}

fn calibration_failure(e: CalibrationError) -> Failure {
    match e {
        CalibrationError::StageDependency { .. } => Failure::Dependency(e.to_string()),
        CalibrationError::Config(_) | CalibrationError::UnknownParameter(_) | CalibrationError::MissingAgent { .. } => {
            input(e)
        }
        CalibrationError::Cluster(ClusterError::InsufficientRows(_)) => input(e),
        other => internal(other),
    }
}

pub fn parse_stages(raw: &[String]) -> Result<BTreeSet<Stage>> {
    if raw.is_empty() {
        return Ok(Stage::ALL.into_iter().collect());
    }
    raw.iter()
        .map(|s| Stage::parse(s).ok_or_else(|| input(format!("unknown stage {s:?}; expected S1..S8"))))
        .collect()
}

pub fn calibrate(cfg: &Loaded, seed: u64, out: &Path, stages: &BTreeSet<Stage>) -> Result<()> {
    let path = report_path(cfg, out);
    let prior = load_report(&path)?;
    // dependency problems surface before any data is loaded
    let done = prior.as_ref().map(|r| r.completed.clone()).unwrap_or_default();
    let mut requested = stages.clone();
    if requested.contains(&Stage::S4) || requested.contains(&Stage::S6) {
        requested.extend([Stage::S4, Stage::S6]);
    }
    sharedspace::calibration::check_stages(&requested, &done).map_err(calibration_failure)?;

    let scenarios = cfg.scenarios()?;
    let decisions = cfg.decisions()?;
    let base = cfg.sim_config()?;
    let input = CalibrationInput { scenarios: &scenarios, decisions: &decisions, base: &base };
    let report = run_calibration_workflow(&input, &cfg.run.workflow, stages, prior, cfg.run.dataset, seed)
        .map_err(calibration_failure)?;
    write_json(&path, &report)?;
    for (name, v) in &report.variants {
        write_json(&out.join("params").join(format!("{name}.json")), v)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Method {
    Pca,
    Fs,
}

#[derive(Serialize)]
struct ClusterOutput<'a> {
    members: Vec<&'a AgentRef>,
    #[serde(flatten)]
    report: &'a ClusteringReport,
}

/// First two coordinates of the clustered space, padding with zeros.
fn scatter_points(rows: &[Vec<f64>]) -> Vec<(f64, f64)> {
    rows.iter().map(|r| (r.first().copied().unwrap_or(0.0), r.get(1).copied().unwrap_or(0.0))).collect()
}

pub fn cluster(cfg: &Loaded, seed: u64, out: &Path, method: Option<Method>) -> Result<()> {
    let path = report_path(cfg, out);
    let mut report = match load_report(&path)? {
        Some(r) if r.completed.contains(&Stage::S2) => r,
        _ => {
            return Err(Failure::Dependency(format!(
                "clustering needs individual calibration results (stage S2) in {}",
                path.display()
            )))
        }
    };
    let (cols, rows) = report.feature_matrix();
    let ids: Vec<u32> = (0..rows.len() as u32).collect();
    let ccfg = &cfg.run.workflow.clustering;
    let fail = |e: ClusterError| match e {
        ClusterError::InsufficientRows(_) => input(e),
        other => internal(other),
    };
    let methods = match method {
        Some(m) => vec![m],
        None => vec![Method::Pca, Method::Fs],
    };
    for m in methods {
        let (res, points, labels, tag) = match m {
            Method::Pca => {
                let res = cluster_pca(&ids, &cols, &rows, ccfg, seeds::substream(seed, "S3")).map_err(fail)?;
                let (z, _) = standardize(&rows).map_err(fail)?;
                let (reduced, _) = pca_reduce(&z, ccfg.variance_threshold).map_err(fail)?;
                report.pca = Some(res.clone());
                report.completed.insert(Stage::S3);
                (res, scatter_points(&reduced), ("PC1".to_string(), "PC2".to_string()), "pca")
            }
            Method::Fs => {
                let res = cluster_fs(&ids, &cols, &rows, ccfg, seeds::substream(seed, "S4")).map_err(fail)?;
                let (z, _) = standardize(&rows).map_err(fail)?;
                let idx: Vec<usize> =
                    res.selected_columns.iter().filter_map(|n| cols.iter().position(|c| c == n)).collect();
                let name = |i: usize| res.selected_columns.get(i).cloned().unwrap_or_else(|| "-".into());
                let labels = (name(0), name(1));
                let pts = scatter_points(&select_columns(&z, &idx));
                report.fs = Some(res.clone());
                report.completed.extend([Stage::S4, Stage::S6]);
                (res, pts, labels, "fs")
            }
        };
        let members = report.individual.iter().map(|f| &f.agent).collect();
        write_json(&out.join(format!("clusters_{tag}.json")), &ClusterOutput { members, report: &res })?;
        write_file(
            &out.join(format!("clusters_{tag}.svg")),
            clusters_svg(&points, &res.assignments, &labels.0, &labels.1).as_bytes(),
        )?;
    }
    write_json(&path, &report)
}
