//! Grouping of per-pedestrian parameter vectors: k-means, elbow selection, PCA,
//! silhouette and forward column selection.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("insufficient rows: {0}")]
    InsufficientRows(usize),
    #[error("empty matrix")]
    Empty,
    #[error("rows have differing lengths")]
    Ragged,
    #[error("k = {k} is outside 1..={rows}")]
    InvalidK { k: usize, rows: usize },
    #[error("silhouette needs at least two clusters")]
    SingleCluster,
    #[error("matrix has zero variance")]
    ZeroVariance,
    #[error("non-finite entry")]
    NonFinite,
}

const MAX_ITER: usize = 300;

fn check(data: &[Vec<f64>]) -> Result<usize, ClusterError> {
    let first = data.first().ok_or(ClusterError::Empty)?;
    let d = first.len();
    if d == 0 {
        return Err(ClusterError::Empty);
    }
    if data.iter().any(|r| r.len() != d) {
        return Err(ClusterError::Ragged);
    }
    if data.iter().flatten().any(|v| !v.is_finite()) {
        return Err(ClusterError::NonFinite);
    }
    Ok(d)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Per-column mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Z-scores each column; constant columns become all zeros.
pub fn standardize(data: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Standardization), ClusterError> {
    let d = check(data)?;
    let n = data.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| data.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let std: Vec<f64> = (0..d)
        .map(|j| (data.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt())
        .collect();
    let scale = |j: usize| if std[j] > 1e-12 * (1.0 + mean[j].abs()) { std[j] } else { f64::INFINITY };
    let out = data
        .iter()
        .map(|r| r.iter().enumerate().map(|(j, v)| (v - mean[j]) / scale(j)).collect())
        .collect();
    Ok((out, Standardization { mean, std }))
}

pub fn select_columns(data: &[Vec<f64>], cols: &[usize]) -> Vec<Vec<f64>> {
    data.iter().map(|r| cols.iter().map(|&c| r[c]).collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KMeansResult {
    /// Cluster label per row, numbered by first appearance.
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub k: usize,
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia after each Lloyd update.
    pub inertia_trace: Vec<f64>,
}

impl KMeansResult {
    pub fn distinct_clusters(&self) -> usize {
        self.assignments.iter().max().map_or(0, |m| m + 1)
    }
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, cen) in centroids.iter().enumerate() {
        let d = sq_dist(point, cen);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus(data: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = data.len();
    let mut centroids = vec![data[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = data.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if r < *w {
                    pick = i;
                    break;
                }
                r -= w;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centroids.push(data[idx].clone());
        for (i, p) in data.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

/// Relabels clusters in order of first appearance so equal partitions compare equal.
fn canonical(assign: &[usize], centroids: &[Vec<f64>]) -> (Vec<usize>, Vec<Vec<f64>>) {
    let mut map = vec![usize::MAX; centroids.len()];
    let mut next = 0;
    let mut out = Vec::with_capacity(assign.len());
    for &a in assign {
        if map[a] == usize::MAX {
            map[a] = next;
            next += 1;
        }
        out.push(map[a]);
    }
    let mut cents = vec![Vec::new(); next];
    for (old, &new) in map.iter().enumerate() {
        if new != usize::MAX {
            cents[new] = centroids[old].clone();
        }
    }
    (out, cents)
}

fn lloyd(data: &[Vec<f64>], mut centroids: Vec<Vec<f64>>) -> KMeansResult {
    let k = centroids.len();
    let d = data[0].len();
    let mut assign: Vec<usize> = data.iter().map(|p| nearest(p, &centroids).0).collect();
    let mut trace = Vec::new();
    let mut iterations = 0;
    loop {
        iterations += 1;
        // update step
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in data.iter().zip(&assign) {
            counts[a] += 1;
            for j in 0..d {
                sums[a][j] += p[j];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        // empty clusters take the point farthest from its own centroid
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..data.len())
                    .filter(|&i| counts[assign[i]] > 1)
                    .max_by(|&a, &b| {
                        sq_dist(&data[a], &centroids[assign[a]])
                            .total_cmp(&sq_dist(&data[b], &centroids[assign[b]]))
                            .then(b.cmp(&a))
                    });
                if let Some(i) = far {
                    counts[assign[i]] -= 1;
                    assign[i] = c;
                    counts[c] = 1;
                    centroids[c] = data[i].clone();
                }
            }
        }
        trace.push(data.iter().zip(&assign).map(|(p, &a)| sq_dist(p, &centroids[a])).sum());
        let next: Vec<usize> = data.iter().map(|p| nearest(p, &centroids).0).collect();
        if next == assign || iterations >= MAX_ITER {
            break;
        }
        assign = next;
    }
    let inertia = *trace.last().unwrap_or(&0.0);
    let (assignments, centroids) = canonical(&assign, &centroids);
    KMeansResult { k: centroids.len(), assignments, centroids, inertia, iterations, inertia_trace: trace }
}

/// One k-means run with k-means++ seeding.
pub fn kmeans(data: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeansResult, ClusterError> {
    check(data)?;
    if k == 0 || k > data.len() {
        return Err(ClusterError::InvalidK { k, rows: data.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(lloyd(data, plus_plus(data, k, &mut rng)))
}

/// Lowest-inertia result over `n_init` seeded restarts (earliest restart wins ties).
pub fn kmeans_best(data: &[Vec<f64>], k: usize, seed: u64, n_init: usize) -> Result<KMeansResult, ClusterError> {
    let mut best: Option<KMeansResult> = None;
    for r in 0..n_init.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64);
        check(data)?;
        if k == 0 || k > data.len() {
            return Err(ClusterError::InvalidK { k, rows: data.len() });
        }
        let res = lloyd(data, plus_plus(data, k, &mut rng));
        if best.as_ref().map_or(true, |b| res.inertia < b.inertia - 1e-12 * (1.0 + b.inertia)) {
            best = Some(res);
        }
    }
    Ok(best.expect("at least one restart"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ElbowResult {
    pub k: usize,
    pub ks: Vec<usize>,
    pub wcss: Vec<f64>,
    /// No clear bend: the smallest k was returned.
    pub flagged: bool,
}

/// Minimum normalized curvature that counts as an elbow.
pub const ELBOW_MIN_CURVATURE: f64 = 0.1;
/// Minimum ratio of the WCSS drop into the elbow to the drop after it.
pub const ELBOW_MIN_SHARPNESS: f64 = 4.0;

/// Picks k at the largest second difference of the WCSS curve normalized by its first value.
pub fn elbow_select_k(
    data: &[Vec<f64>],
    k_min: usize,
    k_max: usize,
    seed: u64,
    n_init: usize,
) -> Result<ElbowResult, ClusterError> {
    check(data)?;
    let k_max = k_max.min(data.len());
    if k_min == 0 || k_min > k_max {
        return Err(ClusterError::InvalidK { k: k_min, rows: data.len() });
    }
    let ks: Vec<usize> = (k_min..=k_max).collect();
    let wcss = ks
        .iter()
        .map(|&k| kmeans_best(data, k, seed, n_init).map(|r| r.inertia))
        .collect::<Result<Vec<_>, _>>()?;
    let top = wcss[0];
    if top <= 1e-12 || ks.len() < 3 {
        return Ok(ElbowResult { k: k_min, ks, wcss, flagged: true });
    }
    let w: Vec<f64> = wcss.iter().map(|v| v / top).collect();
    let mut best = (0, f64::NEG_INFINITY);
    for i in 1..w.len() - 1 {
        let c = w[i - 1] - 2.0 * w[i] + w[i + 1];
        if c > best.1 {
            best = (i, c);
        }
    }
    let i = best.0;
    let sharpness = (w[i - 1] - w[i]) / (w[i] - w[i + 1]).max(1e-12);
    if best.1 < ELBOW_MIN_CURVATURE || sharpness < ELBOW_MIN_SHARPNESS {
        return Ok(ElbowResult { k: k_min, ks, wcss, flagged: true });
    }
    Ok(ElbowResult { k: ks[best.0], ks, wcss, flagged: false })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Orthonormal component directions, by decreasing variance.
    pub components: Vec<Vec<f64>>,
    /// All covariance eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    pub explained_ratio: Vec<f64>,
    pub kept: usize,
}

impl Pca {
    pub fn project(&self, row: &[f64]) -> Vec<f64> {
        self.components[..self.kept]
            .iter()
            .map(|c| c.iter().zip(row).zip(&self.mean).map(|((ci, x), m)| ci * (x - m)).sum())
            .collect()
    }

    pub fn reconstruct(&self, scores: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (s, c) in scores.iter().zip(&self.components) {
            for (o, ci) in out.iter_mut().zip(c) {
                *o += s * ci;
            }
        }
        out
    }
}

/// Keeps the fewest leading components reaching `threshold` of the total variance.
pub fn pca_reduce(data: &[Vec<f64>], threshold: f64) -> Result<(Vec<Vec<f64>>, Pca), ClusterError> {
    let d = check(data)?;
    let n = data.len();
    if n < 2 {
        return Err(ClusterError::InsufficientRows(n));
    }
    let mean: Vec<f64> = (0..d).map(|j| data.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let centered = DMatrix::from_fn(n, d, |i, j| data[i][j] - mean[j]);
    let cov = (centered.transpose() * &centered) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let total: f64 = eigenvalues.iter().sum();
    if total <= 1e-300 {
        return Err(ClusterError::ZeroVariance);
    }
    let components: Vec<Vec<f64>> = order
        .iter()
        .map(|&i| {
            let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            // sign convention: largest-magnitude entry positive
            let lead = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            if lead < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();
    let explained_ratio: Vec<f64> = eigenvalues.iter().map(|e| e / total).collect();
    let nondegenerate = eigenvalues.iter().filter(|&&e| e > 1e-12 * total).count().max(1);
    let mut kept = nondegenerate;
    let mut cum = 0.0;
    for (i, r) in explained_ratio.iter().enumerate().take(nondegenerate) {
        cum += r;
        if cum >= threshold - 1e-12 {
            kept = i + 1;
            break;
        }
    }
    let pca = Pca { mean, components, eigenvalues, explained_ratio, kept };
    let reduced = data.iter().map(|r| pca.project(r)).collect();
    Ok((reduced, pca))
}

/// Mean silhouette; points alone in their cluster score 0.
pub fn silhouette(data: &[Vec<f64>], assignments: &[usize]) -> Result<f64, ClusterError> {
    check(data)?;
    if assignments.len() != data.len() {
        return Err(ClusterError::Ragged);
    }
    let k = assignments.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &a in assignments {
        sizes[a] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(ClusterError::SingleCluster);
    }
    let n = data.len();
    let mut total = 0.0;
    for i in 0..n {
        let own = assignments[i];
        if sizes[own] == 1 {
            continue;
        }
        let mut sums = vec![0.0; k];
        for j in 0..n {
            if j != i {
                sums[assignments[j]] += sq_dist(&data[i], &data[j]).sqrt();
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}

/// Silhouette of a clustering, or −1 when it collapsed to one cluster.
fn score_of(data: &[Vec<f64>], res: &KMeansResult) -> f64 {
    if res.distinct_clusters() < 2 {
        return -1.0;
    }
    silhouette(data, &res.assignments).unwrap_or(-1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForwardSelection {
    /// Column indices in order of selection.
    pub selected: Vec<usize>,
    /// Silhouette after each selection.
    pub scores: Vec<f64>,
    pub clustering: KMeansResult,
    /// Stopped because no remaining column improved the score before `C_s` was met.
    pub flagged: bool,
}

/// Greedy forward selection of columns maximizing the k-means silhouette.
///
/// The first round always adds the best single column; later rounds add the best
/// remaining column only if it strictly improves the score. Stops once the score
/// reaches `c_s` or no columns remain.
pub fn forward_select_kmeans(
    data: &[Vec<f64>],
    k: usize,
    c_s: f64,
    seed: u64,
    n_init: usize,
) -> Result<ForwardSelection, ClusterError> {
    let d = check(data)?;
    if k < 2 || k > data.len() {
        return Err(ClusterError::InvalidK { k, rows: data.len() });
    }
    let mut selected: Vec<usize> = Vec::new();
    let mut remaining: Vec<usize> = (0..d).collect();
    let mut scores = Vec::new();
    let mut current: Option<(f64, KMeansResult)> = None;
    let mut flagged = false;
    loop {
        let mut round: Option<(usize, f64, KMeansResult)> = None;
        for (pos, &c) in remaining.iter().enumerate() {
            let mut cols = selected.clone();
            cols.push(c);
            let sub = select_columns(data, &cols);
            let res = kmeans_best(&sub, k, seed, n_init)?;
            let s = score_of(&sub, &res);
            if round.as_ref().map_or(true, |r| s > r.1) {
                round = Some((pos, s, res));
            }
        }
        let Some((pos, s, res)) = round else { break };
        if let Some((best, _)) = &current {
            if s <= *best {
                flagged = *best < c_s;
                break;
            }
        }
        selected.push(remaining.remove(pos));
        scores.push(s);
        current = Some((s, res));
        if s >= c_s || remaining.is_empty() {
            break;
        }
    }
    let (_, clustering) = current.expect("at least one column is evaluated");
    Ok(ForwardSelection { selected, scores, clustering, flagged })
}

/// Fraction of point pairs on which two partitions agree.
pub fn rand_index(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len().min(b.len());
    if n < 2 {
        return 1.0;
    }
    let mut agree = 0usize;
    let mut total = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            total += 1;
            if (a[i] == a[j]) == (b[i] == b[j]) {
                agree += 1;
            }
        }
    }
    agree as f64 / total as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClusterMethod {
    #[serde(rename = "PCA_KMEANS")]
    PcaKmeans,
    #[serde(rename = "FS_KMEANS")]
    FsKmeans,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringReport {
    pub method: ClusterMethod,
    pub row_ids: Vec<u32>,
    pub columns: Vec<String>,
    /// Selected column names (forward selection) or retained component count (PCA).
    pub selected_columns: Vec<String>,
    pub components_kept: Option<usize>,
    pub explained_ratio: Option<Vec<f64>>,
    pub k: usize,
    pub assignments: Vec<usize>,
    pub silhouette: Option<f64>,
    pub seed: u64,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringConfig {
    pub k_min: usize,
    pub k_max: usize,
    /// Fixed k; the elbow method decides when absent.
    pub k: Option<usize>,
    pub variance_threshold: f64,
    pub silhouette_target: f64,
    pub n_init: usize,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self { k_min: 1, k_max: 8, k: None, variance_threshold: 0.9, silhouette_target: 0.5, n_init: 10 }
    }
}

fn choose_k(data: &[Vec<f64>], cfg: &ClusteringConfig, seed: u64, flags: &mut Vec<String>) -> Result<usize, ClusterError> {
    if let Some(k) = cfg.k {
        return Ok(k.min(data.len()));
    }
    let e = elbow_select_k(data, cfg.k_min, cfg.k_max.min(data.len()), seed, cfg.n_init)?;
    if e.flagged {
        flags.push("no_elbow".into());
    }
    Ok(e.k)
}

/// Standardize → PCA → elbow → k-means.
pub fn cluster_pca(
    row_ids: &[u32],
    columns: &[String],
    raw: &[Vec<f64>],
    cfg: &ClusteringConfig,
    seed: u64,
) -> Result<ClusteringReport, ClusterError> {
    if raw.len() < 2 {
        return Err(ClusterError::InsufficientRows(raw.len()));
    }
    let (z, _) = standardize(raw)?;
    let (reduced, pca) = pca_reduce(&z, cfg.variance_threshold)?;
    let mut flags = Vec::new();
    let k = choose_k(&reduced, cfg, seed, &mut flags)?;
    let res = kmeans_best(&reduced, k, seed, cfg.n_init)?;
    let sil = (res.distinct_clusters() >= 2).then(|| silhouette(&reduced, &res.assignments)).transpose()?;
    Ok(ClusteringReport {
        method: ClusterMethod::PcaKmeans,
        row_ids: row_ids.to_vec(),
        columns: columns.to_vec(),
        selected_columns: Vec::new(),
        components_kept: Some(pca.kept),
        explained_ratio: Some(pca.explained_ratio.clone()),
        k: res.distinct_clusters(),
        assignments: res.assignments,
        silhouette: sil,
        seed,
        flags,
    })
}

/// Standardize → elbow for K → forward selection → k-means on the selected columns.
pub fn cluster_fs(
    row_ids: &[u32],
    columns: &[String],
    raw: &[Vec<f64>],
    cfg: &ClusteringConfig,
    seed: u64,
) -> Result<ClusteringReport, ClusterError> {
    if raw.len() < 2 {
        return Err(ClusterError::InsufficientRows(raw.len()));
    }
    let (z, _) = standardize(raw)?;
    let mut flags = Vec::new();
    let k = choose_k(&z, cfg, seed, &mut flags)?.max(2).min(raw.len());
    let fs = forward_select_kmeans(&z, k, cfg.silhouette_target, seed, cfg.n_init)?;
    if fs.flagged {
        flags.push("silhouette_target_not_reached".into());
    }
    let res = fs.clustering;
    let sil = fs.scores.last().copied().filter(|s| *s > -1.0);
    Ok(ClusteringReport {
        method: ClusterMethod::FsKmeans,
        row_ids: row_ids.to_vec(),
        columns: columns.to_vec(),
        selected_columns: fs.selected.iter().map(|&c| columns[c].clone()).collect(),
        components_kept: None,
        explained_ratio: None,
        k: res.distinct_clusters(),
        assignments: res.assignments,
        silhouette: sil,
        seed,
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn blobs(centers: &[(f64, f64)], per: usize, spread: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, spread).unwrap();
        centers
            .iter()
            .flat_map(|&(x, y)| (0..per).map(|_| vec![x + noise.sample(&mut rng), y + noise.sample(&mut rng)]).collect::<Vec<_>>())
            .collect()
    }

    /// Exhaustive search over all labelings: the optimal k-means partition.
    fn brute_force_partition(data: &[Vec<f64>], k: usize) -> Vec<usize> {
        let n = data.len();
        let mut best = (f64::INFINITY, vec![]);
        let total = k.pow(n as u32);
        for code in 0..total {
            let mut labels = Vec::with_capacity(n);
            let mut c = code;
            for _ in 0..n {
                labels.push(c % k);
                c /= k;
            }
            let mut cost = 0.0;
            for g in 0..k {
                let members: Vec<&Vec<f64>> = data.iter().zip(&labels).filter(|(_, &l)| l == g).map(|(p, _)| p).collect();
                if members.is_empty() {
                    continue;
                }
                let m: Vec<f64> = (0..2).map(|j| members.iter().map(|p| p[j]).sum::<f64>() / members.len() as f64).collect();
                cost += members.iter().map(|p| sq_dist(p, &m)).sum::<f64>();
            }
            if cost < best.0 - 1e-12 {
                best = (cost, labels);
            }
        }
        canonical(&best.1, &vec![vec![]; k]).0
    }

    #[test]
    fn kmeans_trivial_cases() {
        let data = blobs(&[(0.0, 0.0)], 9, 1.0, 1);
        let one = kmeans(&data, 1, 3).unwrap();
        assert!(one.assignments.iter().all(|&a| a == 0));
        for j in 0..2 {
            let m = data.iter().map(|r| r[j]).sum::<f64>() / 9.0;
            assert_relative_eq!(one.centroids[0][j], m, epsilon = 1e-12);
        }
        let all = kmeans(&data, 9, 3).unwrap();
        assert_eq!(all.distinct_clusters(), 9);
        assert_relative_eq!(all.inertia, 0.0);
        assert!(kmeans(&data, 10, 0).is_err());
    }

    #[test]
    fn two_blobs_exact_partition() {
        let data = blobs(&[(0.0, 0.0), (10.0, 10.0)], 6, 0.5, 2);
        let res = kmeans_best(&data, 2, 7, 5).unwrap();
        assert_eq!(res.assignments, brute_force_partition(&data, 2));
        assert_eq!(res.assignments, vec![0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1]);
    }

    #[test]
    fn elbow_examples() {
        let three = blobs(&[(0.0, 0.0), (20.0, 0.0), (0.0, 20.0)], 15, 1.0, 3);
        assert_eq!(elbow_select_k(&three, 1, 8, 5, 10).unwrap().k, 3);
        let one = blobs(&[(0.0, 0.0)], 40, 1.0, 4);
        let e = elbow_select_k(&one, 1, 8, 5, 10).unwrap();
        assert!(e.flagged);
        assert_eq!(e.k, 1);
        let dup = vec![vec![1.0, 2.0]; 6];
        let e = elbow_select_k(&dup, 1, 4, 5, 3).unwrap();
        assert_eq!(e.k, 1);
        assert!(e.wcss.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn pca_examples() {
        // points on a line in 7-D
        let dir = [1.0, 2.0, -1.0, 0.5, 3.0, 0.0, 1.5];
        let line: Vec<Vec<f64>> = (0..30).map(|t| dir.iter().map(|d| d * t as f64 * 0.1 + 1.0).collect()).collect();
        let (_, p) = pca_reduce(&line, 0.9).unwrap();
        assert_eq!(p.kept, 1);
        assert!(p.explained_ratio[0] >= 0.999);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let iso: Vec<Vec<f64>> = (0..4000).map(|_| (0..4).map(|_| noise.sample(&mut rng)).collect()).collect();
        let (_, p) = pca_reduce(&iso, 0.9).unwrap();
        for r in &p.explained_ratio {
            assert!((r - 0.25).abs() < 0.03, "{r}");
        }
        let (_, p) = pca_reduce(&iso, 1.0).unwrap();
        assert_eq!(p.kept, 4);
        assert_eq!(pca_reduce(&vec![vec![1.0, 1.0]; 5], 0.9).unwrap_err(), ClusterError::ZeroVariance);
    }

    /// Direct O(n²) silhouette definition.
    fn silhouette_oracle(data: &[Vec<f64>], labels: &[usize]) -> f64 {
        let n = data.len();
        let dist = |i: usize, j: usize| sq_dist(&data[i], &data[j]).sqrt();
        let k = labels.iter().max().unwrap() + 1;
        let mut s = 0.0;
        for i in 0..n {
            let same: Vec<usize> = (0..n).filter(|&j| j != i && labels[j] == labels[i]).collect();
            if same.is_empty() {
                continue;
            }
            let a = same.iter().map(|&j| dist(i, j)).sum::<f64>() / same.len() as f64;
            let mut b = f64::INFINITY;
            for c in 0..k {
                let other: Vec<usize> = (0..n).filter(|&j| labels[j] == c).collect();
                if c != labels[i] && !other.is_empty() {
                    b = b.min(other.iter().map(|&j| dist(i, j)).sum::<f64>() / other.len() as f64);
                }
            }
            s += (b - a) / a.max(b);
        }
        s / n as f64
    }

    #[test]
    fn silhouette_examples() {
        let two = vec![vec![0.0, 0.0], vec![100.0, 0.0]];
        assert_eq!(silhouette(&two, &[0, 1]).unwrap(), 0.0);
        let tight = blobs(&[(0.0, 0.0), (50.0, 50.0)], 10, 0.5, 5);
        let labels: Vec<usize> = (0..20).map(|i| i / 10).collect();
        assert!(silhouette(&tight, &labels).unwrap() > 0.9);
        assert_eq!(silhouette(&tight, &[0; 20]).unwrap_err(), ClusterError::SingleCluster);

        let one = blobs(&[(0.0, 0.0)], 200, 1.0, 6);
        let mut scores = Vec::new();
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let labels: Vec<usize> = (0..200).map(|_| rng.random_range(0..2)).collect();
            scores.push(silhouette(&one, &labels).unwrap());
        }
        let mean = scores.iter().sum::<f64>() / 5.0;
        assert!(mean.abs() < 0.1, "{mean}");
    }

    #[test]
    fn forward_selection_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let data: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                let mut row: Vec<f64> = (0..7).map(|_| noise.sample(&mut rng)).collect();
                row[4] = if i < 20 { -5.0 } else { 5.0 } + 0.3 * noise.sample(&mut rng);
                row
            })
            .collect();
        let (z, _) = standardize(&data).unwrap();
        // brute force over single columns
        let best_single = (0..7)
            .max_by(|&a, &b| {
                let sa = score_of(&select_columns(&z, &[a]), &kmeans_best(&select_columns(&z, &[a]), 2, 1, 5).unwrap());
                let sb = score_of(&select_columns(&z, &[b]), &kmeans_best(&select_columns(&z, &[b]), 2, 1, 5).unwrap());
                sa.total_cmp(&sb)
            })
            .unwrap();
        assert_eq!(best_single, 4);
        let fs = forward_select_kmeans(&z, 2, 0.5, 1, 5).unwrap();
        assert_eq!(fs.selected[0], 4);
        let fs = forward_select_kmeans(&z, 2, -1.0, 1, 5).unwrap();
        assert_eq!(fs.selected, vec![4]);
        assert_eq!(forward_select_kmeans(&[], 2, 0.5, 1, 5).unwrap_err(), ClusterError::Empty);
    }

    #[test]
    fn pipelines_reject_single_row() {
        let cols = vec!["a".to_string()];
        let err = cluster_pca(&[1], &cols, &[vec![1.0]], &ClusteringConfig::default(), 0).unwrap_err();
        assert_eq!(err.to_string(), "insufficient rows: 1");
    }

    #[test]
    fn rand_index_examples() {
        assert_eq!(rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]), 1.0);
        assert_relative_eq!(rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]), 2.0 / 6.0);
    }

    proptest! {
        #[test]
        fn inertia_non_increasing(seed in 0u64..500, k in 1usize..6) {
            let data = blobs(&[(0.0, 0.0), (4.0, 1.0), (1.0, 5.0)], 8, 1.5, seed);
            let res = kmeans(&data, k, seed).unwrap();
            for w in res.inertia_trace.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9);
            }
        }

        #[test]
        fn silhouette_matches_oracle(seed in 0u64..1000, n in 3usize..40, k in 2usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)]).collect();
            let labels: Vec<usize> = (0..n).map(|i| if i < 2 { i } else { rng.random_range(0..k) }).collect();
            let s = silhouette(&data, &labels).unwrap();
            prop_assert!((-1.0..=1.0).contains(&s));
            prop_assert!((s - silhouette_oracle(&data, &labels)).abs() < 1e-12);
        }

        #[test]
        fn pca_orthonormal_and_reconstruction(seed in 0u64..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<Vec<f64>> = (0..25).map(|_| {
                let a: f64 = rng.random_range(-3.0..3.0);
                vec![a, 2.0 * a + rng.random_range(-0.5..0.5), rng.random_range(-1.0..1.0), -a]
            }).collect();
            let (reduced, p) = pca_reduce(&data, 0.9).unwrap();
            for i in 0..4 {
                for j in 0..4 {
                    let dot: f64 = p.components[i].iter().zip(&p.components[j]).map(|(a, b)| a * b).sum();
                    let expect = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((dot - expect).abs() < 1e-9);
                }
            }
            let err: f64 = data.iter().zip(&reduced).map(|(r, s)| sq_dist(r, &p.reconstruct(s))).sum::<f64>() / 24.0;
            let discarded: f64 = p.eigenvalues[p.kept..].iter().sum();
            prop_assert!((err - discarded).abs() <= 1e-6 * (1.0 + discarded));
        }

        #[test]
        fn forward_selection_never_repeats(seed in 0u64..50) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<Vec<f64>> = (0..16).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let fs = forward_select_kmeans(&data, 2, 0.99, seed, 3).unwrap();
            let mut s = fs.selected.clone();
            s.sort_unstable();
            s.dedup();
            prop_assert_eq!(s.len(), fs.selected.len());
            for w in fs.scores.windows(2) {
                prop_assert!(w[1] > w[0]);
            }
        }

        #[test]
        fn standardization_affine_invariant(seed in 0u64..200, a in 0.1..50.0f64, b in -100.0..100.0f64) {
            let data = blobs(&[(0.0, 0.0), (6.0, 6.0)], 6, 1.0, seed);
            let scaled: Vec<Vec<f64>> = data.iter().map(|r| vec![a * r[0] + b, r[1]]).collect();
            let (za, _) = standardize(&data).unwrap();
            let (zb, _) = standardize(&scaled).unwrap();
            let ra = kmeans_best(&za, 2, seed, 3).unwrap();
            let rb = kmeans_best(&zb, 2, seed, 3).unwrap();
            prop_assert_eq!(ra.assignments, rb.assignments);
        }
    }
}
