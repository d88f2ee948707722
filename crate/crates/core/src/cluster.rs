//! K-means (greedy k-means++ seeding, Lloyd iterations, single-point
//! refinement sweeps, restarts) plus the within-cluster dispersion
//! measures the gap statistic builds on.
//!
//! For a cluster r with n_r points, the dispersion is
//!
//! D_r = (1 / (2 n_r)) sum_{i,j in r} ||x_i - x_j||^2
//!
//! summed over ordered pairs, which equals sum_{i in r} ||x_i - mean_r||^2.
//! The pairwise form is used verbatim for small clusters, the centroid
//! identity for large ones. W_k is the total over clusters.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;

use crate::artifact::{self, ArtifactHeader};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seeding;
use crate::vecmath::squared_distance;

/// Below this size the pairwise dispersion form is used directly.
const PAIRWISE_CUTOFF: usize = 64;

#[derive(Debug, Clone)]
pub struct KmeansOpts {
    pub max_iter: usize,
    /// Convergence threshold on the largest centroid shift between
    /// iterations (euclidean distance).
    pub tol: f64,
    pub restarts: usize,
}

impl Default for KmeansOpts {
    fn default() -> Self {
        KmeansOpts { max_iter: 300, tol: 1e-6, restarts: 10 }
    }
}

impl KmeansOpts {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 || self.restarts == 0 {
            return Err(Error::Config("kmeans max_iter and restarts must be at least 1".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::Config("kmeans tol must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ClusterModel {
    pub k: usize,
    /// k x N centroid matrix.
    pub centroids: Matrix,
    /// Cluster of each point; the nearest centroid, ties to the lowest
    /// cluster index.
    pub assignments: Vec<usize>,
    /// Sum of squared distances from each point to its assigned centroid.
    pub inertia: f64,
    /// W_k: total within-cluster dispersion of the final assignment.
    pub within_dispersion: f64,
}

pub fn within_dispersion_pairwise(points: &Matrix) -> f64 {
    let n = points.rows();
    if n == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            total += squared_distance(points.row(i), points.row(j));
        }
    }
    total / (2.0 * n as f64)
}

pub fn within_dispersion_centroid(points: &Matrix) -> f64 {
    match points.mean_row() {
        None => 0.0,
        Some(mean) => points.iter_rows().map(|r| squared_distance(r, &mean)).sum(),
    }
}

pub fn within_dispersion(points: &Matrix) -> f64 {
    if points.rows() <= PAIRWISE_CUTOFF {
        within_dispersion_pairwise(points)
    } else {
        within_dispersion_centroid(points)
    }
}

/// W_k over an assignment: the dispersion of each cluster's members, summed.
pub fn total_within_dispersion(points: &Matrix, assignments: &[usize], k: usize) -> f64 {
    assert_eq!(points.rows(), assignments.len());
    let mut total = 0.0;
    for c in 0..k {
        let members: Vec<Vec<f64>> = assignments
            .iter()
            .zip(points.iter_rows())
            .filter(|(a, _)| **a == c)
            .map(|(_, r)| r.to_vec())
            .collect();
        total += within_dispersion(&Matrix::from_rows(&members));
    }
    total
}

fn nearest_centroid(point: &[f64], centroids: &Matrix) -> (usize, f64) {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (c, row) in centroids.iter_rows().enumerate() {
        let d = squared_distance(point, row);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    (best, best_d)
}

fn assign_all(points: &Matrix, centroids: &Matrix, assignments: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for (i, row) in points.iter_rows().enumerate() {
        let (c, d) = nearest_centroid(row, centroids);
        assignments[i] = c;
        inertia += d;
    }
    inertia
}

/// Candidate draws per added center in greedy k-means++, matching the
/// standard-toolkit default.
fn local_trials(k: usize) -> usize {
    2 + (k as f64).ln().floor() as usize
}

/// Greedy k-means++: each center after the first is the best of a few
/// D^2-weighted candidate draws, judged by the potential it leaves.
fn kmeanspp_seed<R: Rng>(points: &Matrix, k: usize, rng: &mut R) -> Matrix {
    let m = points.rows();
    let mut centroids = Matrix::zeros(k, points.cols());
    let first = rng.random_range(0..m);
    centroids.row_mut(0).copy_from_slice(points.row(first));
    let mut dist2: Vec<f64> = points.iter_rows().map(|r| squared_distance(r, points.row(first))).collect();
    for j in 1..k {
        let total: f64 = dist2.iter().sum();
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for _ in 0..local_trials(k) {
            let pick = if total > 0.0 {
                let r = rng.random::<f64>() * total;
                let mut cum = 0.0;
                let mut pick = m - 1;
                for (i, &d) in dist2.iter().enumerate() {
                    cum += d;
                    if cum >= r && d > 0.0 {
                        pick = i;
                        break;
                    }
                }
                pick
            } else {
                // all remaining distances zero (duplicate-heavy data)
                rng.random_range(0..m)
            };
            let cand: Vec<f64> = dist2
                .iter()
                .enumerate()
                .map(|(i, &d)| d.min(squared_distance(points.row(i), points.row(pick))))
                .collect();
            let potential: f64 = cand.iter().sum();
            if best.as_ref().is_none_or(|(p, _, _)| potential < *p) {
                best = Some((potential, pick, cand));
            }
        }
        let (_, pick, cand) = best.expect("at least one trial");
        centroids.row_mut(j).copy_from_slice(points.row(pick));
        dist2 = cand;
    }
    centroids
}

/// One seeded k-means run: k-means++ seeding, Lloyd iterations with empty
/// clusters re-seeded at the point farthest from its assigned centroid
/// (ties to the lowest point index).
fn kmeans_single(points: &Matrix, k: usize, opts: &KmeansOpts, rng: &mut impl Rng) -> ClusterModel {
    let m = points.rows();
    let mut centroids = kmeanspp_seed(points, k, rng);
    let mut assignments = vec![0usize; m];

    for _iter in 0..opts.max_iter {
        assign_all(points, &centroids, &mut assignments);
        repair_empty_clusters(points, &mut centroids, &mut assignments, k);

        // means of the current members
        let mut sums = Matrix::zeros(k, points.cols());
        let mut counts = vec![0usize; k];
        for (i, row) in points.iter_rows().enumerate() {
            let c = assignments[i];
            counts[c] += 1;
            for (s, x) in sums.row_mut(c).iter_mut().zip(row) {
                *s += x;
            }
        }
        let mut movement: f64 = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let inv = 1.0 / counts[c] as f64;
            for s in sums.row_mut(c).iter_mut() {
                *s *= inv;
            }
            movement = movement.max(squared_distance(sums.row(c), centroids.row(c)).sqrt());
            centroids.row_mut(c).copy_from_slice(sums.row(c));
        }
        if movement < opts.tol {
            // Lloyd is stable; single-point moves can still lower the
            // objective, so step over the fixed point and resume if one does
            if !improve_by_moves(points, &mut centroids, &mut assignments, k, opts.max_iter) {
                break;
            }
        }
    }

    let mut inertia = assign_all(points, &centroids, &mut assignments);
    if assignments_have_empty(&assignments, k) {
        // converged onto a degenerate solution (exact ties); force-fill
        repair_empty_clusters(points, &mut centroids, &mut assignments, k);
        inertia = assignments
            .iter()
            .zip(points.iter_rows())
            .map(|(&a, row)| squared_distance(row, centroids.row(a)))
            .sum();
    }
    let within_dispersion = total_within_dispersion(points, &assignments, k);
    ClusterModel { k, centroids, assignments, inertia, within_dispersion }
}

/// First-improvement sweeps of single-point reassignments, the refinement
/// step of Hartigan and Wong. Moving point x from cluster a (n_a members)
/// to cluster b changes the objective by exactly
///
///   n_b/(n_b+1) ||x - c_b||^2  -  n_a/(n_a-1) ||x - c_a||^2
///
/// while the centroids stay exact means. Sweeps run until none improves
/// (bounded by max_sweeps) and moves that would empty a cluster are not
/// considered. Returns whether anything moved.
fn improve_by_moves(
    points: &Matrix,
    centroids: &mut Matrix,
    assignments: &mut [usize],
    k: usize,
    max_sweeps: usize,
) -> bool {
    if k < 2 {
        return false;
    }
    let d = points.cols();
    let mut sums = Matrix::zeros(k, d);
    let mut counts = vec![0usize; k];
    for (i, row) in points.iter_rows().enumerate() {
        counts[assignments[i]] += 1;
        for (s, x) in sums.row_mut(assignments[i]).iter_mut().zip(row) {
            *s += x;
        }
    }
    let refresh = |c: usize, sums: &Matrix, counts: &[usize], centroids: &mut Matrix| {
        let inv = 1.0 / counts[c] as f64;
        for (out, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
            *out = s * inv;
        }
    };
    let mut any = false;
    for _sweep in 0..max_sweeps {
        let mut moved = false;
        for (i, row) in points.iter_rows().enumerate() {
            let a = assignments[i];
            if counts[a] < 2 {
                continue;
            }
            let leave = counts[a] as f64 / (counts[a] - 1) as f64
                * squared_distance(row, centroids.row(a));
            let mut best: Option<(f64, usize)> = None;
            for b in 0..k {
                if b == a {
                    continue;
                }
                let enter = counts[b] as f64 / (counts[b] + 1) as f64
                    * squared_distance(row, centroids.row(b));
                if best.is_none_or(|(e, _)| enter < e) {
                    best = Some((enter, b));
                }
            }
            let (enter, b) = best.expect("k >= 2");
            if enter < leave {
                counts[a] -= 1;
                counts[b] += 1;
                for (j, x) in row.iter().enumerate() {
                    sums.row_mut(a)[j] -= x;
                    sums.row_mut(b)[j] += x;
                }
                refresh(a, &sums, &counts, centroids);
                refresh(b, &sums, &counts, centroids);
                assignments[i] = b;
                moved = true;
                any = true;
            }
        }
        if !moved {
            break;
        }
    }
    any
}

fn assignments_have_empty(assignments: &[usize], k: usize) -> bool {
    let mut seen = vec![false; k];
    for &a in assignments {
        seen[a] = true;
    }
    seen.iter().any(|s| !s)
}

/// Re-seed every empty cluster at the point currently farthest from its
/// assigned centroid (ties to the lowest point index) and move that point
/// into the cluster. Each repair uses a distinct point.
fn repair_empty_clusters(
    points: &Matrix,
    centroids: &mut Matrix,
    assignments: &mut [usize],
    k: usize,
) {
    let mut size = vec![0usize; k];
    for &a in assignments.iter() {
        size[a] += 1;
    }
    for c in 0..k {
        if size[c] > 0 {
            continue;
        }
        // points in singleton clusters stay put, so a repaired point is
        // never stolen again; by pigeonhole some cluster has >= 2 members
        let mut far: Option<(usize, f64)> = None;
        for (i, row) in points.iter_rows().enumerate() {
            if size[assignments[i]] <= 1 {
                continue;
            }
            let d = squared_distance(row, centroids.row(assignments[i]));
            if far.is_none_or(|(_, fd)| d > fd) {
                far = Some((i, d));
            }
        }
        let Some((i, _)) = far else { continue };
        size[assignments[i]] -= 1;
        assignments[i] = c;
        size[c] = 1;
        centroids.row_mut(c).copy_from_slice(points.row(i));
    }
}

/// Full k-means: `opts.restarts` seeded runs, keeping the lowest inertia
/// (first run wins ties). Deterministic for a given seed.
pub fn kmeans(points: &Matrix, k: usize, seed: u64, opts: &KmeansOpts) -> Result<ClusterModel> {
    opts.validate()?;
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    if points.rows() == 0 {
        return Err(Error::InvalidInput("cannot cluster zero points".into()));
    }
    if k > points.rows() {
        return Err(Error::InvalidInput(format!(
            "k = {} exceeds the number of points ({})",
            k,
            points.rows()
        )));
    }
    let mut best: Option<ClusterModel> = None;
    for r in 0..opts.restarts {
        let mut rng = seeding::derive_rng(seed, &[seeding::TAG_KMEANS, r as u64]);
        let model = kmeans_single(points, k, opts, &mut rng);
        if best.as_ref().is_none_or(|b| model.inertia < b.inertia) {
            best = Some(model);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Rebuild a model from persisted centroids and assignments, recomputing
/// the dispersion against the given points.
pub fn reconstruct_model(
    centroids: Matrix,
    assignments: Vec<usize>,
    points: &Matrix,
) -> Result<ClusterModel> {
    let k = centroids.rows();
    if assignments.len() != points.rows() {
        return Err(Error::InvalidInput(format!(
            "{} assignments for {} points",
            assignments.len(),
            points.rows()
        )));
    }
    if centroids.cols() != points.cols() {
        return Err(Error::InvalidInput(format!(
            "{}-dimensional centroids for {}-dimensional points",
            centroids.cols(),
            points.cols()
        )));
    }
    if let Some(&bad) = assignments.iter().find(|&&a| a >= k) {
        return Err(Error::InvalidInput(format!(
            "assignment to cluster {bad} but there are only {k} centroids"
        )));
    }
    let within = total_within_dispersion(points, &assignments, k);
    Ok(ClusterModel { k, centroids, assignments, inertia: within, within_dispersion: within })
}

pub fn write_assignments(
    path: &Path,
    user_ids: &[String],
    assignments: &[usize],
    header: &ArtifactHeader,
) -> Result<()> {
    assert_eq!(user_ids.len(), assignments.len());
    let mut w = artifact::create_writer(path)?;
    let io_err = |e| Error::io(path, e);
    writeln!(w, "{}", header.line()).map_err(io_err)?;
    for (id, a) in user_ids.iter().zip(assignments) {
        writeln!(w, "{id}\t{a}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn read_assignments_from<R: BufRead>(
    mut reader: R,
    source: &Path,
) -> Result<(Option<ArtifactHeader>, Vec<(String, usize)>)> {
    let mut line_no = 0usize;
    let (header, leftover) = artifact::take_header(&mut reader, source, &mut line_no)?;
    let mut rows: Vec<(String, usize)> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut handle = |line: String, line_no: usize| -> Result<()> {
        if line.is_empty() {
            return Ok(());
        }
        let (id, cluster) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(source, line_no, "expected user_id<TAB>cluster"))?;
        if id.is_empty() {
            return Err(Error::parse(source, line_no, "empty user id"));
        }
        let cluster: usize = cluster
            .parse()
            .map_err(|_| Error::parse(source, line_no, format!("bad cluster id `{cluster}`")))?;
        if !seen.insert(id.to_string()) {
            return Err(Error::parse(source, line_no, format!("duplicate user `{id}`")));
        }
        rows.push((id.to_string(), cluster));
        Ok(())
    };
    if let Some(first) = leftover {
        handle(first, line_no)?;
    }
    for line in reader.lines() {
        line_no += 1;
        handle(line.map_err(|e| Error::io(source, e))?, line_no)?;
    }
    Ok((header, rows))
}

pub fn read_assignments(path: &Path) -> Result<(Option<ArtifactHeader>, Vec<(String, usize)>)> {
    read_assignments_from(artifact::open_reader(path)?, path)
}

/// Centroid file: shape line `k N`, then one space-separated row per
/// centroid.
pub fn write_centroids(path: &Path, centroids: &Matrix, header: &ArtifactHeader) -> Result<()> {
    let mut w = artifact::create_writer(path)?;
    let io_err = |e| Error::io(path, e);
    writeln!(w, "{}", header.line()).map_err(io_err)?;
    writeln!(w, "{} {}", centroids.rows(), centroids.cols()).map_err(io_err)?;
    for row in centroids.iter_rows() {
        let mut first = true;
        for x in row {
            if first {
                write!(w, "{x}").map_err(io_err)?;
                first = false;
            } else {
                write!(w, " {x}").map_err(io_err)?;
            }
        }
        writeln!(w).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn read_centroids_from<R: BufRead>(
    mut reader: R,
    source: &Path,
) -> Result<(Option<ArtifactHeader>, Matrix)> {
    let mut line_no = 0usize;
    let (header, leftover) = artifact::take_header(&mut reader, source, &mut line_no)?;
    let mut shape: Option<(usize, usize)> = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut handle = |line: String, line_no: usize| -> Result<()> {
        if line.is_empty() {
            return Ok(());
        }
        let Some((k, n)) = shape else {
            let mut parts = line.split_whitespace();
            let bad = || Error::parse(source, line_no, format!("bad shape line `{line}`"));
            let k: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let n: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            if parts.next().is_some() {
                return Err(bad());
            }
            shape = Some((k, n));
            return Ok(());
        };
        let mut row = Vec::with_capacity(n.min(4096));
        for f in line.split(' ') {
            let x: f64 = f
                .parse()
                .map_err(|_| Error::parse(source, line_no, format!("bad float `{f}`")))?;
            if !x.is_finite() {
                return Err(Error::parse(source, line_no, "non-finite value"));
            }
            row.push(x);
        }
        if row.len() != n {
            return Err(Error::parse(source, line_no, format!("row has {} values, expected {n}", row.len())));
        }
        if rows.len() == k {
            return Err(Error::parse(source, line_no, format!("more than {k} rows")));
        }
        rows.push(row);
        Ok(())
    };
    if let Some(first) = leftover {
        handle(first, line_no)?;
    }
    for line in reader.lines() {
        line_no += 1;
        handle(line.map_err(|e| Error::io(source, e))?, line_no)?;
    }
    match shape {
        None => Err(Error::parse(source, line_no, "missing `k N` shape line")),
        Some((k, _)) if rows.len() != k => {
            Err(Error::parse(source, line_no, format!("expected {k} rows, found {}", rows.len())))
        }
        Some(_) => Ok((header, Matrix::from_rows(&rows))),
    }
}

pub fn read_centroids(path: &Path) -> Result<(Option<ArtifactHeader>, Matrix)> {
    read_centroids_from(artifact::open_reader(path)?, path)
}
