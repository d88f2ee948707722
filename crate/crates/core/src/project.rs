//! 2D projection of document vectors for plotting.
//!
//! Classic PCA: mean-center, covariance with the M-1 divisor, take the two
//! eigenvectors with the largest eigenvalues. The eigenproblem is solved
//! with cyclic Jacobi rotations, which is exact enough for covariance
//! matrices of this size and keeps the crate dependency-free.
//!
//! Sign convention: each component is flipped so its largest-magnitude
//! coordinate is positive (first index wins ties), making the projection
//! reproducible across runs.

use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::artifact::{self, ArtifactHeader};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::vecmath::dot;

#[derive(Debug, Clone)]
pub struct Pca2 {
    pub mean: Vec<f64>,
    pub components: [Vec<f64>; 2],
    pub eigenvalues: [f64; 2],
}

/// Eigenvalues and eigenvectors (as columns) of a symmetric matrix.
pub(crate) fn jacobi_eigen(sym: &Matrix) -> (Vec<f64>, Matrix) {
    let n = sym.rows();
    assert_eq!(n, sym.cols(), "matrix must be square");
    let mut a = sym.clone();
    let mut v = Matrix::zeros(n, n);
    for i in 0..n {
        v.row_mut(i)[i] = 1.0;
    }
    let off_sq = |a: &Matrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += a.row(i)[j] * a.row(i)[j];
            }
        }
        s
    };
    let diag_sq = (0..n).map(|i| a.row(i)[i] * a.row(i)[i]).sum::<f64>().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        if off_sq(&a) <= 1e-28 * diag_sq {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.row(p)[q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a.row(q)[q] - a.row(p)[p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let app = a.row(p)[p];
                let aqq = a.row(q)[q];
                a.row_mut(p)[p] = app - t * apq;
                a.row_mut(q)[q] = aqq + t * apq;
                a.row_mut(p)[q] = 0.0;
                a.row_mut(q)[p] = 0.0;
                for i in 0..n {
                    if i == p || i == q {
                        continue;
                    }
                    let aip = a.row(i)[p];
                    let aiq = a.row(i)[q];
                    a.row_mut(i)[p] = c * aip - s * aiq;
                    a.row_mut(p)[i] = a.row(i)[p];
                    a.row_mut(i)[q] = s * aip + c * aiq;
                    a.row_mut(q)[i] = a.row(i)[q];
                }
                for i in 0..n {
                    let vip = v.row(i)[p];
                    let viq = v.row(i)[q];
                    v.row_mut(i)[p] = c * vip - s * viq;
                    v.row_mut(i)[q] = s * vip + c * viq;
                }
            }
        }
    }
    ((0..n).map(|i| a.row(i)[i]).collect(), v)
}

fn covariance(points: &Matrix, mean: &[f64]) -> Matrix {
    let (m, n) = (points.rows(), points.cols());
    let mut cov = Matrix::zeros(n, n);
    let mut centered = vec![0.0; n];
    for row in points.iter_rows() {
        for (c, x) in centered.iter_mut().enumerate() {
            *x = row[c] - mean[c];
        }
        for i in 0..n {
            let ci = centered[i];
            let out = cov.row_mut(i);
            for j in i..n {
                out[j] += ci * centered[j];
            }
        }
    }
    let scale = 1.0 / (m - 1) as f64;
    for i in 0..n {
        for j in i..n {
            let x = cov.row(i)[j] * scale;
            cov.row_mut(i)[j] = x;
            cov.row_mut(j)[i] = x;
        }
    }
    cov
}

fn fix_sign(component: &mut [f64]) {
    let mut arg = 0;
    for (i, x) in component.iter().enumerate() {
        if x.abs() > component[arg].abs() {
            arg = i;
        }
    }
    if component[arg] < 0.0 {
        for x in component.iter_mut() {
            *x = -*x;
        }
    }
}

pub fn fit_pca2(points: &Matrix) -> Result<Pca2> {
    let (m, n) = (points.rows(), points.cols());
    if m < 2 {
        return Err(Error::InvalidInput(format!(
            "PCA needs at least 2 points, found {m}"
        )));
    }
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "cannot project {n}-dimensional vectors to 2 dimensions"
        )));
    }
    let mean = points.mean_row().expect("rows checked above");
    let cov = covariance(points, &mean);
    let (values, vectors) = jacobi_eigen(&cov);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[j].partial_cmp(&values[i]).unwrap().then(i.cmp(&j)));
    let mut components: [Vec<f64>; 2] = [vec![0.0; n], vec![0.0; n]];
    let mut eigenvalues = [0.0; 2];
    for (slot, &idx) in order.iter().take(2).enumerate() {
        components[slot] = (0..n).map(|i| vectors.row(i)[idx]).collect();
        fix_sign(&mut components[slot]);
        eigenvalues[slot] = values[idx].max(0.0);
    }
    Ok(Pca2 { mean, components, eigenvalues })
}

impl Pca2 {
    pub fn transform(&self, points: &Matrix) -> Result<Matrix> {
        if points.cols() != self.mean.len() {
            return Err(Error::InvalidInput(format!(
                "projection expects {}-dimensional points, found {}",
                self.mean.len(),
                points.cols()
            )));
        }
        let mut out = Matrix::zeros(points.rows(), 2);
        let mut centered = vec![0.0; self.mean.len()];
        for (i, row) in points.iter_rows().enumerate() {
            for (c, x) in centered.iter_mut().enumerate() {
                *x = row[c] - self.mean[c];
            }
            out.row_mut(i)[0] = dot(&centered, &self.components[0]);
            out.row_mut(i)[1] = dot(&centered, &self.components[1]);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordRow {
    pub user_id: String,
    pub x: f64,
    pub y: f64,
    pub cluster: usize,
}

/// Rows are `user_id  x  y  cluster`, tab separated.
pub fn write_coords(
    path: &Path,
    header: &ArtifactHeader,
    ids: &[String],
    coords: &Matrix,
    clusters: &[usize],
) -> Result<()> {
    if coords.rows() != ids.len() || clusters.len() != ids.len() {
        return Err(Error::InvalidInput("coords, ids and clusters must line up".into()));
    }
    if coords.cols() != 2 {
        return Err(Error::InvalidInput("coords must be 2-dimensional".into()));
    }
    let mut w = artifact::create_writer(path)?;
    let io_err = |e| Error::io(path, e);
    writeln!(w, "{}", header.line()).map_err(io_err)?;
    for (i, id) in ids.iter().enumerate() {
        let row = coords.row(i);
        writeln!(w, "{id}\t{}\t{}\t{}", row[0], row[1], clusters[i]).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn read_coords_from<R: BufRead>(
    mut reader: R,
    source: &Path,
) -> Result<(Option<ArtifactHeader>, Vec<CoordRow>)> {
    let mut line_no = 0usize;
    let (header, leftover) = artifact::take_header(&mut reader, source, &mut line_no)?;
    let mut rows: Vec<CoordRow> = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    let mut handle = |line: String, line_no: usize| -> Result<()> {
        if line.is_empty() {
            return Ok(());
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::parse(
                source,
                line_no,
                format!("expected 4 columns, found {}", fields.len()),
            ));
        }
        if fields[0].is_empty() {
            return Err(Error::parse(source, line_no, "empty user id"));
        }
        if !seen.insert(fields[0].to_string()) {
            return Err(Error::parse(source, line_no, format!("duplicate user `{}`", fields[0])));
        }
        let coord = |s: &str| -> Result<f64> {
            let x: f64 =
                s.parse().map_err(|_| Error::parse(source, line_no, format!("bad float `{s}`")))?;
            if !x.is_finite() {
                return Err(Error::parse(source, line_no, "non-finite coordinate"));
            }
            Ok(x)
        };
        let cluster: usize = fields[3]
            .parse()
            .map_err(|_| Error::parse(source, line_no, format!("bad cluster `{}`", fields[3])))?;
        rows.push(CoordRow {
            user_id: fields[0].to_string(),
            x: coord(fields[1])?,
            y: coord(fields[2])?,
            cluster,
        });
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

pub fn read_coords(path: &Path) -> Result<(Option<ArtifactHeader>, Vec<CoordRow>)> {
    read_coords_from(artifact::open_reader(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding;
    use crate::vecmath::norm;
    use rand::Rng;
    use std::path::PathBuf;

    fn random_points(m: usize, n: usize, seed: u64) -> Matrix {
        let mut rng = seeding::derive_rng(seed, &[71]);
        let rows: Vec<Vec<f64>> =
            (0..m).map(|_| (0..n).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        Matrix::from_rows(&rows)
    }

    #[test]
    fn jacobi_solves_known_matrices() {
        let diag = Matrix::from_rows(&[vec![3.0, 0.0], vec![0.0, 7.0]]);
        let (values, vectors) = jacobi_eigen(&diag);
        assert_eq!(values, vec![3.0, 7.0]);
        assert_eq!(vectors.row(0), &[1.0, 0.0]);

        // [[2,1],[1,2]] has eigenvalues 3 and 1
        let sym = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        let (mut values, vectors) = jacobi_eigen(&sym);
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((values[0] - 1.0).abs() < 1e-12);
        assert!((values[1] - 3.0).abs() < 1e-12);
        // columns stay orthonormal
        let col = |j: usize| vec![vectors.row(0)[j], vectors.row(1)[j]];
        assert!((norm(&col(0)) - 1.0).abs() < 1e-12);
        assert!(dot(&col(0), &col(1)).abs() < 1e-12);
    }

    #[test]
    fn components_are_orthonormal() {
        let points = random_points(40, 9, 2);
        let pca = fit_pca2(&points).unwrap();
        assert!((norm(&pca.components[0]) - 1.0).abs() < 1e-9);
        assert!((norm(&pca.components[1]) - 1.0).abs() < 1e-9);
        assert!(dot(&pca.components[0], &pca.components[1]).abs() < 1e-9);
        assert!(pca.eigenvalues[0] >= pca.eigenvalues[1]);
    }

    #[test]
    fn rank_two_data_reconstructs_exactly() {
        // points live in a 2D subspace of R^5, so PCA loses nothing
        let mut rng = seeding::derive_rng(3, &[72]);
        let u = [1.0, 0.0, 2.0, -1.0, 0.5];
        let v = [0.0, 3.0, -1.0, 1.0, 1.0];
        let offset = [5.0, -2.0, 0.0, 1.0, 4.0];
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|_| {
                let a: f64 = rng.random_range(-2.0..2.0);
                let b: f64 = rng.random_range(-2.0..2.0);
                (0..5).map(|c| offset[c] + a * u[c] + b * v[c]).collect()
            })
            .collect();
        let points = Matrix::from_rows(&rows);
        let pca = fit_pca2(&points).unwrap();
        let coords = pca.transform(&points).unwrap();
        for (i, row) in points.iter_rows().enumerate() {
            for c in 0..5 {
                let rebuilt = pca.mean[c]
                    + coords.row(i)[0] * pca.components[0][c]
                    + coords.row(i)[1] * pca.components[1][c];
                assert!((rebuilt - row[c]).abs() < 1e-8, "point {i} coord {c}");
            }
        }
    }

    #[test]
    fn first_component_captures_the_most_variance() {
        let points = random_points(60, 6, 4);
        let pca = fit_pca2(&points).unwrap();
        let coords = pca.transform(&points).unwrap();
        let var = |col: usize| {
            let mean = (0..60).map(|i| coords.row(i)[col]).sum::<f64>() / 60.0;
            (0..60).map(|i| (coords.row(i)[col] - mean).powi(2)).sum::<f64>() / 59.0
        };
        let (v0, v1) = (var(0), var(1));
        assert!(v0 >= v1);
        // projected variance matches the eigenvalue
        assert!((v0 - pca.eigenvalues[0]).abs() < 1e-9 * v0.max(1.0));
        assert!((v1 - pca.eigenvalues[1]).abs() < 1e-9 * v1.max(1.0));
    }

    #[test]
    fn sign_convention_makes_the_largest_coordinate_positive() {
        // dominant direction (-3, 1, 0.1): component must be flipped so the
        // first coordinate (the largest in magnitude) ends up positive
        let mut rng = seeding::derive_rng(5, &[73]);
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|_| {
                let a: f64 = rng.random_range(-2.0..2.0);
                let noise: f64 = rng.random_range(-0.01..0.01);
                vec![-3.0 * a, a, 0.1 * a + noise]
            })
            .collect();
        let pca = fit_pca2(&Matrix::from_rows(&rows)).unwrap();
        assert!(pca.components[0][0] > 0.9);
        assert!(pca.components[0][1] < 0.0);
        for comp in &pca.components {
            let max = comp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let min = comp.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(max >= -min, "largest magnitude coordinate is positive");
        }
    }

    #[test]
    fn identical_points_fall_back_to_canonical_axes() {
        let points = Matrix::from_rows(&vec![vec![1.0, 2.0, 3.0]; 4]);
        let pca = fit_pca2(&points).unwrap();
        assert_eq!(pca.components[0], vec![1.0, 0.0, 0.0]);
        assert_eq!(pca.components[1], vec![0.0, 1.0, 0.0]);
        assert_eq!(pca.eigenvalues, [0.0, 0.0]);
        let coords = pca.transform(&points).unwrap();
        assert!(coords.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        assert!(fit_pca2(&Matrix::from_rows(&[vec![1.0, 2.0]])).is_err(), "one point");
        assert!(fit_pca2(&Matrix::from_rows(&[vec![1.0], vec![2.0]])).is_err(), "one dim");
        let pca = fit_pca2(&random_points(5, 3, 6)).unwrap();
        assert!(pca.transform(&random_points(5, 4, 7)).is_err(), "dim mismatch");
    }

    #[test]
    fn coords_file_round_trips() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("coords.tsv");
        let ids = vec!["ana".to_string(), "beto maria".to_string()];
        let coords = Matrix::from_rows(&[vec![0.125, -3.5], vec![1e-9, 42.0]]);
        let clusters = vec![1, 0];
        let header = ArtifactHeader::new("coords", "cfg", vec!["docvecs".into()]);
        write_coords(&path, &header, &ids, &coords, &clusters).unwrap();
        let (h, rows) = read_coords(&path).unwrap();
        assert_eq!(h.unwrap().kind, "coords");
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0], CoordRow { user_id: "ana".into(), x: 0.125, y: -3.5, cluster: 1 });
        assert_eq!(
            rows[1],
            CoordRow { user_id: "beto maria".into(), x: 1e-9, y: 42.0, cluster: 0 }
        );
    }

    #[test]
    fn coords_reader_rejects_corruption() {
        let parse =
            |s: &str| read_coords_from(std::io::Cursor::new(s.to_string()), &PathBuf::from("c"));
        assert!(parse("ana\t1.0\t2.0").is_err(), "missing column");
        assert!(parse("ana\t1.0\t2.0\t0\tx").is_err(), "extra column");
        assert!(parse("ana\tNaN\t2.0\t0").is_err(), "non-finite");
        assert!(parse("ana\t1.0\t2.0\t-1").is_err(), "bad cluster");
        assert!(parse("\t1.0\t2.0\t0").is_err(), "empty id");
        assert!(parse("ana\t1.0\t2.0\t0\nana\t3.0\t4.0\t1").is_err(), "duplicate id");
        assert!(parse("ana\t1.0\t2.0\t0\nbea\t3.0\t4.0\t1").is_ok());
    }
}
