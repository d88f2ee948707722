//! Gap statistic for choosing the cluster count.
//!
//! For each candidate k the observed within-dispersion W_k is compared with
//! the dispersion of B reference datasets drawn uniformly from the data's
//! per-coordinate bounding box:
//!
//! Gap_B(k) = (1/B) sum_b log W_kb - log W_k
//! s_k = sqrt(1 + 1/B) * sd_b(log W_kb)        (population sd)
//!
//! The reference datasets are generated once and clustered at every k, so
//! the curve is comparable across k. A k whose observed or reference
//! dispersion is exactly zero has no defined log and is excluded.
//!
//! Selection: `firstSE` takes the smallest k with
//! Gap(k) >= Gap(k') - s_{k'} for the next evaluated k'; when no k
//! satisfies it the argmax of the gap is returned with a no-elbow warning.
//! `argmaxGap` takes the argmax directly (ties to the smallest k).

use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::Rng;

use crate::artifact::{self, ArtifactHeader};
use crate::cluster::{kmeans, KmeansOpts};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seeding;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionRule {
    FirstSe,
    ArgmaxGap,
}

impl FromStr for SelectionRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "firstse" => Ok(SelectionRule::FirstSe),
            "argmaxgap" => Ok(SelectionRule::ArgmaxGap),
            other => {
                Err(Error::Config(format!("unknown selection rule `{other}` (firstSE, argmaxGap)")))
            }
        }
    }
}

impl std::fmt::Display for SelectionRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SelectionRule::FirstSe => "firstSE",
            SelectionRule::ArgmaxGap => "argmaxGap",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapPoint {
    pub k: usize,
    pub log_w: Option<f64>,
    pub log_w_ref_mean: Option<f64>,
    pub gap: Option<f64>,
    pub s: Option<f64>,
}

impl GapPoint {
    pub fn excluded(&self) -> bool {
        self.gap.is_none()
    }
}

#[derive(Debug, Clone)]
pub struct GapCurve {
    pub points: Vec<GapPoint>,
    pub b: usize,
    pub rule: SelectionRule,
    pub selected_k: usize,
    pub no_elbow: bool,
}

/// Uniform sample over the per-coordinate bounding box of `points`, same
/// shape, row-major draw order.
pub fn reference_sample<R: Rng>(points: &Matrix, rng: &mut R) -> Matrix {
    let n = points.cols();
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for row in points.iter_rows() {
        for (c, &x) in row.iter().enumerate() {
            lo[c] = lo[c].min(x);
            hi[c] = hi[c].max(x);
        }
    }
    let mut out = Matrix::zeros(points.rows(), n);
    for i in 0..points.rows() {
        for c in 0..n {
            out.row_mut(i)[c] =
                if hi[c] > lo[c] { rng.random_range(lo[c]..hi[c]) } else { lo[c] };
        }
    }
    out
}

/// Compute the gap curve and select k. Reference datasets depend only on
/// the seed, and each (dataset, k) clustering job has its own derived seed,
/// so the result is identical for any worker count.
pub fn gap_curve(
    points: &Matrix,
    ks: &[usize],
    b: usize,
    seed: u64,
    opts: &KmeansOpts,
    rule: SelectionRule,
    workers: usize,
) -> Result<GapCurve> {
    opts.validate()?;
    if ks.is_empty() {
        return Err(Error::Config("empty k sweep".into()));
    }
    if !ks.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::Config("k sweep must be strictly ascending".into()));
    }
    if ks[0] == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if workers == 0 {
        return Err(Error::Config("workers must be at least 1".into()));
    }
    if b < 2 {
        return Err(Error::Config("the gap statistic needs at least 2 reference datasets".into()));
    }
    let m = points.rows();
    if *ks.last().unwrap() > m {
        return Err(Error::InvalidInput(format!(
            "k sweep reaches {} but there are only {m} points",
            ks.last().unwrap()
        )));
    }

    let refs: Vec<Matrix> = (0..b)
        .map(|i| {
            let mut rng = seeding::derive_rng(seed, &[seeding::TAG_GAP_REF, i as u64]);
            reference_sample(points, &mut rng)
        })
        .collect();

    // one job per (k, dataset); slot 0 of each k is the observed data
    let total_jobs = ks.len() * (b + 1);
    let next_job = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<f64>>> = Mutex::new(vec![None; total_jobs]);
    let failure: Mutex<Option<Error>> = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..workers.min(total_jobs) {
            scope.spawn(|| loop {
                let job = next_job.fetch_add(1, Ordering::Relaxed);
                if job >= total_jobs {
                    return;
                }
                let k_idx = job / (b + 1);
                let dataset = job % (b + 1);
                let k = ks[k_idx];
                let (data, job_seed) = if dataset == 0 {
                    (points, seeding::derive_seed(seed, &[seeding::TAG_GAP_OBS, k as u64]))
                } else {
                    (
                        &refs[dataset - 1],
                        seeding::derive_seed(
                            seed,
                            &[seeding::TAG_GAP_REF_CLUSTER, k as u64, (dataset - 1) as u64],
                        ),
                    )
                };
                match kmeans(data, k, job_seed, opts) {
                    Ok(model) => {
                        results.lock().unwrap()[job] = Some(model.within_dispersion);
                    }
                    Err(e) => {
                        *failure.lock().unwrap() = Some(e);
                        return;
                    }
                }
            });
        }
    });
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    let results = results.into_inner().unwrap();

    let mut curve_points = Vec::with_capacity(ks.len());
    for (k_idx, &k) in ks.iter().enumerate() {
        let w_obs = results[k_idx * (b + 1)].expect("job completed");
        let w_refs: Vec<f64> =
            (0..b).map(|i| results[k_idx * (b + 1) + 1 + i].expect("job completed")).collect();
        let log_w = (w_obs > 0.0).then(|| w_obs.ln());
        let ref_logs: Option<Vec<f64>> = w_refs
            .iter()
            .map(|&w| (w > 0.0).then(|| w.ln()))
            .collect();
        let (log_w_ref_mean, gap, s) = match (&log_w, &ref_logs) {
            (Some(lw), Some(logs)) => {
                let mean = logs.iter().sum::<f64>() / b as f64;
                let var = logs.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / b as f64;
                let s = (1.0 + 1.0 / b as f64).sqrt() * var.sqrt();
                (Some(mean), Some(mean - lw), Some(s))
            }
            (None, Some(logs)) => {
                let mean = logs.iter().sum::<f64>() / b as f64;
                (Some(mean), None, None)
            }
            _ => (None, None, None),
        };
        curve_points.push(GapPoint { k, log_w, log_w_ref_mean, gap, s });
    }

    let (selected_k, no_elbow) = select_k(&curve_points, rule)?;
    Ok(GapCurve { points: curve_points, b, rule, selected_k, no_elbow })
}

/// Apply a selection rule to a computed curve. The bool is the no-elbow
/// warning: under firstSE no k satisfied the criterion and the argmax was
/// used instead.
pub fn select_k(points: &[GapPoint], rule: SelectionRule) -> Result<(usize, bool)> {
    let valid: Vec<&GapPoint> = points.iter().filter(|p| !p.excluded()).collect();
    if valid.is_empty() {
        return Err(Error::InvalidInput(
            "gap statistic undefined: every candidate k was excluded".into(),
        ));
    }
    let mut argmax = valid[0];
    for p in &valid[1..] {
        if p.gap.unwrap() > argmax.gap.unwrap() {
            argmax = p;
        }
    }
    match rule {
        SelectionRule::ArgmaxGap => Ok((argmax.k, false)),
        SelectionRule::FirstSe => {
            if valid.len() == 1 {
                return Ok((valid[0].k, false));
            }
            for w in valid.windows(2) {
                if w[0].gap.unwrap() >= w[1].gap.unwrap() - w[1].s.unwrap() {
                    return Ok((w[0].k, false));
                }
            }
            Ok((argmax.k, true))
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => "NA".into(),
    }
}

fn parse_opt(s: &str, source: &Path, line_no: usize) -> Result<Option<f64>> {
    if s == "NA" {
        return Ok(None);
    }
    let x: f64 =
        s.parse().map_err(|_| Error::parse(source, line_no, format!("bad float `{s}`")))?;
    if !x.is_finite() {
        return Err(Error::parse(source, line_no, "non-finite value"));
    }
    Ok(Some(x))
}

/// Rows are `k  logW  logW_ref_mean  gap  s  excluded`, tab separated, NA
/// for undefined fields. The selection result rides in the header extras.
pub fn write_gap(path: &Path, curve: &GapCurve, header: &ArtifactHeader) -> Result<()> {
    let header = header
        .clone()
        .with_extra("b", curve.b)
        .with_extra("rule", curve.rule)
        .with_extra("selected_k", curve.selected_k)
        .with_extra("no_elbow", curve.no_elbow);
    let mut w = artifact::create_writer(path)?;
    let io_err = |e| Error::io(path, e);
    writeln!(w, "{}", header.line()).map_err(io_err)?;
    for p in &curve.points {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}",
            p.k,
            fmt_opt(p.log_w),
            fmt_opt(p.log_w_ref_mean),
            fmt_opt(p.gap),
            fmt_opt(p.s),
            u8::from(p.excluded())
        )
        .map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn read_gap_from<R: BufRead>(
    mut reader: R,
    source: &Path,
) -> Result<(Option<ArtifactHeader>, Vec<GapPoint>)> {
    let mut line_no = 0usize;
    let (header, leftover) = artifact::take_header(&mut reader, source, &mut line_no)?;
    let mut points: Vec<GapPoint> = Vec::new();
    let mut handle = |line: String, line_no: usize| -> Result<()> {
        if line.is_empty() {
            return Ok(());
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(Error::parse(
                source,
                line_no,
                format!("expected 6 columns, found {}", fields.len()),
            ));
        }
        let k: usize = fields[0]
            .parse()
            .map_err(|_| Error::parse(source, line_no, format!("bad k `{}`", fields[0])))?;
        if let Some(prev) = points.last() {
            if prev.k >= k {
                return Err(Error::parse(source, line_no, "k values not strictly ascending"));
            }
        }
        let point = GapPoint {
            k,
            log_w: parse_opt(fields[1], source, line_no)?,
            log_w_ref_mean: parse_opt(fields[2], source, line_no)?,
            gap: parse_opt(fields[3], source, line_no)?,
            s: parse_opt(fields[4], source, line_no)?,
        };
        let flag = match fields[5] {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::parse(
                    source,
                    line_no,
                    format!("bad excluded flag `{other}`"),
                ))
            }
        };
        if flag != point.excluded() {
            return Err(Error::parse(source, line_no, "excluded flag contradicts row values"));
        }
        points.push(point);
        Ok(())
    };
    if let Some(first) = leftover {
        handle(first, line_no)?;
    }
    for line in reader.lines() {
        line_no += 1;
        handle(line.map_err(|e| Error::io(source, e))?, line_no)?;
    }
    Ok((header, points))
}

pub fn read_gap(path: &Path) -> Result<(Option<ArtifactHeader>, Vec<GapPoint>)> {
    read_gap_from(artifact::open_reader(path)?, path)
}

/// The selection recorded by `write_gap`: (selected_k, rule, no_elbow).
pub fn selection_from_header(header: &ArtifactHeader) -> Option<(usize, SelectionRule, bool)> {
    let k = header.extra("selected_k")?.parse().ok()?;
    let rule = header.extra("rule")?.parse().ok()?;
    let no_elbow = match header.extra("no_elbow")? {
        "true" => true,
        "false" => false,
        _ => return None,
    };
    Some((k, rule, no_elbow))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn blobs(centers: &[(f64, f64)], per: usize, spread: f64, seed: u64) -> Matrix {
        let mut rng = seeding::derive_rng(seed, &[61]);
        let mut rows = Vec::new();
        for &(cx, cy) in centers {
            for _ in 0..per {
                rows.push(vec![
                    cx + rng.random_range(-spread..spread),
                    cy + rng.random_range(-spread..spread),
                ]);
            }
        }
        Matrix::from_rows(&rows)
    }

    #[test]
    fn reference_sample_respects_the_bounding_box() {
        let points =
            Matrix::from_rows(&[vec![0.0, -2.0], vec![4.0, -2.0], vec![2.0, 3.0]]);
        let mut rng = seeding::derive_rng(5, &[62]);
        let sample = reference_sample(&points, &mut rng);
        assert_eq!(sample.rows(), 3);
        assert_eq!(sample.cols(), 2);
        for row in sample.iter_rows() {
            assert!((0.0..=4.0).contains(&row[0]));
            assert!((-2.0..=3.0).contains(&row[1]));
        }
        // degenerate coordinate stays constant
        let flat = Matrix::from_rows(&[vec![1.0, 5.0], vec![2.0, 5.0]]);
        let sample = reference_sample(&flat, &mut rng);
        assert!(sample.iter_rows().all(|r| r[1] == 5.0));
    }

    #[test]
    fn recovers_two_blobs() {
        let points = blobs(&[(-8.0, 0.0), (8.0, 0.0)], 30, 0.5, 1);
        let ks = [1, 2, 3, 4];
        let opts = KmeansOpts::default();
        let curve =
            gap_curve(&points, &ks, 5, 42, &opts, SelectionRule::FirstSe, 1).unwrap();
        assert_eq!(curve.selected_k, 2);
        assert!(!curve.no_elbow);
        let curve =
            gap_curve(&points, &ks, 5, 42, &opts, SelectionRule::ArgmaxGap, 1).unwrap();
        assert_eq!(curve.selected_k, 2);
    }

    #[test]
    fn worker_count_does_not_change_the_curve() {
        let points = blobs(&[(-5.0, 2.0), (5.0, -1.0), (0.0, 8.0)], 15, 0.4, 3);
        let ks = [1, 2, 3, 4, 5];
        let opts = KmeansOpts { restarts: 3, ..KmeansOpts::default() };
        let a = gap_curve(&points, &ks, 4, 7, &opts, SelectionRule::FirstSe, 1).unwrap();
        let b = gap_curve(&points, &ks, 4, 7, &opts, SelectionRule::FirstSe, 4).unwrap();
        assert_eq!(a.points, b.points);
        assert_eq!(a.selected_k, b.selected_k);
    }

    #[test]
    fn k_equal_to_point_count_is_excluded() {
        let points = blobs(&[(0.0, 0.0)], 5, 1.0, 9);
        let ks = [1, 5];
        let opts = KmeansOpts { restarts: 2, ..KmeansOpts::default() };
        let curve = gap_curve(&points, &ks, 3, 11, &opts, SelectionRule::FirstSe, 2).unwrap();
        assert!(!curve.points[0].excluded());
        assert!(curve.points[1].excluded(), "k = M has W = 0");
        assert_eq!(curve.selected_k, 1);
    }

    #[test]
    fn identical_points_make_every_k_excluded() {
        let points = Matrix::from_rows(&vec![vec![2.0, 2.0]; 6]);
        let opts = KmeansOpts { restarts: 2, ..KmeansOpts::default() };
        let err = gap_curve(&points, &[1, 2], 3, 1, &opts, SelectionRule::FirstSe, 1);
        assert!(err.is_err());
    }

    #[test]
    fn validation_errors() {
        let points = blobs(&[(0.0, 0.0)], 6, 1.0, 2);
        let opts = KmeansOpts::default();
        let run = |ks: &[usize], b: usize, workers: usize| {
            gap_curve(&points, ks, b, 1, &opts, SelectionRule::FirstSe, workers)
        };
        assert!(run(&[], 3, 1).is_err(), "empty sweep");
        assert!(run(&[2, 2], 3, 1).is_err(), "not ascending");
        assert!(run(&[0, 1], 3, 1).is_err(), "k zero");
        assert!(run(&[1, 2], 1, 1).is_err(), "b too small");
        assert!(run(&[1, 2], 3, 0).is_err(), "no workers");
        assert!(run(&[1, 7], 3, 1).is_err(), "k beyond M");
    }

    fn point(k: usize, gap: f64, s: f64) -> GapPoint {
        GapPoint {
            k,
            log_w: Some(0.0),
            log_w_ref_mean: Some(gap),
            gap: Some(gap),
            s: Some(s),
        }
    }

    fn excluded_point(k: usize) -> GapPoint {
        GapPoint { k, log_w: None, log_w_ref_mean: None, gap: None, s: None }
    }

    #[test]
    fn selection_rules_on_synthetic_curves() {
        // elbow at k=2: gap(2) >= gap(3) - s(3)
        let curve = vec![point(1, 0.1, 0.01), point(2, 0.5, 0.01), point(3, 0.51, 0.05)];
        assert_eq!(select_k(&curve, SelectionRule::FirstSe).unwrap(), (2, false));
        assert_eq!(select_k(&curve, SelectionRule::ArgmaxGap).unwrap(), (3, false));

        // monotonically climbing curve: no elbow, fall back to argmax
        let climbing = vec![point(1, 0.1, 0.001), point(2, 0.3, 0.001), point(3, 0.6, 0.001)];
        assert_eq!(select_k(&climbing, SelectionRule::FirstSe).unwrap(), (3, true));

        // argmax ties break to the smallest k
        let tied = vec![point(1, 0.4, 0.5), point(2, 0.4, 0.5), point(3, 0.1, 0.5)];
        assert_eq!(select_k(&tied, SelectionRule::ArgmaxGap).unwrap(), (1, false));

        // a single evaluable k is selected under both rules, no warning
        let single = vec![excluded_point(1), point(2, 0.2, 0.1), excluded_point(3)];
        assert_eq!(select_k(&single, SelectionRule::FirstSe).unwrap(), (2, false));
        assert_eq!(select_k(&single, SelectionRule::ArgmaxGap).unwrap(), (2, false));

        // excluded points are skipped, consecutive valid points compared
        let gappy = vec![point(1, 0.1, 0.01), excluded_point(2), point(3, 0.09, 0.05)];
        assert_eq!(select_k(&gappy, SelectionRule::FirstSe).unwrap(), (1, false));

        assert!(select_k(&[excluded_point(1)], SelectionRule::FirstSe).is_err());
    }

    #[test]
    fn gap_file_round_trips() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("gap.tsv");
        let points = blobs(&[(-8.0, 0.0), (8.0, 0.0)], 10, 0.5, 4);
        let opts = KmeansOpts { restarts: 2, ..KmeansOpts::default() };
        let curve =
            gap_curve(&points, &[1, 2, 3, 20], 3, 13, &opts, SelectionRule::FirstSe, 2).unwrap();
        assert!(curve.points[3].excluded(), "k = M row is excluded");
        let header = ArtifactHeader::new("gap", "cfg", vec!["in".into()]);
        write_gap(&path, &curve, &header).unwrap();
        let (h, back) = read_gap(&path).unwrap();
        let h = h.unwrap();
        assert_eq!(back, curve.points);
        assert_eq!(
            selection_from_header(&h).unwrap(),
            (curve.selected_k, SelectionRule::FirstSe, curve.no_elbow)
        );
        assert_eq!(h.extra("b"), Some("3"));
    }

    #[test]
    fn gap_reader_rejects_corruption() {
        let parse =
            |s: &str| read_gap_from(std::io::Cursor::new(s.to_string()), &PathBuf::from("g"));
        assert!(parse("1\t0.1\t0.2\t0.1\t0.05").is_err(), "missing column");
        assert!(parse("1\t0.1\t0.2\t0.1\t0.05\t2").is_err(), "bad flag");
        assert!(parse("1\t0.1\t0.2\t0.1\t0.05\t1").is_err(), "flag contradicts values");
        assert!(parse("1\t0.1\t0.2\tNA\tNA\t0").is_err(), "flag contradicts NA");
        assert!(parse("2\t0.1\t0.2\t0.1\t0.05\t0\n1\t0.1\t0.2\t0.1\t0.05\t0").is_err(), "descending k");
        assert!(parse("1\t0.1\t0.2\t0.1\t0.05\t0\n2\tNA\t0.2\tNA\tNA\t1").is_ok());
    }
}
