//! Per-cluster summaries: representative documents, word frequencies and
//! tweet length statistics.
//!
//! Frequencies and length stats are computed over the representative
//! documents only, with representatives ranked by ascending euclidean
//! distance to the cluster centroid. No stop-word filtering; counts are
//! raw in-vocabulary token counts.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use crate::artifact::{self, ArtifactHeader};
use crate::cluster::ClusterModel;
use crate::error::{Error, Result};
use crate::ingest::RawDocument;
use crate::matrix::Matrix;
use crate::tokenize::tokenize_document;
use crate::trainer::EmbeddingModel;
use crate::vecmath::squared_distance;
use crate::vocab::Vocabulary;

/// Word-membership source for frequency counting. The vocabulary and the
/// trained model carry the same word set, so either can back a report.
pub trait Lexicon {
    fn contains_word(&self, surface: &str) -> bool;
}

impl Lexicon for Vocabulary {
    fn contains_word(&self, surface: &str) -> bool {
        self.contains(surface)
    }
}

impl Lexicon for EmbeddingModel {
    fn contains_word(&self, surface: &str) -> bool {
        self.index_of(surface).is_some()
    }
}

pub const HIST_BUCKETS: usize = 15;
pub const HIST_BUCKET_WIDTH: usize = 10;

/// Posts are bucketed by character length in steps of 10 up to 140; the
/// last bucket collects everything longer, so the counts always sum to the
/// number of posts.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterReport {
    pub cluster_id: usize,
    pub size: usize,
    pub representative_user_ids: Vec<String>,
    pub top_words: Vec<(String, u64)>,
    pub avg_tweet_chars: f64,
    pub tweet_length_histogram: [u64; HIST_BUCKETS],
}

/// Document indices of the cluster's R nearest members, closest first,
/// distance ties broken by user id.
pub fn representatives(
    cluster: usize,
    model: &ClusterModel,
    ids: &[String],
    points: &Matrix,
    r: usize,
) -> Vec<usize> {
    let centroid = model.centroids.row(cluster);
    let mut members: Vec<(f64, usize)> = model
        .assignments
        .iter()
        .enumerate()
        .filter(|(_, &a)| a == cluster)
        .map(|(i, _)| (squared_distance(points.row(i), centroid), i))
        .collect();
    members.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(ids[a.1].cmp(&ids[b.1])));
    if members.len() < r {
        log::warn!(
            "cluster {cluster} has only {} documents, fewer than the {r} requested",
            members.len()
        );
    }
    members.truncate(r);
    members.into_iter().map(|(_, i)| i).collect()
}

/// Exact in-vocabulary token counts over the given documents, descending,
/// count ties broken lexicographically, truncated to the top_n heaviest.
pub fn word_frequencies(
    docs: &[&RawDocument],
    lexicon: &impl Lexicon,
    top_n: usize,
) -> Vec<(String, u64)> {
    let mut counts: HashMap<String, u64> = HashMap::new();
    for doc in docs {
        for token in tokenize_document(doc).tokens {
            if lexicon.contains_word(&token.surface) {
                *counts.entry(token.surface).or_insert(0) += 1;
            }
        }
    }
    let mut pairs: Vec<(String, u64)> = counts.into_iter().collect();
    pairs.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    pairs.truncate(top_n);
    pairs
}

/// Mean post length in characters plus the bucketed length distribution.
pub fn tweet_length_stats(docs: &[&RawDocument]) -> (f64, [u64; HIST_BUCKETS]) {
    let mut histogram = [0u64; HIST_BUCKETS];
    let mut total = 0usize;
    let mut posts = 0usize;
    for doc in docs {
        for &len in &doc.post_lengths {
            total += len;
            posts += 1;
            histogram[(len / HIST_BUCKET_WIDTH).min(HIST_BUCKETS - 1)] += 1;
        }
    }
    let avg = if posts == 0 { 0.0 } else { total as f64 / posts as f64 };
    (avg, histogram)
}

/// One report per cluster, sorted by descending average tweet length
/// (ties by cluster id) to put the long-form clusters first.
pub fn full_report(
    model: &ClusterModel,
    ids: &[String],
    points: &Matrix,
    docstore: &[RawDocument],
    lexicon: &impl Lexicon,
    r: usize,
    top_n: usize,
) -> Result<Vec<ClusterReport>> {
    if r == 0 {
        return Err(Error::Config("R must be at least 1".into()));
    }
    if ids.len() != points.rows() || ids.len() != model.assignments.len() {
        return Err(Error::InvalidInput(
            "document vectors and cluster assignments must line up".into(),
        ));
    }
    let by_user: HashMap<&str, &RawDocument> =
        docstore.iter().map(|d| (d.user_id.as_str(), d)).collect();
    let mut reports = Vec::with_capacity(model.k);
    for cluster in 0..model.k {
        let rep_indices = representatives(cluster, model, ids, points, r);
        let size = model.assignments.iter().filter(|&&a| a == cluster).count();
        let mut rep_ids = Vec::with_capacity(rep_indices.len());
        let mut rep_docs = Vec::with_capacity(rep_indices.len());
        for i in rep_indices {
            let id = &ids[i];
            let doc = by_user.get(id.as_str()).ok_or_else(|| {
                Error::InvalidInput(format!("user `{id}` has a vector but no stored document"))
            })?;
            rep_ids.push(id.clone());
            rep_docs.push(*doc);
        }
        let top_words = word_frequencies(&rep_docs, lexicon, top_n);
        let (avg_tweet_chars, tweet_length_histogram) = tweet_length_stats(&rep_docs);
        reports.push(ClusterReport {
            cluster_id: cluster,
            size,
            representative_user_ids: rep_ids,
            top_words,
            avg_tweet_chars,
            tweet_length_histogram,
        });
    }
    reports.sort_by(|a, b| {
        b.avg_tweet_chars
            .partial_cmp(&a.avg_tweet_chars)
            .unwrap()
            .then(a.cluster_id.cmp(&b.cluster_id))
    });
    Ok(reports)
}

// User ids may contain spaces and commas, so list fields reuse the unit
// separator convention of the docstore. Word counts are prefixed with the
// count so surfaces containing `:` stay parseable.
const LIST_SEP: char = '\u{1f}';

/// Rows are `cluster  size  avg_chars  histogram  representatives  words`.
pub fn write_report(path: &Path, header: &ArtifactHeader, reports: &[ClusterReport]) -> Result<()> {
    let mut w = artifact::create_writer(path)?;
    let io_err = |e| Error::io(path, e);
    writeln!(w, "{}", header.line()).map_err(io_err)?;
    for rep in reports {
        let hist =
            rep.tweet_length_histogram.map(|c| c.to_string()).join(",");
        let ids = rep.representative_user_ids.join(&LIST_SEP.to_string());
        let words: Vec<String> =
            rep.top_words.iter().map(|(w, c)| format!("{c}:{w}")).collect();
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}",
            rep.cluster_id,
            rep.size,
            rep.avg_tweet_chars,
            hist,
            ids,
            words.join(&LIST_SEP.to_string())
        )
        .map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn read_report_from<R: BufRead>(
    mut reader: R,
    source: &Path,
) -> Result<(Option<ArtifactHeader>, Vec<ClusterReport>)> {
    let mut line_no = 0usize;
    let (header, leftover) = artifact::take_header(&mut reader, source, &mut line_no)?;
    let mut reports: Vec<ClusterReport> = Vec::new();
    let mut seen: HashSet<usize> = HashSet::new();
    let mut handle = |line: String, line_no: usize| -> Result<()> {
        if line.is_empty() {
            return Ok(());
        }
        let bad = |msg: String| Error::parse(source, line_no, msg);
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(bad(format!("expected 6 columns, found {}", fields.len())));
        }
        let cluster_id: usize =
            fields[0].parse().map_err(|_| bad(format!("bad cluster id `{}`", fields[0])))?;
        if !seen.insert(cluster_id) {
            return Err(bad(format!("duplicate cluster id {cluster_id}")));
        }
        let size: usize =
            fields[1].parse().map_err(|_| bad(format!("bad size `{}`", fields[1])))?;
        if size == 0 {
            return Err(bad("empty cluster".into()));
        }
        let avg_tweet_chars: f64 =
            fields[2].parse().map_err(|_| bad(format!("bad average `{}`", fields[2])))?;
        if !avg_tweet_chars.is_finite() || avg_tweet_chars < 0.0 {
            return Err(bad("average tweet length out of range".into()));
        }
        let buckets: Vec<u64> = fields[3]
            .split(',')
            .map(|s| s.parse::<u64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad(format!("bad histogram `{}`", fields[3])))?;
        let tweet_length_histogram: [u64; HIST_BUCKETS] = buckets
            .try_into()
            .map_err(|_| bad(format!("histogram must have {HIST_BUCKETS} buckets")))?;
        let representative_user_ids: Vec<String> =
            fields[4].split(LIST_SEP).map(str::to_string).collect();
        if representative_user_ids.iter().any(String::is_empty) {
            return Err(bad("empty representative user id".into()));
        }
        if representative_user_ids.len() > size {
            return Err(bad("more representatives than cluster members".into()));
        }
        let mut top_words = Vec::new();
        if !fields[5].is_empty() {
            for pair in fields[5].split(LIST_SEP) {
                let (count, word) = pair
                    .split_once(':')
                    .ok_or_else(|| bad(format!("bad word entry `{pair}`")))?;
                let count: u64 =
                    count.parse().map_err(|_| bad(format!("bad word count `{count}`")))?;
                if count == 0 || word.is_empty() {
                    return Err(bad(format!("bad word entry `{pair}`")));
                }
                top_words.push((word.to_string(), count));
            }
        }
        reports.push(ClusterReport {
            cluster_id,
            size,
            representative_user_ids,
            top_words,
            avg_tweet_chars,
            tweet_length_histogram,
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
    Ok((header, reports))
}

pub fn read_report(path: &Path) -> Result<(Option<ArtifactHeader>, Vec<ClusterReport>)> {
    read_report_from(artifact::open_reader(path)?, path)
}

/// Aligned text table in report order, one line per cluster.
pub fn render_table(reports: &[ClusterReport]) -> String {
    let mut rows: Vec<[String; 4]> = vec![[
        "cluster".into(),
        "size".into(),
        "avg_chars".into(),
        "top_words".into(),
    ]];
    for rep in reports {
        let words: Vec<String> =
            rep.top_words.iter().map(|(w, c)| format!("{w}({c})")).collect();
        rows.push([
            rep.cluster_id.to_string(),
            rep.size.to_string(),
            format!("{:.1}", rep.avg_tweet_chars),
            words.join(" "),
        ]);
    }
    let mut widths = [0usize; 3];
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row.iter()) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    for row in &rows {
        let mut line = String::new();
        for (w, cell) in widths.iter().zip(row.iter()) {
            let pad = w - cell.chars().count();
            for _ in 0..pad {
                line.push(' ');
            }
            line.push_str(cell);
            line.push_str("  ");
        }
        line.push_str(&row[3]);
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::PostRecord;
    use std::path::PathBuf;

    fn doc(user: &str, texts: &[&str]) -> RawDocument {
        let posts: Vec<PostRecord> =
            texts.iter().map(|t| PostRecord::new(user, t).unwrap()).collect();
        let post_lengths = posts.iter().map(|p| p.char_length).collect();
        RawDocument { user_id: user.to_string(), posts, post_lengths }
    }

    fn toy_model(assignments: Vec<usize>, centroids: Vec<Vec<f64>>) -> ClusterModel {
        ClusterModel {
            k: centroids.len(),
            centroids: Matrix::from_rows(&centroids),
            assignments,
            inertia: 0.0,
            within_dispersion: 0.0,
        }
    }

    #[test]
    fn representatives_sort_by_distance() {
        // 1D points at distances 3, 1, 2 from the centroid at 0
        let points = Matrix::from_rows(&[vec![3.0], vec![1.0], vec![2.0]]);
        let ids: Vec<String> = ["a", "b", "c"].map(String::from).to_vec();
        let model = toy_model(vec![0, 0, 0], vec![vec![0.0]]);
        assert_eq!(representatives(0, &model, &ids, &points, 2), vec![1, 2]);
        // undersized cluster returns everyone, still sorted
        assert_eq!(representatives(0, &model, &ids, &points, 15), vec![1, 2, 0]);
    }

    #[test]
    fn representative_ties_break_by_user_id() {
        let points = Matrix::from_rows(&[vec![1.0], vec![-1.0], vec![0.0]]);
        let ids: Vec<String> = ["zoe", "ana", "mid"].map(String::from).to_vec();
        let model = toy_model(vec![0, 0, 0], vec![vec![0.0]]);
        // exact centroid match first, then the tie resolves ana before zoe
        assert_eq!(representatives(0, &model, &ids, &points, 3), vec![2, 1, 0]);
    }

    #[test]
    fn representatives_only_come_from_the_cluster() {
        let points = Matrix::from_rows(&[vec![0.1], vec![5.0], vec![0.2]]);
        let ids: Vec<String> = ["a", "b", "c"].map(String::from).to_vec();
        let model = toy_model(vec![0, 1, 0], vec![vec![0.0], vec![5.0]]);
        assert_eq!(representatives(0, &model, &ids, &points, 5), vec![0, 2]);
        assert_eq!(representatives(1, &model, &ids, &points, 5), vec![1]);
    }

    fn tiny_vocab(words: &[&str]) -> Vocabulary {
        let mut streams: Vec<Vec<crate::tokenize::Token>> = Vec::new();
        for (i, w) in words.iter().enumerate() {
            for _ in 0..(10 * (words.len() - i)) {
                streams.push(crate::tokenize::tokenize_post(w));
            }
        }
        crate::vocab::build_vocabulary(streams.iter().map(|t| t.as_slice()), 10)
    }

    #[test]
    fn word_frequencies_count_and_rank() {
        let vocab = tiny_vocab(&["alfa", "beta", "casa"]);
        let docs = [doc("u", &["alfa alfa beta fuera", "casa alfa beta"])];
        let refs: Vec<&RawDocument> = docs.iter().collect();
        // "fuera" is out of vocabulary and must not appear
        let freqs = word_frequencies(&refs, &vocab, 10);
        assert_eq!(
            freqs,
            vec![("alfa".to_string(), 3), ("beta".to_string(), 2), ("casa".to_string(), 1)]
        );
        // tie on count resolves lexicographically, then truncation applies
        let docs = [doc("u", &["beta alfa"])];
        let refs: Vec<&RawDocument> = docs.iter().collect();
        assert_eq!(word_frequencies(&refs, &vocab, 1), vec![("alfa".to_string(), 1)]);
    }

    #[test]
    fn length_stats_bucket_and_average() {
        let twenty = "a".repeat(20);
        let forty = "b".repeat(40);
        let docs = [doc("u", &[&twenty, &forty])];
        let refs: Vec<&RawDocument> = docs.iter().collect();
        let (avg, hist) = tweet_length_stats(&refs);
        assert_eq!(avg, 30.0);
        assert_eq!(hist[2], 1, "length 20 lands in [20,30)");
        assert_eq!(hist[4], 1, "length 40 lands in [40,50)");
        assert_eq!(hist.iter().sum::<u64>(), 2, "conservation");

        // boundary and overflow buckets
        let b139 = "x".repeat(139);
        let b140 = "y".repeat(140);
        let b500 = "z".repeat(500);
        let docs = [doc("u", &[&b139, &b140, &b500])];
        let refs: Vec<&RawDocument> = docs.iter().collect();
        let (_, hist) = tweet_length_stats(&refs);
        assert_eq!(hist[13], 1, "139 chars is the last regular bucket");
        assert_eq!(hist[14], 2, "140 and beyond overflow");
        assert_eq!(hist.iter().sum::<u64>(), 3);
    }

    fn fixture() -> (ClusterModel, Vec<String>, Matrix, Vec<RawDocument>, Vocabulary) {
        let long = format!("perro gato {}", "x".repeat(100));
        let docstore = vec![
            doc("ana", &["perro perro gato lindo", "perro casa"]),
            doc("beto", &["gato gato perro"]),
            doc("carla", &[&long, &long]),
            doc("dora", &[&long]),
        ];
        let ids: Vec<String> = ["ana", "beto", "carla", "dora"].map(String::from).to_vec();
        let points = Matrix::from_rows(&[
            vec![0.0, 0.1],
            vec![0.0, -0.1],
            vec![10.0, 0.2],
            vec![10.0, -0.2],
        ]);
        let model =
            toy_model(vec![0, 0, 1, 1], vec![vec![0.0, 0.0], vec![10.0, 0.0]]);
        let vocab = tiny_vocab(&["perro", "gato", "casa", "lindo"]);
        (model, ids, points, docstore, vocab)
    }

    #[test]
    fn full_report_orders_by_average_length() {
        let (model, ids, points, docstore, vocab) = fixture();
        let reports = full_report(&model, &ids, &points, &docstore, &vocab, 15, 3).unwrap();
        assert_eq!(reports.len(), 2);
        // cluster 1 has the ~110 char posts, so it comes first
        assert_eq!(reports[0].cluster_id, 1);
        assert!(reports[0].avg_tweet_chars > reports[1].avg_tweet_chars);
        assert_eq!(reports[1].size, 2);
        assert_eq!(
            reports[1].representative_user_ids,
            vec!["ana".to_string(), "beto".to_string()]
        );
        assert_eq!(reports[1].top_words[0], ("perro".to_string(), 4));
        assert_eq!(reports[1].top_words[1], ("gato".to_string(), 3));
        // representative sets are disjoint
        let all: HashSet<&String> =
            reports.iter().flat_map(|r| &r.representative_user_ids).collect();
        assert_eq!(all.len(), 4);
        // three posts in cluster 0, conservation again
        assert_eq!(reports[1].tweet_length_histogram.iter().sum::<u64>(), 3);
    }

    #[test]
    fn full_report_validates_inputs() {
        let (model, ids, points, docstore, vocab) = fixture();
        assert!(full_report(&model, &ids, &points, &docstore, &vocab, 0, 3).is_err());
        assert!(full_report(&model, &ids[..3], &points, &docstore, &vocab, 15, 3).is_err());
        let missing = vec![docstore[0].clone()];
        let err = full_report(&model, &ids, &points, &missing, &vocab, 15, 3);
        assert!(err.is_err(), "vector without stored document");
    }

    #[test]
    fn report_file_round_trips() {
        let (model, ids, points, docstore, vocab) = fixture();
        let reports = full_report(&model, &ids, &points, &docstore, &vocab, 15, 3).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("report.tsv");
        let header = ArtifactHeader::new("report", "cfg", vec!["a".into(), "b".into()]);
        write_report(&path, &header, &reports).unwrap();
        let (h, back) = read_report(&path).unwrap();
        assert_eq!(h.unwrap().kind, "report");
        assert_eq!(back, reports);
    }

    #[test]
    fn report_reader_rejects_corruption() {
        let parse =
            |s: &str| read_report_from(std::io::Cursor::new(s.to_string()), &PathBuf::from("r"));
        let hist14 = vec!["0"; 14].join(",");
        let hist15 = vec!["0"; 15].join(",");
        let mut ok_hist = vec![0; 15];
        ok_hist[0] = 1;
        let ok = format!("0\t2\t30\t{hist15}\tana\t2:perro");
        assert!(parse(&ok).is_ok());
        assert!(parse(&format!("0\t2\t30\t{hist14}\tana\t2:perro")).is_err(), "short histogram");
        assert!(parse(&format!("0\t0\t30\t{hist15}\tana\t2:perro")).is_err(), "zero size");
        assert!(parse(&format!("0\t2\tNaN\t{hist15}\tana\t2:perro")).is_err(), "bad average");
        assert!(parse(&format!("0\t2\t30\t{hist15}\t\t2:perro")).is_err(), "empty rep id");
        assert!(parse(&format!("0\t1\t30\t{hist15}\tana\u{1f}bea\t2:perro")).is_err(), "too many reps");
        assert!(parse(&format!("0\t2\t30\t{hist15}\tana\tperro")).is_err(), "word without count");
        assert!(parse(&format!("0\t2\t30\t{hist15}\tana\t0:perro")).is_err(), "zero count");
        assert!(parse(&format!("{ok}\n{ok}")).is_err(), "duplicate cluster id");
        let empty_words = format!("0\t2\t30\t{hist15}\tana\t");
        assert_eq!(parse(&empty_words).unwrap().1[0].top_words, vec![]);
        // emoticon surfaces with colons survive the round trip
        let smiley = format!("0\t2\t30\t{hist15}\tana\t3::)");
        assert_eq!(parse(&smiley).unwrap().1[0].top_words, vec![(":)".to_string(), 3)]);
    }

    #[test]
    fn table_is_aligned_and_complete() {
        let (model, ids, points, docstore, vocab) = fixture();
        let reports = full_report(&model, &ids, &points, &docstore, &vocab, 15, 3).unwrap();
        let table = render_table(&reports);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].contains("cluster"));
        assert!(table.contains("perro(4)"));
        // the words column starts at the same offset on every line
        let offset = lines[0].find("top_words").unwrap();
        for line in &lines[1..] {
            assert_eq!(line.chars().nth(offset - 1), Some(' '));
            assert_ne!(line.chars().nth(offset), Some(' '));
        }
    }
}
