//! Randomized invariant checks over the public API.

use proptest::prelude::*;

use topics_core::artifact::ArtifactHeader;
use topics_core::cluster::{
    kmeans, within_dispersion_centroid, within_dispersion_pairwise, KmeansOpts,
};
use topics_core::config::PipelineConfig;
use topics_core::docmodel::embed_document;
use topics_core::gapstat::{self, SelectionRule};
use topics_core::ingest::{filter_and_group, CorpusFormat, PostRecord};
use topics_core::matrix::Matrix;
use topics_core::project::fit_pca2;
use topics_core::seeding;
use topics_core::tokenize::{tokenize_post, Token, TokenKind, TokenizedDocument, EMOTICONS};
use topics_core::trainer::{EmbeddingModel, TrainConfig};
use topics_core::vecmath::squared_distance;
use topics_core::vocab::{build_vocabulary, NoiseDistribution};

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * f64::max(1.0, f64::max(a.abs(), b.abs()))
}

fn matrix(max_rows: usize, max_cols: usize, mag: f64) -> impl Strategy<Value = Matrix> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(move |(rows, cols)| {
        proptest::collection::vec(-mag..mag, rows * cols)
            .prop_map(move |data| Matrix::from_flat(rows, cols, data))
    })
}

proptest! {
    #[test]
    fn tokens_are_nonempty_and_whitespace_free(text in any::<String>()) {
        for token in tokenize_post(&text) {
            prop_assert!(!token.surface.is_empty());
            prop_assert!(!token.surface.chars().any(char::is_whitespace), "{:?}", token.surface);
        }
    }

    #[test]
    fn tokenization_is_idempotent(text in any::<String>()) {
        let first = tokenize_post(&text);
        let joined = first.iter().map(|t| t.surface.as_str()).collect::<Vec<_>>().join(" ");
        let second = tokenize_post(&joined);
        prop_assert_eq!(first, second);
    }

    #[test]
    fn emoticons_survive_verbatim(
        which in 0..EMOTICONS.len(),
        before in "[a-záéñ]{0,8}",
        after in "[A-ZÁÉÑ]{0,8}",
    ) {
        let emoticon = EMOTICONS[which];
        let text = format!("{before} {emoticon} {after}");
        let toks = tokenize_post(&text);
        prop_assert!(
            toks.iter().any(|t| t.kind == TokenKind::Emoticon && t.surface == emoticon),
            "{emoticon} lost in {toks:?}"
        );
    }

    #[test]
    fn noise_probabilities_sum_to_one_and_follow_counts(
        counts in proptest::collection::vec(1u64..5000, 1..40),
    ) {
        let streams: Vec<Vec<Token>> = counts
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                vec![Token { surface: format!("w{i:03}"), kind: TokenKind::Word }; c as usize]
            })
            .collect();
        let vocab = build_vocabulary(streams.iter().map(|s| s.as_slice()), 1);
        let noise = NoiseDistribution::new(&vocab).unwrap();
        let p = noise.probabilities();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..vocab.len() {
            for j in 0..vocab.len() {
                if vocab.count(i) > vocab.count(j) {
                    prop_assert!(p[i] > p[j]);
                }
            }
        }
    }

    #[test]
    fn dispersion_forms_agree(points in matrix(12, 4, 100.0)) {
        let pairwise = within_dispersion_pairwise(&points);
        let centroid = within_dispersion_centroid(&points);
        prop_assert!(close(pairwise, centroid, 1e-9), "{pairwise} vs {centroid}");
    }

    #[test]
    fn grouping_is_a_partition_of_the_kept_posts(
        raw in proptest::collection::vec((0u8..5, ".{0,40}"), 0..30),
        min_chars in 0usize..30,
    ) {
        let posts: Vec<PostRecord> = raw
            .iter()
            .filter_map(|(u, t)| PostRecord::new(&format!("u{u}"), t))
            .collect();
        let kept = posts.iter().filter(|p| p.char_length >= min_chars).count();
        let docs = filter_and_group(posts, min_chars);

        prop_assert_eq!(docs.iter().map(|d| d.posts.len()).sum::<usize>(), kept);
        let mut ids: Vec<&str> = docs.iter().map(|d| d.user_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        prop_assert_eq!(ids.len(), docs.len(), "duplicate user documents");
        for doc in &docs {
            prop_assert!(!doc.posts.is_empty());
            prop_assert_eq!(doc.posts.len(), doc.post_lengths.len());
            for (post, &len) in doc.posts.iter().zip(&doc.post_lengths) {
                prop_assert_eq!(&post.user_id, &doc.user_id);
                prop_assert_eq!(post.char_length, len);
                prop_assert!(len >= min_chars);
            }
        }
    }

    #[test]
    fn doc_vectors_ignore_token_order_and_stay_in_the_hull(
        (dims, v, weights, idx, shuffled) in (2usize..6, 3usize..8).prop_flat_map(|(dims, v)| {
            (
                Just(dims),
                Just(v),
                proptest::collection::vec(-1.0f64..1.0, dims * v),
                proptest::collection::vec(0usize..v, 1..60),
            )
                .prop_flat_map(|(dims, v, weights, idx)| {
                    let shuffled = Just(idx.clone()).prop_shuffle();
                    (Just(dims), Just(v), Just(weights), Just(idx), shuffled)
                })
        }),
    ) {
        let streams: Vec<Vec<Token>> = (0..v)
            .map(|i| vec![Token { surface: format!("w{i}"), kind: TokenKind::Word }])
            .collect();
        let vocab = build_vocabulary(streams.iter().map(|s| s.as_slice()), 1);
        let cfg = TrainConfig { dims, ..TrainConfig::default() };
        let mut model = EmbeddingModel::init(&vocab, &cfg).unwrap();
        for r in 0..v {
            for c in 0..dims {
                model.set_input_weight(r, c, weights[r * dims + c]);
            }
        }
        let doc = |order: &[usize]| TokenizedDocument {
            user_id: "u".into(),
            tokens: order
                .iter()
                .map(|&i| Token { surface: format!("w{i}"), kind: TokenKind::Word })
                .collect(),
            post_lengths: vec![],
        };
        let a = embed_document(&doc(&idx), &model, 1).unwrap();
        let b = embed_document(&doc(&shuffled), &model, 1).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&a.vector), bits(&b.vector));
        prop_assert_eq!(a.occurrences, idx.len());

        // the mean of word vectors cannot leave their norm ball
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let max_word_norm = idx
            .iter()
            .map(|&i| norm(&model.input_row(i)))
            .fold(0.0f64, f64::max);
        prop_assert!(norm(&a.vector) <= max_word_norm * (1.0 + 1e-9) + 1e-12);
    }

    #[test]
    fn pca_basis_is_orthonormal_and_explains_column_variance(
        points in matrix(12, 6, 10.0).prop_filter("pca needs 2 rows and 2 cols", |m| {
            m.rows() >= 2 && m.cols() >= 2
        }),
    ) {
        let pca = fit_pca2(&points).unwrap();
        let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| x * y).sum() };
        prop_assert!((dot(&pca.components[0], &pca.components[0]) - 1.0).abs() < 1e-9);
        prop_assert!((dot(&pca.components[1], &pca.components[1]) - 1.0).abs() < 1e-9);
        prop_assert!(dot(&pca.components[0], &pca.components[1]).abs() < 1e-9);
        prop_assert!(pca.eigenvalues[0] >= pca.eigenvalues[1]);
        prop_assert!(pca.eigenvalues[1] >= 0.0);

        let coords = pca.transform(&points).unwrap();
        let m = coords.rows() as f64;
        for axis in 0..2 {
            let mean = coords.iter_rows().map(|r| r[axis]).sum::<f64>() / m;
            let var = coords.iter_rows().map(|r| (r[axis] - mean).powi(2)).sum::<f64>() / (m - 1.0);
            prop_assert!(
                close(var, pca.eigenvalues[axis], 1e-8),
                "axis {axis}: variance {var} vs eigenvalue {}",
                pca.eigenvalues[axis]
            );
        }
    }

    #[test]
    fn config_round_trips_through_its_canonical_form(
        dims in 1usize..300, window in 1usize..10, negatives in 1usize..9,
        epochs in 1usize..6, min_chars in 0usize..100, min_count in 1u64..20,
        min_occurrences in 1usize..50, k_min in 1usize..20, k_span in 0usize..40,
        k_step in 1usize..7, k in proptest::option::of(1usize..100), b in 2usize..12,
        argmax in any::<bool>(), r in 1usize..20, top_n in 1usize..15,
        seed in any::<u64>(), workers in 1usize..8, restarts in 1usize..12,
        kmeans_max_iter in 1usize..400, kmeans_tol in 0.0f64..1e-3,
        tsv in any::<bool>(), initial_lr in 0.001f64..0.1, final_lr in 0.0f64..0.0005,
    ) {
        let cfg = PipelineConfig {
            format: if tsv { CorpusFormat::Tsv } else { CorpusFormat::Jsonl },
            min_chars, min_count, dims, window, negatives, epochs,
            initial_lr, final_lr, min_occurrences,
            k_min, k_max: k_min + k_span, k_step, k, b,
            rule: if argmax { SelectionRule::ArgmaxGap } else { SelectionRule::FirstSe },
            r, top_n, seed, workers, restarts, kmeans_max_iter, kmeans_tol,
        };
        cfg.validate().unwrap();
        let reparsed = PipelineConfig::from_reader(
            std::io::Cursor::new(cfg.canonical()),
            std::path::Path::new("canonical"),
        )
        .unwrap();
        prop_assert_eq!(&reparsed, &cfg);
        prop_assert_eq!(reparsed.fingerprint(), cfg.fingerprint());
    }

    #[test]
    fn artifact_headers_round_trip(
        kind in "[a-z][a-z-]{0,10}",
        config in "[0-9a-f]{16}",
        inputs in proptest::collection::vec("[0-9a-f]{16}", 0..4),
        extras in proptest::collection::vec(
            ("[a-z_]{1,8}", "[A-Za-z0-9._:=-]{1,12}"),
            0..4,
        ).prop_filter("config/inputs are reserved", |ex| {
            ex.iter().all(|(k, _)| k != "config" && k != "inputs")
        }),
    ) {
        let mut header = ArtifactHeader::new(&kind, config, inputs);
        for (k, v) in &extras {
            header = header.with_extra(k, v);
        }
        let parsed = ArtifactHeader::parse(&header.line()).unwrap().unwrap();
        prop_assert_eq!(parsed, header);
    }

    #[test]
    fn reference_samples_stay_inside_the_bounding_box(
        points in matrix(8, 4, 100.0),
        seed in any::<u64>(),
    ) {
        let mut rng = seeding::derive_rng(seed, &[7]);
        let sample = gapstat::reference_sample(&points, &mut rng);
        prop_assert_eq!(sample.rows(), points.rows());
        prop_assert_eq!(sample.cols(), points.cols());
        for c in 0..points.cols() {
            let lo = points.iter_rows().map(|r| r[c]).fold(f64::INFINITY, f64::min);
            let hi = points.iter_rows().map(|r| r[c]).fold(f64::NEG_INFINITY, f64::max);
            for r in sample.iter_rows() {
                prop_assert!(r[c] >= lo && r[c] <= hi);
            }
        }
    }

    #[test]
    fn kmeans_assigns_each_point_to_its_nearest_centroid(
        (points, k) in matrix(12, 3, 10.0).prop_flat_map(|m| {
            let k = 1..=m.rows().min(3);
            (Just(m), k)
        }),
        seed in any::<u64>(),
    ) {
        let opts = KmeansOpts { restarts: 2, max_iter: 100, tol: 1e-6 };
        let model = kmeans(&points, k, seed, &opts).unwrap();
        prop_assert_eq!(model.centroids.rows(), k);
        let mut inertia = 0.0;
        for (i, point) in points.iter_rows().enumerate() {
            let own = squared_distance(point, model.centroids.row(model.assignments[i]));
            inertia += own;
            for c in 0..k {
                prop_assert!(own <= squared_distance(point, model.centroids.row(c)) + 1e-9);
            }
        }
        prop_assert!(close(inertia, model.inertia, 1e-9));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn gap_curves_are_internally_consistent_and_survive_disk(
        points in matrix(10, 2, 50.0).prop_filter("need 3 points", |m| m.rows() >= 3),
        seed in any::<u64>(),
    ) {
        let ks = [1usize, 2, 3];
        let opts = KmeansOpts { restarts: 2, max_iter: 60, tol: 1e-6 };
        let curve =
            gapstat::gap_curve(&points, &ks, 3, seed, &opts, SelectionRule::FirstSe, 1).unwrap();

        // worker count must not change a single bit
        let wide =
            gapstat::gap_curve(&points, &ks, 3, seed, &opts, SelectionRule::FirstSe, 4).unwrap();
        let bits = |p: &gapstat::GapPoint| {
            (
                p.k,
                p.log_w.map(f64::to_bits),
                p.log_w_ref_mean.map(f64::to_bits),
                p.gap.map(f64::to_bits),
                p.s.map(f64::to_bits),
            )
        };
        let curve_bits: Vec<_> = curve.points.iter().map(bits).collect();
        prop_assert_eq!(&curve_bits, &wide.points.iter().map(bits).collect::<Vec<_>>());
        prop_assert_eq!(curve.selected_k, wide.selected_k);

        prop_assert!(ks.contains(&curve.selected_k));
        for p in &curve.points {
            match (p.log_w, p.log_w_ref_mean, p.gap, p.s) {
                (Some(lw), Some(rm), Some(gap), Some(_)) => {
                    // the stored gap is exactly the difference of the stored logs
                    prop_assert_eq!(gap.to_bits(), (rm - lw).to_bits());
                }
                (_, _, None, None) => {}
                other => prop_assert!(false, "half-excluded point {other:?}"),
            }
        }

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gap.tsv");
        let header = ArtifactHeader::new("gap", "0".repeat(16), vec![]);
        gapstat::write_gap(&path, &curve, &header).unwrap();
        let (read_header, points_back) = gapstat::read_gap(&path).unwrap();
        prop_assert_eq!(&points_back.iter().map(bits).collect::<Vec<_>>(), &curve_bits);
        let (k_back, rule_back, no_elbow_back) =
            gapstat::selection_from_header(&read_header.unwrap()).unwrap();
        prop_assert_eq!(k_back, curve.selected_k);
        prop_assert_eq!(rule_back, curve.rule);
        prop_assert_eq!(no_elbow_back, curve.no_elbow);
    }
}
