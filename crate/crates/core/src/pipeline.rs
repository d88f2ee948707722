//! Stage orchestration. Each stage reads the artifacts of earlier stages,
//! checks their lineage (header kind, config fingerprint, recorded input
//! digests) and writes its own artifacts with fresh lineage, so outputs of
//! different runs can never be silently mixed.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::artifact::{self, fingerprint_file, ArtifactHeader};
use crate::cluster;
use crate::config::PipelineConfig;
use crate::docmodel;
use crate::error::{Error, Result};
use crate::gapstat;
use crate::ingest;
use crate::project;
use crate::report;
use crate::tokenize::tokenize_document;
use crate::trainer::{self, EmbeddingModel};
use crate::vocab::{build_vocabulary, Vocabulary};

/// Declaration order is dependency order; `Ord` relies on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    Train,
    Embed,
    Gap,
    Cluster,
    Project,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Ingest,
        Stage::Train,
        Stage::Embed,
        Stage::Gap,
        Stage::Cluster,
        Stage::Project,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Train => "train",
            Stage::Embed => "embed",
            Stage::Gap => "gap",
            Stage::Cluster => "cluster",
            Stage::Project => "project",
            Stage::Report => "report",
        }
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|stage| stage.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// `all` or a comma-separated stage list, deduplicated and put into
/// dependency order.
pub fn parse_stages(spec: &str) -> Result<Vec<Stage>> {
    if spec.trim() == "all" {
        return Ok(Stage::ALL.to_vec());
    }
    let mut stages: Vec<Stage> = Vec::new();
    for part in spec.split(',') {
        let stage: Stage = part.trim().parse()?;
        if !stages.contains(&stage) {
            stages.push(stage);
        }
    }
    if stages.is_empty() {
        return Err(Error::Config("no stages requested".into()));
    }
    stages.sort();
    Ok(stages)
}

#[derive(Debug, Clone)]
pub struct Paths {
    pub outdir: PathBuf,
}

impl Paths {
    pub fn new(outdir: &Path) -> Self {
        Paths { outdir: outdir.to_path_buf() }
    }

    pub fn docstore(&self) -> PathBuf {
        self.outdir.join("docstore.tsv")
    }
    pub fn vocab(&self) -> PathBuf {
        self.outdir.join("vocab.tsv")
    }
    pub fn model(&self) -> PathBuf {
        self.outdir.join("model.txt")
    }
    pub fn model_output(&self) -> PathBuf {
        self.outdir.join("model.wout.txt")
    }
    pub fn docvecs(&self) -> PathBuf {
        self.outdir.join("docvecs.tsv")
    }
    pub fn gap(&self) -> PathBuf {
        self.outdir.join("gap.tsv")
    }
    pub fn assignments(&self) -> PathBuf {
        self.outdir.join("assignments.tsv")
    }
    pub fn centroids(&self) -> PathBuf {
        self.outdir.join("centroids.tsv")
    }
    pub fn coords(&self) -> PathBuf {
        self.outdir.join("coords.tsv")
    }
    pub fn report(&self) -> PathBuf {
        self.outdir.join("report.tsv")
    }
}

struct Ctx<'a> {
    cfg: &'a PipelineConfig,
    fp: String,
    paths: Paths,
    input: Option<PathBuf>,
}

impl Ctx<'_> {
    /// What a stage writes: (path, header kind, labeled input files).
    /// Input order here fixes the digest order in the headers.
    fn outputs(&self, stage: Stage) -> Vec<(PathBuf, &'static str, Vec<(&'static str, PathBuf)>)> {
        let p = &self.paths;
        let from_docstore = vec![("docstore", p.docstore())];
        match stage {
            Stage::Ingest => match &self.input {
                Some(corpus) => {
                    vec![(p.docstore(), "docstore", vec![("corpus", corpus.clone())])]
                }
                None => vec![(p.docstore(), "docstore", vec![])],
            },
            Stage::Train => vec![
                (p.vocab(), "vocab", from_docstore.clone()),
                (p.model(), "model", from_docstore.clone()),
                (p.model_output(), "model-output", from_docstore),
            ],
            Stage::Embed => vec![(
                p.docvecs(),
                "docvecs",
                vec![("docstore", p.docstore()), ("model", p.model())],
            )],
            Stage::Gap => {
                if self.cfg.k.is_some() {
                    vec![]
                } else {
                    vec![(p.gap(), "gap", vec![("docvecs", p.docvecs())])]
                }
            }
            Stage::Cluster => {
                let mut inputs = vec![("docvecs", p.docvecs())];
                if self.cfg.k.is_none() {
                    inputs.push(("gap", p.gap()));
                }
                vec![
                    (p.assignments(), "assignments", inputs.clone()),
                    (p.centroids(), "centroids", inputs),
                ]
            }
            Stage::Project => vec![(
                p.coords(),
                "coords",
                vec![("docvecs", p.docvecs()), ("assignments", p.assignments())],
            )],
            Stage::Report => vec![(
                p.report(),
                "report",
                vec![
                    ("assignments", p.assignments()),
                    ("centroids", p.centroids()),
                    ("docvecs", p.docvecs()),
                    ("docstore", p.docstore()),
                    ("vocab", p.vocab()),
                ],
            )],
        }
    }

    fn producer(&self, path: &Path) -> Stage {
        for stage in Stage::ALL {
            if self.outputs(stage).iter().any(|(p, _, _)| p == path) {
                return stage;
            }
        }
        unreachable!("every artifact path has a producing stage");
    }

    fn header(&self, kind: &'static str, inputs: &[(&'static str, PathBuf)]) -> Result<ArtifactHeader> {
        let digests = inputs
            .iter()
            .map(|(_, path)| fingerprint_file(path))
            .collect::<Result<Vec<String>>>()?;
        Ok(ArtifactHeader::new(kind, self.fp.clone(), digests))
    }

    /// Validate the header of an artifact this stage is about to consume.
    fn check(&self, path: &Path, header: Option<ArtifactHeader>) -> Result<ArtifactHeader> {
        let stale = |msg: String| Error::StaleArtifact { path: path.to_path_buf(), msg };
        let header = header.ok_or_else(|| stale("missing artifact header".into()))?;
        let producer = self.producer(path);
        let expected_kind = self
            .outputs(producer)
            .into_iter()
            .find(|(p, _, _)| p == path)
            .map(|(_, kind, _)| kind)
            .expect("producer listed the path");
        if header.kind != expected_kind {
            return Err(stale(format!(
                "holds a `{}` artifact where `{expected_kind}` was expected",
                header.kind
            )));
        }
        if header.config != self.fp {
            return Err(stale(
                "produced under a different configuration; rerun the earlier stages".into(),
            ));
        }
        // one level of digest chasing: the recorded inputs must match the
        // files now on disk (files that are gone can't be checked)
        let expected = self
            .outputs(producer)
            .into_iter()
            .find(|(p, _, _)| p == path)
            .map(|(_, _, inputs)| inputs)
            .expect("producer listed the path");
        if expected.is_empty() {
            return Ok(header);
        }
        if header.inputs.len() != expected.len() {
            return Err(stale(format!(
                "records {} input digests where {} were expected",
                header.inputs.len(),
                expected.len()
            )));
        }
        for (recorded, (label, file)) in header.inputs.iter().zip(&expected) {
            if !file.exists() {
                log::debug!("{}: cannot verify {label} digest, file is gone", path.display());
                continue;
            }
            let actual = fingerprint_file(file)?;
            if *recorded != actual {
                return Err(stale(format!(
                    "was built from a different {label} ({}); rerun the `{}` stage",
                    file.display(),
                    producer.name()
                )));
            }
        }
        Ok(header)
    }

    fn require(&self, path: &Path) -> Result<()> {
        if path.exists() {
            Ok(())
        } else {
            Err(Error::MissingArtifact {
                stage: self.producer(path).name(),
                path: path.to_path_buf(),
            })
        }
    }

    fn load_docstore(&self) -> Result<Vec<ingest::RawDocument>> {
        let path = self.paths.docstore();
        self.require(&path)?;
        let (header, docs) = ingest::read_docstore(&path)?;
        self.check(&path, header)?;
        Ok(docs)
    }

    fn load_model(&self) -> Result<EmbeddingModel> {
        let path = self.paths.model();
        self.require(&path)?;
        let (header, model) = EmbeddingModel::load(&path)?;
        self.check(&path, header)?;
        Ok(model)
    }

    fn load_docvecs(&self) -> Result<Vec<docmodel::DocumentVector>> {
        let path = self.paths.docvecs();
        self.require(&path)?;
        let (header, vecs) = docmodel::load_docvecs(&path)?;
        self.check(&path, header)?;
        Ok(vecs)
    }

    fn load_vocab(&self) -> Result<Vocabulary> {
        let path = self.paths.vocab();
        self.require(&path)?;
        let (header, vocab) = Vocabulary::load(&path)?;
        self.check(&path, header)?;
        Ok(vocab)
    }

    /// True when every output of the stage exists with a matching config
    /// fingerprint and matching input digests. Any defect means "rerun".
    fn is_fresh(&self, stage: Stage) -> bool {
        let outputs = self.outputs(stage);
        if stage == Stage::Ingest && self.input.is_none() {
            // without the corpus path the docstore digest can't be checked
            return false;
        }
        outputs.iter().all(|(path, kind, inputs)| {
            let header = match artifact::read_header(path) {
                Ok(Some(h)) => h,
                _ => return false,
            };
            header.kind == *kind
                && header.config == self.fp
                && artifact::verify_inputs(path, &header, inputs).is_ok()
        })
    }
}

/// Run the requested stages in dependency order. `input` is the raw corpus
/// file (needed by ingest). With `skip_fresh`, stages whose outputs are
/// already up to date are not recomputed.
pub fn run_pipeline(
    cfg: &PipelineConfig,
    input: Option<&Path>,
    outdir: &Path,
    stages: &[Stage],
    skip_fresh: bool,
) -> Result<()> {
    cfg.validate()?;
    std::fs::create_dir_all(outdir).map_err(|e| Error::io(outdir, e))?;
    let mut ordered: Vec<Stage> = Vec::new();
    for &s in stages {
        if !ordered.contains(&s) {
            ordered.push(s);
        }
    }
    ordered.sort();
    let ctx = Ctx {
        cfg,
        fp: cfg.fingerprint(),
        paths: Paths::new(outdir),
        input: input.map(Path::to_path_buf),
    };
    for stage in ordered {
        if skip_fresh && ctx.is_fresh(stage) {
            log::info!("stage {stage}: outputs are fresh, skipping");
            continue;
        }
        log::info!("stage {stage}: running");
        match stage {
            Stage::Ingest => run_ingest(&ctx)?,
            Stage::Train => run_train(&ctx)?,
            Stage::Embed => run_embed(&ctx)?,
            Stage::Gap => run_gap(&ctx)?,
            Stage::Cluster => run_cluster(&ctx)?,
            Stage::Project => run_project(&ctx)?,
            Stage::Report => run_report(&ctx)?,
        }
    }
    Ok(())
}

fn run_ingest(ctx: &Ctx) -> Result<()> {
    let corpus = ctx
        .input
        .as_deref()
        .ok_or_else(|| Error::Config("the ingest stage needs an input corpus file".into()))?;
    let (posts, stats) = ingest::read_corpus(corpus, ctx.cfg.format)?;
    let docs = ingest::filter_and_group(posts, ctx.cfg.min_chars);
    if docs.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no posts with at least {} characters in {}",
            ctx.cfg.min_chars,
            corpus.display()
        )));
    }
    let kept: usize = docs.iter().map(|d| d.posts.len()).sum();
    let [(path, kind, inputs)] = &ctx.outputs(Stage::Ingest)[..] else { unreachable!() };
    ingest::write_docstore(path, &docs, &ctx.header(kind, inputs)?)?;
    log::info!(
        "ingest: {} records read ({} malformed), {kept} posts kept, {} documents",
        stats.read,
        stats.skipped_malformed,
        docs.len()
    );
    Ok(())
}

fn run_train(ctx: &Ctx) -> Result<()> {
    let docs = ctx.load_docstore()?;
    let tokenized: Vec<_> = docs.iter().map(tokenize_document).collect();
    let vocab = build_vocabulary(tokenized.iter().map(|d| d.tokens.as_slice()), ctx.cfg.min_count);
    let indexed: Vec<Vec<usize>> =
        tokenized.iter().map(|d| vocab.to_indices(&d.tokens)).collect();
    let model = trainer::train(&indexed, &vocab, &ctx.cfg.train_config())?;
    for (path, kind, inputs) in ctx.outputs(Stage::Train) {
        let header = ctx.header(kind, &inputs)?;
        match kind {
            "vocab" => vocab.save(&path, &header)?,
            "model" => model.save(
                &path,
                &header
                    .with_extra("window", ctx.cfg.window)
                    .with_extra("negatives", ctx.cfg.negatives),
            )?,
            "model-output" => model.save_output(
                &path,
                &header
                    .with_extra("window", ctx.cfg.window)
                    .with_extra("negatives", ctx.cfg.negatives),
            )?,
            _ => unreachable!(),
        }
    }
    log::info!("train: vocabulary of {} words, {} dimensions", vocab.len(), ctx.cfg.dims);
    Ok(())
}

fn run_embed(ctx: &Ctx) -> Result<()> {
    let docs = ctx.load_docstore()?;
    let model = ctx.load_model()?;
    let vecs = docmodel::embed_corpus(&docs, &model, ctx.cfg.min_occurrences);
    if vecs.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no document reaches {} in-vocabulary occurrences",
            ctx.cfg.min_occurrences
        )));
    }
    let [(path, kind, inputs)] = &ctx.outputs(Stage::Embed)[..] else { unreachable!() };
    docmodel::save_docvecs(path, &vecs, &ctx.header(kind, inputs)?)?;
    log::info!("embed: {} of {} documents kept", vecs.len(), docs.len());
    Ok(())
}

fn run_gap(ctx: &Ctx) -> Result<()> {
    if let Some(k) = ctx.cfg.k {
        log::info!("gap: cluster count fixed at {k}, nothing to sweep");
        return Ok(());
    }
    let vecs = ctx.load_docvecs()?;
    let points = docmodel::docvec_matrix(&vecs);
    let mut ks = ctx.cfg.sweep();
    let m = points.rows();
    let before = ks.len();
    ks.retain(|&k| k <= m);
    if ks.len() < before {
        log::warn!("gap: dropping sweep values above the {m} available documents");
    }
    if ks.is_empty() {
        return Err(Error::InvalidInput(format!(
            "the k sweep starts at {} but only {m} documents have vectors",
            ctx.cfg.k_min
        )));
    }
    let curve = gapstat::gap_curve(
        &points,
        &ks,
        ctx.cfg.b,
        ctx.cfg.seed,
        &ctx.cfg.kmeans_opts(),
        ctx.cfg.rule,
        ctx.cfg.workers,
    )?;
    if curve.no_elbow {
        log::warn!(
            "gap: no k satisfied the {} criterion, falling back to the gap argmax",
            ctx.cfg.rule
        );
    }
    let [(path, kind, inputs)] = &ctx.outputs(Stage::Gap)[..] else { unreachable!() };
    gapstat::write_gap(path, &curve, &ctx.header(kind, inputs)?)?;
    log::info!("gap: selected k = {} over {} candidates", curve.selected_k, ks.len());
    Ok(())
}

fn run_cluster(ctx: &Ctx) -> Result<()> {
    let vecs = ctx.load_docvecs()?;
    let points = docmodel::docvec_matrix(&vecs);
    let k = match ctx.cfg.k {
        Some(k) => k,
        None => {
            let path = ctx.paths.gap();
            ctx.require(&path)?;
            let (header, _) = gapstat::read_gap(&path)?;
            let header = ctx.check(&path, header)?;
            let (k, _, _) = gapstat::selection_from_header(&header).ok_or_else(|| {
                Error::StaleArtifact {
                    path: path.clone(),
                    msg: "gap artifact does not record a selected k".into(),
                }
            })?;
            k
        }
    };
    let model = cluster::kmeans(&points, k, ctx.cfg.seed, &ctx.cfg.kmeans_opts())?;
    let ids: Vec<String> = vecs.iter().map(|v| v.user_id.clone()).collect();
    for (path, kind, inputs) in ctx.outputs(Stage::Cluster) {
        let header = ctx.header(kind, &inputs)?;
        match kind {
            "assignments" => {
                cluster::write_assignments(&path, &ids, &model.assignments, &header.with_extra("k", k))?
            }
            "centroids" => cluster::write_centroids(&path, &model.centroids, &header)?,
            _ => unreachable!(),
        }
    }
    log::info!("cluster: k = {k}, within-cluster dispersion {}", model.within_dispersion);
    Ok(())
}

/// Align an assignments file with the docvec row order, erroring on any
/// mismatch between the two artifacts.
pub fn aligned_assignments(
    pairs: &[(String, usize)],
    vecs: &[docmodel::DocumentVector],
    path: &Path,
) -> Result<Vec<usize>> {
    let stale = |msg: String| Error::StaleArtifact { path: path.to_path_buf(), msg };
    if pairs.len() != vecs.len() {
        return Err(stale(format!(
            "covers {} documents but there are {} vectors",
            pairs.len(),
            vecs.len()
        )));
    }
    let by_user: std::collections::HashMap<&str, usize> =
        pairs.iter().map(|(id, a)| (id.as_str(), *a)).collect();
    vecs.iter()
        .map(|v| {
            by_user
                .get(v.user_id.as_str())
                .copied()
                .ok_or_else(|| stale(format!("user `{}` has a vector but no cluster", v.user_id)))
        })
        .collect()
}

fn run_project(ctx: &Ctx) -> Result<()> {
    let vecs = ctx.load_docvecs()?;
    let asg_path = ctx.paths.assignments();
    ctx.require(&asg_path)?;
    let (header, pairs) = cluster::read_assignments(&asg_path)?;
    ctx.check(&asg_path, header)?;
    let clusters = aligned_assignments(&pairs, &vecs, &asg_path)?;
    let points = docmodel::docvec_matrix(&vecs);
    let pca = project::fit_pca2(&points)?;
    let coords = pca.transform(&points)?;
    let ids: Vec<String> = vecs.iter().map(|v| v.user_id.clone()).collect();
    let [(path, kind, inputs)] = &ctx.outputs(Stage::Project)[..] else { unreachable!() };
    let header = ctx
        .header(kind, inputs)?
        .with_extra("ev0", pca.eigenvalues[0])
        .with_extra("ev1", pca.eigenvalues[1]);
    project::write_coords(path, &header, &ids, &coords, &clusters)?;
    log::info!(
        "project: explained variance {} + {}",
        pca.eigenvalues[0],
        pca.eigenvalues[1]
    );
    Ok(())
}

fn run_report(ctx: &Ctx) -> Result<()> {
    let vecs = ctx.load_docvecs()?;
    let docs = ctx.load_docstore()?;
    let vocab = ctx.load_vocab()?;
    let asg_path = ctx.paths.assignments();
    ctx.require(&asg_path)?;
    let (header, pairs) = cluster::read_assignments(&asg_path)?;
    ctx.check(&asg_path, header)?;
    let cen_path = ctx.paths.centroids();
    ctx.require(&cen_path)?;
    let (header, centroids) = cluster::read_centroids(&cen_path)?;
    ctx.check(&cen_path, header)?;
    let assignments = aligned_assignments(&pairs, &vecs, &asg_path)?;
    let points = docmodel::docvec_matrix(&vecs);
    let model = cluster::reconstruct_model(centroids, assignments, &points)?;
    let ids: Vec<String> = vecs.iter().map(|v| v.user_id.clone()).collect();
    let reports =
        report::full_report(&model, &ids, &points, &docs, &vocab, ctx.cfg.r, ctx.cfg.top_n)?;
    let [(path, kind, inputs)] = &ctx.outputs(Stage::Report)[..] else { unreachable!() };
    report::write_report(path, &ctx.header(kind, inputs)?, &reports)?;
    log::info!("report: {} clusters summarized", reports.len());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fmt::Write as _;

    fn fixture_corpus() -> String {
        // two word families, six users each; every post is long enough to
        // survive the length filter and every word clears min_count
        let fam_a = ["lluvia", "trueno", "nube", "viento"];
        let fam_b = ["asado", "parrilla", "chorizo", "carbon"];
        let mut out = String::new();
        for u in 0..12 {
            let fam = if u < 6 { &fam_a } else { &fam_b };
            for p in 0..3 {
                let mut text = String::new();
                for t in 0..8 {
                    text.push_str(fam[(u + p + t) % 4]);
                    text.push(' ');
                }
                writeln!({ &mut out }, r#"{{"user_id": "u{u:02}", "text": "{}"}}"#, text.trim())
                    .unwrap();
            }
        }
        out
    }

    fn fixture_config() -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        cfg.min_chars = 10;
        cfg.min_count = 2;
        cfg.dims = 8;
        cfg.window = 3;
        cfg.negatives = 2;
        cfg.epochs = 2;
        cfg.min_occurrences = 5;
        cfg.k_min = 1;
        cfg.k_max = 3;
        cfg.k_step = 1;
        cfg.b = 3;
        cfg.r = 5;
        cfg.top_n = 5;
        cfg.seed = 1;
        cfg.restarts = 3;
        cfg
    }

    fn write_corpus(dir: &Path) -> PathBuf {
        let path = dir.join("corpus.jsonl");
        std::fs::write(&path, fixture_corpus()).unwrap();
        path
    }

    fn all_files(paths: &Paths) -> Vec<PathBuf> {
        vec![
            paths.docstore(),
            paths.vocab(),
            paths.model(),
            paths.model_output(),
            paths.docvecs(),
            paths.gap(),
            paths.assignments(),
            paths.centroids(),
            paths.coords(),
            paths.report(),
        ]
    }

    #[test]
    fn full_run_writes_every_artifact() {
        let tmp = tempfile::tempdir().unwrap();
        let corpus = write_corpus(tmp.path());
        let out = tmp.path().join("out");
        let cfg = fixture_config();
        run_pipeline(&cfg, Some(&corpus), &out, &Stage::ALL, false).unwrap();
        let paths = Paths::new(&out);
        for file in all_files(&paths) {
            assert!(file.exists(), "{} missing", file.display());
        }
        let (header, rows) = gapstat::read_gap(&paths.gap()).unwrap();
        let header = header.unwrap();
        assert!(gapstat::selection_from_header(&header).is_some());
        assert!(!rows.is_empty());
        let (_, reports) = report::read_report(&paths.report()).unwrap();
        assert!(!reports.is_empty());
        let (_, coords) = project::read_coords(&paths.coords()).unwrap();
        assert_eq!(coords.len(), 12);
    }

    #[test]
    fn reruns_are_byte_identical() {
        let tmp = tempfile::tempdir().unwrap();
        let corpus = write_corpus(tmp.path());
        let cfg = fixture_config();
        let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
        run_pipeline(&cfg, Some(&corpus), &a, &Stage::ALL, false).unwrap();
        run_pipeline(&cfg, Some(&corpus), &b, &Stage::ALL, false).unwrap();
        for (fa, fb) in all_files(&Paths::new(&a)).iter().zip(all_files(&Paths::new(&b)).iter()) {
            let ba = std::fs::read(fa).unwrap();
            let bb = std::fs::read(fb).unwrap();
            assert_eq!(ba, bb, "{} differs between runs", fa.display());
        }
    }

    #[test]
    fn skip_fresh_leaves_artifacts_untouched() {
        let tmp = tempfile::tempdir().unwrap();
        let corpus = write_corpus(tmp.path());
        let out = tmp.path().join("out");
        let cfg = fixture_config();
        run_pipeline(&cfg, Some(&corpus), &out, &Stage::ALL, false).unwrap();
        let before: Vec<_> = all_files(&Paths::new(&out))
            .iter()
            .map(|f| std::fs::metadata(f).unwrap().modified().unwrap())
            .collect();
        run_pipeline(&cfg, Some(&corpus), &out, &Stage::ALL, true).unwrap();
        let after: Vec<_> = all_files(&Paths::new(&out))
            .iter()
            .map(|f| std::fs::metadata(f).unwrap().modified().unwrap())
            .collect();
        assert_eq!(before, after, "skip-fresh must not rewrite artifacts");
    }

    #[test]
    fn missing_upstream_artifact_names_its_stage() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("out");
        let cfg = fixture_config();
        let err = run_pipeline(&cfg, None, &out, &[Stage::Cluster], false).unwrap_err();
        match err {
            Error::MissingArtifact { stage, .. } => assert_eq!(stage, "embed"),
            other => panic!("expected MissingArtifact, got {other}"),
        }
        // report without cluster outputs names the cluster stage
        let corpus = write_corpus(tmp.path());
        run_pipeline(&cfg, Some(&corpus), &out, &[Stage::Ingest, Stage::Train, Stage::Embed], false)
            .unwrap();
        let err = run_pipeline(&cfg, None, &out, &[Stage::Report], false).unwrap_err();
        match err {
            Error::MissingArtifact { stage, .. } => assert_eq!(stage, "cluster"),
            other => panic!("expected MissingArtifact, got {other}"),
        }
    }

    #[test]
    fn config_change_makes_artifacts_stale() {
        let tmp = tempfile::tempdir().unwrap();
        let corpus = write_corpus(tmp.path());
        let out = tmp.path().join("out");
        let cfg = fixture_config();
        run_pipeline(&cfg, Some(&corpus), &out, &Stage::ALL, false).unwrap();
        let mut changed = cfg.clone();
        changed.seed = 2;
        let err = run_pipeline(&changed, None, &out, &[Stage::Cluster], false).unwrap_err();
        assert!(matches!(err, Error::StaleArtifact { .. }), "got {err}");
    }

    #[test]
    fn edited_input_fails_the_digest_check() {
        let tmp = tempfile::tempdir().unwrap();
        let corpus = write_corpus(tmp.path());
        let out = tmp.path().join("out");
        let cfg = fixture_config();
        run_pipeline(&cfg, Some(&corpus), &out, &Stage::ALL, false).unwrap();
        // regenerate the docvecs under the same config but different data,
        // then ask for clustering: the gap artifact no longer matches
        let paths = Paths::new(&out);
        let text = std::fs::read_to_string(paths.docvecs()).unwrap();
        std::fs::write(paths.docvecs(), text.replace("u00", "u99")).unwrap();
        let err = run_pipeline(&cfg, None, &out, &[Stage::Cluster], false).unwrap_err();
        assert!(matches!(err, Error::StaleArtifact { .. }), "got {err}");
    }

    #[test]
    fn explicit_k_bypasses_the_gap_stage() {
        let tmp = tempfile::tempdir().unwrap();
        let corpus = write_corpus(tmp.path());
        let out = tmp.path().join("out");
        let mut cfg = fixture_config();
        cfg.k = Some(2);
        run_pipeline(&cfg, Some(&corpus), &out, &Stage::ALL, false).unwrap();
        let paths = Paths::new(&out);
        assert!(!paths.gap().exists(), "no gap sweep with a fixed k");
        let (_, centroids) = cluster::read_centroids(&paths.centroids()).unwrap();
        assert_eq!(centroids.rows(), 2);
        // the two topic families should separate cleanly even at 8 dims
        let (_, pairs) = cluster::read_assignments(&paths.assignments()).unwrap();
        let mut split = [[0usize; 2]; 2];
        for (id, a) in &pairs {
            let fam = usize::from(id[1..].parse::<usize>().unwrap() >= 6);
            split[fam][*a] += 1;
        }
        let pure = split[0][0] + split[1][1];
        let purity = pure.max(12 - pure);
        assert!(purity >= 11, "split {split:?}");
    }

    #[test]
    fn stage_lists_parse_and_order() {
        assert_eq!(parse_stages("all").unwrap(), Stage::ALL.to_vec());
        assert_eq!(
            parse_stages("train, ingest,train").unwrap(),
            vec![Stage::Ingest, Stage::Train]
        );
        assert!(parse_stages("fly").is_err());
        assert!(parse_stages("").is_err());
        assert_eq!(Stage::Report.to_string(), "report");
        assert_eq!("gap".parse::<Stage>().unwrap(), Stage::Gap);
    }
}
