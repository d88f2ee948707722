//! `topics`: turn a corpus of short posts into clustered topic summaries.
//!
//! Each pipeline stage is exposed as a standalone subcommand working on
//! explicit file paths, and `run` drives the whole pipeline against one
//! output directory with full lineage checking. Log verbosity comes from
//! RUST_LOG (default info).

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use topics_core::artifact::{fingerprint_file, ArtifactHeader};
use topics_core::cluster::{self, KmeansOpts};
use topics_core::config::PipelineConfig;
use topics_core::docmodel;
use topics_core::gapstat;
use topics_core::ingest::{self, CorpusFormat};
use topics_core::matrix::Matrix;
use topics_core::pipeline::{self, aligned_assignments, parse_stages, run_pipeline, Paths};
use topics_core::project;
use topics_core::report::{self, Lexicon};
use topics_core::tokenize::{tokenize_document, tokenize_post};
use topics_core::trainer::{self, EmbeddingModel};
use topics_core::vocab::{build_vocabulary, Vocabulary};
use topics_core::{Error, Result};

#[derive(Parser)]
#[command(name = "topics", version, about = "corpus to topic clusters, one stage at a time")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse a raw corpus into the length-filtered per-user docstore
    Ingest(IngestArgs),
    /// Print the tokens of one text, for debugging the rule table
    Tokenize(TokenizeArgs),
    /// Train word embeddings over a docstore
    Train(TrainArgs),
    /// Average word vectors into document vectors
    Embed(EmbedArgs),
    /// Sweep cluster counts with the gap statistic
    Gap(GapArgs),
    /// K-means over document vectors
    Cluster(ClusterArgs),
    /// Project documents or centroids to 2D for plotting
    Project(ProjectArgs),
    /// Summarize clusters: representatives, words, tweet lengths
    Report(ReportArgs),
    /// Run pipeline stages against one output directory
    Run(RunArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// raw corpus file, one post per line
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "jsonl")]
    format: String,
    /// drop posts shorter than this many characters
    #[arg(long, default_value_t = 20)]
    min_chars: usize,
    /// docstore file to write
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct TokenizeArgs {
    #[arg(long)]
    text: String,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    docstore: PathBuf,
    #[arg(long, default_value_t = 150)]
    dims: usize,
    #[arg(long, default_value_t = 6)]
    window: usize,
    #[arg(long, default_value_t = 10)]
    min_count: u64,
    #[arg(long, default_value_t = 5)]
    negatives: usize,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    /// initial learning rate of the linear decay
    #[arg(long, default_value_t = 0.025)]
    lr: f64,
    #[arg(long, default_value_t = 1e-4)]
    final_lr: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// model file to write (input vectors; the output-matrix sidecar
    /// lands next to it with a .wout infix)
    #[arg(long)]
    output: PathBuf,
    /// also persist the vocabulary with counts
    #[arg(long)]
    vocab_out: Option<PathBuf>,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    docstore: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// documents need this many in-vocabulary tokens to get a vector
    #[arg(long, default_value_t = 40)]
    min_occurrences: usize,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct GapArgs {
    #[arg(long)]
    docvecs: PathBuf,
    #[arg(long, default_value_t = 5)]
    k_min: usize,
    #[arg(long, default_value_t = 140)]
    k_max: usize,
    #[arg(long, default_value_t = 5)]
    k_step: usize,
    /// reference datasets per k
    #[arg(long = "B", default_value_t = 10)]
    b: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// firstSE or argmaxGap
    #[arg(long, default_value = "firstSE")]
    rule: String,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long)]
    docvecs: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    /// writes <prefix>.assignments.tsv and <prefix>.centroids.tsv
    #[arg(long)]
    output_prefix: String,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProjectWhat {
    Documents,
    Centroids,
}

#[derive(Args)]
struct ProjectArgs {
    #[arg(long)]
    docvecs: PathBuf,
    /// needed to label documents with their cluster
    #[arg(long)]
    assignments: Option<PathBuf>,
    /// needed for --what centroids
    #[arg(long)]
    centroids: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ProjectWhat::Documents)]
    what: ProjectWhat,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("lexicon").required(true).multiple(false))]
struct ReportArgs {
    #[arg(long)]
    assignments: PathBuf,
    #[arg(long)]
    centroids: PathBuf,
    #[arg(long)]
    docvecs: PathBuf,
    #[arg(long)]
    docstore: PathBuf,
    /// vocabulary artifact for word membership
    #[arg(long, group = "lexicon")]
    vocab: Option<PathBuf>,
    /// model file as the word-membership source instead of --vocab
    #[arg(long, group = "lexicon")]
    model: Option<PathBuf>,
    /// representative documents per cluster
    #[arg(short = 'R', long, default_value_t = 15)]
    representatives: usize,
    #[arg(long, default_value_t = 10)]
    top_n: usize,
    #[arg(long)]
    output: PathBuf,
    /// also print the aligned text table
    #[arg(long)]
    pretty: bool,
}

#[derive(Args)]
struct RunArgs {
    /// key=value config file; defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// raw corpus file (needed when the ingest stage runs)
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    outdir: PathBuf,
    /// `all` or a comma-separated list like `ingest,train`
    #[arg(long, default_value = "all")]
    stages: String,
    /// shorthand for --stages all
    #[arg(long, conflicts_with = "stages")]
    all: bool,
    /// skip stages whose outputs are already up to date
    #[arg(long)]
    skip_fresh: bool,
    /// config override, repeatable (highest precedence)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli.cmd) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Ingest(a) => cmd_ingest(a),
        Cmd::Tokenize(a) => cmd_tokenize(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Embed(a) => cmd_embed(a),
        Cmd::Gap(a) => cmd_gap(a),
        Cmd::Cluster(a) => cmd_cluster(a),
        Cmd::Project(a) => cmd_project(a),
        Cmd::Report(a) => cmd_report(a),
        Cmd::Run(a) => cmd_run(a),
    }
}

/// Standalone subcommands accept artifacts from any run, so they check the
/// artifact kind but not the config fingerprint (only `run` can do that).
fn check_kind(path: &Path, header: &Option<ArtifactHeader>, expected: &str) -> Result<()> {
    match header {
        Some(h) if h.kind != expected => Err(Error::StaleArtifact {
            path: path.to_path_buf(),
            msg: format!("holds a `{}` artifact where `{expected}` was expected", h.kind),
        }),
        Some(_) => Ok(()),
        None => {
            log::warn!("{}: no artifact header, taking the file as-is", path.display());
            Ok(())
        }
    }
}

fn cmd_ingest(a: IngestArgs) -> Result<()> {
    let format: CorpusFormat = a.format.parse()?;
    let (posts, stats) = ingest::read_corpus(&a.input, format)?;
    let docs = ingest::filter_and_group(posts, a.min_chars);
    if docs.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no posts with at least {} characters in {}",
            a.min_chars,
            a.input.display()
        )));
    }
    let cfg = PipelineConfig { format, min_chars: a.min_chars, ..PipelineConfig::default() };
    cfg.validate()?;
    let header =
        ArtifactHeader::new("docstore", cfg.fingerprint(), vec![fingerprint_file(&a.input)?]);
    ingest::write_docstore(&a.output, &docs, &header)?;
    let kept: usize = docs.iter().map(|d| d.posts.len()).sum();
    log::info!(
        "{} records read ({} malformed), {kept} posts kept, {} documents written",
        stats.read,
        stats.skipped_malformed,
        docs.len()
    );
    Ok(())
}

fn cmd_tokenize(a: TokenizeArgs) -> Result<()> {
    for token in tokenize_post(&a.text) {
        println!("{}\t{}", token.surface, token.kind.as_str());
    }
    Ok(())
}

/// model.txt -> model.wout.txt; extensionless names just gain .wout
fn sidecar_path(model: &Path) -> PathBuf {
    match (model.file_stem(), model.extension()) {
        (Some(stem), Some(ext)) => {
            let mut name = stem.to_os_string();
            name.push(".wout.");
            name.push(ext);
            model.with_file_name(name)
        }
        _ => {
            let mut name = model.as_os_str().to_os_string();
            name.push(".wout");
            PathBuf::from(name)
        }
    }
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cfg = PipelineConfig {
        dims: a.dims,
        window: a.window,
        min_count: a.min_count,
        negatives: a.negatives,
        epochs: a.epochs,
        initial_lr: a.lr,
        final_lr: a.final_lr,
        seed: a.seed,
        workers: a.workers,
        ..PipelineConfig::default()
    };
    cfg.validate()?;
    let (header, docs) = ingest::read_docstore(&a.docstore)?;
    check_kind(&a.docstore, &header, "docstore")?;
    let tokenized: Vec<_> = docs.iter().map(tokenize_document).collect();
    let vocab = build_vocabulary(tokenized.iter().map(|d| d.tokens.as_slice()), a.min_count);
    let indexed: Vec<Vec<usize>> = tokenized.iter().map(|d| vocab.to_indices(&d.tokens)).collect();
    let model = trainer::train(&indexed, &vocab, &cfg.train_config())?;
    let fp = cfg.fingerprint();
    let inputs = vec![fingerprint_file(&a.docstore)?];
    model.save(
        &a.output,
        &ArtifactHeader::new("model", fp.clone(), inputs.clone())
            .with_extra("window", a.window)
            .with_extra("negatives", a.negatives),
    )?;
    let sidecar = sidecar_path(&a.output);
    model.save_output(
        &sidecar,
        &ArtifactHeader::new("model-output", fp.clone(), inputs.clone())
            .with_extra("window", a.window)
            .with_extra("negatives", a.negatives),
    )?;
    if let Some(vocab_out) = &a.vocab_out {
        vocab.save(vocab_out, &ArtifactHeader::new("vocab", fp, inputs))?;
    }
    log::info!(
        "trained {} words at {} dims over {} documents; sidecar at {}",
        vocab.len(),
        a.dims,
        docs.len(),
        sidecar.display()
    );
    Ok(())
}

fn cmd_embed(a: EmbedArgs) -> Result<()> {
    let (header, docs) = ingest::read_docstore(&a.docstore)?;
    check_kind(&a.docstore, &header, "docstore")?;
    let (header, model) = EmbeddingModel::load(&a.model)?;
    check_kind(&a.model, &header, "model")?;
    let vecs = docmodel::embed_corpus(&docs, &model, a.min_occurrences);
    if vecs.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no document reaches {} in-vocabulary occurrences",
            a.min_occurrences
        )));
    }
    let cfg =
        PipelineConfig { min_occurrences: a.min_occurrences, ..PipelineConfig::default() };
    cfg.validate()?;
    let header = ArtifactHeader::new(
        "docvecs",
        cfg.fingerprint(),
        vec![fingerprint_file(&a.docstore)?, fingerprint_file(&a.model)?],
    );
    docmodel::save_docvecs(&a.output, &vecs, &header)?;
    log::info!("embedded {} of {} documents", vecs.len(), docs.len());
    Ok(())
}

fn load_docvecs_checked(path: &Path) -> Result<(Vec<docmodel::DocumentVector>, Matrix)> {
    let (header, vecs) = docmodel::load_docvecs(path)?;
    check_kind(path, &header, "docvecs")?;
    let points = docmodel::docvec_matrix(&vecs);
    Ok((vecs, points))
}

fn cmd_gap(a: GapArgs) -> Result<()> {
    let rule: gapstat::SelectionRule = a.rule.parse()?;
    let cfg = PipelineConfig {
        k_min: a.k_min,
        k_max: a.k_max,
        k_step: a.k_step,
        b: a.b,
        rule,
        seed: a.seed,
        restarts: a.restarts,
        workers: a.workers,
        ..PipelineConfig::default()
    };
    cfg.validate()?;
    let (_, points) = load_docvecs_checked(&a.docvecs)?;
    let mut ks = cfg.sweep();
    let m = points.rows();
    let before = ks.len();
    ks.retain(|&k| k <= m);
    if ks.len() < before {
        log::warn!("dropping sweep values above the {m} available documents");
    }
    if ks.is_empty() {
        return Err(Error::InvalidInput(format!(
            "the k sweep starts at {} but only {m} documents have vectors",
            a.k_min
        )));
    }
    let curve =
        gapstat::gap_curve(&points, &ks, a.b, a.seed, &cfg.kmeans_opts(), rule, a.workers)?;
    if curve.no_elbow {
        log::warn!("no k satisfied the {rule} criterion, falling back to the gap argmax");
    }
    let header = ArtifactHeader::new(
        "gap",
        cfg.fingerprint(),
        vec![fingerprint_file(&a.docvecs)?],
    );
    gapstat::write_gap(&a.output, &curve, &header)?;
    println!("selected k = {}", curve.selected_k);
    Ok(())
}

fn cmd_cluster(a: ClusterArgs) -> Result<()> {
    let cfg = PipelineConfig {
        k: Some(a.k),
        seed: a.seed,
        restarts: a.restarts,
        ..PipelineConfig::default()
    };
    cfg.validate()?;
    let (vecs, points) = load_docvecs_checked(&a.docvecs)?;
    let opts = KmeansOpts { restarts: a.restarts, ..KmeansOpts::default() };
    let model = cluster::kmeans(&points, a.k, a.seed, &opts)?;
    let ids: Vec<String> = vecs.iter().map(|v| v.user_id.clone()).collect();
    let fp = cfg.fingerprint();
    let inputs = vec![fingerprint_file(&a.docvecs)?];
    let assignments_path = PathBuf::from(format!("{}.assignments.tsv", a.output_prefix));
    let centroids_path = PathBuf::from(format!("{}.centroids.tsv", a.output_prefix));
    cluster::write_assignments(
        &assignments_path,
        &ids,
        &model.assignments,
        &ArtifactHeader::new("assignments", fp.clone(), inputs.clone()).with_extra("k", a.k),
    )?;
    cluster::write_centroids(
        &centroids_path,
        &model.centroids,
        &ArtifactHeader::new("centroids", fp, inputs),
    )?;
    log::info!(
        "k = {}, within-cluster dispersion {}; wrote {} and {}",
        a.k,
        model.within_dispersion,
        assignments_path.display(),
        centroids_path.display()
    );
    Ok(())
}

fn cmd_project(a: ProjectArgs) -> Result<()> {
    let (vecs, points) = load_docvecs_checked(&a.docvecs)?;
    let pca = project::fit_pca2(&points)?;
    let cfg = PipelineConfig::default();
    let mut input_files = vec![a.docvecs.clone()];
    let (ids, coords, clusters) = match a.what {
        ProjectWhat::Documents => {
            let asg_path = a.assignments.as_deref().ok_or_else(|| {
                Error::Config("projecting documents needs --assignments".into())
            })?;
            let (header, pairs) = cluster::read_assignments(asg_path)?;
            check_kind(asg_path, &header, "assignments")?;
            let clusters = aligned_assignments(&pairs, &vecs, asg_path)?;
            input_files.push(asg_path.to_path_buf());
            let ids: Vec<String> = vecs.iter().map(|v| v.user_id.clone()).collect();
            (ids, pca.transform(&points)?, clusters)
        }
        ProjectWhat::Centroids => {
            let cen_path = a.centroids.as_deref().ok_or_else(|| {
                Error::Config("projecting centroids needs --centroids".into())
            })?;
            let (header, centroids) = cluster::read_centroids(cen_path)?;
            check_kind(cen_path, &header, "centroids")?;
            input_files.push(cen_path.to_path_buf());
            let ids: Vec<String> =
                (0..centroids.rows()).map(|i| format!("centroid-{i}")).collect();
            let clusters: Vec<usize> = (0..centroids.rows()).collect();
            (ids, pca.transform(&centroids)?, clusters)
        }
    };
    let digests = input_files
        .iter()
        .map(|p| fingerprint_file(p))
        .collect::<Result<Vec<_>>>()?;
    let header = ArtifactHeader::new("coords", cfg.fingerprint(), digests)
        .with_extra("ev0", pca.eigenvalues[0])
        .with_extra("ev1", pca.eigenvalues[1]);
    project::write_coords(&a.output, &header, &ids, &coords, &clusters)?;
    log::info!("wrote {} projected points", ids.len());
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let cfg = PipelineConfig {
        r: a.representatives,
        top_n: a.top_n,
        ..PipelineConfig::default()
    };
    cfg.validate()?;
    let (vecs, points) = load_docvecs_checked(&a.docvecs)?;
    let (header, docs) = ingest::read_docstore(&a.docstore)?;
    check_kind(&a.docstore, &header, "docstore")?;
    let (header, pairs) = cluster::read_assignments(&a.assignments)?;
    check_kind(&a.assignments, &header, "assignments")?;
    let (header, centroids) = cluster::read_centroids(&a.centroids)?;
    check_kind(&a.centroids, &header, "centroids")?;
    let assignments = aligned_assignments(&pairs, &vecs, &a.assignments)?;
    let model = cluster::reconstruct_model(centroids, assignments, &points)?;
    let ids: Vec<String> = vecs.iter().map(|v| v.user_id.clone()).collect();

    fn build(
        a: &ReportArgs,
        model: &cluster::ClusterModel,
        ids: &[String],
        points: &Matrix,
        docs: &[ingest::RawDocument],
        lexicon: &impl Lexicon,
    ) -> Result<Vec<report::ClusterReport>> {
        report::full_report(model, ids, points, docs, lexicon, a.representatives, a.top_n)
    }

    let reports = if let Some(vocab_path) = &a.vocab {
        let (header, vocab) = Vocabulary::load(vocab_path)?;
        check_kind(vocab_path, &header, "vocab")?;
        build(&a, &model, &ids, &points, &docs, &vocab)?
    } else {
        let model_path = a.model.as_ref().expect("clap enforces the lexicon group");
        let (header, embedding) = EmbeddingModel::load(model_path)?;
        check_kind(model_path, &header, "model")?;
        build(&a, &model, &ids, &points, &docs, &embedding)?
    };

    let mut input_files = vec![a.assignments.clone(), a.centroids.clone(), a.docvecs.clone(), a.docstore.clone()];
    input_files.push(a.vocab.clone().or(a.model.clone()).expect("lexicon group"));
    let digests = input_files
        .iter()
        .map(|p| fingerprint_file(p))
        .collect::<Result<Vec<_>>>()?;
    report::write_report(&a.output, &ArtifactHeader::new("report", cfg.fingerprint(), digests), &reports)?;
    if a.pretty {
        print!("{}", report::render_table(&reports));
    }
    log::info!("summarized {} clusters", reports.len());
    Ok(())
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(path) => PipelineConfig::from_file(path)?,
        None => PipelineConfig::default(),
    };
    for pair in &a.sets {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects key=value, found `{pair}`")))?;
        cfg.set(key.trim(), value.trim())?;
    }
    cfg.validate()?;
    let stages = if a.all { parse_stages("all")? } else { parse_stages(&a.stages)? };
    run_pipeline(&cfg, a.input.as_deref(), &a.outdir, &stages, a.skip_fresh)?;
    // the report is the headline output; show it when this run produced it
    if stages.contains(&pipeline::Stage::Report) {
        let report_path = Paths::new(&a.outdir).report();
        let (_, reports) = report::read_report(&report_path)?;
        print!("{}", report::render_table(&reports));
    }
    Ok(())
}
