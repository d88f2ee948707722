//! Pipeline configuration: one flat key=value file, every knob validated,
//! and a content fingerprint that artifact headers embed so stale outputs
//! are detected instead of silently mixed.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::artifact::fingerprint_bytes;
use crate::cluster::KmeansOpts;
use crate::error::{Error, Result};
use crate::gapstat::SelectionRule;
use crate::ingest::CorpusFormat;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub format: CorpusFormat,
    /// posts shorter than this many characters are dropped at ingest
    pub min_chars: usize,
    /// vocabulary frequency floor
    pub min_count: u64,
    pub dims: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub initial_lr: f64,
    pub final_lr: f64,
    /// documents need this many in-vocabulary tokens to get a vector
    pub min_occurrences: usize,
    pub k_min: usize,
    pub k_max: usize,
    pub k_step: usize,
    /// fixed cluster count; `auto` (None) selects k with the gap statistic
    pub k: Option<usize>,
    /// reference datasets per gap evaluation
    pub b: usize,
    pub rule: SelectionRule,
    /// representative documents per cluster
    pub r: usize,
    /// words per cluster in the report
    pub top_n: usize,
    pub seed: u64,
    pub workers: usize,
    pub restarts: usize,
    pub kmeans_max_iter: usize,
    pub kmeans_tol: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            format: CorpusFormat::Jsonl,
            min_chars: 20,
            min_count: 10,
            dims: 150,
            window: 6,
            negatives: 5,
            epochs: 5,
            initial_lr: 0.025,
            final_lr: 1e-4,
            min_occurrences: 40,
            k_min: 5,
            k_max: 140,
            k_step: 5,
            k: None,
            b: 10,
            rule: SelectionRule::FirstSe,
            r: 15,
            top_n: 10,
            seed: 42,
            workers: 1,
            restarts: 10,
            kmeans_max_iter: 300,
            kmeans_tol: 1e-6,
        }
    }
}

impl PipelineConfig {
    /// Apply one key=value pair. File parsing and CLI overrides both pass
    /// through here, so they accept the same names.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("bad value `{value}` for {key}: {what}"));
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad value `{value}` for {key}")))
        }
        match key {
            "format" => self.format = value.parse()?,
            "min_chars" => self.min_chars = num(key, value)?,
            "min_count" => self.min_count = num(key, value)?,
            "dims" => self.dims = num(key, value)?,
            "window" => self.window = num(key, value)?,
            "negatives" => self.negatives = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "initial_lr" => self.initial_lr = num(key, value)?,
            "final_lr" => self.final_lr = num(key, value)?,
            "min_occurrences" => self.min_occurrences = num(key, value)?,
            "k_min" => self.k_min = num(key, value)?,
            "k_max" => self.k_max = num(key, value)?,
            "k_step" => self.k_step = num(key, value)?,
            "k" => {
                self.k = if value == "auto" {
                    None
                } else {
                    Some(num(key, value).map_err(|_| bad("expected a count or `auto`"))?)
                }
            }
            "b" => self.b = num(key, value)?,
            "rule" => self.rule = value.parse()?,
            "r" => self.r = num(key, value)?,
            "top_n" => self.top_n = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "workers" => self.workers = num(key, value)?,
            "restarts" => self.restarts = num(key, value)?,
            "kmeans_max_iter" => self.kmeans_max_iter = num(key, value)?,
            "kmeans_tol" => self.kmeans_tol = num(key, value)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn from_reader<R: BufRead>(reader: R, source: &Path) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(source, e))?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::parse(source, i + 1, format!("expected key=value, found `{line}`"))
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::parse(source, i + 1, e.to_string()))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(BufReader::new(file), path)
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        self.kmeans_opts().validate()?;
        let require = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(msg.into()))
            }
        };
        require(self.min_count >= 1, "min_count must be at least 1")?;
        require(self.min_occurrences >= 1, "min_occurrences must be at least 1")?;
        require(self.k_min >= 1, "k_min must be at least 1")?;
        require(self.k_step >= 1, "k_step must be at least 1")?;
        require(self.k_max >= self.k_min, "k_max must not be below k_min")?;
        require(self.k.is_none_or(|k| k >= 1), "k must be at least 1")?;
        require(self.b >= 2, "b must be at least 2")?;
        require(self.r >= 1, "r must be at least 1")?;
        require(self.top_n >= 1, "top_n must be at least 1")?;
        Ok(())
    }

    /// The candidate counts swept by the gap stage.
    pub fn sweep(&self) -> Vec<usize> {
        (self.k_min..=self.k_max).step_by(self.k_step).collect()
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            dims: self.dims,
            window: self.window,
            negatives: self.negatives,
            epochs: self.epochs,
            initial_lr: self.initial_lr,
            final_lr: self.final_lr,
            seed: self.seed,
            workers: self.workers,
        }
    }

    pub fn kmeans_opts(&self) -> KmeansOpts {
        KmeansOpts {
            max_iter: self.kmeans_max_iter,
            tol: self.kmeans_tol,
            restarts: self.restarts,
        }
    }

    /// Every field in a fixed order, one per line. This is what gets
    /// fingerprinted, so field order must never change.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let k = match self.k {
            Some(k) => k.to_string(),
            None => "auto".into(),
        };
        for (key, value) in [
            ("format", self.format.to_string()),
            ("min_chars", self.min_chars.to_string()),
            ("min_count", self.min_count.to_string()),
            ("dims", self.dims.to_string()),
            ("window", self.window.to_string()),
            ("negatives", self.negatives.to_string()),
            ("epochs", self.epochs.to_string()),
            ("initial_lr", self.initial_lr.to_string()),
            ("final_lr", self.final_lr.to_string()),
            ("min_occurrences", self.min_occurrences.to_string()),
            ("k_min", self.k_min.to_string()),
            ("k_max", self.k_max.to_string()),
            ("k_step", self.k_step.to_string()),
            ("k", k),
            ("b", self.b.to_string()),
            ("rule", self.rule.to_string()),
            ("r", self.r.to_string()),
            ("top_n", self.top_n.to_string()),
            ("seed", self.seed.to_string()),
            ("workers", self.workers.to_string()),
            ("restarts", self.restarts.to_string()),
            ("kmeans_max_iter", self.kmeans_max_iter.to_string()),
            ("kmeans_tol", self.kmeans_tol.to_string()),
        ] {
            writeln!(s, "{key}={value}").expect("string write");
        }
        s
    }

    pub fn fingerprint(&self) -> String {
        fingerprint_bytes(self.canonical().as_bytes())
    }
}
