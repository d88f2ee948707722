//! Artifact lineage headers. Every file the pipeline writes starts with a
//! single comment line of the form
//!
//! `#topics <kind> v1 config=<hash> inputs=<digest>,<digest> key=value ...`
//!
//! where `config` fingerprints the effective configuration and `inputs`
//! fingerprints the content of each upstream file the artifact was computed
//! from. Readers can then detect stale artifacts instead of silently mixing
//! generations.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const HEADER_PREFIX: &str = "#topics";
pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArtifactHeader {
    pub kind: String,
    pub version: u32,
    pub config: String,
    pub inputs: Vec<String>,
    /// Extra key=value pairs (e.g. the window size a model was trained with).
    pub extras: Vec<(String, String)>,
}

impl ArtifactHeader {
    pub fn new(kind: &str, config: impl Into<String>, inputs: Vec<String>) -> Self {
        ArtifactHeader {
            kind: kind.to_string(),
            version: ARTIFACT_VERSION,
            config: config.into(),
            inputs,
            extras: Vec::new(),
        }
    }

    pub fn with_extra(mut self, key: &str, value: impl ToString) -> Self {
        self.extras.push((key.to_string(), value.to_string()));
        self
    }

    pub fn extra(&self, key: &str) -> Option<&str> {
        self.extras.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn line(&self) -> String {
        let mut s = format!(
            "{} {} v{} config={} inputs={}",
            HEADER_PREFIX,
            self.kind,
            self.version,
            self.config,
            self.inputs.join(",")
        );
        for (k, v) in &self.extras {
            s.push(' ');
            s.push_str(k);
            s.push('=');
            s.push_str(v);
        }
        s
    }

    /// Parse a header line. Returns None if the line is not an artifact
    /// header at all; Err if it starts like one but is malformed.
    pub fn parse(line: &str) -> Option<std::result::Result<Self, String>> {
        let rest = line.strip_prefix(HEADER_PREFIX)?;
        if !rest.starts_with([' ', '\t']) {
            return None;
        }
        Some(Self::parse_fields(rest.trim()))
    }

    fn parse_fields(rest: &str) -> std::result::Result<Self, String> {
        let mut fields = rest.split_whitespace();
        let kind = fields.next().ok_or("missing artifact kind")?.to_string();
        let version = fields
            .next()
            .and_then(|v| v.strip_prefix('v'))
            .and_then(|v| v.parse::<u32>().ok())
            .ok_or("missing or malformed version")?;
        let mut config = None;
        let mut inputs = None;
        let mut extras = Vec::new();
        for field in fields {
            let (k, v) = field.split_once('=').ok_or_else(|| format!("bad field `{field}`"))?;
            match k {
                "config" => config = Some(v.to_string()),
                "inputs" => {
                    inputs =
                        Some(v.split(',').filter(|s| !s.is_empty()).map(String::from).collect())
                }
                _ => extras.push((k.to_string(), v.to_string())),
            }
        }
        Ok(ArtifactHeader {
            kind,
            version,
            config: config.ok_or("missing config field")?,
            inputs: inputs.ok_or("missing inputs field")?,
            extras,
        })
    }
}

/// 64-bit FNV-1a over raw bytes, rendered as 16 hex digits. A content
/// fingerprint for staleness checks, not a cryptographic hash.
pub fn fingerprint_bytes(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}

pub fn fingerprint_file(path: &Path) -> Result<String> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    f.read_to_end(&mut buf).map_err(|e| Error::io(path, e))?;
    Ok(fingerprint_bytes(&buf))
}

pub(crate) fn open_reader(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?))
}

pub(crate) fn create_writer(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

/// Read just the header of an artifact file. Ok(None) when the file does
/// not start with one (or is empty).
pub fn read_header(path: &Path) -> Result<Option<ArtifactHeader>> {
    let mut reader = open_reader(path)?;
    let mut line_no = 0usize;
    let (header, _) = take_header(&mut reader, path, &mut line_no)?;
    Ok(header)
}

/// Read the first line of a reader and, when it is an artifact header,
/// return it parsed; otherwise hand the line back for normal processing.
pub(crate) fn take_header<R: BufRead>(
    reader: &mut R,
    path: &Path,
    line_no: &mut usize,
) -> Result<(Option<ArtifactHeader>, Option<String>)> {
    let mut first = String::new();
    let n = reader.read_line(&mut first).map_err(|e| Error::io(path, e))?;
    if n == 0 {
        return Ok((None, None));
    }
    *line_no = 1;
    let trimmed = first.trim_end_matches(['\n', '\r']).to_string();
    match ArtifactHeader::parse(&trimmed) {
        Some(Ok(h)) => Ok((Some(h), None)),
        Some(Err(msg)) => Err(Error::parse(path, 1, format!("malformed artifact header: {msg}"))),
        None => Ok((None, Some(trimmed))),
    }
}

/// Verify that an artifact header recorded under `path` matches the current
/// fingerprints of its input files. `expected` pairs a label with the file
/// the digest was taken from, in the order the digests were recorded.
pub fn verify_inputs(path: &Path, header: &ArtifactHeader, expected: &[(&str, PathBuf)]) -> Result<()> {
    if header.inputs.len() != expected.len() {
        return Err(Error::StaleArtifact {
            path: path.to_path_buf(),
            msg: format!(
                "records {} input digests, expected {}",
                header.inputs.len(),
                expected.len()
            ),
        });
    }
    for (recorded, (label, input)) in header.inputs.iter().zip(expected) {
        let actual = fingerprint_file(input)?;
        if *recorded != actual {
            return Err(Error::StaleArtifact {
                path: path.to_path_buf(),
                msg: format!(
                    "input digest for {label} ({}) is {recorded}, file now hashes to {actual}; regenerate this artifact",
                    input.display()
                ),
            });
        }
    }
    Ok(())
}
