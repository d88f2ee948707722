//! Corpus ingestion. Reads line-delimited post records (JSONL or TSV),
//! drops short posts, groups the rest per user into documents, and persists
//! them in the docstore format:
//!
//! `user_id<TAB>len,len,...<TAB>post\u{1F}post\u{1F}...`
//!
//! Post text is sanitized at construction (`\r`, `\n` and U+001F each
//! replaced by a space, one for one) so the docstore stays line-oriented
//! and the separator stays unambiguous. The corpus readers skip malformed
//! lines with a warning; the docstore reader is strict, a malformed line
//! there means a corrupt artifact.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use crate::artifact::{self, ArtifactHeader};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Jsonl,
    Tsv,
}

impl FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" => Ok(CorpusFormat::Jsonl),
            "tsv" => Ok(CorpusFormat::Tsv),
            other => Err(Error::Config(format!("unknown corpus format `{other}` (jsonl, tsv)"))),
        }
    }
}

impl std::fmt::Display for CorpusFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CorpusFormat::Jsonl => "jsonl",
            CorpusFormat::Tsv => "tsv",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PostRecord {
    pub user_id: String,
    pub text: String,
    /// Unicode scalar count of `text`.
    pub char_length: usize,
}

impl PostRecord {
    /// Builds a record, sanitizing control characters that would break the
    /// docstore's line and field framing. Returns None for an empty user id.
    pub fn new(user_id: &str, text: &str) -> Option<Self> {
        let user_id: String = user_id
            .chars()
            .map(|c| if matches!(c, '\t' | '\r' | '\n' | '\u{1F}') { ' ' } else { c })
            .collect();
        if user_id.trim().is_empty() {
            return None;
        }
        let text: String = text
            .chars()
            .map(|c| if matches!(c, '\r' | '\n' | '\u{1F}') { ' ' } else { c })
            .collect();
        let char_length = text.chars().count();
        Some(PostRecord { user_id, text, char_length })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawDocument {
    pub user_id: String,
    pub posts: Vec<PostRecord>,
    pub post_lengths: Vec<usize>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IngestStats {
    pub read: usize,
    pub skipped_malformed: usize,
}

/// Parse one corpus line. Ok(None) marks a blank line (ignored silently),
/// Err the reason a line is malformed.
fn parse_corpus_line(line: &str, format: CorpusFormat) -> std::result::Result<Option<PostRecord>, String> {
    if line.trim().is_empty() {
        return Ok(None);
    }
    match format {
        CorpusFormat::Jsonl => {
            let v: serde_json::Value =
                serde_json::from_str(line).map_err(|e| format!("invalid JSON: {e}"))?;
            let obj = v.as_object().ok_or("top-level JSON value is not an object")?;
            let user = obj
                .get("user_id")
                .and_then(|u| u.as_str())
                .ok_or("missing or non-string `user_id` field")?;
            let text = obj
                .get("text")
                .and_then(|t| t.as_str())
                .ok_or("missing or non-string `text` field")?;
            PostRecord::new(user, text).ok_or_else(|| "empty user id".to_string()).map(Some)
        }
        CorpusFormat::Tsv => {
            let (user, text) = line.split_once('\t').ok_or("expected user_id<TAB>text")?;
            PostRecord::new(user, text).ok_or_else(|| "empty user id".to_string()).map(Some)
        }
    }
}

pub fn read_corpus_from<R: BufRead>(
    reader: R,
    format: CorpusFormat,
    source: &Path,
) -> Result<(Vec<PostRecord>, IngestStats)> {
    let mut posts = Vec::new();
    let mut stats = IngestStats::default();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source, e))?;
        match parse_corpus_line(&line, format) {
            Ok(Some(p)) => {
                stats.read += 1;
                posts.push(p);
            }
            Ok(None) => {}
            Err(msg) => {
                stats.skipped_malformed += 1;
                log::warn!("{}:{}: skipping malformed record: {}", source.display(), idx + 1, msg);
            }
        }
    }
    Ok((posts, stats))
}

pub fn read_corpus(path: &Path, format: CorpusFormat) -> Result<(Vec<PostRecord>, IngestStats)> {
    let reader = artifact::open_reader(path)?;
    read_corpus_from(reader, format, path)
}

/// Drop posts shorter than `min_chars` characters and group the survivors
/// by user, users ordered by first appearance, posts in corpus order.
pub fn filter_and_group(posts: Vec<PostRecord>, min_chars: usize) -> Vec<RawDocument> {
    let mut order: HashMap<String, usize> = HashMap::new();
    let mut docs: Vec<RawDocument> = Vec::new();
    for post in posts {
        if post.char_length < min_chars {
            continue;
        }
        let slot = match order.get(&post.user_id) {
            Some(&i) => i,
            None => {
                order.insert(post.user_id.clone(), docs.len());
                docs.push(RawDocument {
                    user_id: post.user_id.clone(),
                    posts: Vec::new(),
                    post_lengths: Vec::new(),
                });
                docs.len() - 1
            }
        };
        docs[slot].post_lengths.push(post.char_length);
        docs[slot].posts.push(post);
    }
    docs
}

pub fn write_docstore(path: &Path, docs: &[RawDocument], header: &ArtifactHeader) -> Result<()> {
    let mut w = artifact::create_writer(path)?;
    let io_err = |e| Error::io(path, e);
    writeln!(w, "{}", header.line()).map_err(io_err)?;
    for doc in docs {
        let lengths: Vec<String> = doc.post_lengths.iter().map(usize::to_string).collect();
        let texts: Vec<&str> = doc.posts.iter().map(|p| p.text.as_str()).collect();
        writeln!(w, "{}\t{}\t{}", doc.user_id, lengths.join(","), texts.join("\u{1F}"))
            .map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn read_docstore_from<R: BufRead>(
    mut reader: R,
    source: &Path,
) -> Result<(Option<ArtifactHeader>, Vec<RawDocument>)> {
    let mut line_no = 0usize;
    let (header, leftover) = artifact::take_header(&mut reader, source, &mut line_no)?;
    let mut docs = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    let mut handle = |line: String, line_no: usize| -> Result<()> {
        if line.is_empty() {
            return Ok(());
        }
        let doc = parse_docstore_line(&line)
            .map_err(|msg| Error::parse(source, line_no, msg))?;
        if !seen.insert(doc.user_id.clone()) {
            return Err(Error::parse(
                source,
                line_no,
                format!("duplicate document for user `{}`", doc.user_id),
            ));
        }
        docs.push(doc);
        Ok(())
    };
    if let Some(first) = leftover {
        handle(first, line_no)?;
    }
    for line in reader.lines() {
        line_no += 1;
        handle(line.map_err(|e| Error::io(source, e))?, line_no)?;
    }
    Ok((header, docs))
}

pub fn read_docstore(path: &Path) -> Result<(Option<ArtifactHeader>, Vec<RawDocument>)> {
    read_docstore_from(artifact::open_reader(path)?, path)
}

fn parse_docstore_line(line: &str) -> std::result::Result<RawDocument, String> {
    let mut fields = line.splitn(3, '\t');
    let user_id = fields.next().unwrap_or_default();
    let lengths_field = fields.next().ok_or("missing post-lengths column")?;
    let texts_field = fields.next().ok_or("missing posts column")?;
    if user_id.trim().is_empty() {
        return Err("empty user id".into());
    }
    let post_lengths: Vec<usize> = lengths_field
        .split(',')
        .map(|s| s.parse::<usize>().map_err(|_| format!("bad post length `{s}`")))
        .collect::<std::result::Result<_, _>>()?;
    let texts: Vec<&str> = texts_field.split('\u{1F}').collect();
    if texts.len() != post_lengths.len() {
        return Err(format!(
            "{} posts but {} recorded lengths",
            texts.len(),
            post_lengths.len()
        ));
    }
    let mut posts = Vec::with_capacity(texts.len());
    for (text, &len) in texts.iter().zip(&post_lengths) {
        let actual = text.chars().count();
        if actual != len {
            return Err(format!("post has {actual} chars but records {len}"));
        }
        let post =
            PostRecord::new(user_id, text).ok_or_else(|| "empty user id".to_string())?;
        posts.push(post);
    }
    Ok(RawDocument { user_id: user_id.to_string(), posts, post_lengths })
}
