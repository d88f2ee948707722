//! Document vectors. A user's document embeds as the mean of the input
//! vectors of its in-vocabulary tokens (with repetition); documents with
//! fewer than `min_occurrences` in-vocabulary occurrences are dropped as
//! too sparse to average meaningfully.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::artifact::{self, ArtifactHeader};
use crate::error::{Error, Result};
use crate::ingest::RawDocument;
use crate::matrix::Matrix;
use crate::tokenize::{self, TokenizedDocument};
use crate::trainer::EmbeddingModel;

#[derive(Debug, Clone, PartialEq)]
pub struct DocumentVector {
    pub user_id: String,
    pub vector: Vec<f64>,
    /// In-vocabulary token occurrences the mean was taken over.
    pub occurrences: usize,
}

/// Embed one tokenized document. None when the document has fewer than
/// `min_occurrences` in-vocabulary occurrences (or none at all).
pub fn embed_document(
    doc: &TokenizedDocument,
    model: &EmbeddingModel,
    min_occurrences: usize,
) -> Option<DocumentVector> {
    // accumulate counts per word first and sum in index order, so the mean
    // does not depend on the order tokens appear in
    let mut counts: HashMap<usize, usize> = HashMap::new();
    let mut occurrences = 0usize;
    for token in &doc.tokens {
        if let Some(i) = model.index_of(&token.surface) {
            *counts.entry(i).or_insert(0) += 1;
            occurrences += 1;
        }
    }
    if occurrences < min_occurrences || occurrences == 0 {
        return None;
    }
    let mut by_index: Vec<(usize, usize)> = counts.into_iter().collect();
    by_index.sort_unstable();
    let mut sum = vec![0.0; model.dims()];
    let mut row = vec![0.0; model.dims()];
    for (i, count) in by_index {
        model.input_row_into(i, &mut row);
        for (s, x) in sum.iter_mut().zip(&row) {
            *s += count as f64 * x;
        }
    }
    for s in &mut sum {
        *s /= occurrences as f64;
    }
    Some(DocumentVector { user_id: doc.user_id.clone(), vector: sum, occurrences })
}

/// Tokenize and embed every document, keeping docstore order. Documents
/// below the occurrence threshold are skipped.
pub fn embed_corpus(
    docs: &[RawDocument],
    model: &EmbeddingModel,
    min_occurrences: usize,
) -> Vec<DocumentVector> {
    docs.iter()
        .filter_map(|d| embed_document(&tokenize::tokenize_document(d), model, min_occurrences))
        .collect()
}

/// Stack document vectors into an M x N matrix, row order preserved.
pub fn docvec_matrix(vecs: &[DocumentVector]) -> Matrix {
    let cols = vecs.first().map_or(0, |v| v.vector.len());
    let mut m = Matrix::zeros(vecs.len(), cols);
    for (i, v) in vecs.iter().enumerate() {
        m.row_mut(i).copy_from_slice(&v.vector);
    }
    m
}

/// Write document vectors: a shape line `M N`, then one row per document,
/// `user_id occurrences v_1 .. v_N`, space separated.
pub fn save_docvecs(path: &Path, vecs: &[DocumentVector], header: &ArtifactHeader) -> Result<()> {
    let dims = vecs.first().map_or(0, |v| v.vector.len());
    let mut w = artifact::create_writer(path)?;
    let io_err = |e| Error::io(path, e);
    writeln!(w, "{}", header.line()).map_err(io_err)?;
    writeln!(w, "{} {}", vecs.len(), dims).map_err(io_err)?;
    for v in vecs {
        // ids are reassembled from space-separated fields on load, which
        // only round-trips single internal spaces
        if v.user_id.contains("  ") || v.user_id.starts_with(' ') || v.user_id.ends_with(' ') {
            return Err(Error::InvalidInput(format!(
                "user id `{}` cannot be stored in the docvecs format",
                v.user_id
            )));
        }
        if v.vector.len() != dims {
            return Err(Error::InvalidInput("ragged document vectors".into()));
        }
        write!(w, "{} {}", v.user_id, v.occurrences).map_err(io_err)?;
        for x in &v.vector {
            write!(w, " {x}").map_err(io_err)?;
        }
        writeln!(w).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn load_docvecs_from<R: BufRead>(
    mut reader: R,
    source: &Path,
) -> Result<(Option<ArtifactHeader>, Vec<DocumentVector>)> {
    let mut line_no = 0usize;
    let (header, leftover) = artifact::take_header(&mut reader, source, &mut line_no)?;

    let mut shape: Option<(usize, usize)> = None;
    let mut vecs: Vec<DocumentVector> = Vec::new();
    let mut handle = |line: String, line_no: usize| -> Result<()> {
        if line.is_empty() {
            return Ok(());
        }
        let Some((m, n)) = shape else {
            let mut parts = line.split_whitespace();
            let bad = || Error::parse(source, line_no, format!("bad shape line `{line}`"));
            let m: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let n: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            if parts.next().is_some() {
                return Err(bad());
            }
            shape = Some((m, n));
            return Ok(());
        };
        let fields: Vec<&str> = line.split(' ').collect();
        if fields.len() < n + 2 {
            return Err(Error::parse(
                source,
                line_no,
                format!("row has {} fields, need at least {}", fields.len(), n + 2),
            ));
        }
        let id_end = fields.len() - n - 1;
        let user_id = fields[..id_end].join(" ");
        if user_id.is_empty() {
            return Err(Error::parse(source, line_no, "empty user id"));
        }
        let occurrences: usize = fields[id_end]
            .parse()
            .map_err(|_| Error::parse(source, line_no, format!("bad occurrence count `{}`", fields[id_end])))?;
        if occurrences == 0 {
            return Err(Error::parse(source, line_no, "zero occurrences"));
        }
        let mut vector = Vec::with_capacity(n);
        for f in &fields[id_end + 1..] {
            let x: f64 =
                f.parse().map_err(|_| Error::parse(source, line_no, format!("bad float `{f}`")))?;
            if !x.is_finite() {
                return Err(Error::parse(source, line_no, "non-finite value"));
            }
            vector.push(x);
        }
        if vecs.len() == m {
            return Err(Error::parse(source, line_no, format!("more than {m} rows")));
        }
        vecs.push(DocumentVector { user_id, vector, occurrences });
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
        None => Err(Error::parse(source, line_no, "missing `M N` shape line")),
        Some((m, _)) if vecs.len() != m => Err(Error::parse(
            source,
            line_no,
            format!("expected {m} rows, found {}", vecs.len()),
        )),
        Some(_) => Ok((header, vecs)),
    }
}

pub fn load_docvecs(path: &Path) -> Result<(Option<ArtifactHeader>, Vec<DocumentVector>)> {
    load_docvecs_from(artifact::open_reader(path)?, path)
}
