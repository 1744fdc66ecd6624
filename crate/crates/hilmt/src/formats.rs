//! Corpus, segment, tag-file and report readers and writers.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use hilmt_core::metrics::{PosTag, TaggedTokens};
use hilmt_core::TokenSeq;
use serde::Serialize;
use thiserror::Error;

use crate::pipeline::CorpusPair;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Line {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

fn read_text(path: &Path) -> Result<String, FormatError> {
    std::fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn line_err(path: &Path, line: usize, reason: impl Into<String>) -> FormatError {
    FormatError::Line {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

/// Lines with any trailing carriage return removed, numbered from 1.
fn numbered_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
}

/// Reads `source<TAB>reference` lines; the reference column is optional and
/// blank lines are skipped.
pub fn read_corpus(path: &Path) -> Result<Vec<CorpusPair>, FormatError> {
    let text = read_text(path)?;
    let mut pairs = Vec::new();
    for (line_no, line) in numbered_lines(&text) {
        if line.trim().is_empty() {
            continue;
        }
        let mut columns = line.split('\t');
        let source = columns.next().unwrap_or_default().trim();
        let reference = columns.next().map(|r| r.trim().to_owned());
        if columns.next().is_some() {
            return Err(line_err(
                path,
                line_no,
                "expected at most two tab-separated columns",
            ));
        }
        if source.is_empty() {
            return Err(line_err(path, line_no, "empty source column"));
        }
        pairs.push(CorpusPair {
            source: source.to_owned(),
            reference,
        });
    }
    Ok(pairs)
}

/// Reads one segment per line. `.jsonl` files yield each object's `final`
/// field, `.tsv` files their reference column, anything else the raw line.
pub fn read_segments(path: &Path) -> Result<Vec<String>, FormatError> {
    let extension = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or_default();
    match extension {
        "jsonl" => {
            let text = read_text(path)?;
            let mut out = Vec::new();
            for (line_no, line) in numbered_lines(&text) {
                if line.trim().is_empty() {
                    continue;
                }
                let value: serde_json::Value = serde_json::from_str(line)
                    .map_err(|e| line_err(path, line_no, e.to_string()))?;
                let segment = value.get("final").and_then(|v| v.as_str()).ok_or_else(|| {
                    line_err(path, line_no, "object has no string field \"final\"")
                })?;
                out.push(segment.to_owned());
            }
            Ok(out)
        }
        "tsv" => read_corpus(path)?
            .into_iter()
            .enumerate()
            .map(|(i, pair)| {
                pair.reference
                    .ok_or_else(|| line_err(path, i + 1, "missing reference column"))
            })
            .collect(),
        _ => Ok(numbered_lines(&read_text(path)?)
            .map(|(_, l)| l.to_owned())
            .collect()),
    }
}

/// Reads `token<TAB>tag` lines with a blank line after each sentence.
pub fn read_pos_tags(path: &Path) -> Result<Vec<TaggedTokens>, FormatError> {
    let text = read_text(path)?;
    let mut sentences = Vec::new();
    let mut tokens: Vec<String> = Vec::new();
    let mut tags = Vec::new();
    let mut start = 1;
    let mut flush = |tokens: &mut Vec<String>,
                     tags: &mut Vec<PosTag>,
                     line: usize|
     -> Result<(), FormatError> {
        if tokens.is_empty() {
            return Ok(());
        }
        let seq = TokenSeq::new(std::mem::take(tokens))
            .map_err(|e| line_err(path, line, e.to_string()))?;
        let tagged = TaggedTokens::new(seq, std::mem::take(tags))
            .map_err(|e| line_err(path, line, e.to_string()))?;
        sentences.push(tagged);
        Ok(())
    };
    for (line_no, line) in numbered_lines(&text) {
        if line.trim().is_empty() {
            flush(&mut tokens, &mut tags, start)?;
            start = line_no + 1;
            continue;
        }
        let (token, tag) = line
            .split_once('\t')
            .ok_or_else(|| line_err(path, line_no, "expected token<TAB>tag"))?;
        let (token, tag) = (token.trim(), tag.trim());
        if token.is_empty()
            || token.contains(char::is_whitespace)
            || tag.is_empty()
            || tag.contains('\t')
        {
            return Err(line_err(path, line_no, "expected token<TAB>tag"));
        }
        tokens.push(token.to_owned());
        tags.push(PosTag::from_label(tag));
    }
    flush(&mut tokens, &mut tags, start)?;
    Ok(sentences)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), FormatError> {
    let io_err = |source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(|e| io_err(e.into()))?;
        out.write_all(b"\n").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), FormatError> {
    let io_err = |source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io_err(e.into()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(io_err)
}
