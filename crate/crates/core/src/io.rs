//! File helpers: JSON Lines, pretty JSON, task files, vocabularies, stuff lists.

use std::collections::HashSet;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::dataset::PhraseTask;
use crate::error::{Error, Result};
use crate::scene_graph::{normalize_label, CategoryVocabulary, VocabEntry};

fn open(path: &Path) -> Result<BufReader<std::fs::File>> {
    Ok(BufReader::new(std::fs::File::open(path).map_err(|e| Error::io(path, e))?))
}

fn parse_error(path: &Path, line: usize, message: impl std::fmt::Display) -> Error {
    Error::Parse {
        line,
        message: format!("{}: {message}", path.display()),
    }
}

/// Non-blank lines with their 1-based line numbers.
pub fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    read_lines(path)?
        .into_iter()
        .map(|(n, line)| serde_json::from_str(&line).map_err(|e| parse_error(path, n, e)))
        .collect()
}

pub fn write_lines<I, S>(path: &Path, lines: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for line in lines {
        w.write_all(line.as_ref().as_bytes())
            .and_then(|_| w.write_all(b"\n"))
            .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let lines = items
        .iter()
        .map(serde_json::to_string)
        .collect::<std::result::Result<Vec<_>, _>>()?;
    write_lines(path, lines)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| parse_error(path, e.line(), e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Tasks in file order, plus every unrecognized subset tag seen.
pub fn load_tasks(path: &Path) -> Result<(Vec<PhraseTask>, Vec<String>)> {
    let mut tasks = Vec::new();
    let mut unknown = Vec::new();
    for (n, line) in read_lines(path)? {
        let (task, mut tags) = PhraseTask::from_json_line(&line).map_err(|e| parse_error(path, n, e))?;
        tasks.push(task);
        unknown.append(&mut tags);
    }
    Ok((tasks, unknown))
}

pub fn write_tasks(path: &Path, tasks: &[PhraseTask]) -> Result<()> {
    let lines = tasks.iter().map(PhraseTask::to_json_line).collect::<Result<Vec<_>>>()?;
    write_lines(path, lines)
}

/// JSON array of `{name, frequency}` in rank order.
pub fn write_vocabulary(path: &Path, vocab: &CategoryVocabulary) -> Result<()> {
    write_json(path, &vocab.entries())
}

pub fn load_vocabulary(path: &Path) -> Result<CategoryVocabulary> {
    let entries: Vec<VocabEntry> = read_json(path)?;
    let vocab = CategoryVocabulary::from_frequencies(entries.iter().map(|e| (e.name.clone(), e.frequency)));
    if vocab.entries() != entries.as_slice() {
        return Err(Error::Config(format!(
            "{}: vocabulary must list unique names by descending frequency, ties alphabetical",
            path.display()
        )));
    }
    Ok(vocab)
}

/// One category per line; blank lines and `#` comments are skipped.
pub fn parse_stuff_list(reader: impl BufRead) -> Result<HashSet<String>> {
    let mut out = HashSet::new();
    for line in reader.lines() {
        let line = line.map_err(|e| Error::Config(e.to_string()))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        out.insert(normalize_label(line));
    }
    Ok(out)
}

pub fn load_stuff_list(path: &Path) -> Result<HashSet<String>> {
    parse_stuff_list(open(path)?)
}
