//! Canonical JSONL corpus files and the field-mapping adapter for raw dumps.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{CorpusError, Playlist};

/// Names the fields of a raw playlist dump.
///
/// `track_id_subfield` is set when tracks are objects rather than bare ids;
/// `records_field` is set when the file is one JSON object wrapping the
/// playlist array (e.g. `{"playlists": [...]}`).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterConfig {
    pub id_field: String,
    pub title_field: String,
    pub tracks_field: String,
    #[serde(default)]
    pub track_id_subfield: Option<String>,
    #[serde(default)]
    pub records_field: Option<String>,
}

pub fn parse_jsonl(text: &str) -> Result<Vec<Playlist>, CorpusError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|source| CorpusError::Parse { line: i + 1, source }))
        .collect()
}

pub fn read_jsonl(path: &Path) -> Result<Vec<Playlist>, CorpusError> {
    parse_jsonl(&fs::read_to_string(path)?)
}

pub fn to_jsonl(playlists: &[Playlist]) -> String {
    let mut out = String::new();
    for p in playlists {
        out.push_str(&serde_json::to_string(p).expect("playlists serialize"));
        out.push('\n');
    }
    out
}

pub fn write_jsonl(path: &Path, playlists: &[Playlist]) -> Result<(), CorpusError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(to_jsonl(playlists).as_bytes())?;
    w.flush()?;
    Ok(())
}

fn scalar_string(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

impl AdapterConfig {
    fn convert(&self, record: &Value, line: usize) -> Result<Playlist, CorpusError> {
        let fail = |message: String| CorpusError::Adapter { line, message };
        let field = |name: &str| {
            record
                .get(name)
                .ok_or_else(|| fail(format!("missing field {name:?}")))
        };
        let id = scalar_string(field(&self.id_field)?)
            .ok_or_else(|| fail(format!("field {:?} is not a string or number", self.id_field)))?;
        let title = match field(&self.title_field)? {
            Value::Null => String::new(),
            v => scalar_string(v)
                .ok_or_else(|| fail(format!("field {:?} is not a string", self.title_field)))?,
        };
        let raw_tracks = field(&self.tracks_field)?
            .as_array()
            .ok_or_else(|| fail(format!("field {:?} is not an array", self.tracks_field)))?;
        let tracks = raw_tracks
            .iter()
            .map(|t| {
                let t = match &self.track_id_subfield {
                    Some(sub) => t
                        .get(sub)
                        .ok_or_else(|| fail(format!("track missing subfield {sub:?}")))?,
                    None => t,
                };
                scalar_string(t).ok_or_else(|| fail("track id is not a string or number".into()))
            })
            .collect::<Result<_, _>>()?;
        Ok(Playlist { id, title, tracks })
    }

    /// Converts a raw dump: JSONL, a top-level JSON array, or a wrapping
    /// object when `records_field` is set.
    pub fn convert_text(&self, text: &str) -> Result<Vec<Playlist>, CorpusError> {
        let trimmed = text.trim_start();
        let whole_document = self.records_field.is_some() || trimmed.starts_with('[');
        if whole_document {
            let doc: Value = serde_json::from_str(text)
                .map_err(|source| CorpusError::Parse { line: 1, source })?;
            let records = match &self.records_field {
                Some(f) => doc.get(f).and_then(Value::as_array),
                None => doc.as_array(),
            }
            .ok_or_else(|| CorpusError::Adapter {
                line: 1,
                message: "no playlist array found".into(),
            })?;
            records
                .iter()
                .enumerate()
                .map(|(i, r)| self.convert(r, i + 1))
                .collect()
        } else {
            text.lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
                .map(|(i, l)| {
                    let v: Value = serde_json::from_str(l)
                        .map_err(|source| CorpusError::Parse { line: i + 1, source })?;
                    self.convert(&v, i + 1)
                })
                .collect()
        }
    }
}
