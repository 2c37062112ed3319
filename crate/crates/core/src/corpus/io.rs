use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{LabeledExample, RelationMention, RelationSchema, SealedTruth, Span};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetFormat {
    /// TACRED-style JSON: an array of objects, or one object per line.
    TacredJson,
    /// `id \t tokens \t subj_start \t subj_end \t obj_start \t obj_end \t label`
    Tabular,
}

impl DatasetFormat {
    /// `.json`/`.jsonl` are TACRED JSON, anything else tabular.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") | Some("jsonl") => DatasetFormat::TacredJson,
            _ => DatasetFormat::Tabular,
        }
    }
}

impl FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tacred_json" | "json" => Ok(DatasetFormat::TacredJson),
            "tabular" | "tsv" => Ok(DatasetFormat::Tabular),
            other => Err(Error::Config(format!("unknown dataset format {other:?}"))),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TacredRecord {
    id: String,
    token: Vec<String>,
    subj_start: i64,
    subj_end: i64,
    obj_start: i64,
    obj_end: i64,
    #[serde(default)]
    subj_type: Option<String>,
    #[serde(default)]
    obj_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stanford_pos: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stanford_ner: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    relation: Option<String>,
}

/// A parsed record before label resolution.
struct RawRecord {
    location: usize,
    mention: RelationMention,
    label: Option<String>,
}

fn span_from(id: &str, name: &str, start: i64, end: i64) -> Result<Span> {
    if start < 0 || end < 0 {
        return Err(Error::InvalidSpan {
            id: id.to_owned(),
            message: format!("{name} span ({start}, {end}) is negative"),
        });
    }
    Ok(Span::new(start as usize, end as usize))
}

fn parse_err(path: &Path, record: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_owned(),
        record,
        message: message.into(),
    }
}

fn read_raw(path: &Path, format: DatasetFormat) -> Result<Vec<RawRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let records = match format {
        DatasetFormat::TacredJson => read_tacred(path, &text)?,
        DatasetFormat::Tabular => read_tabular(path, &text)?,
    };
    if records.is_empty() {
        return Err(Error::NoRecords(path.to_owned()));
    }
    for r in &records {
        r.mention.validate()?;
    }
    Ok(records)
}

fn read_tacred(path: &Path, text: &str) -> Result<Vec<RawRecord>> {
    let trimmed = text.trim_start();
    let values: Vec<(usize, serde_json::Value)> = if trimmed.starts_with('[') {
        let values: Vec<serde_json::Value> = serde_json::from_str(trimmed)
            .map_err(|e| parse_err(path, e.line(), format!("line {}: {e}", e.line())))?;
        values.into_iter().enumerate().map(|(i, v)| (i + 1, v)).collect()
    } else {
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let v = serde_json::from_str(line).map_err(|e| parse_err(path, i + 1, e.to_string()))?;
            out.push((i + 1, v));
        }
        out
    };
    values
        .into_iter()
        .map(|(location, v)| {
            let r: TacredRecord =
                serde_json::from_value(v).map_err(|e| parse_err(path, location, e.to_string()))?;
            let subj = span_from(&r.id, "subject", r.subj_start, r.subj_end)?;
            let obj = span_from(&r.id, "object", r.obj_start, r.obj_end)?;
            Ok(RawRecord {
                location,
                mention: RelationMention {
                    id: r.id,
                    tokens: r.token,
                    subj,
                    obj,
                    subj_type: r.subj_type,
                    obj_type: r.obj_type,
                    pos_tags: r.stanford_pos,
                    ner_tags: r.stanford_ner,
                },
                label: r.relation,
            })
        })
        .collect()
}

fn read_tabular(path: &Path, text: &str) -> Result<Vec<RawRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let location = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 6 && cols.len() != 7 {
            return Err(parse_err(
                path,
                location,
                format!("expected 6 or 7 tab-separated columns, found {}", cols.len()),
            ));
        }
        let mut idx = [0i64; 4];
        for (slot, col) in idx.iter_mut().zip(&cols[2..6]) {
            *slot = col
                .trim()
                .parse()
                .map_err(|_| parse_err(path, location, format!("bad span index {col:?}")))?;
        }
        let id = cols[0].to_owned();
        let subj = span_from(&id, "subject", idx[0], idx[1])?;
        let obj = span_from(&id, "object", idx[2], idx[3])?;
        out.push(RawRecord {
            location,
            mention: RelationMention {
                id,
                tokens: cols[1].split(' ').filter(|t| !t.is_empty()).map(str::to_owned).collect(),
                subj,
                obj,
                subj_type: None,
                obj_type: None,
                pos_tags: None,
                ner_tags: None,
            },
            label: cols.get(6).map(|s| s.trim().to_owned()),
        });
    }
    Ok(out)
}

/// Reads labeled records. The schema is `no_relation` plus every observed label.
pub fn read_dataset(
    path: &Path,
    format: DatasetFormat,
) -> Result<(RelationSchema, Vec<LabeledExample>)> {
    let raw = read_raw(path, format)?;
    let mut labels = Vec::with_capacity(raw.len());
    for r in &raw {
        match &r.label {
            Some(l) if !l.is_empty() => labels.push(l.clone()),
            _ => return Err(parse_err(path, r.location, "missing relation label")),
        }
    }
    let schema = RelationSchema::from_observed(labels.iter().map(String::as_str))?;
    let examples = raw
        .into_iter()
        .zip(labels)
        .map(|(r, l)| LabeledExample {
            mention: r.mention,
            label: schema.index_of(&l).expect("label collected into schema"),
        })
        .collect();
    Ok((schema, examples))
}

/// Reads records against a fixed schema; labels outside it are an error.
pub fn read_dataset_with_schema(
    path: &Path,
    format: DatasetFormat,
    schema: &RelationSchema,
) -> Result<Vec<LabeledExample>> {
    let raw = read_raw(path, format)?;
    raw.into_iter()
        .map(|r| {
            let label = r
                .label
                .as_deref()
                .ok_or_else(|| parse_err(path, r.location, "missing relation label"))?;
            let idx = schema.index_of(label).ok_or_else(|| {
                parse_err(path, r.location, format!("label {label:?} not in schema"))
            })?;
            Ok(LabeledExample {
                mention: r.mention,
                label: idx,
            })
        })
        .collect()
}

/// Reads mentions, ignoring any label column.
pub fn read_mentions(path: &Path, format: DatasetFormat) -> Result<Vec<RelationMention>> {
    Ok(read_raw(path, format)?.into_iter().map(|r| r.mention).collect())
}

fn check_tabular_tokens(m: &RelationMention) -> Result<()> {
    if m.id.contains(['\t', '\n']) || m.tokens.iter().any(|t| t.contains([' ', '\t', '\n'])) {
        return Err(Error::InvalidMention {
            id: m.id.clone(),
            message: "whitespace inside a token or id cannot be written as tabular".into(),
        });
    }
    Ok(())
}

fn render(
    records: impl Iterator<Item = (RelationMention, Option<String>)>,
    format: DatasetFormat,
) -> Result<String> {
    let mut out = String::new();
    match format {
        DatasetFormat::TacredJson => {
            let mut lines = Vec::new();
            for (m, label) in records {
                let r = TacredRecord {
                    id: m.id,
                    token: m.tokens,
                    subj_start: m.subj.start as i64,
                    subj_end: m.subj.end as i64,
                    obj_start: m.obj.start as i64,
                    obj_end: m.obj.end as i64,
                    subj_type: m.subj_type,
                    obj_type: m.obj_type,
                    stanford_pos: m.pos_tags,
                    stanford_ner: m.ner_tags,
                    relation: label,
                };
                lines.push(serde_json::to_string(&r)?);
            }
            out.push_str("[\n");
            out.push_str(&lines.join(",\n"));
            out.push_str("\n]\n");
        }
        DatasetFormat::Tabular => {
            for (m, label) in records {
                check_tabular_tokens(&m)?;
                write!(
                    out,
                    "{}\t{}\t{}\t{}\t{}\t{}",
                    m.id,
                    m.tokens.join(" "),
                    m.subj.start,
                    m.subj.end,
                    m.obj.start,
                    m.obj.end
                )
                .unwrap();
                if let Some(l) = label {
                    write!(out, "\t{l}").unwrap();
                }
                out.push('\n');
            }
        }
    }
    Ok(out)
}

pub fn write_dataset(
    path: &Path,
    format: DatasetFormat,
    schema: &RelationSchema,
    examples: &[LabeledExample],
) -> Result<()> {
    let text = render(
        examples
            .iter()
            .map(|e| (e.mention.clone(), Some(schema.label(e.label).to_owned()))),
        format,
    )?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_mentions(path: &Path, format: DatasetFormat, mentions: &[RelationMention]) -> Result<()> {
    let text = render(mentions.iter().map(|m| (m.clone(), None)), format)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `id \t label` lines, sorted by id.
pub fn write_truth(path: &Path, schema: &RelationSchema, truth: &SealedTruth) -> Result<()> {
    let mut pairs: Vec<(&str, usize)> = truth.iter().collect();
    pairs.sort();
    let mut out = String::new();
    for (id, label) in pairs {
        writeln!(out, "{id}\t{}", schema.label(label)).unwrap();
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_truth(path: &Path, schema: &RelationSchema) -> Result<SealedTruth> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, label) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(path, i + 1, "expected id<TAB>label"))?;
        let idx = schema
            .index_of(label.trim())
            .ok_or_else(|| parse_err(path, i + 1, format!("label {label:?} not in schema")))?;
        pairs.push((id.to_owned(), idx));
    }
    Ok(SealedTruth::from_pairs(pairs))
}
