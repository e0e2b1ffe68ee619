//! Prompt records and the JSONL dataset format.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary prompt-safety label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SafetyLabel {
    Safe,
    Unsafe,
}

impl SafetyLabel {
    pub fn is_unsafe(self) -> bool {
        self == SafetyLabel::Unsafe
    }

    /// Index into two-class probability vectors: safe = 0, unsafe = 1.
    pub fn class_index(self) -> usize {
        match self {
            SafetyLabel::Safe => 0,
            SafetyLabel::Unsafe => 1,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            SafetyLabel::Safe => SafetyLabel::Unsafe,
            SafetyLabel::Unsafe => SafetyLabel::Safe,
        }
    }
}

impl fmt::Display for SafetyLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SafetyLabel::Safe => write!(f, "safe"),
            SafetyLabel::Unsafe => write!(f, "unsafe"),
        }
    }
}

impl FromStr for SafetyLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "safe" => Ok(SafetyLabel::Safe),
            "unsafe" => Ok(SafetyLabel::Unsafe),
            other => Err(Error::UnknownLabel(other.to_string())),
        }
    }
}

/// One dataset row: a prompt, its gold safety label, and optional word-level
/// explanation phrases and risk-category tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptRecord {
    pub id: String,
    pub text: String,
    pub label: SafetyLabel,
    pub explanation_words: Option<Vec<String>>,
    pub category: Option<String>,
}

#[derive(Deserialize)]
struct RawRow {
    id: Option<String>,
    text: String,
    safety_label: String,
    explanation: Option<Vec<String>>,
    category: Option<String>,
}

#[derive(Serialize)]
struct OutRow<'a> {
    id: &'a str,
    text: &'a str,
    safety_label: SafetyLabel,
    #[serde(skip_serializing_if = "Option::is_none")]
    explanation: Option<&'a Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    category: Option<&'a str>,
}

/// Loads a UTF-8 JSONL dataset. Rows without an `id` get their 1-based line
/// number as id. Whitespace-only lines are skipped.
pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<PromptRecord>> {
    let file = File::open(path.as_ref())?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRow = serde_json::from_str(&line).map_err(|e| Error::Data {
            line: lineno,
            msg: format!("malformed row: {e}"),
        })?;
        let label = SafetyLabel::from_str(&raw.safety_label).map_err(|_| Error::Data {
            line: lineno,
            msg: format!("unknown label `{}`", raw.safety_label),
        })?;
        if raw.text.trim().is_empty() {
            return Err(Error::Data {
                line: lineno,
                msg: "empty text".to_string(),
            });
        }
        records.push(PromptRecord {
            id: raw.id.unwrap_or_else(|| lineno.to_string()),
            text: raw.text,
            label,
            explanation_words: raw.explanation,
            category: raw.category,
        });
    }
    Ok(records)
}

/// Writes records back out in the same JSONL schema.
pub fn save_jsonl(path: impl AsRef<Path>, records: &[PromptRecord]) -> Result<()> {
    let file = File::create(path.as_ref())?;
    let mut writer = BufWriter::new(file);
    for record in records {
        let row = OutRow {
            id: &record.id,
            text: &record.text,
            safety_label: record.label,
            explanation: record.explanation_words.as_ref(),
            category: record.category.as_deref(),
        };
        serde_json::to_writer(&mut writer, &row)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}
