//! Synthetic explanation-label generation.
//!
//! Each prompt is sent through two queries that embed opposite assumptions
//! about its safety. A response is only trusted when the model resists the
//! embedded framing on the wrong side and agrees on the right side; the
//! explanation keywords are then the intersection of what both queries
//! flagged. Prompts where the model capitulates to either framing get no word
//! labels and fall back to prompt-level supervision.

mod mock;

pub use mock::MockClient;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::{split_words, PromptRecord, SafetyLabel};
use crate::error::{Error, Result};

/// Parsed reply to one biased query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiasQueryResponse {
    pub unsafe_flag: bool,
    pub safe_flag: bool,
    pub unsafe_keywords: Vec<String>,
    pub safe_keywords: Vec<String>,
    pub justification: String,
    pub parse_ok: bool,
}

impl BiasQueryResponse {
    /// A sentinel for transport failures and unparseable replies.
    pub fn failed(reason: impl Into<String>) -> Self {
        BiasQueryResponse {
            unsafe_flag: false,
            safe_flag: false,
            unsafe_keywords: Vec::new(),
            safe_keywords: Vec::new(),
            justification: reason.into(),
            parse_ok: false,
        }
    }

    /// The safety class this response reports, if it reports exactly one.
    /// Contradictory flags (both set or both clear) yield `None` and fail the
    /// consistency gate.
    pub fn polarity(&self) -> Option<SafetyLabel> {
        if !self.parse_ok {
            return None;
        }
        match (self.unsafe_flag, self.safe_flag) {
            (true, false) => Some(SafetyLabel::Unsafe),
            (false, true) => Some(SafetyLabel::Safe),
            _ => None,
        }
    }
}

/// A client that answers one biased query. Implementations must be
/// deterministic given `(text, bias_term)` and their own seed.
pub trait QueryClient: Send + Sync {
    fn ask(&self, prompt_text: &str, bias_term: SafetyLabel) -> Result<BiasQueryResponse>;
}

/// Gate decision for one record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LabelingOutcome {
    pub record_id: String,
    pub consistent: bool,
    /// Intersection keywords; empty whenever `consistent` is false.
    pub keywords: Vec<String>,
    pub responses: (BiasQueryResponse, BiasQueryResponse),
}

/// Renders the biased query for a prompt. The bias term fills both slots of
/// the template; output is byte-stable for a given `(text, bias)`.
pub fn render_bias_prompt(text: &str, bias_term: SafetyLabel) -> String {
    format!(
        "Why is the following prompt considered {bias}?\n\
         Provide a list of words or phrases that made you believe the prompt is {bias} in the following JSON format.\n\
         {{\n    \"unsafe\":True/False,\n    \"safe\":True/False,\n    \"unsafe_keywords\":[],\n    \"safe_keywords\":[],\n    \"justification\": \"\"\n}}\n\
         In the JSON format, \"unsafe\" or \"safe\" can be True or False. Depending on your decision, \"unsafe_keywords\" or \"safe_keywords\" can be empty. Justification should be very short. Don't generate anything except the JSON format.\n\
         Prompt: {text}",
        bias = bias_term,
        text = text,
    )
}

/// Extracts a `BiasQueryResponse` from raw model output. Tolerates
/// surrounding prose, code fences, and Python-style `True`/`False` literals.
/// Never fails: anything unusable comes back with `parse_ok = false`.
pub fn parse_response(raw: &str) -> BiasQueryResponse {
    let Some(json_str) = extract_first_json_object(raw) else {
        return BiasQueryResponse::failed("no JSON object found");
    };
    let normalized = normalize_bool_literals(&json_str);
    let value: serde_json::Value = match serde_json::from_str(&normalized) {
        Ok(v) => v,
        Err(e) => return BiasQueryResponse::failed(format!("invalid JSON: {e}")),
    };
    let obj = match value.as_object() {
        Some(o) => o,
        None => return BiasQueryResponse::failed("top-level value is not an object"),
    };

    let unsafe_flag = obj.get("unsafe").and_then(|v| v.as_bool());
    let safe_flag = obj.get("safe").and_then(|v| v.as_bool());
    let unsafe_keywords = obj.get("unsafe_keywords").and_then(string_list);
    let safe_keywords = obj.get("safe_keywords").and_then(string_list);
    let justification = obj.get("justification").and_then(|v| v.as_str());

    match (
        unsafe_flag,
        safe_flag,
        unsafe_keywords,
        safe_keywords,
        justification,
    ) {
        (Some(u), Some(s), Some(uk), Some(sk), Some(j)) => BiasQueryResponse {
            unsafe_flag: u,
            safe_flag: s,
            unsafe_keywords: normalize_keywords(&uk),
            safe_keywords: normalize_keywords(&sk),
            justification: j.to_string(),
            parse_ok: true,
        },
        _ => BiasQueryResponse::failed("missing or mistyped field"),
    }
}

fn string_list(value: &serde_json::Value) -> Option<Vec<String>> {
    let arr = value.as_array()?;
    arr.iter()
        .map(|v| v.as_str().map(|s| s.to_string()))
        .collect()
}

/// Lowercases, trims, and deduplicates while preserving order.
fn normalize_keywords(raw: &[String]) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(raw.len());
    for kw in raw {
        let norm = kw.trim().to_lowercase();
        if !norm.is_empty() && !out.contains(&norm) {
            out.push(norm);
        }
    }
    out
}

/// Finds the first balanced `{...}` region, respecting string literals.
fn extract_first_json_object(raw: &str) -> Option<String> {
    let start = raw.find('{')?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, ch) in raw[start..].char_indices() {
        if in_string {
            if escaped {
                escaped = false;
            } else if ch == '\\' {
                escaped = true;
            } else if ch == '"' {
                in_string = false;
            }
            continue;
        }
        match ch {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(raw[start..start + i + ch.len_utf8()].to_string());
                }
            }
            _ => {}
        }
    }
    None
}

/// Rewrites bare `True`/`False` outside string literals to JSON booleans.
fn normalize_bool_literals(json: &str) -> String {
    let mut out = String::with_capacity(json.len());
    let bytes = json.as_bytes();
    let mut i = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    while i < bytes.len() {
        let ch = bytes[i] as char;
        if in_string {
            out.push(ch);
            if escaped {
                escaped = false;
            } else if ch == '\\' {
                escaped = true;
            } else if ch == '"' {
                in_string = false;
            }
            i += 1;
            continue;
        }
        if ch == '"' {
            in_string = true;
            out.push(ch);
            i += 1;
            continue;
        }
        if json[i..].starts_with("True") && word_boundary(bytes, i, 4) {
            out.push_str("true");
            i += 4;
        } else if json[i..].starts_with("False") && word_boundary(bytes, i, 5) {
            out.push_str("false");
            i += 5;
        } else {
            out.push(ch);
            i += 1;
        }
    }
    out
}

fn word_boundary(bytes: &[u8], start: usize, len: usize) -> bool {
    let before_ok = start == 0 || !(bytes[start - 1] as char).is_alphanumeric();
    let after = start + len;
    let after_ok = after >= bytes.len() || !(bytes[after] as char).is_alphanumeric();
    before_ok && after_ok
}

/// Intersects two keyword lists at the word level. Phrases match when their
/// word sequences are equal or one is a contiguous subsequence of the other,
/// in which case the shorter phrase is kept ("hack" vs "hack into" yields
/// "hack"). Morphological variants ("hack" vs "hacking") do not match.
/// Output order follows the first list.
pub fn intersect_keywords(kw1: &[String], kw2: &[String]) -> Vec<String> {
    let words_of = |phrase: &str| -> Vec<String> {
        split_words(phrase).into_iter().map(|w| w.lower).collect()
    };
    let mut out: Vec<String> = Vec::new();
    for a in kw1 {
        let wa = words_of(a);
        if wa.is_empty() {
            continue;
        }
        for b in kw2 {
            let wb = words_of(b);
            if wb.is_empty() {
                continue;
            }
            let kept = if wa == wb {
                Some(a.clone())
            } else if contains_contiguous(&wb, &wa) {
                Some(a.clone())
            } else if contains_contiguous(&wa, &wb) {
                Some(b.clone())
            } else {
                None
            };
            if let Some(kept) = kept {
                if !out.contains(&kept) {
                    out.push(kept);
                }
                break;
            }
        }
    }
    out
}

fn contains_contiguous(haystack: &[String], needle: &[String]) -> bool {
    if needle.is_empty() || needle.len() > haystack.len() {
        return false;
    }
    (0..=haystack.len() - needle.len()).any(|s| &haystack[s..s + needle.len()] == needle)
}

/// Applies the consistency gate. `r1` must be the safe-bias response and `r2`
/// the unsafe-bias response. The gate passes only when both responses report
/// the gold label, i.e. the response whose bias matches the label agrees and
/// the other contradicts its own framing. On pass, the keywords are the
/// intersection of the label-appropriate lists; otherwise they are empty.
pub fn check_consistency(
    record_id: &str,
    y_p: SafetyLabel,
    r1: BiasQueryResponse,
    r2: BiasQueryResponse,
) -> LabelingOutcome {
    let consistent = r1.polarity() == Some(y_p) && r2.polarity() == Some(y_p);
    let keywords = if consistent {
        match y_p {
            SafetyLabel::Unsafe => intersect_keywords(&r1.unsafe_keywords, &r2.unsafe_keywords),
            SafetyLabel::Safe => intersect_keywords(&r1.safe_keywords, &r2.safe_keywords),
        }
    } else {
        Vec::new()
    };
    LabelingOutcome {
        record_id: record_id.to_string(),
        consistent,
        keywords,
        responses: (r1, r2),
    }
}

/// Retry/backoff policy for transport failures.
#[derive(Debug, Clone)]
pub struct LabelingConfig {
    pub retries: u32,
    pub backoff: Duration,
}

impl Default for LabelingConfig {
    fn default() -> Self {
        LabelingConfig {
            retries: 2,
            backoff: Duration::from_millis(250),
        }
    }
}

/// Aggregate result of a labeling pass.
#[derive(Debug, Clone, Serialize)]
pub struct LabelingReport {
    pub outcomes: Vec<LabelingOutcome>,
    pub total: usize,
    pub labeled: usize,
    pub coverage: f64,
    pub transport_failures: usize,
}

/// Runs both queries for every record and writes supervision onto the ones
/// that pass the gate.
///
/// Unsafe records receive their intersection keywords as explanation phrases
/// (an empty intersection leaves the record unsupervised); safe records that
/// pass keep their keywords as metadata and project to all-safe token labels
/// downstream. Records that fail the gate have `explanation_words` cleared,
/// so the output is a pure function of `(records, client)`.
pub fn generate_labels(
    records: &mut [PromptRecord],
    client: &dyn QueryClient,
    config: &LabelingConfig,
) -> Result<LabelingReport> {
    let mut outcomes = Vec::with_capacity(records.len());
    let mut labeled = 0usize;
    let mut transport_failures = 0usize;

    for record in records.iter_mut() {
        if record.text.trim().is_empty() {
            return Err(Error::EmptyInput(format!("record {} has empty text", record.id)));
        }
        let r1 = ask_with_retry(client, &record.text, SafetyLabel::Safe, config)
            .unwrap_or_else(|e| {
                transport_failures += 1;
                BiasQueryResponse::failed(format!("transport: {e}"))
            });
        let r2 = ask_with_retry(client, &record.text, SafetyLabel::Unsafe, config)
            .unwrap_or_else(|e| {
                transport_failures += 1;
                BiasQueryResponse::failed(format!("transport: {e}"))
            });
        let outcome = check_consistency(&record.id, record.label, r1, r2);
        if outcome.consistent {
            match record.label {
                SafetyLabel::Unsafe if !outcome.keywords.is_empty() => {
                    record.explanation_words = Some(outcome.keywords.clone());
                    labeled += 1;
                }
                SafetyLabel::Safe => {
                    record.explanation_words = Some(outcome.keywords.clone());
                    labeled += 1;
                }
                SafetyLabel::Unsafe => {
                    record.explanation_words = None;
                }
            }
        } else {
            record.explanation_words = None;
        }
        outcomes.push(outcome);
    }

    let total = records.len();
    let coverage = if total == 0 {
        0.0
    } else {
        labeled as f64 / total as f64
    };
    log::info!(
        "labeling coverage: {labeled}/{total} = {:.1}% ({transport_failures} transport failures)",
        coverage * 100.0
    );
    Ok(LabelingReport {
        outcomes,
        total,
        labeled,
        coverage,
        transport_failures,
    })
}

fn ask_with_retry(
    client: &dyn QueryClient,
    text: &str,
    bias: SafetyLabel,
    config: &LabelingConfig,
) -> Result<BiasQueryResponse> {
    let mut last_err = None;
    for attempt in 0..=config.retries {
        match client.ask(text, bias) {
            Ok(resp) => return Ok(resp),
            Err(e) => {
                last_err = Some(e);
                if attempt < config.retries && !config.backoff.is_zero() {
                    std::thread::sleep(config.backoff);
                }
            }
        }
    }
    Err(last_err.unwrap_or_else(|| Error::Client("unknown failure".to_string())))
}

/// Writes the per-record gate decisions as a JSONL sidecar.
pub fn write_outcomes_jsonl(path: impl AsRef<Path>, outcomes: &[LabelingOutcome]) -> Result<()> {
    let file = File::create(path.as_ref())?;
    let mut writer = BufWriter::new(file);
    for outcome in outcomes {
        serde_json::to_writer(&mut writer, outcome)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}
