//! Offline teacher distillation of silver-standard element labels.
//!
//! The loop is file based: [`write_prompts`] renders one prompt per document
//! into `prompts/<docid>.txt`, any teacher (an LLM script, a human) writes its
//! answer to `responses/<docid>.txt`, and [`read_responses`] parses the answers
//! back into [`DistillRecord`]s. [`clean_records`] then applies the cleaning
//! rules and [`silver_documents`] produces the labeled corpus.
//!
//! The cleaning rules are a concrete, configurable stand-in for a manual
//! review pass: element-count bounds, a sentencing-term blocklist, elements
//! that merely repeat the charge, duplicate document ids, and (when a taxonomy
//! is supplied) charges outside the vocabulary.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::taxonomy::{canonical, Taxonomy};

/// The output-format line every prompt ends with.
pub const PROMPT_SCHEMA_LINE: &str = r#"{"legal_elements": ["Element 1", "Element 2", ...]}"#;

/// Joins multiple charges of one document into a single prompt field.
pub const CHARGE_SEPARATOR: &str = "; ";

const DEFAULT_FORBIDDEN: &str = include_str!("../data/forbidden_terms.txt");

/// Fills the extraction prompt for one document. The case text is cut to
/// `max_chars` characters.
pub fn render_prompt(doc: &Document, charge: &str, max_chars: usize) -> String {
    let text: String = doc.text.chars().take(max_chars).collect();
    format!(
        "System role: You are an experienced analyst of criminal case texts. From the case content \
below, extract the core legal elements that establish the given charge.\n\
\n\
Input data:\n\
- Convicted charge: {charge}\n\
- Case content: {text}\n\
\n\
Extraction constraints:\n\
1. Task goal: extract 4 to 6 key legal elements that support the conviction.\n\
2. Terminology: use professional legal terminology (for example \"violation of transportation \
regulations\", \"causing death\") instead of colloquial descriptions.\n\
3. Anti-leakage (critical): never include sentencing outcomes (for example \"fixed-term \
imprisonment\", \"detention\", \"compensation amount\") or explicit conviction statements.\n\
4. Content: do not repeat the charge name, and keep the elements free of semantic redundancy.\n\
\n\
Output format:\n\
Return only a standard JSON object:\n\
{PROMPT_SCHEMA_LINE}\n"
    )
}

/// The charge string given to the teacher for `doc`.
pub fn grounded_charge(doc: &Document) -> String {
    doc.charges.iter().map(String::as_str).collect::<Vec<_>>().join(CHARGE_SEPARATOR)
}

/// Why a teacher response could not be parsed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseFailure(pub String);

impl fmt::Display for ParseFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Extracts `legal_elements` from the first JSON object embedded in `raw`.
///
/// Surrounding prose is tolerated. Elements are canonicalized, empty strings
/// dropped and duplicates removed keeping first occurrences.
pub fn parse_response(raw: &str) -> Result<Vec<String>, ParseFailure> {
    let object = raw
        .char_indices()
        .filter(|(_, c)| *c == '{')
        .find_map(|(i, _)| {
            serde_json::Deserializer::from_str(&raw[i..]).into_iter::<Value>().next().and_then(|v| v.ok())
        })
        .ok_or_else(|| ParseFailure("no JSON object in response".into()))?;

    let list = object
        .get("legal_elements")
        .ok_or_else(|| ParseFailure("missing `legal_elements` key".into()))?
        .as_array()
        .ok_or_else(|| ParseFailure("`legal_elements` is not an array".into()))?;

    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for item in list {
        let s = item.as_str().ok_or_else(|| ParseFailure(format!("non-string element {item}")))?;
        let s = canonical(s);
        if !s.is_empty() && seen.insert(s.clone()) {
            out.push(s);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecordStatus {
    Ok,
    ParseError,
    CleanedOut,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistillRecord {
    pub doc_id: String,
    pub grounded_charge: String,
    pub raw_response: String,
    pub parsed_elements: Vec<String>,
    pub status: RecordStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejection_reason: Option<String>,
}

impl DistillRecord {
    /// Parses a teacher response into a record.
    pub fn from_response(doc_id: &str, grounded_charge: &str, raw: &str) -> Self {
        let (parsed_elements, status, rejection_reason) = match parse_response(raw) {
            Ok(elems) if !elems.is_empty() => (elems, RecordStatus::Ok, None),
            Ok(_) => (vec![], RecordStatus::ParseError, Some("parse-error: empty element list".into())),
            Err(e) => (vec![], RecordStatus::ParseError, Some(format!("parse-error: {e}"))),
        };
        Self {
            doc_id: doc_id.to_string(),
            grounded_charge: grounded_charge.to_string(),
            raw_response: raw.to_string(),
            parsed_elements,
            status,
            rejection_reason,
        }
    }

    fn reject(mut self, reason: &str) -> Self {
        self.status = RecordStatus::CleanedOut;
        self.rejection_reason = Some(reason.to_string());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CleaningRules {
    pub min_elements: usize,
    pub max_elements: usize,
    /// Lowercased; matched as substrings of lowercased elements.
    pub forbidden_terms: Vec<String>,
}

impl Default for CleaningRules {
    fn default() -> Self {
        Self { min_elements: 2, max_elements: 10, forbidden_terms: parse_term_list(DEFAULT_FORBIDDEN) }
    }
}

fn parse_term_list(text: &str) -> Vec<String> {
    text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).map(str::to_lowercase).collect()
}

/// Reads a forbidden-term list (one term per line, `#` comments).
pub fn load_forbidden_terms(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_term_list(&text))
}

impl CleaningRules {
    fn violation(&self, record: &DistillRecord, tax: Option<&Taxonomy>) -> Option<&'static str> {
        let n = record.parsed_elements.len();
        if n < self.min_elements || n > self.max_elements {
            return Some("count-bounds");
        }
        let leaks = record.parsed_elements.iter().any(|e| {
            let e = e.to_lowercase();
            self.forbidden_terms.iter().any(|t| e.contains(t.as_str()))
        });
        if leaks {
            return Some("sentencing-leakage");
        }
        let charges: Vec<String> =
            record.grounded_charge.split(CHARGE_SEPARATOR).map(canonical).filter(|c| !c.is_empty()).collect();
        if record.parsed_elements.iter().any(|e| *e == canonical(&record.grounded_charge) || charges.contains(e)) {
            return Some("repeats-charge");
        }
        if let Some(tax) = tax {
            if charges.is_empty() || charges.iter().any(|c| !tax.is_charge(c)) {
                return Some("unknown-charge");
            }
        }
        None
    }
}

/// Splits records into kept and rejected. Both outputs are ordered by doc
/// id; records sharing an id keep their input order, and only the first of
/// them is evaluated.
pub fn clean_records(
    records: Vec<DistillRecord>,
    tax: Option<&Taxonomy>,
    rules: &CleaningRules,
) -> (Vec<DistillRecord>, Vec<DistillRecord>) {
    let mut seen = HashSet::new();
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    for record in records {
        if !seen.insert(record.doc_id.clone()) {
            rejected.push(record.reject("duplicate-id"));
            continue;
        }
        if record.status == RecordStatus::ParseError {
            rejected.push(record);
            continue;
        }
        match rules.violation(&record, tax) {
            Some(reason) => rejected.push(record.reject(reason)),
            None => {
                let mut record = record;
                record.status = RecordStatus::Ok;
                record.rejection_reason = None;
                kept.push(record);
            }
        }
    }
    kept.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    rejected.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    (kept, rejected)
}

fn check_file_stem(id: &str) -> Result<()> {
    if id.is_empty() || id == "." || id == ".." || id.contains(['/', '\\', '\0']) {
        return Err(Error::invalid(format!("document id `{id}` cannot be used as a file name")));
    }
    Ok(())
}

/// Writes `<dir>/<docid>.txt` for every document with at least one charge.
/// Returns the number of prompts written.
pub fn write_prompts(dir: impl AsRef<Path>, docs: &[Document], max_chars: usize) -> Result<usize> {
    let dir = dir.as_ref();
    let labeled: Vec<&Document> = docs.iter().filter(|d| !d.charges.is_empty()).collect();
    for d in &labeled {
        check_file_stem(&d.id)?;
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for d in &labeled {
        let path = dir.join(format!("{}.txt", d.id));
        let prompt = render_prompt(d, &grounded_charge(d), max_chars);
        std::fs::write(&path, prompt).map_err(|e| Error::io(&path, e))?;
    }
    Ok(labeled.len())
}

/// Reads `<dir>/<docid>.txt` for every labeled document. A missing file
/// yields a parse-error record.
pub fn read_responses(dir: impl AsRef<Path>, docs: &[Document]) -> Result<Vec<DistillRecord>> {
    let dir = dir.as_ref();
    let mut out = Vec::new();
    for d in docs.iter().filter(|d| !d.charges.is_empty()) {
        check_file_stem(&d.id)?;
        let path = dir.join(format!("{}.txt", d.id));
        let charge = grounded_charge(d);
        let record = match std::fs::read_to_string(&path) {
            Ok(raw) => DistillRecord::from_response(&d.id, &charge, &raw),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => DistillRecord {
                doc_id: d.id.clone(),
                grounded_charge: charge,
                raw_response: String::new(),
                parsed_elements: vec![],
                status: RecordStatus::ParseError,
                rejection_reason: Some("parse-error: missing response".into()),
            },
            Err(e) => return Err(Error::io(&path, e)),
        };
        out.push(record);
    }
    Ok(out)
}

/// The corpus with elements replaced by the kept records' elements.
/// Documents without a kept record keep an empty element set.
pub fn silver_documents(docs: &[Document], kept: &[DistillRecord]) -> Vec<Document> {
    let by_id: BTreeMap<&str, &DistillRecord> = kept.iter().map(|r| (r.doc_id.as_str(), r)).collect();
    docs.iter()
        .map(|d| Document {
            elements: by_id.get(d.id.as_str()).map(|r| r.parsed_elements.iter().cloned().collect()).unwrap_or_default(),
            ..d.clone()
        })
        .collect()
}
