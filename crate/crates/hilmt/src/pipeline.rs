//! Feedback collection and the draft → refine → compare translation flow.

use std::collections::HashMap;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use hilmt_core::{tokenize, RetrievalConfig, RetrievalError, RetrievalIndex, ScoredDemo};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ChatMessage, Gateway, GatewayError, GenerationParams};
use crate::store::{DemoStore, DemonstrationRecord, Provenance, StoreError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("source sentence is empty")]
    EmptySource,
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("domain is empty")]
    EmptyDomain,
    #[error("corpus line {index} has no reference")]
    MissingReference { index: usize },
    #[error("comparison needs two non-empty candidates")]
    EmptyCandidate,
    #[error("no demonstration index for domain {0}")]
    MissingIndex(String),
    #[error("template: {0}")]
    Template(String),
    #[error("invalid pipeline configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Prompt wording. Placeholders are written `{name}`; braces that do not
/// name a known placeholder are left alone.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptTemplates {
    /// `{src_lang}`, `{tgt_lang}`, `{source}`
    pub draft: String,
    /// `{demos}`, `{source}`, `{draft}`
    pub refine: String,
    /// `{source}`, `{draft}`, `{refined}`
    pub compare: String,
    /// `{index}`, `{source}`, `{hypothesis}`, `{reference}`, `{revision}`
    pub demo_block: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            draft: "Translate the following {src_lang} text into {tgt_lang}. Output only the translation.\n{source}".into(),
            refine: "{demos}Here is a new input and its draft translation. Polish the draft following the patterns above. \
                     Output only the polished translation.\n<input> {source} <hypothesis> {draft}"
                .into(),
            compare: "Which translation of the source is better? Reply with exactly A or B.\n\
                      Source: {source}\nA: {draft}\nB: {refined}"
                .into(),
            demo_block: "{index}. <input> {source} <hypothesis> {hypothesis} <reference> {reference} <revision> {revision}"
                .into(),
        }
    }
}

const DRAFT_KEYS: &[&str] = &["src_lang", "tgt_lang", "source"];
const REFINE_KEYS: &[&str] = &["demos", "source", "draft"];
const COMPARE_KEYS: &[&str] = &["source", "draft", "refined"];
const DEMO_KEYS: &[&str] = &["index", "source", "hypothesis", "reference", "revision"];
const DEMO_MARKERS: &[&str] = &["<input>", "<hypothesis>", "<reference>", "<revision>"];

impl PromptTemplates {
    /// Reads a JSON object with any subset of the template fields.
    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let templates: Self = serde_json::from_str(&text)
            .map_err(|e| PipelineError::Template(format!("{}: {e}", path.display())))?;
        templates.validate()?;
        Ok(templates)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let check = |name: &str, template: &str, required: &[&str], allowed: &[&str]| {
            for key in required {
                if !template.contains(&format!("{{{key}}}")) {
                    return Err(PipelineError::Template(format!(
                        "{name} template lacks {{{key}}}"
                    )));
                }
            }
            for key in placeholders(template) {
                if !allowed.contains(&key) && KNOWN_KEYS.contains(&key) {
                    return Err(PipelineError::Template(format!(
                        "{name} template cannot use {{{key}}}"
                    )));
                }
            }
            Ok(())
        };
        check("draft", &self.draft, &["source"], DRAFT_KEYS)?;
        check("refine", &self.refine, REFINE_KEYS, REFINE_KEYS)?;
        check("compare", &self.compare, COMPARE_KEYS, COMPARE_KEYS)?;
        check("demo_block", &self.demo_block, &DEMO_KEYS[1..], DEMO_KEYS)?;
        let positions: Vec<_> = DEMO_MARKERS
            .iter()
            .map(|m| self.demo_block.find(m))
            .collect();
        if positions.iter().any(Option::is_none) || positions.windows(2).any(|w| w[0] > w[1]) {
            return Err(PipelineError::Template(
                "demo_block must contain <input> <hypothesis> <reference> <revision> in that order"
                    .into(),
            ));
        }
        Ok(())
    }

    pub fn render_demo(&self, index: usize, demo: &DemonstrationRecord) -> String {
        fill(
            &self.demo_block,
            &[
                ("index", &index.to_string()),
                ("source", &demo.source),
                ("hypothesis", &demo.hypothesis),
                ("reference", &demo.reference),
                ("revision", &demo.feedback.join(" ")),
            ],
        )
    }
}

const KNOWN_KEYS: &[&str] = &[
    "src_lang",
    "tgt_lang",
    "source",
    "demos",
    "draft",
    "refined",
    "index",
    "hypothesis",
    "reference",
    "revision",
];

fn placeholders(template: &str) -> Vec<&str> {
    let mut keys = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        rest = &rest[open + 1..];
        if let Some(close) = rest.find('}') {
            let key = &rest[..close];
            if !key.is_empty() && key.chars().all(|c| c.is_ascii_lowercase() || c == '_') {
                keys.push(key);
                rest = &rest[close + 1..];
            }
        }
    }
    keys
}

/// Single-pass substitution, so text inserted for one placeholder is never
/// scanned for another.
pub fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = after.find('}').and_then(|close| {
            values
                .iter()
                .find(|(k, _)| *k == &after[..close])
                .map(|(_, v)| (close, v))
        });
        match hit {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    DraftOnly,
    Hil,
    #[default]
    CompareHil,
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "draft" | "draft_only" => Ok(Strategy::DraftOnly),
            "hil" => Ok(Strategy::Hil),
            "compare" | "compare_hil" => Ok(Strategy::CompareHil),
            other => Err(format!(
                "unknown strategy {other:?} (expected draft, hil or compare)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Choice {
    Draft,
    Refined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidityFlag {
    Ok,
    Empty,
    Refusal,
    SourceCopy,
    LengthAnomaly,
    GatewayError,
}

/// Problems detected in an output. Serialized as a flag list, `["ok"]` when
/// there are none.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(into = "Vec<ValidityFlag>", from = "Vec<ValidityFlag>")]
pub struct Validity {
    pub empty: bool,
    pub refusal: bool,
    pub source_copy: bool,
    pub length_anomaly: bool,
    pub gateway_error: bool,
}

impl Validity {
    pub fn is_ok(&self) -> bool {
        *self == Validity::default()
    }

    pub fn flags(&self) -> Vec<ValidityFlag> {
        Vec::from(*self)
    }
}

impl From<Validity> for Vec<ValidityFlag> {
    fn from(v: Validity) -> Self {
        let mut flags = Vec::new();
        for (set, flag) in [
            (v.empty, ValidityFlag::Empty),
            (v.refusal, ValidityFlag::Refusal),
            (v.source_copy, ValidityFlag::SourceCopy),
            (v.length_anomaly, ValidityFlag::LengthAnomaly),
            (v.gateway_error, ValidityFlag::GatewayError),
        ] {
            if set {
                flags.push(flag);
            }
        }
        if flags.is_empty() {
            flags.push(ValidityFlag::Ok);
        }
        flags
    }
}

impl From<Vec<ValidityFlag>> for Validity {
    fn from(flags: Vec<ValidityFlag>) -> Self {
        let mut v = Validity::default();
        for flag in flags {
            match flag {
                ValidityFlag::Ok => {}
                ValidityFlag::Empty => v.empty = true,
                ValidityFlag::Refusal => v.refusal = true,
                ValidityFlag::SourceCopy => v.source_copy = true,
                ValidityFlag::LengthAnomaly => v.length_anomaly = true,
                ValidityFlag::GatewayError => v.gateway_error = true,
            }
        }
        v
    }
}

/// Per-sentence trace of one pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslationRecord {
    pub source: String,
    pub domain: String,
    pub strategy: Strategy,
    pub shots: usize,
    pub draft: String,
    pub demos_used: Vec<String>,
    pub refined: Option<String>,
    pub comparator_choice: Option<Choice>,
    /// The comparator reply named neither candidate.
    #[serde(default)]
    pub comparator_fallback: bool,
    #[serde(rename = "final")]
    pub final_text: String,
    pub validity: Validity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub const DEFAULT_REFUSAL_PATTERNS: &[&str] = &["I'm sorry", "I cannot", "as an AI"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub retrieval: RetrievalConfig,
    pub templates: PromptTemplates,
    pub generation: GenerationParams,
    pub parallelism: usize,
    pub source_lang: String,
    pub target_lang: String,
    pub refusal_patterns: Vec<String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            retrieval: RetrievalConfig::default(),
            templates: PromptTemplates::default(),
            generation: GenerationParams::default(),
            parallelism: 1,
            source_lang: "German".into(),
            target_lang: "English".into(),
            refusal_patterns: DEFAULT_REFUSAL_PATTERNS
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.retrieval.validate()?;
        self.templates.validate()?;
        self.generation.validate()?;
        if self.parallelism == 0 {
            return Err(PipelineError::InvalidConfig(
                "parallelism must be positive".into(),
            ));
        }
        Ok(())
    }
}

fn normalize_quotes(text: &str) -> String {
    text.replace(['\u{2019}', '\u{2018}'], "'").to_lowercase()
}

pub fn detect_invalid(output: &str, source: &str, refusal_patterns: &[String]) -> Validity {
    let mut v = Validity::default();
    let out = tokenize(output, true);
    if out.is_empty() {
        v.empty = true;
        return v;
    }
    let folded = normalize_quotes(output);
    v.refusal = refusal_patterns
        .iter()
        .any(|p| !p.is_empty() && folded.contains(&normalize_quotes(p)));
    let src = tokenize(source, true);
    v.source_copy = out == src;
    if !src.is_empty() {
        let ratio = out.len() as f64 / src.len() as f64;
        v.length_anomaly = !(0.25..=4.0).contains(&ratio);
    }
    v
}

fn draft_messages(source: &str, config: &PipelineConfig) -> Vec<ChatMessage> {
    vec![ChatMessage::user(fill(
        &config.templates.draft,
        &[
            ("src_lang", &config.source_lang),
            ("tgt_lang", &config.target_lang),
            ("source", source),
        ],
    ))]
}

/// First-stage translation: one user turn, reply trimmed.
pub fn draft_translate(
    source: &str,
    gateway: &Gateway,
    config: &PipelineConfig,
) -> Result<String, PipelineError> {
    if source.trim().is_empty() {
        return Err(PipelineError::EmptySource);
    }
    let reply = gateway.chat(&draft_messages(source, config), &config.generation)?;
    Ok(reply.content.trim().to_owned())
}

/// The dialog sent by [`refine`]: the draft exchange followed by a user turn
/// carrying the demonstrations and the polish request.
pub fn refine_messages(
    source: &str,
    draft: &str,
    demos: &[DemonstrationRecord],
    config: &PipelineConfig,
) -> Vec<ChatMessage> {
    let mut rendered = String::new();
    for (i, demo) in demos.iter().enumerate() {
        rendered.push_str(&config.templates.render_demo(i + 1, demo));
        rendered.push('\n');
    }
    let mut messages = draft_messages(source, config);
    messages.push(ChatMessage::assistant(draft));
    messages.push(ChatMessage::user(fill(
        &config.templates.refine,
        &[("demos", &rendered), ("source", source), ("draft", draft)],
    )));
    messages
}

pub fn refine(
    source: &str,
    draft: &str,
    demos: &[DemonstrationRecord],
    gateway: &Gateway,
    config: &PipelineConfig,
) -> Result<String, PipelineError> {
    if source.trim().is_empty() {
        return Err(PipelineError::EmptySource);
    }
    let reply = gateway.chat(
        &refine_messages(source, draft, demos, config),
        &config.generation,
    )?;
    Ok(reply.content.trim().to_owned())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Comparison {
    pub final_text: String,
    pub choice: Choice,
    pub fallback: bool,
}

/// First standalone `A` or `B` token, case-insensitive.
pub fn parse_choice(reply: &str) -> Option<Choice> {
    reply
        .split(|c: char| !c.is_alphanumeric())
        .find_map(|word| match word {
            "A" | "a" => Some(Choice::Draft),
            "B" | "b" => Some(Choice::Refined),
            _ => None,
        })
}

pub fn compare_messages(
    source: &str,
    draft: &str,
    refined: &str,
    config: &PipelineConfig,
) -> Vec<ChatMessage> {
    vec![ChatMessage::user(fill(
        &config.templates.compare,
        &[("source", source), ("draft", draft), ("refined", refined)],
    ))]
}

/// Asks the model which candidate is better; A is the draft, B the
/// refinement. Falls back to the draft when the reply names neither.
pub fn compare_select(
    source: &str,
    draft: &str,
    refined: &str,
    gateway: &Gateway,
    config: &PipelineConfig,
) -> Result<Comparison, PipelineError> {
    if draft.trim().is_empty() || refined.trim().is_empty() {
        return Err(PipelineError::EmptyCandidate);
    }
    let reply = gateway.chat(
        &compare_messages(source, draft, refined, config),
        &config.generation,
    )?;
    let (choice, fallback) = match parse_choice(&reply.content) {
        Some(choice) => (choice, false),
        None => {
            log::warn!(
                "unparseable comparator reply {:?}; keeping the draft",
                reply.content
            );
            (Choice::Draft, true)
        }
    };
    let final_text = match choice {
        Choice::Draft => draft,
        Choice::Refined => refined,
    };
    Ok(Comparison {
        final_text: final_text.to_owned(),
        choice,
        fallback,
    })
}

/// Retrieval index over the demonstrations of one domain.
#[derive(Debug)]
pub struct DomainIndex {
    domain: String,
    revision: u64,
    index: RetrievalIndex,
    records: HashMap<String, DemonstrationRecord>,
}

impl DomainIndex {
    pub fn build(store: &DemoStore, domain: &str) -> Result<Self, PipelineError> {
        let records: Vec<&DemonstrationRecord> = store.filter(domain);
        let index =
            RetrievalIndex::build(records.iter().map(|r| (r.id.clone(), r.source.as_str())))?;
        Ok(Self {
            domain: domain.to_owned(),
            revision: store.revision(),
            index,
            records: records
                .into_iter()
                .map(|r| (r.id.clone(), r.clone()))
                .collect(),
        })
    }

    pub fn domain(&self) -> &str {
        &self.domain
    }

    /// Store revision the index was built at.
    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn index(&self) -> &RetrievalIndex {
        &self.index
    }

    pub fn retrieve(
        &self,
        query: &str,
        config: &RetrievalConfig,
    ) -> Result<Vec<(ScoredDemo, &DemonstrationRecord)>, PipelineError> {
        Ok(self
            .index
            .retrieve(query, config)?
            .into_iter()
            .map(|scored| {
                let record = &self.records[&scored.id];
                (scored, record)
            })
            .collect())
    }
}

/// Runs the configured strategy for one sentence. Gateway failures are
/// reported inside the record; only precondition violations are errors.
pub fn translate_one(
    source: &str,
    domain: &str,
    index: Option<&DomainIndex>,
    gateway: &Gateway,
    config: &PipelineConfig,
    strategy: Strategy,
) -> Result<TranslationRecord, PipelineError> {
    let index = match (strategy, index) {
        (Strategy::DraftOnly, _) => None,
        (_, Some(index)) => Some(index),
        (_, None) => return Err(PipelineError::MissingIndex(domain.to_owned())),
    };
    let mut record = TranslationRecord {
        source: source.to_owned(),
        domain: domain.to_owned(),
        strategy,
        shots: if index.is_some() {
            config.retrieval.shots
        } else {
            0
        },
        draft: String::new(),
        demos_used: Vec::new(),
        refined: None,
        comparator_choice: None,
        comparator_fallback: false,
        final_text: String::new(),
        validity: Validity::default(),
        error: None,
    };
    let fail = |mut record: TranslationRecord, err: PipelineError| {
        record.validity = detect_invalid(&record.final_text, source, &config.refusal_patterns);
        record.validity.gateway_error = matches!(err, PipelineError::Gateway(_));
        record.error = Some(err.to_string());
        record
    };

    match draft_translate(source, gateway, config) {
        Ok(draft) => {
            record.final_text = draft.clone();
            record.draft = draft;
        }
        Err(e) => return Ok(fail(record, e)),
    }
    let Some(index) = index else {
        record.validity = detect_invalid(&record.final_text, source, &config.refusal_patterns);
        return Ok(record);
    };
    if record.draft.is_empty() {
        record.validity = detect_invalid("", source, &config.refusal_patterns);
        return Ok(record);
    }

    let demos: Vec<DemonstrationRecord> = index
        .retrieve(source, &config.retrieval)?
        .into_iter()
        .map(|(_, demo)| demo.clone())
        .collect();
    record.demos_used = demos.iter().map(|d| d.id.clone()).collect();
    let refined = match refine(source, &record.draft, &demos, gateway, config) {
        Ok(refined) => refined,
        Err(e) => return Ok(fail(record, e)),
    };
    record.refined = Some(refined.clone());

    match strategy {
        Strategy::Hil => record.final_text = refined,
        Strategy::CompareHil if refined.is_empty() => {
            record.comparator_choice = Some(Choice::Draft);
            record.comparator_fallback = true;
        }
        Strategy::CompareHil => {
            match compare_select(source, &record.draft, &refined, gateway, config) {
                Ok(c) => {
                    record.final_text = c.final_text;
                    record.comparator_choice = Some(c.choice);
                    record.comparator_fallback = c.fallback;
                }
                Err(e) => return Ok(fail(record, e)),
            }
        }
        Strategy::DraftOnly => unreachable!("draft-only returns before retrieval"),
    }
    record.validity = detect_invalid(&record.final_text, source, &config.refusal_patterns);
    Ok(record)
}

/// Translates every source with up to `config.parallelism` workers. Output
/// order matches input order.
pub fn translate_corpus(
    sources: &[String],
    domain: &str,
    index: Option<&DomainIndex>,
    gateway: &Gateway,
    config: &PipelineConfig,
    strategy: Strategy,
) -> Result<Vec<TranslationRecord>, PipelineError> {
    config.validate()?;
    if strategy != Strategy::DraftOnly {
        match index {
            Some(index) if index.domain() == domain => {}
            _ => return Err(PipelineError::MissingIndex(domain.to_owned())),
        }
    }
    run_parallel(sources.len(), config.parallelism, |i| {
        translate_one(&sources[i], domain, index, gateway, config, strategy)
    })
    .into_iter()
    .collect()
}

fn run_parallel<T, F>(n: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = workers.clamp(1, n.max(1));
    if workers == 1 {
        return (0..n).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<T>>> = (0..n).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let value = f(i);
                *slots[i].lock().unwrap_or_else(|e| e.into_inner()) = Some(value);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| {
            slot.into_inner()
                .unwrap_or_else(|e| e.into_inner())
                .expect("every slot filled")
        })
        .collect()
}

/// One corpus line: a source and, for collection runs, its reference.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusPair {
    pub source: String,
    pub reference: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedPair {
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CollectReport {
    pub appended: usize,
    pub ids: Vec<String>,
    pub skipped: Vec<SkippedPair>,
}

/// Drafts every source, turns the draft/reference difference into revision
/// instructions and appends one simulated demonstration per valid draft.
pub fn collect_feedback(
    corpus: &[CorpusPair],
    domain: &str,
    store: &mut DemoStore,
    gateway: &Gateway,
    config: &PipelineConfig,
    created_at: DateTime<Utc>,
) -> Result<CollectReport, PipelineError> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(PipelineError::EmptyCorpus);
    }
    if domain.trim().is_empty() {
        return Err(PipelineError::EmptyDomain);
    }
    if let Some(index) = corpus.iter().position(|p| p.reference.is_none()) {
        return Err(PipelineError::MissingReference { index });
    }

    let drafts = run_parallel(corpus.len(), config.parallelism, |i| {
        draft_translate(&corpus[i].source, gateway, config)
    });
    let mut report = CollectReport::default();
    for (index, (pair, draft)) in corpus.iter().zip(drafts).enumerate() {
        let reference = pair.reference.as_deref().unwrap_or_default();
        let draft = match draft {
            Ok(d) => d,
            Err(e) => {
                report.skipped.push(SkippedPair {
                    index,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let validity = detect_invalid(&draft, &pair.source, &config.refusal_patterns);
        if !validity.is_ok() {
            let flags: Vec<String> = validity
                .flags()
                .iter()
                .map(|f| {
                    serde_json::to_value(f)
                        .ok()
                        .and_then(|v| v.as_str().map(str::to_owned))
                        .unwrap_or_default()
                })
                .collect();
            report.skipped.push(SkippedPair {
                index,
                reason: format!("invalid draft: {}", flags.join(",")),
            });
            continue;
        }
        let record = DemonstrationRecord::derive(
            domain,
            &pair.source,
            &draft,
            reference,
            Provenance::Simulated,
            created_at,
        );
        match store.append(record) {
            Ok(id) => {
                report.appended += 1;
                report.ids.push(id);
            }
            Err(StoreError::DuplicateId(id)) => {
                report.skipped.push(SkippedPair {
                    index,
                    reason: format!("already stored as {id}"),
                });
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(report)
}

/// Deterministic sample of `n` items, kept in their original order.
pub fn subsample<T: Clone>(items: &[T], n: usize, seed: u64) -> Vec<T> {
    if n >= items.len() {
        return items.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, items.len(), n).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| items[i].clone()).collect()
}
