//! Deterministic stand-in model used to author replay fixtures.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use chrono::{DateTime, TimeZone, Utc};
use hilmt::gateway::{
    ChatBackend, ChatMessage, FixtureRecorder, Gateway, GatewayError, GenerationParams,
};
use hilmt::pipeline::{
    collect_feedback, translate_corpus, CorpusPair, DomainIndex, PipelineConfig, Strategy,
};
use hilmt::store::DemoStore;

pub fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
}

pub fn fixed_time() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2026, 10, 15, 9, 30, 0).unwrap()
}

const GLOSSARY: &[(&str, &str)] = &[
    ("das", "the"),
    ("die", "the"),
    ("der", "the"),
    ("den", "the"),
    ("handbuch", "manual"),
    ("zu", "for"),
    ("öffnet", "opens"),
    ("eine", "a"),
    ("einen", "a"),
    ("ein", "a"),
    ("vorhandene", "existing"),
    ("datei", "file"),
    ("dateien", "files"),
    ("speichert", "saves"),
    ("aktuelle", "current"),
    ("dokument", "document"),
    ("schließt", "closes"),
    ("fenster", "window"),
    ("beendet", "quits"),
    ("programm", "program"),
    ("zeigt", "shows"),
    ("werkzeugleiste", "toolbar"),
    ("an", "on"),
    ("druckt", "prints"),
    ("einstellungen", "settings"),
    ("für", "for"),
    ("rechtschreibprüfung", "spellcheck"),
    ("fügt", "adds"),
    ("aus", "from"),
    ("zwischenablage", "clipboard"),
    ("kopiert", "copies"),
    ("auswahl", "selection"),
    ("macht", "makes"),
    ("letzte", "last"),
    ("aktion", "action"),
    ("rückgängig", "undone"),
    ("sucht", "searches"),
    ("nach", "for"),
    ("im", "in the"),
    ("wählt", "chooses"),
    ("gesamten", "whole"),
    ("gesamte", "whole"),
    ("statusleiste", "statusbar"),
    ("erstellt", "creates"),
    ("neues", "new"),
    ("neue", "new"),
    ("neuen", "new"),
    ("dateimenü", "file menu"),
    ("bearbeitenmenü", "edit menu"),
    ("hilfe", "help"),
    ("menüleiste", "menubar"),
    ("seite", "page"),
    ("ordner", "folder"),
    ("ansichtsmenü", "view menu"),
    ("sitzung", "session"),
    ("änderung", "change"),
    ("zeile", "line"),
    ("anzeige", "display"),
    ("bild", "picture"),
    ("seitenleiste", "sidebar"),
    ("alle", "all"),
];

/// Word-for-word lowercase gloss of a German sentence.
pub fn gloss(source: &str) -> String {
    source
        .split_whitespace()
        .map(|w| {
            let lower = w.to_lowercase();
            GLOSSARY
                .iter()
                .find(|(de, _)| *de == lower)
                .map_or(lower.clone(), |(_, en)| en.to_string())
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// "the manual for X" becomes "the X handbook"; a trailing "on" is dropped.
pub fn polish(draft: &str) -> String {
    let words: Vec<&str> = draft.split_whitespace().collect();
    if let ["the", "manual", "for", rest @ ..] = words.as_slice() {
        return format!("the {} handbook", rest.join(" "));
    }
    match words.split_last() {
        Some((&"on", head)) if !head.is_empty() => head.join(" "),
        _ => draft.to_owned(),
    }
}

/// Answers draft, refine and compare prompts built from the default
/// templates without ever consulting a reference.
#[derive(Default)]
pub struct ScriptedModel {
    pub calls: AtomicUsize,
}

impl ScriptedModel {
    pub fn compare_reply(prompt: &str) -> &'static str {
        match prompt.bytes().map(usize::from).sum::<usize>() % 3 {
            0 => "A",
            1 => "B",
            _ => "Both are fine.",
        }
    }
}

impl ChatBackend for ScriptedModel {
    fn complete(
        &self,
        messages: &[ChatMessage],
        _params: &GenerationParams,
    ) -> Result<String, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let last = &messages.last().expect("non-empty").content;
        if messages.len() == 3 {
            return Ok(polish(&messages[1].content));
        }
        if last.starts_with("Which translation") {
            return Ok(Self::compare_reply(last).to_owned());
        }
        let source = last.split_once('\n').map_or(last.as_str(), |(_, s)| s);
        Ok(format!(" {} \n", gloss(source)))
    }
}

pub fn load_pairs(name: &str) -> Vec<CorpusPair> {
    hilmt::formats::read_corpus(&data(name)).unwrap()
}

/// Builds a demonstration store from `it_demos.tsv` with scripted drafts.
pub fn build_store(path: &Path, config: &PipelineConfig) -> DemoStore {
    let mut store = DemoStore::open(path).unwrap();
    let gateway = Gateway::new(ScriptedModel::default());
    let report = collect_feedback(
        &load_pairs("it_demos.tsv"),
        "it",
        &mut store,
        &gateway,
        config,
        fixed_time(),
    )
    .unwrap();
    assert_eq!(report.appended, 20, "{report:?}");
    store
}

/// Records replay fixtures for translating `sources` against `store` with
/// the scripted model.
pub fn record_translation_fixtures(
    fixtures: &Path,
    store: &DemoStore,
    sources: &[String],
    config: &PipelineConfig,
    strategy: Strategy,
) {
    let recorder = FixtureRecorder::new(Arc::new(ScriptedModel::default()), fixtures);
    let gateway = Gateway::new(recorder);
    let index = DomainIndex::build(store, "it").unwrap();
    let records =
        translate_corpus(sources, "it", Some(&index), &gateway, config, strategy).unwrap();
    assert!(records.iter().all(|r| r.error.is_none()));
}

/// Records draft fixtures for every pair of `pairs`.
pub fn record_draft_fixtures(fixtures: &Path, sources: &[String], config: &PipelineConfig) {
    let gateway = Gateway::new(FixtureRecorder::new(
        Arc::new(ScriptedModel::default()),
        fixtures,
    ));
    for source in sources {
        hilmt::pipeline::draft_translate(source, &gateway, config).unwrap();
    }
}
