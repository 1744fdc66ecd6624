//! The `hilmt` command line.

use std::error::Error;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use axum::http::HeaderValue;
use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};
use hilmt_core::metrics::{
    evaluate, length_bucket_bleu, pos_word_accuracy, MetricOptions, DEFAULT_LENGTH_EDGES,
};
use hilmt_core::{RetrievalConfig, RetrievalMethod};

use crate::formats::{read_corpus, read_pos_tags, read_segments, write_json, write_jsonl};
use crate::gateway::{
    BackendKind, ChatBackend, Gateway, GatewayConfig, GenerationParams, RecordingBackend,
    RetryPolicy, DEFAULT_ENDPOINT, DEFAULT_MODEL,
};
use crate::pipeline::{
    collect_feedback, subsample, translate_corpus, DomainIndex, PipelineConfig, PromptTemplates,
    Strategy,
};
use crate::service::{self, AppState, DEFAULT_PORT};
use crate::store::DemoStore;

type CliResult = Result<String, Box<dyn Error>>;

#[derive(Debug, Parser)]
#[command(
    name = "hilmt",
    version,
    about = "Human-in-the-loop LLM translation refinement"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draft-translate a parallel corpus and store simulated revision feedback.
    Collect(CollectArgs),
    /// Translate a corpus with the draft, HIL or compare strategy.
    Translate(TranslateArgs),
    /// Score hypotheses against references with BLEU and TER.
    Evaluate(EvaluateArgs),
    /// Length-bucket BLEU and per-POS word accuracy.
    Analyze(AnalyzeArgs),
    /// Run the review HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BackendArg {
    Live,
    Replay,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StrategyArg {
    Draft,
    Hil,
    Compare,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RetrieverArg {
    Bm25,
    Rerank,
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Chat backend.
    #[arg(long, value_enum, default_value = "live")]
    backend: BackendArg,
    /// Replay: fixture file to answer from. Live: file to record replies into.
    #[arg(long)]
    fixtures: Option<PathBuf>,
    /// Chat-completions endpoint for the live backend (key in HILMT_API_KEY).
    #[arg(long, default_value = DEFAULT_ENDPOINT)]
    endpoint: String,
    #[arg(long, default_value = DEFAULT_MODEL)]
    model: String,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long, default_value_t = 1.0)]
    top_p: f64,
    #[arg(long, default_value_t = 512)]
    max_tokens: u32,
    /// Maximum concurrent live requests.
    #[arg(long, default_value_t = 4)]
    max_in_flight: usize,
    /// Live request attempts before giving up.
    #[arg(long, default_value_t = 3)]
    max_attempts: u32,
    /// Write every prompt sent to the model to this JSON Lines file.
    #[arg(long)]
    prompt_log: Option<PathBuf>,
    /// JSON file overriding prompt templates.
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long, default_value = "German")]
    src_lang: String,
    #[arg(long, default_value = "English")]
    tgt_lang: String,
}

#[derive(Debug, Args)]
struct CollectArgs {
    #[arg(long)]
    domain: String,
    /// TSV of source<TAB>reference lines.
    #[arg(long)]
    corpus: PathBuf,
    /// Demonstration store (created when missing).
    #[arg(long)]
    store: PathBuf,
    /// Randomly keep this many pairs.
    #[arg(long)]
    sample: Option<usize>,
    /// Seed for --sample.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Timestamp for the new records (RFC 3339); defaults to now.
    #[arg(long)]
    now: Option<DateTime<Utc>>,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    parallelism: u32,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Debug, Args)]
struct TranslateArgs {
    /// TSV with sources in the first column; other columns are ignored.
    #[arg(long)]
    input: PathBuf,
    /// Demonstration store; required unless --strategy draft.
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long)]
    domain: String,
    #[arg(long, value_enum, default_value = "compare")]
    strategy: StrategyArg,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u32).range(1..=3))]
    shots: u32,
    #[arg(long, value_enum, default_value = "rerank")]
    retriever: RetrieverArg,
    /// BM25 candidates passed to the reranker.
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u32).range(1..))]
    pool: u32,
    /// Highest n-gram order of the rerank score.
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u32).range(1..))]
    ngram: u32,
    /// Output JSON Lines file of translation records.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    parallelism: u32,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Hypotheses: .jsonl (field "final"), .tsv (second column) or plain lines.
    #[arg(long)]
    hyp: PathBuf,
    /// References in the same formats.
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Write the JSON report here.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Case-fold before scoring.
    #[arg(long)]
    lowercase: bool,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[arg(long)]
    hyp: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Reference tags, token<TAB>tag per line, blank line between sentences.
    #[arg(long)]
    pos_tags: Option<PathBuf>,
    /// Reference-length bucket edges.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_LENGTH_EDGES)]
    buckets: Vec<usize>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    lowercase: bool,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value_t = DEFAULT_PORT)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Demonstration store (created when missing).
    #[arg(long)]
    store: PathBuf,
    /// Allowed CORS origin; any origin when omitted.
    #[arg(long)]
    cors_origin: Option<String>,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u32).range(1..))]
    shots: u32,
    #[arg(long, value_enum, default_value = "rerank")]
    retriever: RetrieverArg,
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u32).range(1..))]
    pool: u32,
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u32).range(1..))]
    ngram: u32,
    #[command(flatten)]
    model: ModelArgs,
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// exit status: 0 success, 1 usage error, 2 runtime failure.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let (name, outcome) = match cli.command {
        Command::Collect(a) => ("collect", collect(a)),
        Command::Translate(a) => ("translate", translate(a)),
        Command::Evaluate(a) => ("evaluate", evaluate_cmd(a)),
        Command::Analyze(a) => ("analyze", analyze(a)),
        Command::Serve(a) => ("serve", serve(a)),
    };
    match outcome {
        Ok(fields) => {
            println!("hilmt {name} ok {fields}");
            0
        }
        Err(e) => {
            let mut message = e.to_string();
            let mut source = e.source();
            while let Some(cause) = source {
                let cause_text = cause.to_string();
                if !message.contains(&cause_text) {
                    message.push_str(&format!(": {cause_text}"));
                }
                source = cause.source();
            }
            eprintln!("hilmt {name}: error: {message}");
            2
        }
    }
}

/// A gateway and the prompt recorder wrapped around it, if any.
type GatewayParts = (Gateway, Option<Arc<RecordingBackend>>);

impl ModelArgs {
    /// The gateway plus, when --prompt-log is set, the recorder to flush.
    fn gateway(&self) -> Result<GatewayParts, Box<dyn Error>> {
        let config = GatewayConfig {
            backend: match self.backend {
                BackendArg::Live => BackendKind::Live,
                BackendArg::Replay => BackendKind::Replay,
            },
            endpoint: self.endpoint.clone(),
            fixtures: self.fixtures.clone(),
            retry: RetryPolicy {
                max_attempts: self.max_attempts,
                ..RetryPolicy::default()
            },
            max_in_flight: self.max_in_flight,
            timeout: Duration::from_secs(120),
        };
        let backend: Arc<dyn ChatBackend> = config.build()?;
        Ok(match &self.prompt_log {
            Some(_) => {
                let recorder = Arc::new(RecordingBackend::new(backend));
                (Gateway::from_arc(recorder.clone()), Some(recorder))
            }
            None => (Gateway::from_arc(backend), None),
        })
    }

    fn flush_prompt_log(
        &self,
        recorder: Option<Arc<RecordingBackend>>,
    ) -> Result<(), Box<dyn Error>> {
        if let (Some(path), Some(recorder)) = (&self.prompt_log, recorder) {
            recorder.write_log(path)?;
        }
        Ok(())
    }

    fn pipeline_config(
        &self,
        retrieval: RetrievalConfig,
        parallelism: usize,
    ) -> Result<PipelineConfig, Box<dyn Error>> {
        let templates = match &self.templates {
            Some(path) => PromptTemplates::from_file(path)?,
            None => PromptTemplates::default(),
        };
        let config = PipelineConfig {
            retrieval,
            templates,
            generation: GenerationParams {
                model: self.model.clone(),
                temperature: self.temperature,
                top_p: self.top_p,
                max_output_tokens: self.max_tokens,
            },
            parallelism,
            source_lang: self.src_lang.clone(),
            target_lang: self.tgt_lang.clone(),
            ..PipelineConfig::default()
        };
        config.validate()?;
        Ok(config)
    }
}

fn retrieval_config(retriever: RetrieverArg, pool: u32, ngram: u32, shots: u32) -> RetrievalConfig {
    RetrievalConfig {
        method: match retriever {
            RetrieverArg::Bm25 => RetrievalMethod::Bm25,
            RetrieverArg::Rerank => RetrievalMethod::Bm25Rerank,
        },
        pool: pool as usize,
        ngram: ngram as usize,
        shots: shots as usize,
        ..RetrievalConfig::default()
    }
}

fn collect(args: CollectArgs) -> CliResult {
    let mut corpus = read_corpus(&args.corpus)?;
    if let Some(n) = args.sample {
        corpus = subsample(&corpus, n, args.seed);
    }
    let mut store = DemoStore::open(&args.store)?;
    let (gateway, recorder) = args.model.gateway()?;
    let config = args
        .model
        .pipeline_config(RetrievalConfig::default(), args.parallelism as usize)?;
    let created_at = args.now.unwrap_or_else(Utc::now);
    let report = collect_feedback(
        &corpus,
        &args.domain,
        &mut store,
        &gateway,
        &config,
        created_at,
    )?;
    args.model.flush_prompt_log(recorder)?;
    for skipped in &report.skipped {
        eprintln!(
            "{}: pair {} skipped: {}",
            args.corpus.display(),
            skipped.index + 1,
            skipped.reason
        );
    }
    Ok(format!(
        "appended={} skipped={} store_size={} store={}",
        report.appended,
        report.skipped.len(),
        store.len(),
        args.store.display()
    ))
}

fn translate(args: TranslateArgs) -> CliResult {
    let strategy = match args.strategy {
        StrategyArg::Draft => Strategy::DraftOnly,
        StrategyArg::Hil => Strategy::Hil,
        StrategyArg::Compare => Strategy::CompareHil,
    };
    let sources: Vec<String> = read_corpus(&args.input)?
        .into_iter()
        .map(|p| p.source)
        .collect();
    let index = match (strategy, &args.store) {
        (Strategy::DraftOnly, _) => None,
        (_, Some(path)) => Some(DomainIndex::build(&DemoStore::load(path)?, &args.domain)?),
        (_, None) => return Err("--store is required unless --strategy draft".into()),
    };
    let retrieval = retrieval_config(args.retriever, args.pool, args.ngram, args.shots);
    let config = args
        .model
        .pipeline_config(retrieval, args.parallelism as usize)?;
    let (gateway, recorder) = args.model.gateway()?;
    let records = translate_corpus(
        &sources,
        &args.domain,
        index.as_ref(),
        &gateway,
        &config,
        strategy,
    )?;
    write_jsonl(&args.out, &records)?;
    args.model.flush_prompt_log(recorder)?;

    let mut failed = 0;
    for (i, record) in records.iter().enumerate() {
        if let Some(error) = &record.error {
            failed += 1;
            eprintln!("{}: line {}: {error}", args.input.display(), i + 1);
        }
    }
    let invalid = records.iter().filter(|r| !r.validity.is_ok()).count();
    Ok(format!(
        "records={} invalid={invalid} failed={failed} out={}",
        records.len(),
        args.out.display()
    ))
}

fn read_pairs(hyp: &Path, reference: &Path) -> Result<(Vec<String>, Vec<String>), Box<dyn Error>> {
    let hyps = read_segments(hyp)?;
    let refs = read_segments(reference)?;
    if hyps.len() != refs.len() {
        return Err(format!(
            "{} has {} segments but {} has {}",
            hyp.display(),
            hyps.len(),
            reference.display(),
            refs.len()
        )
        .into());
    }
    Ok((hyps, refs))
}

fn evaluate_cmd(args: EvaluateArgs) -> CliResult {
    let (hyps, refs) = read_pairs(&args.hyp, &args.reference)?;
    let report = evaluate(
        &hyps,
        &refs,
        MetricOptions {
            lowercase: args.lowercase,
        },
    )?;
    if let Some(path) = &args.report {
        write_json(path, &report)?;
    }
    Ok(format!(
        "sentences={} bleu={:.2} ter={:.2}",
        report.sentence_count, report.bleu, report.ter
    ))
}

fn analyze(args: AnalyzeArgs) -> CliResult {
    let (hyps, refs) = read_pairs(&args.hyp, &args.reference)?;
    let options = MetricOptions {
        lowercase: args.lowercase,
    };
    let mut report = evaluate(&hyps, &refs, options)?;
    let pairs: Vec<(&str, &str)> = hyps
        .iter()
        .map(String::as_str)
        .zip(refs.iter().map(String::as_str))
        .collect();
    let buckets = length_bucket_bleu(&pairs, &args.buckets, options)?;
    let bucket_count = buckets.len();
    report.buckets = Some(buckets);
    if let Some(path) = &args.pos_tags {
        let tagged = read_pos_tags(path)?;
        report.pos = Some(pos_word_accuracy(&tagged, &hyps)?);
    }
    if let Some(path) = &args.report {
        write_json(path, &report)?;
    }
    let mut fields = format!(
        "sentences={} bleu={:.2} ter={:.2} buckets={bucket_count}",
        report.sentence_count, report.bleu, report.ter
    );
    if let Some(pos) = &report.pos {
        fields.push_str(&format!(" pos_tags={}", pos.len()));
    }
    Ok(fields)
}

fn serve(args: ServeArgs) -> CliResult {
    let store = DemoStore::open(&args.store)?;
    let (gateway, _) = args.model.gateway()?;
    let retrieval = retrieval_config(args.retriever, args.pool, args.ngram, args.shots);
    let config = args.model.pipeline_config(retrieval, 1)?;
    let state = Arc::new(AppState::new(store, gateway, config)?);
    let origin = args
        .cors_origin
        .as_deref()
        .map(HeaderValue::from_str)
        .transpose()?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind((args.host.as_str(), args.port)).await?;
        let addr = listener.local_addr()?;
        println!("hilmt serve listening addr={addr}");
        service::serve(listener, state, origin).await?;
        Ok(format!("addr={addr}"))
    })
}
