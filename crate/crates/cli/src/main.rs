mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use faaf_core::dataset::{self, DatasetError, DatasetFile, Provenance, RunJournal};
use faaf_core::engine::{Engine, EngineError, RequestPlan};
use faaf_core::facts::{generate_facts, FactGenError, FactGenRequest};
use faaf_core::gateway::{
    connect, AnthropicXmlBackend, Backend, BackendDescriptor, BackendKind, BackendReply, Budget, Gateway,
    GatewayError, ModelRequest, ResponseCache,
};
use faaf_core::metrics::{self, MetricsError};
use faaf_core::model::{AnswerKind, FormulationId};
use serde_json::json;

use config::{resolve_backend, FileConfig};

const DEFAULT_CACHE_DIR: &str = ".faaf-cache";
const LIVE_DEFAULT_MAX_CALLS: u64 = 2_000;
const LIVE_DEFAULT_MAX_TOKENS: u64 = 2_000_000;

#[derive(Parser)]
#[command(name = "faaf", version, about = "Verify fact statements against passages with function-calling models")]
struct Cli {
    /// TOML file with defaults for any flag; flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Response cache directory [default: .faaf-cache]
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Disable the response cache.
    #[arg(long, global = true)]
    no_cache: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Derive fact statements for records that have none.
    GenerateFacts {
        #[command(flatten)]
        run: RunOpts,
        /// Regenerate facts for every record, dropping their annotations.
        #[arg(long)]
        all: bool,
        /// Where to write the updated dataset [default: overwrite --dataset]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify the facts of one answer and print the result.
    Verify {
        #[command(flatten)]
        run: RunOpts,
        #[arg(long)]
        formulation: Option<FormulationId>,
        #[arg(long)]
        qa_id: String,
        #[arg(long)]
        variant: AnswerKind,
        #[arg(long)]
        dry_run: bool,
    },
    /// Verify every answer in a dataset and write a run artifact.
    Evaluate {
        #[command(flatten)]
        run: RunOpts,
        #[arg(long)]
        formulation: Option<FormulationId>,
        /// Comma-separated subset of ground_truth, ungrounded, poor.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<AnswerKind>,
        /// Output directory for run artifacts [default: runs]
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        parallel: Option<usize>,
        /// Print the requests that would be sent, without calling anything.
        #[arg(long)]
        dry_run: bool,
    },
    /// Score one or more run artifacts.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Also write scores.csv, costs.csv and summary.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Inspect or empty the response cache.
    Cache {
        #[arg(value_parser = ["list", "clear", "stats"])]
        action: String,
    },
    /// Convert a WikiEval-style export into the dataset format.
    Import {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Expected SHA-256 of the input file.
        #[arg(long)]
        sha256: Option<String>,
        #[arg(long, default_value = "wikieval")]
        source: String,
        #[arg(long, default_value = "unversioned")]
        source_version: String,
    },
}

#[derive(Args)]
struct RunOpts {
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// mock-oracle, mock-scripted, mock-adversarial, openai, anthropic or a config-defined name.
    #[arg(long)]
    backend: Option<String>,
    /// Model id for openai/anthropic backends.
    #[arg(long)]
    model: Option<String>,
    /// Recorded responses for mock-scripted.
    #[arg(long)]
    fixture: Option<PathBuf>,
    #[arg(long)]
    max_calls: Option<u64>,
    #[arg(long)]
    max_tokens: Option<u64>,
}

/// Settings after merging flags over the config file.
struct Resolved {
    dataset: PathBuf,
    backend: BackendDescriptor,
    max_calls: Option<u64>,
    max_tokens: Option<u64>,
}

struct Ctx {
    file: FileConfig,
    cache_dir: Option<PathBuf>,
}

impl Ctx {
    fn resolve(&self, run: &RunOpts) -> Result<Resolved> {
        let dataset = run
            .dataset
            .clone()
            .or_else(|| self.file.dataset.clone())
            .context("--dataset is required")?;
        if !dataset.exists() {
            bail!("dataset {} does not exist", dataset.display());
        }
        let name = run
            .backend
            .clone()
            .or_else(|| self.file.backend.clone())
            .unwrap_or_else(|| "mock-oracle".into());
        let model = run.model.clone().or_else(|| self.file.model.clone());
        let fixture = run.fixture.clone().or_else(|| self.file.fixture.clone());
        let backend = resolve_backend(&name, model.as_deref(), fixture.as_deref(), &self.file)?;
        let live = !backend.kind.is_mock();
        let limit = |flag: Option<u64>, file: Option<u64>, live_default: u64| {
            flag.or(file).or(live.then_some(live_default)).filter(|&n| n > 0)
        };
        Ok(Resolved {
            dataset,
            max_calls: limit(run.max_calls, self.file.max_calls, LIVE_DEFAULT_MAX_CALLS),
            max_tokens: limit(run.max_tokens, self.file.max_tokens, LIVE_DEFAULT_MAX_TOKENS),
            backend,
        })
    }

    fn formulation(&self, flag: Option<FormulationId>) -> Result<FormulationId> {
        match (flag, &self.file.formulation) {
            (Some(f), _) => Ok(f),
            (None, Some(s)) => s.parse().map_err(|e: String| anyhow::anyhow!(e)),
            (None, None) => Ok(FormulationId::FaafTf),
        }
    }

    fn gateway(&self, r: &Resolved, data: &DatasetFile) -> Result<Gateway> {
        let backend = connect(&r.backend, Some(&data.records))?;
        let mut gw = Gateway::new(r.backend.clone(), backend).with_budget(Budget::new(r.max_calls, r.max_tokens));
        if let Some(dir) = &self.cache_dir {
            gw = gw.with_cache(ResponseCache::open(dir)?);
        }
        Ok(gw)
    }
}

/// Stands in for the real backend during dry runs so nothing can be sent.
struct Offline;

impl Backend for Offline {
    fn call(&self, _: &ModelRequest) -> Result<BackendReply, GatewayError> {
        Err(GatewayError::InvalidRequest("dry run: no requests are sent".into()))
    }
}

fn wire_body(backend: &BackendDescriptor, request: &ModelRequest) -> Result<serde_json::Value> {
    Ok(match backend.kind {
        BackendKind::HttpJsonTools => faaf_core::gateway::OpenAiJsonBackend::payload(request)?,
        BackendKind::HttpXmlTools => AnthropicXmlBackend::payload(request),
        _ => serde_json::to_value(request)?,
    })
}

fn print_plan(
    out: &mut impl Write,
    backend: &BackendDescriptor,
    qa_id: &str,
    variant: AnswerKind,
    plan: &RequestPlan,
) -> Result<()> {
    let requests: Vec<(Option<usize>, &ModelRequest)> = match plan {
        RequestPlan::Faaf { request, .. } => vec![(None, request)],
        RequestPlan::Prompt(reqs) => reqs.iter().map(|(i, r)| (Some(*i), r)).collect(),
    };
    for (fact, request) in requests {
        let line = json!({
            "qa_id": qa_id,
            "variant": variant,
            "fact": fact,
            "backend": backend.name,
            "body": wire_body(backend, request)?,
        });
        writeln!(out, "{line}")?;
    }
    Ok(())
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let cache_dir = if cli.no_cache {
        None
    } else {
        Some(
            cli.cache_dir
                .clone()
                .or_else(|| file.cache_dir.clone())
                .unwrap_or_else(|| DEFAULT_CACHE_DIR.into()),
        )
    };
    let ctx = Ctx { file, cache_dir };

    match cli.command {
        Command::GenerateFacts { run, all, out } => {
            let r = ctx.resolve(&run)?;
            let mut data = dataset::load_dataset(&r.dataset)?;
            let gw = ctx.gateway(&r, &data)?;
            let mut updated = 0;
            for rec in data.records.iter_mut().filter(|rec| all || rec.facts.is_empty()) {
                let req = FactGenRequest {
                    question: rec.question.clone(),
                    passage: rec
                        .answer(AnswerKind::GroundTruth)
                        .context("record without a ground-truth answer")?
                        .to_string(),
                };
                let facts = generate_facts(&req, &gw)?;
                if !rec.gold_labels.is_empty() {
                    log::warn!("{}: dropping annotations tied to the old facts", rec.id);
                    rec.gold_labels.clear();
                }
                rec.facts = facts;
                updated += 1;
            }
            let target = out.unwrap_or(r.dataset);
            dataset::save_dataset(&data, &target)?;
            println!("{}", json!({"dataset": target, "records_updated": updated, "counts": data.counts()}));
        }

        Command::Verify {
            run,
            formulation,
            qa_id,
            variant,
            dry_run,
        } => {
            let r = ctx.resolve(&run)?;
            let f = ctx.formulation(formulation)?;
            let data = dataset::load_dataset(&r.dataset)?;
            let qa = data.get(&qa_id).with_context(|| format!("no record with id `{qa_id}`"))?;
            if dry_run {
                let gw = Gateway::new(r.backend.clone(), Arc::new(Offline));
                let plan = Engine::new(&gw).plan(qa, variant, &f.formulation())?;
                return print_plan(&mut std::io::stdout().lock(), &r.backend, &qa.id, variant, &plan);
            }
            let gw = ctx.gateway(&r, &data)?;
            let v = Engine::new(&gw).verify_answer(qa, variant, f, &f.formulation())?;
            println!("{}", serde_json::to_string_pretty(&v)?);
        }

        Command::Evaluate {
            run,
            formulation,
            variants,
            out,
            parallel,
            dry_run,
        } => {
            let r = ctx.resolve(&run)?;
            let f = ctx.formulation(formulation)?;
            let variants = if !variants.is_empty() {
                variants
            } else if let Some(v) = &ctx.file.variants {
                v.iter()
                    .map(|s| s.parse().map_err(|e: String| anyhow::anyhow!(e)))
                    .collect::<Result<_>>()?
            } else {
                AnswerKind::ALL.to_vec()
            };
            let parallel = parallel.or(ctx.file.parallel).unwrap_or(4);
            let data = dataset::load_dataset(&r.dataset)?;

            if dry_run {
                let gw = Gateway::new(r.backend.clone(), Arc::new(Offline));
                let engine = Engine::new(&gw);
                let mut stdout = std::io::stdout().lock();
                for qa in &data.records {
                    for &v in AnswerKind::ALL.iter().filter(|k| variants.contains(k)) {
                        print_plan(&mut stdout, &r.backend, &qa.id, v, &engine.plan(qa, v, &f.formulation())?)?;
                    }
                }
                return Ok(());
            }

            let gw = ctx.gateway(&r, &data)?;
            let out_dir = out.or_else(|| ctx.file.out.clone()).unwrap_or_else(|| "runs".into());
            let stem = format!("run-{}-{}", f, sanitize(&r.backend.name));
            let artifact = out_dir.join(format!("{stem}.json"));
            let mut journal = RunJournal::create(&out_dir.join(format!("{stem}.partial.jsonl")))?;
            let mut journal_err = None;
            let result = Engine::new(&gw).with_parallelism(parallel).run_evaluation(
                &data.records,
                &variants,
                f,
                &f.formulation(),
                (&data.provenance.source, &data.provenance.version),
                |v| {
                    if let Err(e) = journal.append(v) {
                        journal_err.get_or_insert(e);
                    }
                },
            );
            if let Some(e) = journal_err {
                return Err(e.into());
            }
            let run = result.with_context(|| format!("partial results kept in {}", journal.path().display()))?;
            journal.finalize(&run, &artifact)?;
            let usage = run.total_usage();
            log::info!(
                "{} verifications, {} calls ({} upstream), {} tokens",
                run.verifications.len(),
                usage.call_count,
                usage.upstream_calls,
                usage.total_tokens()
            );
            println!("{}", artifact.display());
        }

        Command::Report { runs, out } => {
            let loaded = runs
                .iter()
                .map(|p| dataset::load_run(p))
                .collect::<Result<Vec<_>, _>>()?;
            let table = metrics::build_report(&loaded)?;
            print!("{}", metrics::render_text(&table));
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
                write(&dir.join("scores.csv"), &metrics::render_scores_csv(&table))?;
                write(&dir.join("costs.csv"), &metrics::render_costs_csv(&table))?;
                write(&dir.join("summary.json"), &serde_json::to_string_pretty(&table)?)?;
            }
        }

        Command::Cache { action } => {
            let dir = ctx.cache_dir.clone().context("the cache is disabled")?;
            let cache = ResponseCache::open(&dir)?;
            match action.as_str() {
                "list" => {
                    for e in cache.list()? {
                        let line = json!({
                            "key": e.key,
                            "backend": e.backend["name"],
                            "model": e.backend["model_id"],
                            "mode": e.request.mode,
                            "prompt_tokens": e.usage.prompt_tokens,
                            "completion_tokens": e.usage.completion_tokens,
                        });
                        println!("{line}");
                    }
                }
                "clear" => println!("{}", json!({"removed": cache.clear()?})),
                _ => println!("{}", serde_json::to_string(&cache.stats()?)?),
            }
        }

        Command::Import {
            input,
            out,
            sha256,
            source,
            source_version,
        } => {
            let data = dataset::import_wikieval(
                &input,
                sha256.as_deref(),
                Provenance {
                    source,
                    version: source_version,
                    note: None,
                },
            )?;
            dataset::save_dataset(&data, &out)?;
            println!("{}", json!({"dataset": out, "counts": data.counts()}));
        }
    }
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    if let Some(g) = e.chain().find_map(|c| c.downcast_ref::<GatewayError>()) {
        return match g {
            GatewayError::Auth(_) => "auth",
            GatewayError::BudgetExceeded(_) => "budget_exceeded",
            _ => "gateway",
        };
    }
    for cause in e.chain() {
        if cause.is::<DatasetError>() {
            return "dataset";
        }
        if cause.is::<EngineError>() || cause.is::<FactGenError>() {
            return "engine";
        }
        if cause.is::<MetricsError>() {
            return "metrics";
        }
        if cause.is::<std::io::Error>() {
            return "io";
        }
    }
    "config"
}

fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain()
        .filter_map(|c| c.downcast_ref::<std::io::Error>())
        .any(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            let report = json!({"error": {"kind": error_kind(&e), "message": format!("{e:#}")}});
            eprintln!("{report}");
            ExitCode::from(1)
        }
    }
}
