//! Runs verifications: one answer at a time, or a whole dataset sweep.
//!
//! The function-calling route sends one request per answer; the prompt
//! baseline sends one request per fact. A sweep fans answers out to a
//! bounded worker pool and collects results on the calling thread, which is
//! the only writer of run output.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constructor::{build_fact_function, serialize_spec, ConstructorError, FactFunctionSpec};
use crate::gateway::{BackendDescriptor, Gateway, GatewayError, ModelRequest, RequestMode, UsageRecord};
use crate::model::{AnswerKind, Formulation, FormulationConfig, FormulationId, Label, QARecord};
use crate::parser::{parse_prompt_response, parse_tool_response, FailureReason, InvocationResult};
use crate::prompts;

pub const RUN_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("record {qa_id}: {reason}")]
    InvalidInput { qa_id: String, reason: String },
    #[error(transparent)]
    Constructor(#[from] ConstructorError),
    #[error("run aborted")]
    Gateway(#[from] GatewayError),
}

/// Outcome for one (question, answer variant) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerVerification {
    pub qa_id: String,
    pub variant: AnswerKind,
    pub formulation: FormulationId,
    pub backend: String,
    pub result: InvocationResult,
    /// Human labels for the same facts, so a run can be scored on its own.
    pub gold: BTreeMap<usize, Label>,
    pub usage: UsageRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub formulation_id: FormulationId,
    pub formulation: Formulation,
    pub backend: BackendDescriptor,
    pub variants: Vec<AnswerKind>,
    pub tool_system_prompt: String,
    pub prompt_system_prompt: String,
    pub dataset_source: String,
    pub dataset_version: String,
    pub parallelism: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRun {
    pub schema_version: u32,
    pub config: RunConfig,
    pub started_at_ms: u64,
    pub finished_at_ms: u64,
    pub verifications: Vec<AnswerVerification>,
}

impl EvaluationRun {
    pub fn total_usage(&self) -> UsageRecord {
        self.verifications.iter().map(|v| v.usage).sum()
    }

    /// Verdicts only, keyed by (qa id, variant); used to compare reruns.
    pub fn verdict_table(&self) -> BTreeMap<(String, AnswerKind), InvocationResult> {
        self.verifications
            .iter()
            .map(|v| ((v.qa_id.clone(), v.variant), v.result.clone()))
            .collect()
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

/// Requests the engine would send for one answer, in send order.
#[derive(Debug, Clone, PartialEq)]
pub enum RequestPlan {
    Faaf {
        spec: FactFunctionSpec,
        request: ModelRequest,
    },
    Prompt(Vec<(usize, ModelRequest)>),
}

impl RequestPlan {
    pub fn requests(&self) -> Vec<&ModelRequest> {
        match self {
            RequestPlan::Faaf { request, .. } => vec![request],
            RequestPlan::Prompt(reqs) => reqs.iter().map(|(_, r)| r).collect(),
        }
    }
}

pub struct Engine<'g> {
    gateway: &'g Gateway,
    parallelism: usize,
}

impl<'g> Engine<'g> {
    pub fn new(gateway: &'g Gateway) -> Self {
        Self {
            gateway,
            parallelism: 4,
        }
    }

    pub fn with_parallelism(mut self, n: usize) -> Self {
        self.parallelism = n.max(1);
        self
    }

    pub fn gateway(&self) -> &Gateway {
        self.gateway
    }

    fn answer_text<'a>(qa: &'a QARecord, variant: AnswerKind) -> Result<&'a str, EngineError> {
        if qa.facts.is_empty() {
            return Err(EngineError::InvalidInput {
                qa_id: qa.id.clone(),
                reason: "no facts to verify".into(),
            });
        }
        qa.answer(variant).ok_or_else(|| EngineError::InvalidInput {
            qa_id: qa.id.clone(),
            reason: format!("no {variant} answer"),
        })
    }

    pub fn plan(&self, qa: &QARecord, variant: AnswerKind, formulation: &Formulation) -> Result<RequestPlan, EngineError> {
        let answer = Self::answer_text(qa, variant)?;
        let backend = self.gateway.descriptor();
        Ok(match formulation {
            Formulation::Faaf(cfg) => self.plan_faaf(&qa.facts, answer, cfg)?,
            Formulation::Prompt => RequestPlan::Prompt(
                qa.facts
                    .iter()
                    .map(|fact| {
                        let req = ModelRequest::prompt(
                            &backend.model_id,
                            self.gateway.system_prompt(RequestMode::Prompt),
                            prompts::prompt_baseline(answer, &fact.text),
                            backend.max_output_tokens,
                        );
                        (fact.index, req)
                    })
                    .collect(),
            ),
        })
    }

    fn plan_faaf(
        &self,
        facts: &[crate::model::FactStatement],
        answer: &str,
        cfg: &FormulationConfig,
    ) -> Result<RequestPlan, EngineError> {
        let backend = self.gateway.descriptor();
        let spec = build_fact_function(facts, cfg)?;
        let wire = serialize_spec(&spec, backend.tool_dialect())?;
        let request = ModelRequest::tool_call(
            &backend.model_id,
            self.gateway.system_prompt(RequestMode::ToolCall),
            prompts::faaf_prompt(answer),
            wire,
            backend.max_output_tokens,
        );
        Ok(RequestPlan::Faaf { spec, request })
    }

    /// Verifies one answer. Non-fatal call failures are folded into the
    /// result as unanswered facts; fatal ones (auth, budget) are returned.
    pub fn verify_answer(
        &self,
        qa: &QARecord,
        variant: AnswerKind,
        formulation_id: FormulationId,
        formulation: &Formulation,
    ) -> Result<AnswerVerification, EngineError> {
        let plan = self.plan(qa, variant, formulation)?;
        let failed_call = UsageRecord {
            call_count: 1,
            ..UsageRecord::default()
        };
        let (result, usage) = match plan {
            RequestPlan::Faaf { spec, request } => match self.gateway.complete(&request) {
                Ok(raw) => (parse_tool_response(&raw, &spec), raw.usage),
                Err(e) if e.is_fatal() => return Err(e.into()),
                Err(e) => {
                    log::warn!("{} / {variant}: {e}", qa.id);
                    let indices = qa.facts.iter().map(|f| f.index);
                    (
                        InvocationResult::all_failed(indices, FailureReason::CallFailed { detail: e.to_string() }),
                        failed_call,
                    )
                }
            },
            RequestPlan::Prompt(requests) => {
                let mut result = InvocationResult::default();
                let mut usage = UsageRecord::default();
                for (index, request) in requests {
                    match self.gateway.complete(&request) {
                        Ok(raw) => {
                            usage += raw.usage;
                            match parse_prompt_response(&raw.body) {
                                crate::model::Verdict::NotAnswered => result.fail(index, FailureReason::NoVerdictWord),
                                v => {
                                    result.verdicts.insert(index, v);
                                }
                            }
                        }
                        Err(e) if e.is_fatal() => return Err(e.into()),
                        Err(e) => {
                            log::warn!("{} / {variant} / fact {index}: {e}", qa.id);
                            usage += failed_call;
                            result.fail(index, FailureReason::CallFailed { detail: e.to_string() });
                        }
                    }
                }
                (result, usage)
            }
        };
        Ok(AnswerVerification {
            qa_id: qa.id.clone(),
            variant,
            formulation: formulation_id,
            backend: self.gateway.descriptor().name.clone(),
            result,
            gold: qa.gold(variant),
            usage,
        })
    }

    /// Sweeps `dataset × variants`. `on_result` sees each verification as it
    /// completes (completion order); the returned run is in dataset order,
    /// then variant order.
    pub fn run_evaluation(
        &self,
        dataset: &[QARecord],
        variants: &[AnswerKind],
        formulation_id: FormulationId,
        formulation: &Formulation,
        dataset_meta: (&str, &str),
        mut on_result: impl FnMut(&AnswerVerification),
    ) -> Result<EvaluationRun, EngineError> {
        if dataset.is_empty() {
            return Err(EngineError::InvalidConfig("dataset is empty".into()));
        }
        if variants.is_empty() {
            return Err(EngineError::InvalidConfig("no answer variants requested".into()));
        }
        if let Formulation::Faaf(cfg) = formulation {
            cfg.validate()
                .map_err(|e| EngineError::InvalidConfig(e.to_string()))?;
        }
        let variants: Vec<AnswerKind> = AnswerKind::ALL
            .into_iter()
            .filter(|k| variants.contains(k))
            .collect();
        for qa in dataset {
            for &v in &variants {
                Self::answer_text(qa, v)?;
            }
        }

        let jobs: Vec<(&QARecord, AnswerKind)> = dataset
            .iter()
            .flat_map(|qa| variants.iter().map(move |&v| (qa, v)))
            .collect();
        let started_at_ms = now_ms();
        let next = AtomicUsize::new(0);
        let abort = AtomicBool::new(false);
        let mut slots: Vec<Option<AnswerVerification>> = vec![None; jobs.len()];
        let mut fatal: Option<EngineError> = None;

        std::thread::scope(|scope| {
            let (tx, rx) = mpsc::channel::<(usize, Result<AnswerVerification, EngineError>)>();
            for _ in 0..self.parallelism.min(jobs.len()) {
                let tx = tx.clone();
                let (jobs, next, abort) = (&jobs, &next, &abort);
                scope.spawn(move || loop {
                    if abort.load(Ordering::SeqCst) {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(&(qa, variant)) = jobs.get(i) else { break };
                    let out = self.verify_answer(qa, variant, formulation_id, formulation);
                    if tx.send((i, out)).is_err() {
                        break;
                    }
                });
            }
            drop(tx);
            for (i, out) in rx {
                match out {
                    Ok(v) => {
                        on_result(&v);
                        slots[i] = Some(v);
                    }
                    Err(e) => {
                        abort.store(true, Ordering::SeqCst);
                        fatal.get_or_insert(e);
                    }
                }
            }
        });

        if let Some(e) = fatal {
            return Err(e);
        }
        let backend = self.gateway.descriptor().clone();
        Ok(EvaluationRun {
            schema_version: RUN_SCHEMA_VERSION,
            config: RunConfig {
                formulation_id,
                formulation: formulation.clone(),
                tool_system_prompt: self.gateway.system_prompt(RequestMode::ToolCall),
                prompt_system_prompt: self.gateway.system_prompt(RequestMode::Prompt),
                backend,
                variants,
                dataset_source: dataset_meta.0.to_string(),
                dataset_version: dataset_meta.1.to_string(),
                parallelism: self.parallelism,
            },
            started_at_ms,
            finished_at_ms: now_ms(),
            verifications: slots.into_iter().map(|s| s.expect("every job reported")).collect(),
        })
    }
}
