//! Fact verification with function-calling language models.
//!
//! Facts derived from a reference answer become the arguments of a single
//! function object; a model fills every argument in one call and the result
//! is parsed back into per-fact verdicts.

pub mod constructor;
pub mod dataset;
pub mod engine;
pub mod facts;
pub mod gateway;
pub mod metrics;
pub mod model;
pub mod parser;
pub mod prompts;
pub mod xml;

pub use constructor::{build_fact_function, serialize_spec, Dialect, FactFunctionSpec, WireSchema};
pub use engine::{AnswerVerification, Engine, EngineError, EvaluationRun, RunConfig};
pub use gateway::{BackendDescriptor, Gateway, GatewayError, ModelRequest, UsageRecord};
pub use model::{AnswerKind, FactStatement, Formulation, FormulationConfig, FormulationId, Label, QARecord, Verdict};
pub use parser::{parse_prompt_response, parse_tool_response, InvocationResult};
pub use dataset::{load_dataset, load_run, save_dataset, save_run, DatasetFile};
pub use metrics::{build_report, ConfusionCounts, ReportTable};
