#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use faaf_core::constructor::Dialect;
use faaf_core::dataset::{load_dataset, DatasetFile};
use faaf_core::engine::{Engine, EngineError, EvaluationRun};
use faaf_core::gateway::{BackendDescriptor, Gateway, OracleBackend};
use faaf_core::model::{AnswerKind, FormulationId};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn desk_dataset() -> DatasetFile {
    load_dataset(&fixture("desk_dataset.jsonl")).expect("shipped dataset loads")
}

pub fn oracle_gateway(data: &DatasetFile, dialect: Dialect) -> Gateway {
    let mut descriptor = BackendDescriptor::mock_oracle();
    descriptor.dialect = Some(dialect);
    Gateway::new(descriptor, Arc::new(OracleBackend::new(&data.records, dialect)))
}

pub fn sweep(gateway: &Gateway, data: &DatasetFile, formulation: FormulationId) -> Result<EvaluationRun, EngineError> {
    Engine::new(gateway).with_parallelism(4).run_evaluation(
        &data.records,
        &AnswerKind::ALL,
        formulation,
        &formulation.formulation(),
        (&data.provenance.source, &data.provenance.version),
        |_| {},
    )
}

