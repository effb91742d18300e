//! Replication between patient cards, hospital (LOCAL) stores and the
//! CENTRAL store.

mod batch;
mod merge;
mod scenario;
mod store;

pub use batch::{BatchEntry, BatchError, SyncBatch, BATCH_MAGIC, BATCH_VERSION};
pub use merge::{
    merge, merge_scoped, pull_scoped, record_and_propagate, resolve_read_source, ConnectivityState, ReadSource,
    Replicas, SyncError, SyncFault, SyncOutcome,
};
pub use scenario::{
    builtin_scenario, random_scenario, render_transcript, replay, replica_sets, scenario_step, Event, HistoryView,
    OperatorSpec, PatientSpec, PlannedInvestigation, RecordedView, ScenarioError, ScenarioFile, StepReport, StoreRef,
    Visit, World, WorldConfig, BUILTIN_SCENARIOS, DEFAULT_CARD_CAPACITY,
};
pub use store::{AdmitFault, Admitted, ReplicaKind, ReplicaStore};
