//! The query vocabulary every knowledge source answers.
//!
//! The crawler, verifier and inserter only talk to [`Oracle`]. Prompt text
//! and reply parsing live behind the LLM implementation; the mock answers
//! the same questions from a ground-truth taxonomy.

mod log;
mod mock;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm_backend::{CostLedger, TemplateError, TemplateName};

pub use self::log::{QueryLog, QueryRecord};
pub use self::mock::{FixtureError, GroundTruthTaxonomy, MockOracle, NoiseModel};

/// Which insertion phase issued a subsumption probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbePhase {
    Top,
    Bottom,
}

/// Context attached to every query.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OracleContext {
    /// The seed concept fixing the domain.
    pub seed_name: String,
    /// Superconcept the queried concept was first discovered under.
    pub parent_name: Option<String>,
    /// Known descriptions by concept name.
    pub descriptions: BTreeMap<String, String>,
    /// Set on insertion probes so the query log can be audited per phase.
    pub phase: Option<ProbePhase>,
}

impl OracleContext {
    pub fn new(seed_name: &str) -> Self {
        OracleContext { seed_name: seed_name.to_string(), ..Default::default() }
    }

    pub fn with_parent(mut self, parent: Option<&str>) -> Self {
        self.parent_name = parent.map(str::to_string);
        self
    }

    pub fn with_phase(&self, phase: ProbePhase) -> Self {
        OracleContext { phase: Some(phase), ..self.clone() }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    /// Network or service failure that survived the retry budget.
    #[error("transport failure: {0}")]
    Transport(String),
    /// The service rejected the request outright (bad key, bad model, ...).
    #[error("backend refused the request: {0}")]
    Backend(String),
    #[error("unparseable reply to {template}: {reply:?}")]
    Parse { template: TemplateName, reply: String },
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
}

impl OracleError {
    pub fn is_transport(&self) -> bool {
        matches!(self, OracleError::Transport(_) | OracleError::Backend(_))
    }
}

/// The questions the construction pipeline asks. Implementations must be
/// safe to query from several threads at once.
pub trait Oracle: Send + Sync {
    /// Does `concept` have generally accepted subcategories?
    fn has_subconcepts(&self, ctx: &OracleContext, concept: &str) -> Result<bool, OracleError>;

    /// Candidate subcategories of `concept`. `threshold` and `samples` drive
    /// first-token frequency sampling where the backend supports it.
    fn list_subconcepts(
        &self,
        ctx: &OracleContext,
        concept: &str,
        threshold: usize,
        samples: usize,
    ) -> Result<Vec<String>, OracleError>;

    /// Descriptions of `names`, each considered as a subcategory of
    /// `concept`. Every input name gets an entry; an empty string marks a
    /// name the source did not describe.
    fn describe(
        &self,
        ctx: &OracleContext,
        concept: &str,
        names: &[String],
    ) -> Result<BTreeMap<String, String>, OracleError>;

    /// Is `candidate` a specific instance rather than a subcategory of the seed?
    fn is_instance(&self, ctx: &OracleContext, candidate: &str) -> Result<bool, OracleError>;

    /// Is `candidate` a part rather than a subcategory of the seed?
    fn is_part(&self, ctx: &OracleContext, candidate: &str) -> Result<bool, OracleError>;

    /// Can `candidate` be considered a subcategory of the seed?
    fn under_seed(&self, ctx: &OracleContext, candidate: &str) -> Result<bool, OracleError>;

    /// Is `candidate` typically understood as a subcategory of `concept`?
    fn is_subcategory_of(&self, ctx: &OracleContext, candidate: &str, concept: &str) -> Result<bool, OracleError>;

    /// A better name for the subcategory of `concept` described by `description`.
    fn rename_from_description(
        &self,
        ctx: &OracleContext,
        concept: &str,
        description: &str,
    ) -> Result<Option<String>, OracleError>;

    fn interchangeable(&self, ctx: &OracleContext, first: &str, second: &str) -> Result<bool, OracleError>;

    /// Which of the two is the subcategory: returns `(sub, super)`.
    fn subcategory_direction(
        &self,
        ctx: &OracleContext,
        first: &str,
        second: &str,
    ) -> Result<(String, String), OracleError>;

    /// Requests, tokens and cost accumulated so far.
    fn usage(&self) -> CostLedger;

    fn query_log(&self) -> &QueryLog;

    /// Persists any state worth keeping across runs, such as a response cache.
    fn flush(&self) -> Result<(), OracleError> {
        Ok(())
    }
}
