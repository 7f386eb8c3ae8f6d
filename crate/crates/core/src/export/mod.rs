//! Serializations of a finished hierarchy: OWL RDF/XML, DOT, statistics.

mod dot;
mod owl;
pub mod stats;

use thiserror::Error;

use crate::hierarchy::HierarchyError;

pub use self::dot::to_dot;
pub use self::owl::{class_iri, from_owl_rdfxml, named_edges, to_owl_rdfxml, DEFAULT_BASE_IRI};
pub use self::stats::CrawlStats;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExportError {
    /// The text cannot be represented in an XML document.
    #[error("{0:?} contains characters that cannot be written to XML")]
    Encoding(String),
    #[error("malformed OWL document: {0}")]
    Parse(String),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
}
