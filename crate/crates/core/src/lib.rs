//! Temporally constrained entity linking for historical documents.
//!
//! Mentions are read from IOB-tagged corpora ([`corpus`]), candidates are
//! retrieved from a Wikidata-derived entity store ([`kbstore`],
//! [`retrieval`]) and filtered by time and type plausibility, each sentence
//! is disambiguated jointly by replicator dynamics ([`dynamics`]), and a NIL
//! rule ([`nilpred`]) decides which mentions have no entity. [`evalrep`]
//! scores the result; [`pipeline`] ties the stages together.

pub mod corpus;
pub mod dynamics;
pub mod error;
pub mod evalrep;
pub mod ids;
pub mod kbstore;
pub mod nilpred;
pub mod pipeline;
pub mod retrieval;

pub use error::{Error, Result};
pub use ids::{Link, Qid};
