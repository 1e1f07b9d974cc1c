//! Local retrieval-augmented collaborator recommendation over PubMed
//! publication metadata.

pub mod config;
pub mod corpus;
pub mod embedding;
pub mod eval;
pub mod index;
pub mod pipeline;
pub mod rag;
pub mod recommend;
pub mod selftest;
pub mod storage;
