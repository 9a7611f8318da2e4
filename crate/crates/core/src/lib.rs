//! Knowledge graph embeddings over KGs augmented with lexicalised dependency
//! paths (LDPs), including learned LDP borrowing for entity pairs that never
//! co-occur in text.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dump;
pub mod engine;
pub mod kg;
pub mod ldp;
pub mod borrow;
pub mod eval;
pub mod pipeline;
pub mod synthetic;
