//! Core of a natural-language question service over GTFS Static feeds.
//!
//! Everything here is `no_std` + `alloc`: the feed model and its
//! preprocessing, the cache byte format, prompt assembly, few-shot
//! selection, the query pipeline state machine and benchmark grading.
//! File, network and process IO live in the `transit-ask` crate.

#![cfg_attr(not(any(test, feature = "std")), no_std)]

extern crate alloc;

pub mod bench;
pub mod cache;
pub mod exec;
pub mod feed;
pub mod fewshot;
pub mod geo;
pub mod llm;
pub mod pipeline;
pub mod preprocess;
pub mod prompt;
pub mod schema;
pub mod table;
pub mod time;

pub use feed::{sample_rows, DistUnits, Feed, FeedMeta, RawFeed};
pub use preprocess::{preprocess, PrepareOptions, PreprocessError};
pub use table::{RawTable, SemanticType, TypedTable};
