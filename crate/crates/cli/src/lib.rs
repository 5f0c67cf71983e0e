//! Std side of `transit-ask`: GTFS files and caches on disk, vendor LLM
//! clients, the sandbox socket client, the HTTP/SSE service and benchmark
//! file handling. The logic itself lives in `transit-ask-core`.

pub mod bench_io;
pub mod config;
pub mod feed_io;
pub mod providers;
pub mod sandbox;
pub mod server;
