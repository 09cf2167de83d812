//! Criterion benchmarks for the `diffdp` engines; see `benches/dp.rs`.
//!
//! Run with `cargo bench -p diffdp-bench`.
