//! Criterion benchmarks for sift-core; see `benches/`.
