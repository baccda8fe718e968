//! Criterion benchmarks for the zsdc pipeline live in `benches/`.
