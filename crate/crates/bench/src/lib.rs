//! Criterion benchmarks for the gazefuse pipeline live in `benches/`.
