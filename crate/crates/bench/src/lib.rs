//! Criterion benchmarks for envfield; see `benches/`.
