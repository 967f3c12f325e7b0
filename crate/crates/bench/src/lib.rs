//! Criterion benchmarks for scenectx live in `benches/`.
