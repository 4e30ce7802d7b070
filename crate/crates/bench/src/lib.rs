//! Criterion benchmarks for `neurofail`; see `benches/`.
