//! Criterion benchmarks for `concurrent-nmf`; see `benches/`.
