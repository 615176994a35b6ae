//! Criterion benchmarks for `fdia-core`; see `benches/`.
