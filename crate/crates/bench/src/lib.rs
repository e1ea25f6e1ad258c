//! Criterion benchmarks for the selectors and the loss gradient live under `benches/`.
