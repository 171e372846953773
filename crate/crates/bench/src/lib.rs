//! Criterion benchmarks for the training kernels and protocol handlers live in `benches/`.
