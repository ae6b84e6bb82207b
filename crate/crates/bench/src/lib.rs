//! Criterion benchmarks for the segmentation pipeline live in `benches/`.
