//! Criterion benchmarks for `pillar-qed-core`; see `benches/`.
