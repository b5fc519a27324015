//! Criterion benchmarks for the phaseprice pipeline; see `benches/`.
