//! Criterion benchmarks for the event-driven runtime; see `benches/`.
