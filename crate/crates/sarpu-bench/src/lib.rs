//! Benchmark-only crate; see `benches/em.rs`.
