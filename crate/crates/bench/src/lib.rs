//! Criterion benchmarks for the seqvid kernels, LSTM steps and training loop.
//! Run with `cargo bench -p seqvid-bench`.
