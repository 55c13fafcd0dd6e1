//! Criterion benchmarks for the convolution kernels, the 2-D DFT and a
//! desk-scale forward/backward pass. Run with `cargo bench -p fcnet-bench`.
