//! Fixed-point weight-sharing convolution: reference kernels, the
//! parallel-accumulate shared-MAC datapath, a cycle model and a gate-count
//! model.

pub mod accelsim;
pub mod cli;
pub mod codebook;
pub mod convref;
pub mod costmodel;
pub mod fxp;
pub mod pas;
pub mod tensor;
pub mod workload;
