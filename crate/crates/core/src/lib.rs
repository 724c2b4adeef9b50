//! Software-emulated FP8 microscaling toolkit.
//!
//! - [`fp8`]: bit-exact E4M3 / E5M2 / E8M0 codecs
//! - [`quant`]: per-tensor, per-group and two-level microscaled quantizers
//! - [`snr`]: empirical and closed-form quantization SNR
//! - [`optim`]: from-scratch Adam/AdamW and update-bound checks
//! - [`autoscale`]: predicted per-tensor weight scales with interval re-scaling
//! - [`gemm`]: reference quantized GEMM kernels with dequantization counters
//! - [`toytrain`]: a small MLP trained through the quantized forward path

pub mod autoscale;
pub mod error;
pub mod fp8;
pub mod gemm;
pub mod optim;
pub mod quant;
pub mod snr;
pub mod tensor;
pub mod tensor_file;
pub mod toytrain;

pub use error::{Error, Result};
pub use fp8::{E8m0Code, E8m0Rounding, Fp8Code, Fp8Format};
pub use quant::{PerGroupQuant, PerTensorQuant, QuantizedTensor, Scheme, TwoLevelQuant};
pub use tensor::{tensor_randn, Dist, Tensor};
pub use tensor_file::{tensor_read, tensor_write, DType, TensorFile};
