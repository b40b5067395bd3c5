//! Tensors, FFT, layer kernels and reverse-mode differentiation.

mod autodiff;
mod fft;
pub mod gradcheck;
mod layers;
mod tensor;

pub use autodiff::{describe, Gradients, ParamId, ParamSet, Tape, Var};
pub use fft::{bin_angular_frequency, fft_forward, fft_inverse, rfft_amplitude, Spectrum};
pub use layers::{
    conv1d, conv1d_backward, conv1d_forward, gelu, gelu_grad_scalar, gelu_scalar, gemm, normal_cdf,
    normal_pdf, q_function, softmax, softmax_slice, ConvGeometry,
};
pub use tensor::Tensor;
