//! Entropy coding: range coder, probability models, latent and hyper
//! coding, and the bitstream container.

mod bitstream;
mod latent;
mod model;
mod rangecoder;

pub use bitstream::{framing_bytes, Bitstream, StreamHeader, STREAM_MAGIC, STREAM_VERSION};
pub use latent::{
    context_pred, decode_hyper, decode_latent, encode_hyper, encode_latent, estimate_hyper_bits,
    estimate_latent_bits, estimate_rate, open_loop_mean, quantize_residual, RateEstimate, HYPER_CODE_MAX,
};
pub use model::{escape_bits, gaussian_bin_prob, FreqTable, ALPHABET, HYPER_LAPLACE_SCALE, PROB_FLOOR, SYMBOL_MAX};
pub use rangecoder::{RangeDecoder, RangeEncoder, MAX_TOTAL};
