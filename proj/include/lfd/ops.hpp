#pragma once

#include <cstddef>

#include "lfd/rng.hpp"
#include "lfd/tape.hpp"

namespace lfd::nn {

enum class Mode { train, eval };

/// Square-kernel convolution geometry shared by conv2d and its transpose.
struct ConvGeom {
  std::size_t kernel = 5;
  std::size_t stride = 2;
  std::size_t padding = 2;
  /// Extra rows/cols on the transposed output; must be < stride.
  std::size_t output_padding = 0;
};

/// floor((in + 2p - k) / s) + 1; throws if the kernel does not fit.
std::size_t conv_out_size(std::size_t in, const ConvGeom& g);
/// (in - 1) s - 2p + k + output_padding.
std::size_t deconv_out_size(std::size_t in, const ConvGeom& g);
/// Output padding that makes deconv(conv(in)) return to `in`.
std::size_t restoring_output_padding(std::size_t in, const ConvGeom& g);

// All ops take batched inputs: the first dimension is the batch.

/// x [B, in], w [out, in], b [out] -> [B, out]
template <typename T>
Var<T> dense(Var<T> x, Var<T> w, Var<T> b);

/// x [B, C, H, W], w [F, C, k, k], b [F] -> [B, F, Ho, Wo]
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, const ConvGeom& g);

/// Transposed convolution. x [B, C, H, W], w [C, F, k, k], b [F] -> [B, F, Ho, Wo]
template <typename T>
Var<T> deconv2d(Var<T> x, Var<T> w, Var<T> b, const ConvGeom& g);

template <typename T>
Var<T> leaky_relu(Var<T> x, T slope);

template <typename T>
Var<T> sigmoid(Var<T> x);

template <typename T>
Var<T> tanh(Var<T> x);

/// Inverted dropout: in train mode each element survives with probability
/// 1 - p and is scaled by 1 / (1 - p); in eval mode this is the identity.
template <typename T>
Var<T> dropout(Var<T> x, double p, Mode mode, Rng& rng);

template <typename T>
Var<T> reshape(Var<T> x, Shape shape);

template <typename T>
Var<T> add(Var<T> a, Var<T> b);

template <typename T>
Var<T> scale(Var<T> a, T s);

/// Mean of squared differences over all elements, shape [1].
template <typename T>
Var<T> mse(Var<T> pred, Var<T> target);

/// sum(a * b) over all elements, shape [1].
template <typename T>
Var<T> dot(Var<T> a, Var<T> b);

/// Fused LSTM cell. x [B, I], h [B, H], c [B, H], w [4H, I + H], b [4H].
/// Gate rows of w and b are ordered input, forget, candidate, output.
/// Returns [B, 2H] holding [h_next | c_next]; split with slice_cols.
template <typename T>
Var<T> lstm_cell(Var<T> x, Var<T> h, Var<T> c, Var<T> w, Var<T> b);

/// Columns [begin, end) of a 2-d tensor.
template <typename T>
Var<T> slice_cols(Var<T> x, std::size_t begin, std::size_t end);

}  // namespace lfd::nn
