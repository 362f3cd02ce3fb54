#pragma once

#include <span>

#include "sar2rgb/nn/tensor.hpp"

// Differentiable primitives. Batched image tensors are rows of a matrix, one
// row per item, each row laid out channel-major (C, H, W). Token tensors are
// (batch * tokens) x width with the tokens of one item contiguous.
namespace sar2rgb::nn {

template <class T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
/// x * w + b with w stored (in, out) and b a 1 x out row.
template <class T> Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b);
template <class T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> scale(const Var<T>& a, T s);

template <class T> Var<T> silu(const Var<T>& x);
template <class T> Var<T> sigmoid(const Var<T>& x);
/// tanh approximation of GELU
template <class T> Var<T> gelu(const Var<T>& x);
template <class T> Var<T> relu(const Var<T>& x);

/// Row-wise layer norm without affine parameters.
template <class T> Var<T> layer_norm(const Var<T>& x, T eps = T(1e-6));

/// x * (1 + scale[b]) + shift[b], where row r of x belongs to item r / group.
template <class T>
Var<T> modulate(const Var<T>& x, const Var<T>& shift, const Var<T>& scale, int group);

/// x + gate[b] * y with the same grouping as modulate.
template <class T>
Var<T> gated_add(const Var<T>& x, const Var<T>& y, const Var<T>& gate, int group);

/// Full multi-head self-attention from a fused (B*N) x 3D projection laid
/// out [q | k | v], heads contiguous inside each third.
template <class T> Var<T> attention(const Var<T>& qkv, int batch, int tokens, int heads);

template <class T> Var<T> slice_cols(const Var<T>& x, Index start, Index count);
template <class T> Var<T> gather_rows(const Var<T>& table, std::span<const int> rows);
/// Adds a constant pattern to every block of pattern.rows() rows.
template <class T> Var<T> add_tiled_rows(const Var<T>& x, const Matrix<T>& pattern);

/// Patch vectors are ordered row-major over the p x p window with the
/// channel index fastest: element (py * p + px) * C + c.
template <class T>
Matrix<T> patchify_matrix(const Matrix<T>& x, int channels, int size, int patch);
template <class T>
Matrix<T> unpatchify_matrix(const Matrix<T>& tokens, int batch, int channels, int size, int patch);
template <class T> Var<T> patchify(const Var<T>& x, int channels, int size, int patch);
template <class T>
Var<T> unpatchify(const Var<T>& tokens, int batch, int channels, int size, int patch);

struct ConvGeometry {
  int in_channels = 0;
  int height = 0;
  int width = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 1;

  int out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
  int out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
};

/// w is out_channels x (in_channels * k * k), b is 1 x out_channels.
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, const ConvGeometry& g);
template <class T>
Var<T> upsample_nearest(const Var<T>& x, int channels, int height, int width, int factor);
template <class T> Var<T> global_avg_pool(const Var<T>& x, int channels, int height, int width);

/// mean + exp(logvar / 2) * eps
template <class T>
Var<T> reparameterize(const Var<T>& mean, const Var<T>& logvar, const Matrix<T>& eps);

}  // namespace sar2rgb::nn
