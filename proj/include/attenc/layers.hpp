#pragma once

// Differentiable building blocks of the encoder. Inputs are [T x C] tensors,
// one row per time step.

#include <cstddef>
#include <vector>

#include "attenc/tensor.hpp"

namespace attenc {

struct Conv1dParams {
  Tensor kernel;  // [out x in x width]
  Tensor bias;    // [out]
  std::size_t stride = 1;
  std::size_t padding = 0;  // zero rows added on each side

  std::size_t out_channels() const { return kernel.shape()[0]; }
  std::size_t in_channels() const { return kernel.shape()[1]; }
  std::size_t width() const { return kernel.shape()[2]; }
  std::size_t output_length(std::size_t input_length) const;
};

/// Cross-correlation over time plus per-channel bias.
Tensor conv1d(const Tensor& x, const Conv1dParams& p);

struct PositionalEmbeddingTable {
  Tensor table;  // [max_len x model_dim]
};

/// Rows 0..length-1 of the table.
Tensor positional_embed(std::size_t length, const PositionalEmbeddingTable& tbl);

/// Scaled dot-product attention weights softmax(q k^T / sqrt(d_k)).
Tensor attention_weights(const Tensor& q, const Tensor& k);
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v);

struct MultiHeadParams {
  std::vector<Tensor> query;  // per head [model_dim x d_k]
  std::vector<Tensor> key;
  std::vector<Tensor> value;
  Tensor output;  // [(heads * d_k) x model_dim]

  std::size_t heads() const { return query.size(); }
  /// Throws ShapeError when the projections do not chain.
  void validate() const;
};

/// Self-attention: every head attends over x projected three ways.
Tensor multi_head(const Tensor& x, const MultiHeadParams& p);

struct LayerNormParams {
  Tensor gain;   // [model_dim]
  Tensor shift;  // [model_dim]
  double epsilon = 1e-5;
};

Tensor layer_norm(const Tensor& x, const LayerNormParams& p);

struct DenseParams {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]
};

/// x W + b. A rank-1 input is treated as one row and the result is rank-1.
Tensor dense(const Tensor& x, const DenseParams& p);

Tensor feed_forward(const Tensor& x, const DenseParams& expand, const DenseParams& contract);

Tensor residual_add(const Tensor& x, const Tensor& f_of_x);

}  // namespace attenc
