#pragma once

// Attention-based encoder: two 1-D convolutions, learned positional rows,
// a stack of post-norm attention/feed-forward blocks, mean pooling over time
// and a dense projection to the embedding. An optional dense head turns the
// embedding into class logits.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "attenc/layers.hpp"
#include "attenc/tensor.hpp"

namespace attenc {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct AttEncConfig {
  std::size_t input_channels = 6;  // per-time-step features
  std::size_t window_length = 30;  // time steps
  std::size_t conv1_width = 3;
  std::size_t conv1_channels = 32;
  std::size_t conv2_width = 3;  // conv2 emits model_dim channels
  std::size_t model_dim = 64;
  std::size_t heads = 16;
  std::size_t stack = 1;
  std::size_t ff_dim = 128;
  std::size_t embedding_dim = 64;
  std::size_t classes = 0;  // 0: no classifier head
  double layer_norm_epsilon = 1e-5;

  std::size_t head_width() const { return model_dim / heads; }
  void validate() const;
};

struct EncoderBlockParams {
  MultiHeadParams attention;
  LayerNormParams attention_norm;
  DenseParams ff_expand;
  DenseParams ff_contract;
  LayerNormParams ff_norm;
};

struct EncoderParams {
  AttEncConfig config;
  Conv1dParams conv1;
  Conv1dParams conv2;
  PositionalEmbeddingTable positions;
  std::vector<EncoderBlockParams> blocks;
  DenseParams embedding;
  std::optional<DenseParams> classifier;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Every learnable array exactly once, in a fixed order.
std::vector<NamedTensor> named_parameters(const EncoderParams& p);
std::vector<Tensor> parameters(const EncoderParams& p);

/// Glorot-uniform weights, zero biases, unit layer-norm gains.
EncoderParams init_encoder(const AttEncConfig& config, std::uint64_t seed);

/// Independent copy; training on it leaves the source untouched.
EncoderParams clone(const EncoderParams& p);

/// Adds or replaces the classifier head (Glorot-uniform, zero bias).
void attach_classifier(EncoderParams& p, std::size_t classes, std::uint64_t seed);

/// [T x D] window to a rank-1 [M] embedding.
Tensor encode(const Tensor& window, const EncoderParams& p);
/// Rows are embeddings of each window, [n x M].
Tensor encode_batch(std::span<const Tensor> windows, const EncoderParams& p);

/// Rank-1 [classes] pre-softmax scores.
Tensor classifier_logits(const Tensor& window, const EncoderParams& p);
Tensor classify(const Tensor& window, const EncoderParams& p);

std::size_t param_count(const EncoderParams& p);
/// Closed form from the configuration alone.
std::size_t param_count(const AttEncConfig& config);

/// Parameters of one gated recurrent layer with input and hidden width
/// `width` (four gates, each with input, recurrent and bias terms).
std::size_t recurrent_cell_param_count(std::size_t width);

using Metadata = std::map<std::string, std::string>;

struct Checkpoint {
  EncoderParams params;
  Metadata metadata;
};

// Text container: a header line, one `config <key> <value>` line per field,
// `meta <key> <value>` lines, then per array `param <name> <rank> <dims...>`
// followed by a line of hexfloat values. Round trips bit-exactly.
void save_checkpoint(const std::string& path, const EncoderParams& p, const Metadata& metadata = {});
Checkpoint load_checkpoint(const std::string& path);

}  // namespace attenc
