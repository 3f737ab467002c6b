#include "attenc/encoder.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "attenc/random.hpp"

namespace attenc {

void AttEncConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string("encoder config: ") + name + " must be positive");
  };
  positive(input_channels, "input_channels");
  positive(window_length, "window_length");
  positive(conv1_width, "conv1_width");
  positive(conv1_channels, "conv1_channels");
  positive(conv2_width, "conv2_width");
  positive(model_dim, "model_dim");
  positive(heads, "heads");
  positive(stack, "stack");
  positive(ff_dim, "ff_dim");
  positive(embedding_dim, "embedding_dim");
  if (model_dim % heads != 0) {
    throw ConfigError("encoder config: heads (" + std::to_string(heads) + ") must divide model_dim (" +
                      std::to_string(model_dim) + ")");
  }
  // "same" padding needs an odd kernel
  if (conv1_width % 2 == 0 || conv2_width % 2 == 0) {
    throw ConfigError("encoder config: convolution widths must be odd");
  }
  if (!(layer_norm_epsilon > 0.0)) throw ConfigError("encoder config: layer_norm_epsilon must be positive");
}

namespace {

// Params is EncoderParams or const EncoderParams.
template <class Params, class Fn>
void for_each_parameter(Params& p, Fn&& fn) {
  fn("conv1.kernel", p.conv1.kernel);
  fn("conv1.bias", p.conv1.bias);
  fn("conv2.kernel", p.conv2.kernel);
  fn("conv2.bias", p.conv2.bias);
  fn("positions", p.positions.table);
  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    auto& blk = p.blocks[b];
    const std::string pre = "block" + std::to_string(b) + ".";
    for (std::size_t h = 0; h < blk.attention.heads(); ++h) {
      const std::string head = pre + "head" + std::to_string(h) + ".";
      fn(head + "query", blk.attention.query[h]);
      fn(head + "key", blk.attention.key[h]);
      fn(head + "value", blk.attention.value[h]);
    }
    fn(pre + "attention.output", blk.attention.output);
    fn(pre + "attention_norm.gain", blk.attention_norm.gain);
    fn(pre + "attention_norm.shift", blk.attention_norm.shift);
    fn(pre + "ff_expand.weight", blk.ff_expand.weight);
    fn(pre + "ff_expand.bias", blk.ff_expand.bias);
    fn(pre + "ff_contract.weight", blk.ff_contract.weight);
    fn(pre + "ff_contract.bias", blk.ff_contract.bias);
    fn(pre + "ff_norm.gain", blk.ff_norm.gain);
    fn(pre + "ff_norm.shift", blk.ff_norm.shift);
  }
  fn("embedding.weight", p.embedding.weight);
  fn("embedding.bias", p.embedding.bias);
  if (p.classifier) {
    fn("classifier.weight", p.classifier->weight);
    fn("classifier.bias", p.classifier->bias);
  }
}

Tensor glorot(Rng& rng, Shape shape, std::size_t fan_in, std::size_t fan_out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = rng.uniform(-limit, limit);
  return Tensor::parameter(std::move(shape), std::move(v));
}

Tensor constant_param(Shape shape, double value) {
  return Tensor::parameter(shape, std::vector<double>(shape_size(shape), value));
}

Conv1dParams make_conv(Rng& rng, std::size_t in, std::size_t out, std::size_t width) {
  Conv1dParams c;
  c.kernel = glorot(rng, {out, in, width}, in * width, out * width);
  c.bias = constant_param({out}, 0.0);
  c.stride = 1;
  c.padding = (width - 1) / 2;
  return c;
}

DenseParams make_dense(Rng& rng, std::size_t in, std::size_t out) {
  return {glorot(rng, {in, out}, in, out), constant_param({out}, 0.0)};
}

LayerNormParams make_norm(std::size_t d, double eps) {
  return {constant_param({d}, 1.0), constant_param({d}, 0.0), eps};
}

}  // namespace

std::vector<NamedTensor> named_parameters(const EncoderParams& p) {
  std::vector<NamedTensor> out;
  for_each_parameter(p, [&](const std::string& name, const Tensor& t) { out.push_back({name, t}); });
  return out;
}

std::vector<Tensor> parameters(const EncoderParams& p) {
  std::vector<Tensor> out;
  for_each_parameter(p, [&](const std::string&, const Tensor& t) { out.push_back(t); });
  return out;
}

EncoderParams init_encoder(const AttEncConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  EncoderParams p;
  p.config = config;
  const std::size_t m = config.model_dim, dk = config.head_width();
  p.conv1 = make_conv(rng, config.input_channels, config.conv1_channels, config.conv1_width);
  p.conv2 = make_conv(rng, config.conv1_channels, m, config.conv2_width);
  p.positions.table = glorot(rng, {config.window_length, m}, config.window_length, m);
  for (std::size_t b = 0; b < config.stack; ++b) {
    EncoderBlockParams blk;
    for (std::size_t h = 0; h < config.heads; ++h) {
      blk.attention.query.push_back(glorot(rng, {m, dk}, m, dk));
      blk.attention.key.push_back(glorot(rng, {m, dk}, m, dk));
      blk.attention.value.push_back(glorot(rng, {m, dk}, m, dk));
    }
    blk.attention.output = glorot(rng, {config.heads * dk, m}, config.heads * dk, m);
    blk.attention_norm = make_norm(m, config.layer_norm_epsilon);
    blk.ff_expand = make_dense(rng, m, config.ff_dim);
    blk.ff_contract = make_dense(rng, config.ff_dim, m);
    blk.ff_norm = make_norm(m, config.layer_norm_epsilon);
    p.blocks.push_back(std::move(blk));
  }
  p.embedding = make_dense(rng, m, config.embedding_dim);
  if (config.classes > 0) p.classifier = make_dense(rng, config.embedding_dim, config.classes);
  return p;
}

EncoderParams clone(const EncoderParams& p) {
  EncoderParams out = p;
  for_each_parameter(out, [](const std::string&, Tensor& t) { t = t.clone(); });
  return out;
}

void attach_classifier(EncoderParams& p, std::size_t classes, std::uint64_t seed) {
  if (classes == 0) throw ConfigError("attach_classifier: class count must be positive");
  Rng rng(seed);
  p.config.classes = classes;
  p.classifier = make_dense(rng, p.config.embedding_dim, classes);
}

Tensor encode(const Tensor& window, const EncoderParams& p) {
  const auto& cfg = p.config;
  if (window.rank() != 2 || window.shape()[0] != cfg.window_length || window.shape()[1] != cfg.input_channels) {
    throw ShapeError("encode: window " + shape_str(window.shape()) + " does not match configured [" +
                     std::to_string(cfg.window_length) + "x" + std::to_string(cfg.input_channels) + "]");
  }
  Tensor h = relu(conv1d(window, p.conv1));
  h = conv1d(h, p.conv2);
  h = add(h, positional_embed(h.rows(), p.positions));
  for (const auto& blk : p.blocks) {
    h = layer_norm(residual_add(h, multi_head(h, blk.attention)), blk.attention_norm);
    h = layer_norm(residual_add(h, feed_forward(h, blk.ff_expand, blk.ff_contract)), blk.ff_norm);
  }
  return dense(mean_rows(h), p.embedding);
}

Tensor encode_batch(std::span<const Tensor> windows, const EncoderParams& p) {
  std::vector<Tensor> rows;
  rows.reserve(windows.size());
  for (const auto& w : windows) rows.push_back(encode(w, p));
  return concat_rows(rows);
}

Tensor classifier_logits(const Tensor& window, const EncoderParams& p) {
  if (!p.classifier) throw ConfigError("classify: encoder has no classifier head");
  return dense(encode(window, p), *p.classifier);
}

Tensor classify(const Tensor& window, const EncoderParams& p) { return softmax_lastdim(classifier_logits(window, p)); }

std::size_t param_count(const EncoderParams& p) {
  std::size_t n = 0;
  for_each_parameter(p, [&](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

std::size_t param_count(const AttEncConfig& c) {
  c.validate();
  const std::size_t m = c.model_dim;
  const std::size_t conv = c.conv1_channels * c.input_channels * c.conv1_width + c.conv1_channels +
                           m * c.conv1_channels * c.conv2_width + m;
  const std::size_t positions = c.window_length * m;
  const std::size_t attention = 3 * c.heads * m * c.head_width() + c.heads * c.head_width() * m;
  const std::size_t norms = 2 * 2 * m;
  const std::size_t ff = m * c.ff_dim + c.ff_dim + c.ff_dim * m + m;
  const std::size_t block = attention + norms + ff;
  const std::size_t embedding = m * c.embedding_dim + c.embedding_dim;
  const std::size_t head = c.classes > 0 ? c.embedding_dim * c.classes + c.classes : 0;
  return conv + positions + c.stack * block + embedding + head;
}

std::size_t recurrent_cell_param_count(std::size_t width) { return 4 * (width * width + width * width + width); }

// --- checkpoint ------------------------------------------------------------

namespace {

constexpr const char* kCheckpointHeader = "attenc-checkpoint 1";

std::vector<std::pair<std::string, std::size_t*>> config_fields(AttEncConfig& c) {
  return {{"input_channels", &c.input_channels}, {"window_length", &c.window_length},
          {"conv1_width", &c.conv1_width},       {"conv1_channels", &c.conv1_channels},
          {"conv2_width", &c.conv2_width},       {"model_dim", &c.model_dim},
          {"heads", &c.heads},                   {"stack", &c.stack},
          {"ff_dim", &c.ff_dim},                 {"embedding_dim", &c.embedding_dim},
          {"classes", &c.classes}};
}

}  // namespace

void save_checkpoint(const std::string& path, const EncoderParams& p, const Metadata& metadata) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
  out << kCheckpointHeader << '\n';
  AttEncConfig cfg = p.config;
  for (auto& [key, field] : config_fields(cfg)) out << "config " << key << ' ' << *field << '\n';
  out << "config layer_norm_epsilon " << std::hexfloat << cfg.layer_norm_epsilon << std::defaultfloat << '\n';
  for (const auto& [key, value] : metadata) {
    if (key.find_first_of(" \n") != std::string::npos || value.find('\n') != std::string::npos) {
      throw std::invalid_argument("checkpoint: metadata key/value not storable: " + key);
    }
    out << "meta " << key << ' ' << value << '\n';
  }
  out << std::hexfloat;
  for (const auto& [name, t] : named_parameters(p)) {
    out << "param " << name << ' ' << t.rank();
    for (auto e : t.shape()) out << ' ' << e;
    out << '\n';
    const auto v = t.values();
    for (std::size_t i = 0; i < v.size(); ++i) out << (i ? " " : "") << v[i];
    out << '\n';
  }
  out << "end\n";
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != kCheckpointHeader) {
    throw std::runtime_error("checkpoint: " + path + " is not a checkpoint file");
  }
  AttEncConfig cfg;
  auto fields = config_fields(cfg);
  Metadata meta;
  std::map<std::string, std::pair<Shape, std::vector<double>>> arrays;
  bool ended = false;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "config") {
      std::string key, value;
      ls >> key >> value;
      if (key == "layer_norm_epsilon") {
        cfg.layer_norm_epsilon = std::strtod(value.c_str(), nullptr);
        continue;
      }
      bool found = false;
      for (auto& [name, field] : fields) {
        if (name == key) {
          *field = std::stoul(value);
          found = true;
        }
      }
      if (!found) throw std::runtime_error("checkpoint: unknown config key " + key);
    } else if (kind == "meta") {
      std::string key;
      ls >> key;
      std::string value;
      std::getline(ls >> std::ws, value);
      meta[key] = value;
    } else if (kind == "param") {
      std::string name;
      std::size_t rank = 0;
      ls >> name >> rank;
      Shape shape(rank);
      for (auto& e : shape) ls >> e;
      std::string values_line;
      if (!std::getline(in, values_line)) throw std::runtime_error("checkpoint: truncated at " + name);
      std::vector<double> values;
      values.reserve(shape_size(shape));
      const char* cur = values_line.c_str();
      char* next = nullptr;
      for (std::size_t i = 0; i < shape_size(shape); ++i) {
        values.push_back(std::strtod(cur, &next));
        if (next == cur) throw std::runtime_error("checkpoint: malformed values for " + name);
        cur = next;
      }
      arrays[name] = {std::move(shape), std::move(values)};
    } else if (kind == "end") {
      ended = true;
      break;
    } else if (!kind.empty()) {
      throw std::runtime_error("checkpoint: unexpected record '" + kind + "'");
    }
  }
  if (!ended) throw std::runtime_error("checkpoint: " + path + " is truncated");

  Checkpoint ck{init_encoder(cfg, 0), std::move(meta)};
  for (auto& [name, t] : named_parameters(ck.params)) {
    auto it = arrays.find(name);
    if (it == arrays.end()) throw std::runtime_error("checkpoint: missing array " + name);
    if (it->second.first != t.shape()) {
      throw std::runtime_error("checkpoint: array " + name + " has shape " + shape_str(it->second.first) +
                               ", config implies " + shape_str(t.shape()));
    }
    auto dst = t.mutable_values();
    std::copy(it->second.second.begin(), it->second.second.end(), dst.begin());
    arrays.erase(it);
  }
  if (!arrays.empty()) throw std::runtime_error("checkpoint: unexpected array " + arrays.begin()->first);
  return ck;
}

}  // namespace attenc
