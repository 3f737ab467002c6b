#include "attenc/layers.hpp"

#include <cmath>
#include <memory>
#include <string>

namespace attenc {

std::size_t Conv1dParams::output_length(std::size_t input_length) const {
  const std::size_t padded = input_length + 2 * padding;
  if (width() > padded) {
    throw ShapeError("conv1d: kernel width " + std::to_string(width()) + " exceeds padded length " +
                     std::to_string(padded));
  }
  return (padded - width()) / stride + 1;
}

Tensor conv1d(const Tensor& x, const Conv1dParams& p) {
  if (p.kernel.rank() != 3 || p.bias.size() != p.out_channels() || p.stride == 0) {
    throw ShapeError("conv1d: malformed parameters, kernel " + shape_str(p.kernel.shape()) + ", bias " +
                     shape_str(p.bias.shape()));
  }
  if (x.rank() != 2 || x.cols() != p.in_channels()) {
    throw ShapeError("conv1d: input " + shape_str(x.shape()) + " does not have " +
                     std::to_string(p.in_channels()) + " channels");
  }
  const std::size_t len = x.rows(), cin = p.in_channels(), cout = p.out_channels(), width = p.width();
  const std::size_t out_len = p.output_length(len);
  const std::size_t stride = p.stride, pad = p.padding;

  // kernel reordered to [width][in][out] so the innermost loop is contiguous
  auto kt = std::make_shared<std::vector<double>>(width * cin * cout);
  auto kv = p.kernel.values();
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t c = 0; c < cin; ++c)
      for (std::size_t w = 0; w < width; ++w) (*kt)[(w * cin + c) * cout + o] = kv[(o * cin + c) * width + w];

  auto xv = x.values();
  auto bv = p.bias.values();
  std::vector<double> out(out_len * cout);
  for (std::size_t t = 0; t < out_len; ++t) {
    double* row = out.data() + t * cout;
    for (std::size_t o = 0; o < cout; ++o) row[o] = bv[o];
    for (std::size_t w = 0; w < width; ++w) {
      const std::size_t pos = t * stride + w;
      if (pos < pad || pos - pad >= len) continue;
      const double* xr = xv.data() + (pos - pad) * cin;
      for (std::size_t c = 0; c < cin; ++c) {
        const double xc = xr[c];
        const double* k = kt->data() + (w * cin + c) * cout;
        for (std::size_t o = 0; o < cout; ++o) row[o] += xc * k[o];
      }
    }
  }

  return make_op({out_len, cout}, std::move(out), "conv1d", {x, p.kernel, p.bias},
                 [x, kt, len, cin, cout, width, out_len, stride, pad](std::span<const double> g,
                                                                      std::span<const std::span<double>> in) {
                   auto xv = x.values();
                   auto dx = in[0];
                   auto dk = in[1];
                   auto db = in[2];
                   for (std::size_t t = 0; t < out_len; ++t) {
                     const double* gr = g.data() + t * cout;
                     if (!db.empty())
                       for (std::size_t o = 0; o < cout; ++o) db[o] += gr[o];
                     for (std::size_t w = 0; w < width; ++w) {
                       const std::size_t pos = t * stride + w;
                       if (pos < pad || pos - pad >= len) continue;
                       const std::size_t src = pos - pad;
                       for (std::size_t c = 0; c < cin; ++c) {
                         if (!dk.empty()) {
                           const double xc = xv[src * cin + c];
                           for (std::size_t o = 0; o < cout; ++o) dk[(o * cin + c) * width + w] += gr[o] * xc;
                         }
                         if (!dx.empty()) {
                           const double* k = kt->data() + (w * cin + c) * cout;
                           double s = 0.0;
                           for (std::size_t o = 0; o < cout; ++o) s += gr[o] * k[o];
                           dx[src * cin + c] += s;
                         }
                       }
                     }
                   }
                 });
}

Tensor positional_embed(std::size_t length, const PositionalEmbeddingTable& tbl) {
  if (length > tbl.table.rows()) {
    throw ShapeError("positional_embed: length " + std::to_string(length) + " exceeds table of " +
                     std::to_string(tbl.table.rows()) + " positions");
  }
  return slice_rows(tbl.table, 0, length);
}

Tensor attention_weights(const Tensor& q, const Tensor& k) {
  if (q.rank() != 2 || k.rank() != 2 || q.cols() != k.cols()) {
    throw ShapeError("attention: query " + shape_str(q.shape()) + " and key " + shape_str(k.shape()) +
                     " widths differ");
  }
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  return softmax_lastdim(scale(matmul(q, transpose(k)), inv_sqrt_dk));
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (v.rank() != 2 || k.rows() != v.rows()) {
    throw ShapeError("attention: key " + shape_str(k.shape()) + " and value " + shape_str(v.shape()) +
                     " lengths differ");
  }
  return matmul(attention_weights(q, k), v);
}

void MultiHeadParams::validate() const {
  const std::size_t h = heads();
  if (h == 0 || key.size() != h || value.size() != h) {
    throw ShapeError("multi_head: projection counts differ across query/key/value");
  }
  const std::size_t model = query[0].shape()[0];
  std::size_t concat = 0;
  for (std::size_t i = 0; i < h; ++i) {
    for (const Tensor* w : {&query[i], &key[i], &value[i]}) {
      if (w->rank() != 2 || w->shape()[0] != model) {
        throw ShapeError("multi_head: head " + std::to_string(i) + " projection " + shape_str(w->shape()) +
                         " does not read model width " + std::to_string(model));
      }
    }
    if (key[i].shape()[1] != query[i].shape()[1]) {
      throw ShapeError("multi_head: head " + std::to_string(i) + " query/key widths differ");
    }
    concat += value[i].shape()[1];
  }
  if (output.rank() != 2 || output.shape()[0] != concat) {
    throw ShapeError("multi_head: output projection " + shape_str(output.shape()) + " does not accept " +
                     std::to_string(concat) + " concatenated features");
  }
}

Tensor multi_head(const Tensor& x, const MultiHeadParams& p) {
  p.validate();
  std::vector<Tensor> heads;
  heads.reserve(p.heads());
  for (std::size_t i = 0; i < p.heads(); ++i) {
    heads.push_back(attention(matmul(x, p.query[i]), matmul(x, p.key[i]), matmul(x, p.value[i])));
  }
  return matmul(concat_lastdim(heads), p.output);
}

Tensor layer_norm(const Tensor& x, const LayerNormParams& p) {
  const std::size_t rows = x.rows(), d = x.cols();
  if (p.gain.size() != d || p.shift.size() != d) {
    throw ShapeError("layer_norm: parameters of width " + std::to_string(p.gain.size()) + " for input " +
                     shape_str(x.shape()));
  }
  if (!(p.epsilon > 0.0)) throw std::invalid_argument("layer_norm: epsilon must be positive");

  auto xv = x.values();
  auto gv = p.gain.values();
  auto sv = p.shift.values();
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + p.epsilon);
    (*inv_std)[r] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * inv;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = gv[j] * h + sv[j];
    }
  }

  Tensor gain = p.gain;
  return make_op(x.shape(), std::move(out), "layer_norm", {x, p.gain, p.shift},
                 [gain, xhat, inv_std, rows, d](std::span<const double> g, std::span<const std::span<double>> in) {
                   auto gv = gain.values();
                   const auto& h = *xhat;
                   std::vector<double> dh(d);
                   for (std::size_t r = 0; r < rows; ++r) {
                     const double* gr = g.data() + r * d;
                     const double* hr = h.data() + r * d;
                     if (!in[1].empty())
                       for (std::size_t j = 0; j < d; ++j) in[1][j] += gr[j] * hr[j];
                     if (!in[2].empty())
                       for (std::size_t j = 0; j < d; ++j) in[2][j] += gr[j];
                     if (in[0].empty()) continue;
                     double mean_dh = 0.0, mean_dh_h = 0.0;
                     for (std::size_t j = 0; j < d; ++j) {
                       dh[j] = gr[j] * gv[j];
                       mean_dh += dh[j];
                       mean_dh_h += dh[j] * hr[j];
                     }
                     mean_dh /= static_cast<double>(d);
                     mean_dh_h /= static_cast<double>(d);
                     const double inv = (*inv_std)[r];
                     for (std::size_t j = 0; j < d; ++j)
                       in[0][r * d + j] += inv * (dh[j] - mean_dh - hr[j] * mean_dh_h);
                   }
                 });
}

Tensor dense(const Tensor& x, const DenseParams& p) {
  if (p.weight.rank() != 2 || p.bias.size() != p.weight.shape()[1]) {
    throw ShapeError("dense: weight " + shape_str(p.weight.shape()) + " and bias " + shape_str(p.bias.shape()) +
                     " disagree");
  }
  if (x.rank() == 1) {
    auto y = add(matmul(reshape(x, {1, x.size()}), p.weight), p.bias);
    return reshape(y, {y.size()});
  }
  return add(matmul(x, p.weight), p.bias);
}

Tensor feed_forward(const Tensor& x, const DenseParams& expand, const DenseParams& contract) {
  if (expand.weight.rank() != 2 || contract.weight.rank() != 2 ||
      expand.weight.shape()[1] != contract.weight.shape()[0] || contract.weight.shape()[1] != x.cols()) {
    throw ShapeError("feed_forward: " + shape_str(expand.weight.shape()) + " then " +
                     shape_str(contract.weight.shape()) + " does not map width " + std::to_string(x.cols()) +
                     " back to itself");
  }
  return dense(relu(dense(x, expand)), contract);
}

Tensor residual_add(const Tensor& x, const Tensor& f_of_x) {
  if (x.shape() != f_of_x.shape()) {
    throw ShapeError("residual_add: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(f_of_x.shape()));
  }
  return add(x, f_of_x);
}

}  // namespace attenc
