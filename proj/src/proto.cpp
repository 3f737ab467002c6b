#include "attenc/proto.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>

namespace attenc {

std::size_t PrototypeSet::row_of(int class_id) const {
  auto it = std::lower_bound(class_ids.begin(), class_ids.end(), class_id);
  if (it == class_ids.end() || *it != class_id) {
    throw std::out_of_range("prototypes: class " + std::to_string(class_id) + " has no prototype");
  }
  return static_cast<std::size_t>(it - class_ids.begin());
}

PrototypeSet compute_prototypes(const Tensor& embeddings, std::span<const int> labels) {
  if (embeddings.rank() != 2 || embeddings.rows() != labels.size()) {
    throw ShapeError("compute_prototypes: " + std::to_string(labels.size()) + " labels for embeddings " +
                     shape_str(embeddings.shape()));
  }
  std::map<int, std::size_t> counts;
  for (int l : labels) ++counts[l];
  if (counts.empty()) throw std::invalid_argument("compute_prototypes: empty support set");

  PrototypeSet out;
  for (const auto& [id, n] : counts) {
    out.class_ids.push_back(id);
    out.counts.push_back(n);
  }
  // averaging matrix A[N x n] with A[c][i] = 1/|S_c| when sample i is in c
  const std::size_t n_classes = out.class_ids.size(), n = labels.size();
  std::vector<double> avg(n_classes * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = out.row_of(labels[i]);
    avg[c * n + i] = 1.0 / static_cast<double>(out.counts[c]);
  }
  out.prototypes = matmul(Tensor::from({n_classes, n}, std::move(avg)), embeddings);
  return out;
}

PrototypeSet compute_prototypes(std::span<const Tensor> embeddings, std::span<const int> labels) {
  if (embeddings.empty()) throw std::invalid_argument("compute_prototypes: empty support set");
  return compute_prototypes(concat_rows(embeddings), labels);
}

Tensor prototype_logits(const Tensor& queries, const PrototypeSet& protos) {
  if (queries.cols() != protos.dim()) {
    throw ShapeError("prototypes: query width " + std::to_string(queries.cols()) + " vs prototype width " +
                     std::to_string(protos.dim()));
  }
  return scale(pairwise_sq_dist(queries, protos.prototypes), -1.0);
}

Tensor classify_query(const Tensor& query, const PrototypeSet& protos) {
  if (query.rank() != 1) throw ShapeError("classify_query: expected a rank-1 embedding, got " + shape_str(query.shape()));
  auto p = softmax_lastdim(prototype_logits(query, protos));
  return reshape(p, {p.size()});
}

std::vector<int> predict(const Tensor& queries, const PrototypeSet& protos) {
  auto d = pairwise_sq_dist(queries, protos.prototypes);
  const std::size_t n = protos.size();
  std::vector<int> out;
  out.reserve(d.rows());
  auto v = d.values();
  for (std::size_t i = 0; i < d.rows(); ++i) {
    const auto row = v.subspan(i * n, n);
    const auto best = std::min_element(row.begin(), row.end()) - row.begin();
    out.push_back(protos.class_ids[static_cast<std::size_t>(best)]);
  }
  return out;
}

Tensor episode_loss(const Tensor& queries, std::span<const int> labels, const PrototypeSet& protos) {
  if (queries.rows() != labels.size()) {
    throw ShapeError("episode_loss: " + std::to_string(labels.size()) + " labels for queries " +
                     shape_str(queries.shape()));
  }
  std::vector<std::size_t> rows;
  rows.reserve(labels.size());
  for (int l : labels) {
    try {
      rows.push_back(protos.row_of(l));
    } catch (const std::out_of_range&) {
      throw std::invalid_argument("episode_loss: query class " + std::to_string(l) + " is not in the support set");
    }
  }
  return cross_entropy(prototype_logits(queries, protos), rows);
}

void save_prototypes(const std::string& path, const PrototypeSet& protos) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("prototypes: cannot write " + path);
  out << "class_id";
  for (std::size_t j = 0; j < protos.dim(); ++j) out << ",e" << j;
  out << '\n' << std::setprecision(17);
  for (std::size_t i = 0; i < protos.size(); ++i) {
    out << protos.class_ids[i];
    for (std::size_t j = 0; j < protos.dim(); ++j) out << ',' << protos.prototypes.at(i, j);
    out << '\n';
  }
}

PrototypeSet load_prototypes(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("prototypes: cannot open " + path);
  std::string line;
  std::getline(in, line);
  const auto dim = static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
  if (line.rfind("class_id", 0) != 0 || dim == 0) throw std::runtime_error("prototypes: bad header in " + path);

  std::map<int, std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::getline(ls, cell, ',');
    const int id = std::stoi(cell);
    std::vector<double> row;
    while (std::getline(ls, cell, ',')) row.push_back(std::stod(cell));
    if (row.size() != dim) throw std::runtime_error("prototypes: row for class " + cell + " has wrong width");
    if (!rows.emplace(id, std::move(row)).second) {
      throw std::runtime_error("prototypes: duplicate class " + std::to_string(id));
    }
  }
  if (rows.empty()) throw std::runtime_error("prototypes: " + path + " is empty");
  PrototypeSet out;
  std::vector<double> flat;
  for (auto& [id, row] : rows) {
    out.class_ids.push_back(id);
    out.counts.push_back(1);
    flat.insert(flat.end(), row.begin(), row.end());
  }
  out.prototypes = Tensor::from({rows.size(), dim}, std::move(flat));
  return out;
}

}  // namespace attenc
