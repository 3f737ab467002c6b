#pragma once

// Prototypical-network head: class prototypes are mean support embeddings,
// and a query is scored by a softmax over negative squared Euclidean
// distances to the prototypes.

#include <cstddef>
#include <string>
#include <vector>

#include "attenc/tensor.hpp"

namespace attenc {

struct PrototypeSet {
  std::vector<int> class_ids;        // ascending
  Tensor prototypes;                 // [N x M], row i belongs to class_ids[i]
  std::vector<std::size_t> counts;   // support embeddings per class

  std::size_t size() const { return class_ids.size(); }
  std::size_t dim() const { return prototypes.cols(); }
  /// Row of a class id, or throws std::out_of_range.
  std::size_t row_of(int class_id) const;
};

/// Mean support embedding per class. `embeddings` is [n x M] (rows aligned
/// with labels); the result stays differentiable with respect to it.
PrototypeSet compute_prototypes(const Tensor& embeddings, std::span<const int> labels);
PrototypeSet compute_prototypes(std::span<const Tensor> embeddings, std::span<const int> labels);

/// Rank-1 [N] class probabilities for one query embedding.
Tensor classify_query(const Tensor& query, const PrototypeSet& protos);

/// [Q x N] negative squared distances, usable as logits.
Tensor prototype_logits(const Tensor& queries, const PrototypeSet& protos);

/// Class id of the nearest prototype for every row of `queries`.
std::vector<int> predict(const Tensor& queries, const PrototypeSet& protos);

/// Mean negative log-probability of each query's true class.
Tensor episode_loss(const Tensor& queries, std::span<const int> labels, const PrototypeSet& protos);

// Registry CSV: header `class_id,e0,...,e{M-1}`, one prototype per row.
void save_prototypes(const std::string& path, const PrototypeSet& protos);
PrototypeSet load_prototypes(const std::string& path);

}  // namespace attenc
