#pragma once

// N-way K-shot episodes over a pool of labelled windows. Episodes refer to
// windows by their index in the pool.

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "attenc/data.hpp"
#include "attenc/random.hpp"

namespace attenc {

struct Episode {
  std::vector<int> class_ids;        // in draw order
  std::vector<std::size_t> support;  // K per class, grouped by class
  std::vector<std::size_t> query;    // Q per class, grouped by class
};

/// Pool indices grouped by label, for repeated sampling.
class PoolIndex {
 public:
  explicit PoolIndex(std::span<const WindowedSample> pool);

  std::size_t classes() const { return by_class_.size(); }
  const std::map<int, std::vector<std::size_t>>& groups() const { return by_class_; }
  std::span<const WindowedSample> pool() const { return pool_; }

 private:
  std::span<const WindowedSample> pool_;
  std::map<int, std::vector<std::size_t>> by_class_;
};

/// Classes uniformly without replacement, then K+Q windows per class
/// uniformly without replacement; the first K are support.
Episode sample_episode(const PoolIndex& pool, std::size_t way, std::size_t shot, std::size_t query, Rng& rng);
Episode sample_episode(std::span<const WindowedSample> pool, std::size_t way, std::size_t shot, std::size_t query,
                       Rng& rng);

class EpisodeSampler {
 public:
  EpisodeSampler(std::span<const WindowedSample> pool, std::uint64_t seed) : index_(pool), rng_(seed) {}
  Episode sample(std::size_t way, std::size_t shot, std::size_t query) {
    return sample_episode(index_, way, shot, query, rng_);
  }
  const PoolIndex& index() const { return index_; }

 private:
  PoolIndex index_;
  Rng rng_;
};

struct KnownUnknownSplit {
  std::vector<WindowedSample> train;  // every window of the known classes
  std::vector<WindowedSample> test;   // every window of the remaining classes
  std::vector<int> train_classes;
  std::vector<int> test_classes;
};

/// Picks `train_way` classes at random for training; the rest are unknown.
KnownUnknownSplit split_known_unknown(std::span<const WindowedSample> pool, std::size_t train_way, Rng& rng);

/// CSV rows: episode_id,role,class_id,offset
void write_episode_manifest(const std::string& path, std::span<const Episode> episodes,
                            std::span<const WindowedSample> pool);

}  // namespace attenc
