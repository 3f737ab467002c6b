#include "attenc/episodes.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

namespace attenc {

PoolIndex::PoolIndex(std::span<const WindowedSample> pool) : pool_(pool) {
  for (std::size_t i = 0; i < pool.size(); ++i) by_class_[pool[i].label].push_back(i);
}

Episode sample_episode(const PoolIndex& pool, std::size_t way, std::size_t shot, std::size_t query, Rng& rng) {
  if (way < 2 || shot == 0) throw std::invalid_argument("episode: need way >= 2 and shot >= 1");
  const auto& groups = pool.groups();
  std::vector<int> eligible;
  for (const auto& [label, idx] : groups) {
    if (idx.size() >= shot + query) eligible.push_back(label);
  }
  if (eligible.size() < way) {
    throw std::invalid_argument("episode: " + std::to_string(way) + "-way " + std::to_string(shot) + "-shot with " +
                                std::to_string(query) + " queries needs " + std::to_string(way) +
                                " classes holding " + std::to_string(shot + query) + " windows; pool has " +
                                std::to_string(eligible.size()) + " of " + std::to_string(groups.size()));
  }
  Episode ep;
  for (auto c : rng.choose(eligible.size(), way)) ep.class_ids.push_back(eligible[c]);
  for (int label : ep.class_ids) {
    const auto& idx = groups.at(label);
    const auto picks = rng.choose(idx.size(), shot + query);
    for (std::size_t j = 0; j < picks.size(); ++j) (j < shot ? ep.support : ep.query).push_back(idx[picks[j]]);
  }
  return ep;
}

Episode sample_episode(std::span<const WindowedSample> pool, std::size_t way, std::size_t shot, std::size_t query,
                       Rng& rng) {
  return sample_episode(PoolIndex(pool), way, shot, query, rng);
}

KnownUnknownSplit split_known_unknown(std::span<const WindowedSample> pool, std::size_t train_way, Rng& rng) {
  PoolIndex index(pool);
  const std::size_t total = index.classes();
  if (train_way == 0 || train_way + 1 >= total) {
    throw std::invalid_argument("known/unknown split: train-way " + std::to_string(train_way) +
                                " must leave at least two of " + std::to_string(total) + " classes unknown");
  }
  std::vector<int> labels;
  for (const auto& [label, idx] : index.groups()) labels.push_back(label);
  const auto picks = rng.choose(labels.size(), train_way);
  KnownUnknownSplit out;
  for (auto p : picks) out.train_classes.push_back(labels[p]);
  std::sort(out.train_classes.begin(), out.train_classes.end());
  for (int l : labels) {
    if (!std::binary_search(out.train_classes.begin(), out.train_classes.end(), l)) out.test_classes.push_back(l);
  }
  for (const auto& w : pool) {
    (std::binary_search(out.train_classes.begin(), out.train_classes.end(), w.label) ? out.train : out.test)
        .push_back(w);
  }
  return out;
}

void write_episode_manifest(const std::string& path, std::span<const Episode> episodes,
                            std::span<const WindowedSample> pool) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("manifest: cannot write " + path);
  out << "episode_id,role,class_id,offset\n";
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    for (auto i : episodes[e].support) out << e << ",support," << pool[i].label << ',' << pool[i].offset << '\n';
    for (auto i : episodes[e].query) out << e << ",query," << pool[i].label << ',' << pool[i].offset << '\n';
  }
}

}  // namespace attenc
