#include "attenc/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "attenc/episodes.hpp"
#include "attenc/proto.hpp"
#include "attenc/random.hpp"

namespace attenc {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void zero_grads(std::span<Tensor> params) {
  for (auto& p : params) p.zero_grad();
}

void require_finite_loss(double loss, const char* where) {
  if (!std::isfinite(loss)) throw NumericError(std::string(where) + ": loss became non-finite");
}

std::pair<double, double> mean_std(std::span<const double> xs) {
  if (xs.empty()) return {0.0, 0.0};
  const double n = static_cast<double>(xs.size());
  const double mu = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  if (xs.size() < 2) return {mu, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - mu) * (x - mu);
  return {mu, std::sqrt(ss / (n - 1.0))};
}

std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

}  // namespace

// --- Adam --------------------------------------------------------------------

AdamState make_adam(std::span<const Tensor> params, const AdamOptions& options) {
  AdamState s;
  s.options = options;
  for (const auto& p : params) {
    s.m.emplace_back(p.size(), 0.0);
    s.v.emplace_back(p.size(), 0.0);
  }
  return s;
}

void adam_step(std::span<const Tensor> params, std::span<const std::span<const double>> grads, AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " parameters, " + std::to_string(grads.size()) +
                     " gradients, state for " + std::to_string(state.m.size()));
  }
  const auto& o = state.options;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i];
    auto theta = p.mutable_values();
    auto g = grads[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != theta.size() || (!g.empty() && g.size() != theta.size())) {
      throw ShapeError("adam_step: parameter " + std::to_string(i) + " " + shape_str(p.shape()) +
                       " does not match its gradient or moments");
    }
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const double gj = g.empty() ? 0.0 : g[j];
      m[j] = o.beta1 * m[j] + (1.0 - o.beta1) * gj;
      v[j] = o.beta2 * v[j] + (1.0 - o.beta2) * gj * gj;
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      theta[j] -= o.lr * m_hat / (std::sqrt(v_hat) + o.epsilon);
    }
  }
}

void adam_step(std::span<const Tensor> params, AdamState& state) {
  std::vector<std::span<const double>> grads;
  grads.reserve(params.size());
  for (const auto& p : params) grads.push_back(p.grad());
  adam_step(params, grads, state);
}

// --- reports -------------------------------------------------------------------

std::string format_accuracy(double mean, double std) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f(%.2f)", 100.0 * mean, 100.0 * std);
  return buf;
}

void write_report(std::ostream& out, const TrainReport& report) {
  char buf[128];
  out << "epoch,loss,accuracy\n";
  for (const auto& e : report.epochs) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", e.epoch, e.loss, e.accuracy);
    out << buf;
  }
  out << "# summary param_count=" << report.param_count;
  if (report.test_accuracy) {
    std::snprintf(buf, sizeof buf, "%.17g", *report.test_accuracy);
    out << " test_accuracy=" << buf;
  }
  if (!report.fold_accuracies.empty()) {
    out << " folds=" << report.fold_accuracies.size() << " cv=" << format_accuracy(report.mean_accuracy, report.std_accuracy)
        << " fold_accuracies=";
    for (std::size_t i = 0; i < report.fold_accuracies.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%s%.17g", i ? ";" : "", report.fold_accuracies[i]);
      out << buf;
    }
  }
  out << '\n';
}

// --- Stage 1 ---------------------------------------------------------------------

double classification_accuracy(const EncoderParams& params, std::span<const WindowedSample> windows) {
  if (windows.empty()) return 0.0;
  NoGradGuard no_grad;
  std::size_t correct = 0;
  for (const auto& w : windows) {
    const auto logits = classifier_logits(w.matrix, params);
    if (static_cast<int>(argmax(logits.values())) == w.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(windows.size());
}

TrainResult train_classifier(std::span<const WindowedSample> train, std::size_t classes, const AttEncConfig& encoder,
                             const ClassifierConfig& cfg, std::uint64_t seed, std::span<const WindowedSample> test) {
  if (train.empty()) throw DataError("train_classifier: empty training set");
  if (classes == 0) throw ConfigError("train_classifier: class count must be positive");
  if (cfg.batch == 0) throw ConfigError("train_classifier: batch size must be positive");
  for (const auto& w : train) {
    if (w.label < 0 || static_cast<std::size_t>(w.label) >= classes) {
      throw DataError("train_classifier: label " + std::to_string(w.label) + " outside " + std::to_string(classes) +
                      " classes");
    }
  }
  const auto t0 = Clock::now();
  Rng rng(seed);
  AttEncConfig enc = encoder;
  enc.classes = classes;
  TrainResult result{init_encoder(enc, rng.next()), {}};
  auto params = parameters(result.params);
  auto adam = make_adam(params, cfg.adam);

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<Tensor> rows;
  std::vector<std::size_t> labels;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t correct = 0, batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t end = std::min(order.size(), start + cfg.batch);
      rows.clear();
      labels.clear();
      for (std::size_t i = start; i < end; ++i) {
        const auto& w = train[order[i]];
        rows.push_back(classifier_logits(w.matrix, result.params));
        labels.push_back(static_cast<std::size_t>(w.label));
        if (argmax(rows.back().values()) == labels.back()) ++correct;
      }
      const Tensor loss = cross_entropy(concat_rows(rows), labels);
      require_finite_loss(loss.item(), "train_classifier");
      loss_sum += loss.item() * static_cast<double>(end - start);
      ++batches;
      backward(loss);
      adam_step(params, adam);
      zero_grads(params);
    }
    result.report.epochs.push_back({epoch, loss_sum / static_cast<double>(train.size()),
                                    static_cast<double>(correct) / static_cast<double>(train.size()), batches});
  }
  result.report.phase_seconds.emplace_back("train", seconds_since(t0));
  result.report.param_count = param_count(result.params);
  if (!test.empty()) {
    const auto t1 = Clock::now();
    result.report.test_accuracy = classification_accuracy(result.params, test);
    result.report.mean_accuracy = *result.report.test_accuracy;
    result.report.phase_seconds.emplace_back("test", seconds_since(t1));
  }
  return result;
}

TrainReport cross_validate(std::span<const WindowedSample> windows, std::size_t classes, const AttEncConfig& encoder,
                           const ClassifierConfig& cfg, std::size_t k, std::uint64_t seed, bool refit_minmax) {
  Rng rng(seed);
  const auto folds = kfold(windows, k, rng.next());
  TrainReport report;
  for (std::size_t f = 0; f < k; ++f) {
    std::vector<std::size_t> train_idx;
    for (std::size_t g = 0; g < k; ++g) {
      if (g != f) train_idx.insert(train_idx.end(), folds[g].begin(), folds[g].end());
    }
    std::sort(train_idx.begin(), train_idx.end());
    auto train = select(windows, train_idx);
    auto test = select(windows, folds[f]);
    if (refit_minmax) {
      const auto stats = fit_minmax(std::span<const WindowedSample>(train));
      train = apply_minmax(train, stats);
      test = apply_minmax(test, stats);
    }
    auto fold = train_classifier(train, classes, encoder, cfg, rng.next(), test);
    report.fold_accuracies.push_back(*fold.report.test_accuracy);
    report.param_count = fold.report.param_count;
    for (auto& [phase, s] : fold.report.phase_seconds) {
      report.phase_seconds.emplace_back("fold" + std::to_string(f) + "." + phase, s);
    }
  }
  std::tie(report.mean_accuracy, report.std_accuracy) = mean_std(report.fold_accuracies);
  return report;
}

// --- Stage 2 -----------------------------------------------------------------------

namespace {

std::vector<Tensor> matrices(std::span<const WindowedSample> pool, std::span<const std::size_t> idx) {
  std::vector<Tensor> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(pool[i].matrix);
  return out;
}

std::vector<int> labels_of(std::span<const WindowedSample> pool, std::span<const std::size_t> idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(pool[i].label);
  return out;
}

}  // namespace

TrainResult train_protonet(std::span<const WindowedSample> pool, const AttEncConfig& encoder, const ProtoConfig& cfg,
                           std::uint64_t seed) {
  AttEncConfig enc = encoder;
  enc.classes = 0;
  Rng rng(seed);
  const auto init_seed = rng.next();
  return train_protonet(pool, init_encoder(enc, init_seed), cfg, rng.next());
}

TrainResult train_protonet(std::span<const WindowedSample> pool, const EncoderParams& start, const ProtoConfig& cfg,
                           std::uint64_t seed) {
  if (pool.empty()) throw DataError("train_protonet: empty pool");
  const auto t0 = Clock::now();
  TrainResult result{clone(start), {}};
  auto params = parameters(result.params);
  auto adam = make_adam(params, cfg.adam);
  EpisodeSampler sampler(pool, seed);
  // fail early on an unusable pool, before any training
  if (cfg.epochs > 0 && cfg.episodes_per_epoch > 0) {
    Rng probe(seed);
    (void)sample_episode(sampler.index(), cfg.way, cfg.shot, cfg.query, probe);
  }

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t correct = 0, total = 0;
    for (std::size_t e = 0; e < cfg.episodes_per_epoch; ++e) {
      const auto ep = sampler.sample(cfg.way, cfg.shot, cfg.query);
      const auto support = encode_batch(matrices(pool, ep.support), result.params);
      const auto queries = encode_batch(matrices(pool, ep.query), result.params);
      const auto support_labels = labels_of(pool, ep.support);
      const auto query_labels = labels_of(pool, ep.query);
      const auto protos = compute_prototypes(support, support_labels);
      const Tensor loss = episode_loss(queries, query_labels, protos);
      require_finite_loss(loss.item(), "train_protonet");
      loss_sum += loss.item();
      const auto pred = predict(queries, protos);
      for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == query_labels[i];
      total += pred.size();
      backward(loss);
      adam_step(params, adam);
      zero_grads(params);
    }
    const double n = static_cast<double>(std::max<std::size_t>(cfg.episodes_per_epoch, 1));
    result.report.epochs.push_back({epoch, loss_sum / n,
                                    total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0,
                                    cfg.episodes_per_epoch});
  }
  result.report.phase_seconds.emplace_back("train", seconds_since(t0));
  result.report.param_count = param_count(result.params);
  return result;
}

Tensor embed_all(const EncoderParams& params, std::span<const WindowedSample> windows) {
  if (windows.empty()) throw DataError("embed_all: no windows");
  NoGradGuard no_grad;
  std::vector<double> flat;
  flat.reserve(windows.size() * params.config.embedding_dim);
  for (const auto& w : windows) {
    const auto e = encode(w.matrix, params);
    flat.insert(flat.end(), e.values().begin(), e.values().end());
  }
  return Tensor::from({windows.size(), params.config.embedding_dim}, std::move(flat));
}

EvalResult evaluate_embedded(const Tensor& embeddings, std::span<const WindowedSample> pool, std::size_t way,
                             std::size_t shot, std::size_t query, std::size_t episodes, std::uint64_t seed) {
  if (embeddings.rows() != pool.size()) throw ShapeError("evaluate: embeddings do not align with the pool");
  if (episodes == 0) throw std::invalid_argument("evaluate: episode count must be positive");
  NoGradGuard no_grad;
  const std::size_t m = embeddings.cols();
  auto rows_of = [&](std::span<const std::size_t> idx) {
    std::vector<double> flat;
    flat.reserve(idx.size() * m);
    for (auto i : idx) {
      const auto row = embeddings.values().subspan(i * m, m);
      flat.insert(flat.end(), row.begin(), row.end());
    }
    return Tensor::from({idx.size(), m}, std::move(flat));
  };

  PoolIndex index(pool);
  Rng rng(seed);
  EvalResult r;
  double loss_sum = 0.0;
  for (std::size_t e = 0; e < episodes; ++e) {
    const auto ep = sample_episode(index, way, shot, query, rng);
    const auto protos = compute_prototypes(rows_of(ep.support), labels_of(pool, ep.support));
    const auto queries = rows_of(ep.query);
    const auto truth = labels_of(pool, ep.query);
    const auto pred = predict(queries, protos);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == truth[i];
    r.correct += correct;
    r.total += pred.size();
    r.episode_accuracies.push_back(static_cast<double>(correct) / static_cast<double>(pred.size()));
    loss_sum += episode_loss(queries, truth, protos).item();
  }
  std::tie(r.mean_accuracy, r.std_accuracy) = mean_std(r.episode_accuracies);
  r.mean_loss = loss_sum / static_cast<double>(episodes);
  return r;
}

EvalResult evaluate_episodes(const EncoderParams& params, std::span<const WindowedSample> pool, std::size_t way,
                             std::size_t shot, std::size_t query, std::size_t episodes, std::uint64_t seed) {
  return evaluate_embedded(embed_all(params, pool), pool, way, shot, query, episodes, seed);
}

}  // namespace attenc
