#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "attenc/data.hpp"
#include "attenc/encoder.hpp"
#include "attenc/tensor.hpp"

namespace attenc {

// --- Adam --------------------------------------------------------------------

struct AdamOptions {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamOptions options;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;
};

AdamState make_adam(std::span<const Tensor> params, const AdamOptions& options = {});

/// One bias-corrected Adam update of `params` in place.
void adam_step(std::span<const Tensor> params, std::span<const std::span<const double>> grads, AdamState& state);
/// Reads each parameter's accumulated gradient (absent means zero).
void adam_step(std::span<const Tensor> params, AdamState& state);

// --- reports -------------------------------------------------------------------

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
  std::size_t steps = 0;  // mini-batches or episodes
};

struct TrainReport {
  std::vector<EpochLog> epochs;
  std::optional<double> test_accuracy;
  std::vector<double> fold_accuracies;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;
  std::size_t param_count = 0;
  // Wall clock is informational and never serialized, so reports stay
  // reproducible byte for byte.
  std::vector<std::pair<std::string, double>> phase_seconds;
};

/// "99.3(0.39)": mean and standard deviation in percent.
std::string format_accuracy(double mean, double std);

/// `epoch,loss,accuracy` rows followed by one `# summary ...` line.
void write_report(std::ostream& out, const TrainReport& report);

struct TrainResult {
  EncoderParams params;
  TrainReport report;
};

// --- Stage 1: softmax classifier ---------------------------------------------------

struct ClassifierConfig {
  std::size_t epochs = 150;
  std::size_t batch = 32;
  AdamOptions adam;
};

TrainResult train_classifier(std::span<const WindowedSample> train, std::size_t classes, const AttEncConfig& encoder,
                             const ClassifierConfig& cfg, std::uint64_t seed,
                             std::span<const WindowedSample> test = {});

/// Fraction of windows whose argmax class equals the label.
double classification_accuracy(const EncoderParams& params, std::span<const WindowedSample> windows);

/// k rounds of train-on-k-1-folds, test-on-one. With `refit_minmax`, MinMax
/// statistics are fitted on each round's training windows only.
TrainReport cross_validate(std::span<const WindowedSample> windows, std::size_t classes, const AttEncConfig& encoder,
                           const ClassifierConfig& cfg, std::size_t k, std::uint64_t seed, bool refit_minmax = true);

// --- Stage 2: episodic prototypical training -----------------------------------------

struct ProtoConfig {
  std::size_t epochs = 50;
  std::size_t episodes_per_epoch = 200;
  std::size_t way = 10;
  std::size_t shot = 5;
  std::size_t query = 5;
  AdamOptions adam;
};

TrainResult train_protonet(std::span<const WindowedSample> pool, const AttEncConfig& encoder, const ProtoConfig& cfg,
                           std::uint64_t seed);

/// Continues episodic training from existing parameters (which are copied).
TrainResult train_protonet(std::span<const WindowedSample> pool, const EncoderParams& start, const ProtoConfig& cfg,
                           std::uint64_t seed);

struct EvalResult {
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;
  double mean_loss = 0.0;
  std::size_t correct = 0;
  std::size_t total = 0;
  std::vector<double> episode_accuracies;
};

/// [n x M] embeddings of every window, without recording a graph.
Tensor embed_all(const EncoderParams& params, std::span<const WindowedSample> windows);

/// Query accuracy over fresh episodes drawn from the pool.
EvalResult evaluate_episodes(const EncoderParams& params, std::span<const WindowedSample> pool, std::size_t way,
                             std::size_t shot, std::size_t query, std::size_t episodes, std::uint64_t seed);
/// Same, with the pool already embedded (rows aligned with `pool`).
EvalResult evaluate_embedded(const Tensor& embeddings, std::span<const WindowedSample> pool, std::size_t way,
                             std::size_t shot, std::size_t query, std::size_t episodes, std::uint64_t seed);

}  // namespace attenc
