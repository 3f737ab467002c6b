#pragma once

// Flat key=value run configuration shared by every command-line tool.
// Lines are `key = value`; blank lines and `#` comments are ignored.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "attenc/data.hpp"
#include "attenc/encoder.hpp"
#include "attenc/training.hpp"

namespace attenc {

struct RunConfig {
  AttEncConfig encoder;

  // pipeline
  double window_seconds = 30.0;
  double overlap = 0.5;
  bool stat_features = false;
  std::size_t sub_windows = 6;

  // Stage 1
  double lr = 0.001;
  std::size_t epochs = 150;
  std::size_t batch = 32;
  std::size_t folds = 5;  // 0 or 1 disables cross validation
  double train_fraction = 0.8;

  // Stage 2
  std::size_t proto_epochs = 50;
  std::size_t episodes_per_epoch = 200;
  std::size_t way = 10;
  std::size_t shot = 5;
  std::size_t query = 5;
  std::size_t eval_episodes = 200;
  bool unknown = false;        // hold out drivers instead of windows
  std::size_t train_way = 8;   // known drivers under `unknown`

  // synthetic data
  std::size_t drivers = 10;
  double seconds_per_driver = 3100.0;
  std::size_t channels = 6;
  double sample_rate = 1.0;
  double separation = 1.0;
  double noise = 0.2;

  std::uint64_t seed = 0;

  std::string input;
  std::string output;
  std::string checkpoint;
  std::string report;
  std::string stats;

  PipelineConfig pipeline() const;
  ClassifierConfig classifier() const;
  ProtoConfig proto() const;
  SynthConfig synth() const;

  /// Sets one key from its text form; throws ConfigError on an unknown key
  /// or an unparseable value.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();
};

/// Applies every `key = value` line of a stream on top of `cfg`.
void apply_config(RunConfig& cfg, std::istream& in, const std::string& source = "config");
void apply_config_file(RunConfig& cfg, const std::string& path);
/// `key=value` command-line override.
void apply_override(RunConfig& cfg, const std::string& assignment);

/// Every key with its current value, one `key = value` line each.
void write_config(std::ostream& out, const RunConfig& cfg);

}  // namespace attenc
