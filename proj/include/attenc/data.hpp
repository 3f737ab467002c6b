#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "attenc/tensor.hpp"

namespace attenc {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TimeSeriesRecord {
  std::string driver_id;
  std::vector<std::string> channel_names;
  std::vector<std::vector<double>> channels;  // channel-major, equal lengths
  double sample_rate = 1.0;                   // Hz

  std::size_t length() const { return channels.empty() ? 0 : channels.front().size(); }
  /// Throws DataError on ragged channels or a non-positive rate.
  void validate() const;
};

struct WindowedSample {
  Tensor matrix;  // [T x D]
  int label = 0;
  std::size_t offset = 0;  // first sample index within the source record
};

struct WindowSet {
  std::vector<WindowedSample> samples;
  std::vector<std::string> class_names;  // indexed by label

  std::size_t window_length() const { return samples.empty() ? 0 : samples.front().matrix.rows(); }
  std::size_t channels() const { return samples.empty() ? 0 : samples.front().matrix.cols(); }
};

// --- MinMax normalization ----------------------------------------------------

struct NormalizationStats {
  std::vector<double> min;
  std::vector<double> max;
};

NormalizationStats fit_minmax(std::span<const TimeSeriesRecord> records);
NormalizationStats fit_minmax(std::span<const WindowedSample> windows);

/// (x - min) / (max - min) clamped to [0, 1]; a channel with max == min maps to 0.
double apply_minmax(double x, double lo, double hi);
TimeSeriesRecord apply_minmax(const TimeSeriesRecord& record, const NormalizationStats& stats);
std::vector<WindowedSample> apply_minmax(std::span<const WindowedSample> windows, const NormalizationStats& stats);

void save_stats(const std::string& path, const NormalizationStats& stats);
NormalizationStats load_stats(const std::string& path);

// --- windowing -----------------------------------------------------------------

struct WindowingConfig {
  double window_seconds = 30.0;
  double overlap = 0.5;  // fraction of a window shared with the next one
};

struct WindowGeometry {
  std::size_t length = 0;  // samples per window
  std::size_t stride = 0;  // samples between window starts
};

WindowGeometry window_geometry(double sample_rate, const WindowingConfig& cfg);

struct WindowSlice {
  std::vector<WindowedSample> windows;
  std::optional<std::string> warning;  // set when the record is shorter than a window
};

WindowSlice slice_windows(const TimeSeriesRecord& record, int label, const WindowingConfig& cfg = {});

/// Per sub-window and channel: min, max, mean, q25, q50, q75. Output is
/// [sub_windows x 6*D], channel c occupying columns 6c..6c+5. Quantiles
/// interpolate linearly between order statistics.
Tensor stat_features(const Tensor& window, std::size_t sub_windows);

/// Linear-interpolation quantile of ascending data, p in [0, 1].
double quantile_sorted(std::span<const double> sorted, double p);

struct PipelineConfig {
  WindowingConfig windowing;
  bool stat_features = false;
  std::size_t sub_windows = 6;
};

/// Windows for every record, labelled by the sorted distinct driver ids.
/// Records shorter than a window contribute nothing and add a warning.
WindowSet make_windows(std::span<const TimeSeriesRecord> records, const PipelineConfig& cfg,
                       std::vector<std::string>* warnings = nullptr);

// --- CSV ingestion -------------------------------------------------------------

struct CsvSchema {
  std::string timestamp_column = "timestamp";
  std::string driver_column = "driver_id";
  std::string record_column = "record_id";  // optional; splits a driver into several records
  double sample_rate = 0.0;                  // 0: infer from the first two timestamps
};

/// Header `timestamp,<channel...>,driver_id`. Rows are grouped into records
/// by (driver, record id) in order of first appearance.
std::vector<TimeSeriesRecord> load_csv(const std::string& path, const CsvSchema& schema = {});
void save_csv(const std::string& path, std::span<const TimeSeriesRecord> records);

// --- splits --------------------------------------------------------------------

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Stratified by label; per class round(fraction * n) windows go to train.
Split split(std::span<const WindowedSample> samples, double train_fraction, std::uint64_t seed);

/// Stratified k-fold; returns the test indices of each fold.
std::vector<std::vector<std::size_t>> kfold(std::span<const WindowedSample> samples, std::size_t k,
                                            std::uint64_t seed);

std::vector<WindowedSample> select(std::span<const WindowedSample> samples, std::span<const std::size_t> indices);

// --- synthetic drivers -----------------------------------------------------------

struct SynthConfig {
  std::size_t drivers = 10;
  double seconds_per_driver = 3100.0;
  std::size_t channels = 6;
  double sample_rate = 1.0;
  double separation = 1.0;  // in [0, 1]; 0 makes every driver the same process
  double noise = 0.2;       // AR(1) innovation standard deviation
  std::uint64_t seed = 0;
};

struct SynthChannel {
  double amplitude = 0.0;
  double frequency = 0.0;  // Hz
  double phase = 0.0;
  double offset = 0.0;
};

struct SynthDriver {
  std::string id;
  std::vector<SynthChannel> channels;
  double ar_coefficient = 0.0;
};

struct SynthDataset {
  std::vector<TimeSeriesRecord> records;
  std::vector<SynthDriver> drivers;
  double min_parameter_distance = 0.0;  // smallest pairwise driver distance

  std::string metadata_json() const;
};

/// Channel j of driver i is a_ij sin(2 pi f_ij t + phi_ij) + o_ij plus AR(1)
/// noise with driver coefficient rho_i.
SynthDataset synth_generate(const SynthConfig& cfg);

// --- window files ------------------------------------------------------------------

// Little-endian binary layout:
//   char[4] "ATWN", u32 version (1), u32 T, u32 D, u64 count, u32 classes,
//   per class: u32 byte length + UTF-8 name,
//   per window: i32 label, u64 offset, T*D f64 row-major.
void save_windows(const std::string& path, const WindowSet& set);
WindowSet load_windows(const std::string& path);

}  // namespace attenc
