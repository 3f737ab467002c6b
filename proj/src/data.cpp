#include "attenc/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "attenc/random.hpp"

namespace attenc {

static_assert(std::endian::native == std::endian::little, "window files assume a little-endian host");

void TimeSeriesRecord::validate() const {
  if (!(sample_rate > 0.0)) throw DataError("record " + driver_id + ": sample rate must be positive");
  if (channel_names.size() != channels.size()) {
    throw DataError("record " + driver_id + ": channel names and channel data disagree");
  }
  for (const auto& c : channels) {
    if (c.size() != length()) throw DataError("record " + driver_id + ": channels have unequal lengths");
  }
}

// --- MinMax ------------------------------------------------------------------

NormalizationStats fit_minmax(std::span<const TimeSeriesRecord> records) {
  if (records.empty()) throw DataError("fit_minmax: no records");
  const std::size_t d = records.front().channels.size();
  NormalizationStats s{std::vector<double>(d, INFINITY), std::vector<double>(d, -INFINITY)};
  bool any = false;
  for (const auto& r : records) {
    if (r.channels.size() != d) throw DataError("fit_minmax: records have different channel counts");
    for (std::size_t c = 0; c < d; ++c) {
      for (double v : r.channels[c]) {
        s.min[c] = std::min(s.min[c], v);
        s.max[c] = std::max(s.max[c], v);
        any = true;
      }
    }
  }
  if (!any) throw DataError("fit_minmax: records hold no samples");
  return s;
}

NormalizationStats fit_minmax(std::span<const WindowedSample> windows) {
  if (windows.empty()) throw DataError("fit_minmax: no windows");
  const std::size_t d = windows.front().matrix.cols();
  NormalizationStats s{std::vector<double>(d, INFINITY), std::vector<double>(d, -INFINITY)};
  for (const auto& w : windows) {
    if (w.matrix.cols() != d) throw DataError("fit_minmax: windows have different widths");
    auto v = w.matrix.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const std::size_t c = i % d;
      s.min[c] = std::min(s.min[c], v[i]);
      s.max[c] = std::max(s.max[c], v[i]);
    }
  }
  return s;
}

double apply_minmax(double x, double lo, double hi) {
  if (!(hi > lo)) return 0.0;
  return std::clamp((x - lo) / (hi - lo), 0.0, 1.0);
}

TimeSeriesRecord apply_minmax(const TimeSeriesRecord& record, const NormalizationStats& stats) {
  if (stats.min.size() != record.channels.size()) {
    throw DataError("apply_minmax: stats cover " + std::to_string(stats.min.size()) + " channels, record has " +
                    std::to_string(record.channels.size()));
  }
  TimeSeriesRecord out = record;
  for (std::size_t c = 0; c < out.channels.size(); ++c) {
    for (auto& v : out.channels[c]) v = apply_minmax(v, stats.min[c], stats.max[c]);
  }
  return out;
}

std::vector<WindowedSample> apply_minmax(std::span<const WindowedSample> windows, const NormalizationStats& stats) {
  std::vector<WindowedSample> out;
  out.reserve(windows.size());
  for (const auto& w : windows) {
    const std::size_t d = w.matrix.cols();
    if (stats.min.size() != d) throw DataError("apply_minmax: stats width differs from window width");
    std::vector<double> v(w.matrix.values().begin(), w.matrix.values().end());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = apply_minmax(v[i], stats.min[i % d], stats.max[i % d]);
    out.push_back({Tensor::from(w.matrix.shape(), std::move(v)), w.label, w.offset});
  }
  return out;
}

void save_stats(const std::string& path, const NormalizationStats& stats) {
  std::ofstream out(path);
  if (!out) throw DataError("stats: cannot write " + path);
  out << "channel,min,max\n" << std::setprecision(17);
  for (std::size_t c = 0; c < stats.min.size(); ++c) out << c << ',' << stats.min[c] << ',' << stats.max[c] << '\n';
}

NormalizationStats load_stats(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("stats: cannot open " + path);
  std::string line;
  std::getline(in, line);
  NormalizationStats s;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string idx, lo, hi;
    std::getline(ls, idx, ',');
    std::getline(ls, lo, ',');
    std::getline(ls, hi, ',');
    try {
      s.min.push_back(std::stod(lo));
      s.max.push_back(std::stod(hi));
    } catch (const std::exception&) {
      throw DataError("stats: malformed line '" + line + "' in " + path);
    }
  }
  return s;
}

// --- windowing -------------------------------------------------------------------

WindowGeometry window_geometry(double sample_rate, const WindowingConfig& cfg) {
  if (!(cfg.window_seconds > 0.0) || !(sample_rate > 0.0)) {
    throw DataError("windowing: window length and sample rate must be positive");
  }
  if (!(cfg.overlap >= 0.0 && cfg.overlap < 1.0)) throw DataError("windowing: overlap must lie in [0, 1)");
  WindowGeometry g;
  g.length = static_cast<std::size_t>(std::llround(cfg.window_seconds * sample_rate));
  g.stride = static_cast<std::size_t>(std::llround(static_cast<double>(g.length) * (1.0 - cfg.overlap)));
  if (g.length == 0 || g.stride == 0) throw DataError("windowing: window or stride rounds to zero samples");
  return g;
}

WindowSlice slice_windows(const TimeSeriesRecord& record, int label, const WindowingConfig& cfg) {
  record.validate();
  const auto geo = window_geometry(record.sample_rate, cfg);
  const std::size_t len = record.length(), d = record.channels.size();
  WindowSlice out;
  if (len < geo.length) {
    out.warning = "record " + record.driver_id + " has " + std::to_string(len) + " samples, fewer than one window (" +
                  std::to_string(geo.length) + ")";
    return out;
  }
  for (std::size_t start = 0; start + geo.length <= len; start += geo.stride) {
    std::vector<double> m(geo.length * d);
    for (std::size_t t = 0; t < geo.length; ++t)
      for (std::size_t c = 0; c < d; ++c) m[t * d + c] = record.channels[c][start + t];
    out.windows.push_back({Tensor::from({geo.length, d}, std::move(m)), label, start});
  }
  return out;
}

double quantile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw DataError("quantile: empty sample");
  const double h = static_cast<double>(sorted.size() - 1) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

Tensor stat_features(const Tensor& window, std::size_t sub_windows) {
  const std::size_t len = window.rows(), d = window.cols();
  if (sub_windows == 0 || sub_windows > len) {
    throw DataError("stat_features: " + std::to_string(sub_windows) + " sub-windows do not fit a window of " +
                    std::to_string(len));
  }
  if (len % sub_windows != 0) {
    throw DataError("stat_features: " + std::to_string(sub_windows) + " sub-windows do not divide a window of " +
                    std::to_string(len));
  }
  const std::size_t sub = len / sub_windows;
  auto v = window.values();
  std::vector<double> out(sub_windows * 6 * d);
  std::vector<double> buf(sub);
  for (std::size_t s = 0; s < sub_windows; ++s) {
    for (std::size_t c = 0; c < d; ++c) {
      double total = 0.0;
      for (std::size_t t = 0; t < sub; ++t) {
        buf[t] = v[(s * sub + t) * d + c];
        total += buf[t];
      }
      std::sort(buf.begin(), buf.end());
      double* f = out.data() + s * 6 * d + 6 * c;
      f[0] = buf.front();
      f[1] = buf.back();
      f[2] = total / static_cast<double>(sub);
      f[3] = quantile_sorted(buf, 0.25);
      f[4] = quantile_sorted(buf, 0.50);
      f[5] = quantile_sorted(buf, 0.75);
    }
  }
  return Tensor::from({sub_windows, 6 * d}, std::move(out));
}

WindowSet make_windows(std::span<const TimeSeriesRecord> records, const PipelineConfig& cfg,
                       std::vector<std::string>* warnings) {
  WindowSet set;
  std::set<std::string> ids;
  for (const auto& r : records) ids.insert(r.driver_id);
  set.class_names.assign(ids.begin(), ids.end());
  for (const auto& r : records) {
    const auto label = static_cast<int>(
        std::lower_bound(set.class_names.begin(), set.class_names.end(), r.driver_id) - set.class_names.begin());
    auto slice = slice_windows(r, label, cfg.windowing);
    if (slice.warning && warnings) warnings->push_back(*slice.warning);
    for (auto& w : slice.windows) {
      if (cfg.stat_features) w.matrix = stat_features(w.matrix, cfg.sub_windows);
      set.samples.push_back(std::move(w));
    }
  }
  return set;
}

// --- CSV -------------------------------------------------------------------------

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ls(line);
  while (std::getline(ls, cell, ',')) {
    if (!cell.empty() && cell.back() == '\r') cell.pop_back();
    cells.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double parse_number(const std::string& s, const std::string& path, std::size_t line_no) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(path + ":" + std::to_string(line_no) + ": '" + s + "' is not a finite number");
  }
}

}  // namespace

std::vector<TimeSeriesRecord> load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("csv: " + path + " is empty");
  const auto header = split_line(line);

  std::optional<std::size_t> ts_col, driver_col, record_col;
  std::vector<std::size_t> channel_cols;
  std::vector<std::string> channel_names;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == schema.timestamp_column) {
      ts_col = i;
    } else if (header[i] == schema.driver_column) {
      driver_col = i;
    } else if (header[i] == schema.record_column) {
      record_col = i;
    } else {
      channel_cols.push_back(i);
      channel_names.push_back(header[i]);
    }
  }
  if (!ts_col || !driver_col) {
    throw DataError("csv: " + path + " needs '" + schema.timestamp_column + "' and '" + schema.driver_column +
                    "' columns");
  }
  if (channel_cols.empty()) throw DataError("csv: " + path + " has no channel columns");

  std::vector<TimeSeriesRecord> records;
  std::vector<std::vector<double>> stamps;
  std::map<std::pair<std::string, std::string>, std::size_t> index;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_line(line);
    if (cells.size() != header.size()) {
      throw DataError(path + ":" + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                      " fields, got " + std::to_string(cells.size()));
    }
    const std::string driver = cells[*driver_col];
    const std::string rec = record_col ? cells[*record_col] : std::string();
    auto [it, fresh] = index.try_emplace({driver, rec}, records.size());
    if (fresh) {
      TimeSeriesRecord r;
      r.driver_id = driver;
      r.channel_names = channel_names;
      r.channels.resize(channel_cols.size());
      records.push_back(std::move(r));
      stamps.emplace_back();
    }
    auto& r = records[it->second];
    stamps[it->second].push_back(parse_number(cells[*ts_col], path, line_no));
    for (std::size_t c = 0; c < channel_cols.size(); ++c) {
      r.channels[c].push_back(parse_number(cells[channel_cols[c]], path, line_no));
    }
  }
  if (records.empty()) throw DataError("csv: " + path + " has no data rows");

  for (std::size_t i = 0; i < records.size(); ++i) {
    if (schema.sample_rate > 0.0) {
      records[i].sample_rate = schema.sample_rate;
    } else {
      const auto& ts = stamps[i];
      if (ts.size() < 2 || !(ts[1] > ts[0])) {
        throw DataError("csv: cannot infer the sample rate of record " + records[i].driver_id +
                        "; pass it explicitly");
      }
      records[i].sample_rate = 1.0 / (ts[1] - ts[0]);
    }
    records[i].validate();
  }
  return records;
}

void save_csv(const std::string& path, std::span<const TimeSeriesRecord> records) {
  if (records.empty()) throw DataError("csv: nothing to write");
  std::ofstream out(path);
  if (!out) throw DataError("csv: cannot write " + path);
  out << "timestamp";
  for (const auto& name : records.front().channel_names) out << ',' << name;
  out << ",driver_id\n" << std::setprecision(17);
  for (const auto& r : records) {
    if (r.channel_names != records.front().channel_names) throw DataError("csv: records have different channels");
    for (std::size_t t = 0; t < r.length(); ++t) {
      out << static_cast<double>(t) / r.sample_rate;
      for (const auto& c : r.channels) out << ',' << c[t];
      out << ',' << r.driver_id << '\n';
    }
  }
}

// --- splits ------------------------------------------------------------------------

namespace {

std::map<int, std::vector<std::size_t>> by_label(std::span<const WindowedSample> samples) {
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < samples.size(); ++i) groups[samples[i].label].push_back(i);
  return groups;
}

}  // namespace

Split split(std::span<const WindowedSample> samples, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw DataError("split: train fraction must lie in (0, 1)");
  Rng rng(seed);
  Split out;
  for (auto& [label, idx] : by_label(samples)) {
    rng.shuffle(idx);
    const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(idx.size())));
    out.train.insert(out.train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.test.insert(out.test.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

std::vector<std::vector<std::size_t>> kfold(std::span<const WindowedSample> samples, std::size_t k,
                                            std::uint64_t seed) {
  if (k < 2) throw DataError("kfold: need at least 2 folds");
  if (samples.size() < k) throw DataError("kfold: fewer windows than folds");
  Rng rng(seed);
  std::vector<std::vector<std::size_t>> folds(k);
  std::size_t next = 0;
  for (auto& [label, idx] : by_label(samples)) {
    rng.shuffle(idx);
    for (auto i : idx) folds[next++ % k].push_back(i);
  }
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

std::vector<WindowedSample> select(std::span<const WindowedSample> samples, std::span<const std::size_t> indices) {
  std::vector<WindowedSample> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(samples[i]);
  return out;
}

// --- synthetic drivers -------------------------------------------------------------

std::string SynthDataset::metadata_json() const {
  nlohmann::json j;
  j["min_parameter_distance"] = min_parameter_distance;
  for (const auto& d : drivers) {
    nlohmann::json dj;
    dj["id"] = d.id;
    dj["ar_coefficient"] = d.ar_coefficient;
    for (const auto& c : d.channels) {
      dj["channels"].push_back(
          {{"amplitude", c.amplitude}, {"frequency", c.frequency}, {"phase", c.phase}, {"offset", c.offset}});
    }
    j["drivers"].push_back(dj);
  }
  return j.dump(2);
}

SynthDataset synth_generate(const SynthConfig& cfg) {
  if (cfg.drivers == 0 || cfg.channels == 0) throw DataError("synth: need at least one driver and one channel");
  if (!(cfg.sample_rate > 0.0) || !(cfg.seconds_per_driver > 0.0)) {
    throw DataError("synth: duration and sample rate must be positive");
  }
  // beyond 1 the AR(1) noise would no longer be stationary
  if (!(cfg.separation >= 0.0 && cfg.separation <= 1.0)) throw DataError("synth: separation must lie in [0, 1]");
  Rng rng(cfg.seed);
  const std::size_t n = cfg.drivers;
  const double sep = cfg.separation;

  // Every parameter sits on an evenly spaced grid of levels; each channel
  // assigns levels to drivers by its own permutation.
  auto level = [n](std::size_t slot) { return n == 1 ? 0.0 : 2.0 * static_cast<double>(slot) / (n - 1) - 1.0; };
  auto permutation = [&] {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    rng.shuffle(p);
    return p;
  };

  SynthDataset ds;
  ds.drivers.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    ds.drivers[i].id = "driver" + std::to_string(i);
    ds.drivers[i].channels.resize(cfg.channels);
  }
  for (std::size_t c = 0; c < cfg.channels; ++c) {
    const auto amp = permutation(), freq = permutation(), off = permutation();
    const double base_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < n; ++i) {
      auto& ch = ds.drivers[i].channels[c];
      ch.amplitude = 1.0 + 0.5 * sep * level(amp[i]);
      ch.frequency = 0.05 + 0.03 * sep * level(freq[i]);
      ch.offset = 1.5 * sep * level(off[i]);
      ch.phase = base_phase + sep * rng.uniform(0.0, 2.0 * std::numbers::pi);
    }
  }
  const auto rho = permutation();
  for (std::size_t i = 0; i < n; ++i) ds.drivers[i].ar_coefficient = 0.5 + 0.3 * sep * level(rho[i]);

  ds.min_parameter_distance = n > 1 ? INFINITY : 0.0;
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      double s = std::pow(ds.drivers[a].ar_coefficient - ds.drivers[b].ar_coefficient, 2);
      for (std::size_t c = 0; c < cfg.channels; ++c) {
        const auto& x = ds.drivers[a].channels[c];
        const auto& y = ds.drivers[b].channels[c];
        s += std::pow(x.amplitude - y.amplitude, 2) + std::pow(x.frequency - y.frequency, 2) +
             std::pow(x.offset - y.offset, 2);
      }
      ds.min_parameter_distance = std::min(ds.min_parameter_distance, std::sqrt(s));
    }
  }

  const auto len = static_cast<std::size_t>(std::llround(cfg.seconds_per_driver * cfg.sample_rate));
  for (const auto& drv : ds.drivers) {
    TimeSeriesRecord r;
    r.driver_id = drv.id;
    r.sample_rate = cfg.sample_rate;
    for (std::size_t c = 0; c < cfg.channels; ++c) {
      r.channel_names.push_back("ch" + std::to_string(c));
      const auto& ch = drv.channels[c];
      std::vector<double> x(len);
      double noise = 0.0;
      for (std::size_t t = 0; t < len; ++t) {
        const double time = static_cast<double>(t) / cfg.sample_rate;
        noise = drv.ar_coefficient * noise + cfg.noise * rng.normal();
        x[t] = ch.amplitude * std::sin(2.0 * std::numbers::pi * ch.frequency * time + ch.phase) + ch.offset + noise;
      }
      r.channels.push_back(std::move(x));
    }
    ds.records.push_back(std::move(r));
  }
  return ds;
}

// --- window files --------------------------------------------------------------------

namespace {

template <class T>
void put(std::ostream& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.write(buf, sizeof(T));
}

template <class T>
T get(std::istream& in, const std::string& path) {
  char buf[sizeof(T)];
  if (!in.read(buf, sizeof(T))) throw DataError("windows: " + path + " is truncated");
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

}  // namespace

void save_windows(const std::string& path, const WindowSet& set) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("windows: cannot write " + path);
  out.write("ATWN", 4);
  put<std::uint32_t>(out, 1);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(set.window_length()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(set.channels()));
  put<std::uint64_t>(out, set.samples.size());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(set.class_names.size()));
  for (const auto& name : set.class_names) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
  }
  for (const auto& w : set.samples) {
    if (w.matrix.rows() != set.window_length() || w.matrix.cols() != set.channels()) {
      throw DataError("windows: window shapes differ within one set");
    }
    put<std::int32_t>(out, w.label);
    put<std::uint64_t>(out, w.offset);
    for (double v : w.matrix.values()) put<double>(out, v);
  }
  if (!out) throw DataError("windows: write failed for " + path);
}

WindowSet load_windows(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("windows: cannot open " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "ATWN", 4) != 0) {
    throw DataError("windows: " + path + " is not a window file");
  }
  if (get<std::uint32_t>(in, path) != 1) throw DataError("windows: unsupported version in " + path);
  const auto len = get<std::uint32_t>(in, path);
  const auto d = get<std::uint32_t>(in, path);
  const auto count = get<std::uint64_t>(in, path);
  const auto classes = get<std::uint32_t>(in, path);
  WindowSet set;
  for (std::uint32_t i = 0; i < classes; ++i) {
    std::string name(get<std::uint32_t>(in, path), '\0');
    if (!in.read(name.data(), static_cast<std::streamsize>(name.size()))) throw DataError("windows: truncated names");
    set.class_names.push_back(std::move(name));
  }
  set.samples.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    WindowedSample w;
    w.label = get<std::int32_t>(in, path);
    if (w.label < 0 || static_cast<std::uint32_t>(w.label) >= classes) {
      throw DataError("windows: label out of range in " + path);
    }
    w.offset = get<std::uint64_t>(in, path);
    std::vector<double> v(static_cast<std::size_t>(len) * d);
    for (auto& x : v) x = get<double>(in, path);
    w.matrix = Tensor::from({len, d}, std::move(v));
    set.samples.push_back(std::move(w));
  }
  return set;
}

}  // namespace attenc
