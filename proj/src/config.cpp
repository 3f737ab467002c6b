#include "attenc/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

namespace attenc {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  throw ConfigError("config: " + key + " = '" + value + "' is not " + expected);
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double out = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size() || !std::isfinite(out)) bad_value(key, v, "a finite number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, v, "a boolean");
}

std::string show(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class M>
Field size_field(M member) {
  return {[member](RunConfig& c, const std::string& k, const std::string& v) { std::invoke(member, c) = parse_size(k, v); },
          [member](const RunConfig& c) { return std::to_string(std::invoke(member, c)); }};
}

template <class M>
Field double_field(M member) {
  return {
      [member](RunConfig& c, const std::string& k, const std::string& v) { std::invoke(member, c) = parse_double(k, v); },
      [member](const RunConfig& c) { return show(std::invoke(member, c)); }};
}

template <class M>
Field bool_field(M member) {
  return {[member](RunConfig& c, const std::string& k, const std::string& v) { std::invoke(member, c) = parse_bool(k, v); },
          [member](const RunConfig& c) { return std::string(std::invoke(member, c) ? "true" : "false"); }};
}

template <class M>
Field string_field(M member) {
  return {[member](RunConfig& c, const std::string&, const std::string& v) { std::invoke(member, c) = v; },
          [member](const RunConfig& c) { return std::invoke(member, c); }};
}

// Encoder fields live one level down.
template <class M>
Field encoder_size(M member) {
  return {[member](RunConfig& c, const std::string& k, const std::string& v) {
            std::invoke(member, c.encoder) = parse_size(k, v);
          },
          [member](const RunConfig& c) { return std::to_string(std::invoke(member, c.encoder)); }};
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> t;
    t["input_channels"] = encoder_size(&AttEncConfig::input_channels);
    t["window_length"] = encoder_size(&AttEncConfig::window_length);
    t["conv1_width"] = encoder_size(&AttEncConfig::conv1_width);
    t["conv1_channels"] = encoder_size(&AttEncConfig::conv1_channels);
    t["conv2_width"] = encoder_size(&AttEncConfig::conv2_width);
    t["model_dim"] = encoder_size(&AttEncConfig::model_dim);
    t["heads"] = encoder_size(&AttEncConfig::heads);
    t["stack"] = encoder_size(&AttEncConfig::stack);
    t["ff_dim"] = encoder_size(&AttEncConfig::ff_dim);
    t["embedding_dim"] = encoder_size(&AttEncConfig::embedding_dim);
    t["layer_norm_epsilon"] = {
        [](RunConfig& c, const std::string& k, const std::string& v) {
          c.encoder.layer_norm_epsilon = parse_double(k, v);
        },
        [](const RunConfig& c) { return show(c.encoder.layer_norm_epsilon); }};

    t["window_seconds"] = double_field(&RunConfig::window_seconds);
    t["overlap"] = double_field(&RunConfig::overlap);
    t["stat_features"] = bool_field(&RunConfig::stat_features);
    t["sub_windows"] = size_field(&RunConfig::sub_windows);

    t["lr"] = double_field(&RunConfig::lr);
    t["epochs"] = size_field(&RunConfig::epochs);
    t["batch"] = size_field(&RunConfig::batch);
    t["folds"] = size_field(&RunConfig::folds);
    t["train_fraction"] = double_field(&RunConfig::train_fraction);

    t["proto_epochs"] = size_field(&RunConfig::proto_epochs);
    t["episodes_per_epoch"] = size_field(&RunConfig::episodes_per_epoch);
    t["way"] = size_field(&RunConfig::way);
    t["shot"] = size_field(&RunConfig::shot);
    t["query"] = size_field(&RunConfig::query);
    t["eval_episodes"] = size_field(&RunConfig::eval_episodes);
    t["unknown"] = bool_field(&RunConfig::unknown);
    t["train_way"] = size_field(&RunConfig::train_way);

    t["drivers"] = size_field(&RunConfig::drivers);
    t["seconds_per_driver"] = double_field(&RunConfig::seconds_per_driver);
    t["channels"] = size_field(&RunConfig::channels);
    t["sample_rate"] = double_field(&RunConfig::sample_rate);
    t["separation"] = double_field(&RunConfig::separation);
    t["noise"] = double_field(&RunConfig::noise);

    t["seed"] = {[](RunConfig& c, const std::string& k, const std::string& v) { c.seed = parse_u64(k, v); },
                 [](const RunConfig& c) { return std::to_string(c.seed); }};

    t["input"] = string_field(&RunConfig::input);
    t["output"] = string_field(&RunConfig::output);
    t["checkpoint"] = string_field(&RunConfig::checkpoint);
    t["report"] = string_field(&RunConfig::report);
    t["stats"] = string_field(&RunConfig::stats);
    return t;
  }();
  return table;
}

}  // namespace

PipelineConfig RunConfig::pipeline() const {
  PipelineConfig p;
  p.windowing = {window_seconds, overlap};
  p.stat_features = stat_features;
  p.sub_windows = sub_windows;
  return p;
}

ClassifierConfig RunConfig::classifier() const {
  ClassifierConfig c;
  c.epochs = epochs;
  c.batch = batch;
  c.adam.lr = lr;
  return c;
}

ProtoConfig RunConfig::proto() const {
  ProtoConfig p;
  p.epochs = proto_epochs;
  p.episodes_per_epoch = episodes_per_epoch;
  p.way = way;
  p.shot = shot;
  p.query = query;
  p.adam.lr = lr;
  return p;
}

SynthConfig RunConfig::synth() const {
  SynthConfig s;
  s.drivers = drivers;
  s.seconds_per_driver = seconds_per_driver;
  s.channels = channels;
  s.sample_rate = sample_rate;
  s.separation = separation;
  s.noise = noise;
  s.seed = seed;
  return s;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto it = fields().find(key);
  if (it == fields().end()) throw ConfigError("config: unknown key '" + key + "'");
  it->second.set(*this, key, value);
}

std::string RunConfig::get(const std::string& key) const {
  const auto it = fields().find(key);
  if (it == fields().end()) throw ConfigError("config: unknown key '" + key + "'");
  return it->second.get(*this);
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& [name, field] : fields()) out.push_back(name);
    return out;
  }();
  return k;
}

void apply_config(RunConfig& cfg, std::istream& in, const std::string& source) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    try {
      cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void apply_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  apply_config(cfg, in, path);
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("config: override '" + assignment + "' is not key=value");
  cfg.set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void write_config(std::ostream& out, const RunConfig& cfg) {
  for (const auto& key : RunConfig::keys()) out << key << " = " << cfg.get(key) << '\n';
}

}  // namespace attenc
