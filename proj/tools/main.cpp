// attenc: command-line driver for synthetic data, preprocessing, training,
// evaluation and embedding export.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data error,
// 3 numeric failure.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "attenc/config.hpp"
#include "attenc/data.hpp"
#include "attenc/encoder.hpp"
#include "attenc/episodes.hpp"
#include "attenc/proto.hpp"
#include "attenc/training.hpp"

using namespace attenc;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

// Options shared by every subcommand; applied after config files and --set.
struct CommonOptions {
  std::vector<std::string> config_files;
  std::vector<std::string> overrides;
  std::map<std::string, std::string> direct;
  bool unknown = false;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("-c,--config", o.config_files, "key = value configuration file (repeatable)");
  cmd->add_option("--set", o.overrides, "key=value override (repeatable)");
  for (const char* key : {"input", "output", "checkpoint", "report", "stats", "seed", "way", "shot", "query"}) {
    std::string flags = std::string("--") + key;
    if (flags == "--input" || flags == "--output") flags = std::string("-") + key[0] + "," + flags;
    cmd->add_option_function<std::string>(flags, [&o, key](const std::string& v) { o.direct[key] = v; });
  }
  cmd->add_option_function<std::string>("--episodes", [&o](const std::string& v) { o.direct["eval_episodes"] = v; },
                                        "evaluation episodes");
}

RunConfig resolve(const CommonOptions& o) {
  RunConfig cfg;
  for (const auto& f : o.config_files) apply_config_file(cfg, f);
  for (const auto& s : o.overrides) apply_override(cfg, s);
  for (const auto& [k, v] : o.direct) cfg.set(k, v);
  if (o.unknown) cfg.unknown = true;
  return cfg;
}

void require(const std::string& value, const char* key) {
  if (value.empty()) throw ConfigError(std::string("missing required setting '") + key + "'");
}

std::string or_default(const std::string& value, const std::string& fallback) {
  return value.empty() ? fallback : value;
}

struct Seeds {
  std::uint64_t split, train, eval;
};

Seeds derive_seeds(std::uint64_t root) {
  Rng rng(root);
  const auto split = rng.next();
  const auto train = rng.next();
  return {split, train, rng.next()};
}

std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ";" : "") + std::to_string(v[i]);
  return out;
}

std::vector<int> parse_ints(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ';')) {
    if (!cell.empty()) out.push_back(std::stoi(cell));
  }
  return out;
}

void log_seconds(const char* what, std::chrono::steady_clock::time_point t0) {
  std::cerr << what << ": " << std::fixed << std::setprecision(1)
            << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s\n"
            << std::defaultfloat;
}

AttEncConfig encoder_for(const RunConfig& cfg, const WindowSet& set) {
  if (set.samples.empty()) throw DataError("no windows in " + cfg.input);
  AttEncConfig enc = cfg.encoder;
  enc.input_channels = set.channels();
  enc.window_length = set.window_length();
  enc.classes = 0;
  return enc;
}

void write_report_file(const std::string& path, const TrainReport& report) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write report " + path);
  write_report(out, report);
}

// --- commands --------------------------------------------------------------------

int cmd_synth(const RunConfig& cfg) {
  require(cfg.output, "output");
  const auto ds = synth_generate(cfg.synth());
  save_csv(cfg.output, ds.records);
  std::ofstream meta(cfg.output + ".json");
  if (!meta) throw DataError("cannot write " + cfg.output + ".json");
  meta << ds.metadata_json() << '\n';
  std::size_t rows = 0;
  for (const auto& r : ds.records) rows += r.length();
  std::cout << "wrote " << rows << " rows for " << ds.records.size() << " drivers to " << cfg.output << '\n';
  return kOk;
}

int cmd_preprocess(const RunConfig& cfg) {
  require(cfg.input, "input");
  require(cfg.output, "output");
  auto records = load_csv(cfg.input);
  NormalizationStats stats;
  const std::string stats_path = or_default(cfg.stats, cfg.output + ".stats.csv");
  if (!cfg.stats.empty() && std::ifstream(cfg.stats)) {
    stats = load_stats(cfg.stats);
  } else {
    stats = fit_minmax(records);
    save_stats(stats_path, stats);
  }
  for (auto& r : records) r = apply_minmax(r, stats);
  std::vector<std::string> warnings;
  const auto set = make_windows(records, cfg.pipeline(), &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
  if (set.samples.empty()) throw DataError("no complete window in " + cfg.input);
  save_windows(cfg.output, set);
  std::cout << "wrote " << set.samples.size() << " windows of " << set.window_length() << "x" << set.channels()
            << " for " << set.class_names.size() << " drivers to " << cfg.output << '\n';
  return kOk;
}

int cmd_train_cls(const RunConfig& cfg) {
  require(cfg.input, "input");
  require(cfg.output, "output");
  const auto set = load_windows(cfg.input);
  const auto enc = encoder_for(cfg, set);
  const auto seeds = derive_seeds(cfg.seed);
  const std::size_t classes = set.class_names.size();
  const auto t0 = std::chrono::steady_clock::now();

  TrainReport cv;
  if (cfg.folds >= 2) {
    // windows were normalised by preprocess; folds reuse that scaling
    cv = cross_validate(set.samples, classes, enc, cfg.classifier(), cfg.folds, seeds.train, false);
    log_seconds("cross validation", t0);
  }
  const auto s = split(set.samples, cfg.train_fraction, seeds.split);
  const auto train = select(set.samples, s.train);
  const auto test = select(set.samples, s.test);
  auto result = train_classifier(train, classes, enc, cfg.classifier(), seeds.train, test);
  log_seconds("training", t0);
  result.report.fold_accuracies = cv.fold_accuracies;
  if (!cv.fold_accuracies.empty()) {
    result.report.mean_accuracy = cv.mean_accuracy;
    result.report.std_accuracy = cv.std_accuracy;
  }

  save_checkpoint(cfg.output, result.params,
                  {{"kind", "classifier"},
                   {"seed", std::to_string(cfg.seed)},
                   {"split_seed", std::to_string(seeds.split)},
                   {"train_fraction", cfg.get("train_fraction")},
                   {"protocol", "known"}});
  write_report_file(or_default(cfg.report, cfg.output + ".report.csv"), result.report);
  std::cout << "test accuracy " << std::setprecision(17) << *result.report.test_accuracy << '\n';
  if (!cv.fold_accuracies.empty()) {
    std::cout << cfg.folds << "-fold accuracy " << format_accuracy(cv.mean_accuracy, cv.std_accuracy) << '\n';
  }
  std::cout << "parameters " << result.report.param_count << '\n';
  return kOk;
}

int cmd_train_proto(const RunConfig& cfg) {
  require(cfg.input, "input");
  require(cfg.output, "output");
  const auto set = load_windows(cfg.input);
  const auto enc = encoder_for(cfg, set);
  const auto seeds = derive_seeds(cfg.seed);

  Metadata meta{{"kind", "protonet"}, {"seed", std::to_string(cfg.seed)}};
  std::vector<WindowedSample> pool;
  if (cfg.unknown) {
    Rng rng(seeds.split);
    auto s = split_known_unknown(set.samples, cfg.train_way, rng);
    pool = std::move(s.train);
    meta["protocol"] = "unknown";
    meta["train_classes"] = join_ints(s.train_classes);
    meta["test_classes"] = join_ints(s.test_classes);
  } else {
    const auto s = split(set.samples, cfg.train_fraction, seeds.split);
    pool = select(set.samples, s.train);
    meta["protocol"] = "known";
    meta["split_seed"] = std::to_string(seeds.split);
    meta["train_fraction"] = cfg.get("train_fraction");
  }
  const auto t0 = std::chrono::steady_clock::now();
  const auto result = train_protonet(pool, enc, cfg.proto(), seeds.train);
  log_seconds("training", t0);
  save_checkpoint(cfg.output, result.params, meta);
  write_report_file(or_default(cfg.report, cfg.output + ".report.csv"), result.report);
  if (!result.report.epochs.empty()) {
    const auto& last = result.report.epochs.back();
    std::cout << "final epoch loss " << std::setprecision(17) << last.loss << " accuracy " << last.accuracy << '\n';
  }
  std::cout << "parameters " << result.report.param_count << '\n';
  return kOk;
}

// The windows a checkpoint was not trained on, as recorded in its metadata.
std::vector<WindowedSample> evaluation_pool(const RunConfig& cfg, const Checkpoint& ck, const WindowSet& set) {
  const auto& meta = ck.metadata;
  if (cfg.unknown) {
    const auto it = meta.find("train_classes");
    if (it == meta.end()) {
      throw ConfigError("--unknown needs a checkpoint trained with unknown = true (no held-out drivers recorded)");
    }
    const auto known = parse_ints(it->second);
    std::vector<WindowedSample> pool;
    for (const auto& w : set.samples) {
      if (std::find(known.begin(), known.end(), w.label) == known.end()) pool.push_back(w);
    }
    return pool;
  }
  const auto seed = meta.find("split_seed");
  const auto fraction = meta.find("train_fraction");
  if (seed == meta.end() || fraction == meta.end()) return set.samples;
  RunConfig tmp;
  tmp.set("seed", seed->second);
  tmp.set("train_fraction", fraction->second);
  return select(set.samples, split(set.samples, tmp.train_fraction, tmp.seed).test);
}

int cmd_eval(const RunConfig& cfg) {
  require(cfg.checkpoint, "checkpoint");
  require(cfg.input, "input");
  const auto ck = load_checkpoint(cfg.checkpoint);
  const auto set = load_windows(cfg.input);
  const auto pool = evaluation_pool(cfg, ck, set);
  if (pool.empty()) throw DataError("evaluation pool is empty");
  const auto seeds = derive_seeds(cfg.seed);
  const auto r = evaluate_episodes(ck.params, pool, cfg.way, cfg.shot, cfg.query, cfg.eval_episodes, seeds.eval);

  std::ostringstream line;
  line << std::setprecision(17) << cfg.way << ',' << cfg.shot << ',' << cfg.query << ',' << cfg.eval_episodes << ','
       << (cfg.unknown ? "unknown" : "known") << ',' << r.mean_accuracy << ',' << r.std_accuracy << ','
       << r.mean_loss << ',' << r.correct << ',' << r.total;
  std::optional<double> cls;
  if (ck.params.classifier && !cfg.unknown) cls = classification_accuracy(ck.params, pool);
  if (!cfg.report.empty()) {
    std::ofstream out(cfg.report);
    if (!out) throw DataError("cannot write report " + cfg.report);
    out << "way,shot,query,episodes,protocol,mean_accuracy,std_accuracy,mean_loss,correct,total\n"
        << line.str() << '\n';
    if (cls) out << "# classifier_accuracy=" << std::setprecision(17) << *cls << '\n';
  }
  std::cout << cfg.way << "-way " << cfg.shot << "-shot accuracy " << format_accuracy(r.mean_accuracy, r.std_accuracy)
            << " over " << cfg.eval_episodes << " episodes (" << r.correct << "/" << r.total << " queries), loss "
            << std::setprecision(6) << r.mean_loss << '\n';
  if (cls) std::cout << "classifier accuracy " << std::setprecision(17) << *cls << '\n';
  return kOk;
}

int cmd_export(const RunConfig& cfg) {
  require(cfg.checkpoint, "checkpoint");
  require(cfg.input, "input");
  require(cfg.output, "output");
  const auto ck = load_checkpoint(cfg.checkpoint);
  const auto set = load_windows(cfg.input);
  if (set.samples.empty()) throw DataError("no windows in " + cfg.input);
  const auto emb = embed_all(ck.params, set.samples);
  std::vector<int> labels;
  for (const auto& w : set.samples) labels.push_back(w.label);
  const auto protos = compute_prototypes(emb, labels);

  std::ofstream out(cfg.output);
  if (!out) throw DataError("cannot write " + cfg.output);
  const std::size_t m = emb.cols();
  out << "class_id";
  for (std::size_t k = 0; k < m; ++k) out << ",e" << k;
  out << ",prototype\n" << std::setprecision(17);
  auto row = [&](int label, std::span<const double> v, int flag) {
    out << label;
    for (double x : v) out << ',' << x;
    out << ',' << flag << '\n';
  };
  for (std::size_t i = 0; i < set.samples.size(); ++i) row(labels[i], emb.values().subspan(i * m, m), 0);
  for (std::size_t c = 0; c < protos.size(); ++c) row(protos.class_ids[c], protos.prototypes.values().subspan(c * m, m), 1);
  std::cout << "wrote " << set.samples.size() << " embeddings and " << protos.size() << " prototypes to "
            << cfg.output << '\n';
  return kOk;
}

int cmd_param_count(const RunConfig& cfg) {
  if (!cfg.checkpoint.empty()) {
    std::cout << param_count(load_checkpoint(cfg.checkpoint).params) << '\n';
  } else {
    std::cout << param_count(cfg.encoder) << '\n';
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention-based driver fingerprinting: Stage-1 classification and few-shot prototypes"};
  app.require_subcommand(1);
  CommonOptions opts;

  struct Sub {
    const char* name;
    const char* help;
    int (*run)(const RunConfig&);
  };
  const std::vector<Sub> subs{
      {"synth", "generate a synthetic multi-driver CSV", cmd_synth},
      {"preprocess", "normalise and window a telemetry CSV", cmd_preprocess},
      {"train-cls", "train the softmax classifier (Stage 1)", cmd_train_cls},
      {"train-proto", "episodic prototypical training (Stage 2)", cmd_train_proto},
      {"eval", "N-way K-shot evaluation of a checkpoint", cmd_eval},
      {"export-embeddings", "write window embeddings and class prototypes as CSV", cmd_export},
      {"param-count", "number of learnable parameters", cmd_param_count},
  };
  std::vector<std::pair<CLI::App*, int (*)(const RunConfig&)>> commands;
  for (const auto& s : subs) {
    auto* cmd = app.add_subcommand(s.name, s.help);
    add_common(cmd, opts);
    commands.emplace_back(cmd, s.run);
  }
  commands[4].first->add_flag("--unknown", opts.unknown, "evaluate on the drivers held out during training");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "attenc: " << e.what() << '\n';
    return kUsage;
  }

  try {
    const auto cfg = resolve(opts);
    for (const auto& [cmd, run] : commands) {
      if (cmd->parsed()) return run(cfg);
    }
  } catch (const ConfigError& e) {
    std::cerr << "attenc: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericError& e) {
    std::cerr << "attenc: numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "attenc: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}
