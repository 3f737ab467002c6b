// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "attenc/data.hpp"
#include "attenc/encoder.hpp"
#include "attenc/episodes.hpp"
#include "attenc/layers.hpp"
#include "attenc/proto.hpp"
#include "attenc/stats.hpp"
#include "attenc/training.hpp"
#include "gradcheck.hpp"

using namespace attenc;
namespace fs = std::filesystem;

namespace {

// --- pinned tolerances -------------------------------------------------------

constexpr int kGradSeeds = 20;
constexpr double kGradStep = 1e-5;
constexpr double kLayerGradTol = 1e-4;
constexpr double kModelGradTol = 1e-3;
constexpr double kGradSeconds = 60.0;

constexpr int kAttentionTrials = 1000;
constexpr double kRowSumTol = 1e-6;

constexpr int kOracleEpisodes = 1000;

constexpr int kBaselineEpisodes = 200;
constexpr double kBaselineTol = 0.15;

constexpr double kStage1Accuracy = 0.95;
constexpr std::size_t kStage1MaxEpochs = 150;
constexpr double kStage1Seconds = 15 * 60;
constexpr std::size_t kMinWindowsPerDriver = 200;

constexpr int kEvalEpisodes = 200;
constexpr double kTrendMargin = 0.02;
constexpr double kTrendAlpha = 0.05;
constexpr double kUnknownAlpha = 0.01;
constexpr double kChanceAlpha = 0.01;

constexpr double kPublishedParams = 31162;

// --- desk-scale experiment settings ---------------------------------------------

constexpr std::uint64_t kDataSeed = 2024;
constexpr std::size_t kStage1Epochs = 10;
constexpr std::size_t kProtoEpochs = 3;
constexpr std::size_t kUnknownEpochs = 2;
constexpr std::size_t kUnknownEpisodes = 100;

AttEncConfig desk_encoder() {
  AttEncConfig c;
  c.input_channels = 6;
  c.window_length = 30;
  c.conv1_channels = 16;
  c.model_dim = 32;
  c.heads = 16;
  c.ff_dim = 64;
  c.embedding_dim = 32;
  return c;
}

// --- reporting ---------------------------------------------------------------------

int failures = 0;

void report(const std::string& name, bool pass, const std::string& detail) {
  std::cout << (pass ? "PASS " : "FAIL ") << name << ": " << detail << std::endl;
  if (!pass) ++failures;
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<WindowedSample> windows_of(const SynthDataset& ds) {
  return make_windows(ds.records, PipelineConfig{}).samples;
}

std::vector<WindowedSample> normalised(std::span<const WindowedSample> fit_on, std::span<const WindowedSample> apply_to) {
  return apply_minmax(apply_to, fit_minmax(fit_on));
}

SynthDataset separable_dataset() {
  SynthConfig sc;
  sc.seed = kDataSeed;
  return synth_generate(sc);
}

SynthDataset signal_free_dataset() {
  SynthConfig sc;
  sc.seed = kDataSeed;
  sc.separation = 0.0;
  return synth_generate(sc);
}

// --- criteria ----------------------------------------------------------------------------

void gradient_correctness() {
  using attenc::testing::check_gradients;
  using attenc::testing::probe;
  using attenc::testing::random_parameter;
  using Ts = std::vector<Tensor>;
  const auto t0 = std::chrono::steady_clock::now();
  double worst_layer = 0.0, worst_model = 0.0;
  std::string worst_name;
  auto layer = [&](const char* name, const std::function<Tensor(const Ts&)>& f, Ts in) {
    const auto r = check_gradients(f, std::move(in), kGradStep);
    if (r.max_rel_error > worst_layer) {
      worst_layer = r.max_rel_error;
      worst_name = name;
    }
  };
  AttEncConfig tiny;
  tiny.input_channels = 3;
  tiny.window_length = 8;
  tiny.conv1_channels = 4;
  tiny.model_dim = 4;
  tiny.heads = 2;
  tiny.ff_dim = 6;
  tiny.embedding_dim = 4;
  tiny.classes = 3;

  for (int seed = 0; seed < kGradSeeds; ++seed) {
    Rng rng(9000 + seed);
    const auto w = static_cast<std::uint64_t>(seed);
    layer("matmul", [&](const Ts& t) { return probe(matmul(t[0], t[1]), w); },
          {random_parameter(rng, {3, 4}), random_parameter(rng, {4, 2})});
    layer("softmax", [&](const Ts& t) { return probe(softmax_lastdim(t[0]), w); }, {random_parameter(rng, {3, 5})});
    layer("relu", [&](const Ts& t) { return probe(relu(t[0]), w); }, {random_parameter(rng, {3, 5})});
    layer("mean_rows", [&](const Ts& t) { return probe(mean_rows(t[0]), w); }, {random_parameter(rng, {4, 3})});
    layer("pairwise_sq_dist", [&](const Ts& t) { return probe(pairwise_sq_dist(t[0], t[1]), w); },
          {random_parameter(rng, {3, 4}), random_parameter(rng, {2, 4})});
    layer("conv1d", [&](const Ts& t) { return probe(conv1d(t[0], Conv1dParams{t[1], t[2], 1, 1}), w); },
          {random_parameter(rng, {6, 3}), random_parameter(rng, {4, 3, 3}), random_parameter(rng, {4})});
    layer("positional", [&](const Ts& t) { return probe(positional_embed(3, PositionalEmbeddingTable{t[0]}), w); },
          {random_parameter(rng, {5, 2})});
    layer("attention", [&](const Ts& t) { return probe(attention(t[0], t[1], t[2]), w); },
          {random_parameter(rng, {4, 3}), random_parameter(rng, {5, 3}), random_parameter(rng, {5, 2})});
    layer("multi_head",
          [&](const Ts& t) {
            MultiHeadParams p{{t[1], t[4]}, {t[2], t[5]}, {t[3], t[6]}, t[7]};
            return probe(multi_head(t[0], p), w);
          },
          {random_parameter(rng, {5, 4}), random_parameter(rng, {4, 2}), random_parameter(rng, {4, 2}),
           random_parameter(rng, {4, 2}), random_parameter(rng, {4, 2}), random_parameter(rng, {4, 2}),
           random_parameter(rng, {4, 2}), random_parameter(rng, {4, 4})});
    layer("layer_norm", [&](const Ts& t) { return probe(layer_norm(t[0], LayerNormParams{t[1], t[2], 1e-5}), w); },
          {random_parameter(rng, {3, 5}), random_parameter(rng, {5}), random_parameter(rng, {5})});
    layer("feed_forward",
          [&](const Ts& t) { return probe(feed_forward(t[0], DenseParams{t[1], t[2]}, DenseParams{t[3], t[4]}), w); },
          {random_parameter(rng, {3, 4}), random_parameter(rng, {4, 6}), random_parameter(rng, {6}),
           random_parameter(rng, {6, 4}), random_parameter(rng, {4})});
    layer("residual_add", [&](const Ts& t) { return probe(residual_add(t[0], t[1]), w); },
          {random_parameter(rng, {3, 4}), random_parameter(rng, {3, 4})});
    layer("episode_loss",
          [&](const Ts& t) {
            const std::vector<int> s{0, 0, 1, 1}, q{1, 0};
            return episode_loss(t[1], q, compute_prototypes(t[0], s));
          },
          {random_parameter(rng, {4, 3}), random_parameter(rng, {2, 3})});

    const auto p = init_encoder(tiny, 100 + seed);
    const auto window = attenc::testing::random_tensor(rng, {8, 3});
    const std::vector<std::size_t> label{static_cast<std::size_t>(seed % 3)};
    const auto r = check_gradients(
        [&](const Ts&) { return cross_entropy(reshape(classifier_logits(window, p), {1, 3}), label); }, parameters(p),
        kGradStep);
    worst_model = std::max(worst_model, r.max_rel_error);
  }
  const double secs = seconds_since(t0);
  report("gradient correctness",
         worst_layer < kLayerGradTol && worst_model < kModelGradTol && secs < kGradSeconds,
         "worst layer rel err " + fmt("%.2e", worst_layer) + " (" + worst_name + ", tol 1e-4), full model " +
             fmt("%.2e", worst_model) + " (tol 1e-3), " + std::to_string(kGradSeeds) + " seeds, " +
             fmt("%.1f", secs) + " s (limit 60 s)");
}

void attention_normalisation() {
  Rng rng(77);
  double worst = 0.0;
  for (int trial = 0; trial < kAttentionTrials; ++trial) {
    const std::size_t lq = 1 + rng.index(12), lk = 1 + rng.index(12), dk = 1 + rng.index(8);
    const double spread = rng.uniform(0.1, 20.0);
    const auto q = attenc::testing::random_tensor(rng, {lq, dk}, -spread, spread);
    const auto k = attenc::testing::random_tensor(rng, {lk, dk}, -spread, spread);
    const auto w = attention_weights(q, k);
    for (std::size_t r = 0; r < lq; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < lk; ++c) s += w.at(r, c);
      worst = std::max(worst, std::abs(s - 1.0));
    }
  }
  bool shapes = true;
  for (std::size_t h : {1, 2, 4, 16}) {
    const std::size_t model = 16, dk = model / h, len = 7;
    MultiHeadParams p;
    for (std::size_t i = 0; i < h; ++i) {
      p.query.push_back(attenc::testing::random_tensor(rng, {model, dk}));
      p.key.push_back(attenc::testing::random_tensor(rng, {model, dk}));
      p.value.push_back(attenc::testing::random_tensor(rng, {model, dk}));
    }
    p.output = attenc::testing::random_tensor(rng, {h * dk, model});
    shapes &= multi_head(attenc::testing::random_tensor(rng, {len, model}), p).shape() == Shape{len, model};
  }
  report("attention normalisation", worst < kRowSumTol && shapes,
         "max |row sum - 1| " + fmt("%.2e", worst) + " over " + std::to_string(kAttentionTrials) +
             " inputs (tol 1e-6); multi-head shape contract for h in {1,2,4,16}: " + (shapes ? "held" : "broken"));
}

void prototype_oracle() {
  Rng rng(123);
  std::size_t mismatches = 0, nn_mismatches = 0, queries = 0;
  for (int e = 0; e < kOracleEpisodes; ++e) {
    const std::size_t n = 2 + rng.index(9), k = 1 + rng.index(10), m = 1 + rng.index(16), q = 1 + rng.index(5);
    const auto support = attenc::testing::random_tensor(rng, {n * k, m});
    std::vector<int> labels;
    for (std::size_t c = 0; c < n; ++c)
      for (std::size_t j = 0; j < k; ++j) labels.push_back(static_cast<int>(c));
    const auto protos = compute_prototypes(support, labels);
    const auto qs = attenc::testing::random_tensor(rng, {n * q, m});
    for (std::size_t i = 0; i < n * q; ++i) {
      // brute-force class means and nearest scan
      int best = -1;
      double best_d = INFINITY;
      for (std::size_t c = 0; c < n; ++c) {
        double d = 0.0;
        for (std::size_t f = 0; f < m; ++f) {
          double mu = 0.0;
          for (std::size_t j = 0; j < k; ++j) mu += support.at(c * k + j, f);
          mu /= static_cast<double>(k);
          d += (qs.at(i, f) - mu) * (qs.at(i, f) - mu);
        }
        if (d < best_d) {
          best_d = d;
          best = static_cast<int>(c);
        }
      }
      const auto probs = classify_query(reshape(slice_rows(qs, i, 1), {m}), protos);
      std::size_t arg = 0;
      for (std::size_t c = 1; c < n; ++c)
        if (probs.values()[c] > probs.values()[arg]) arg = c;
      mismatches += protos.class_ids[arg] != best;
      ++queries;
    }
    const auto pred = predict(qs, protos);
    if (k == 1) {
      for (std::size_t i = 0; i < n * q; ++i) {
        std::size_t nn = 0;
        double nn_d = INFINITY;
        for (std::size_t s = 0; s < n; ++s) {
          double d = 0.0;
          for (std::size_t f = 0; f < m; ++f) d += (qs.at(i, f) - support.at(s, f)) * (qs.at(i, f) - support.at(s, f));
          if (d < nn_d) {
            nn_d = d;
            nn = s;
          }
        }
        nn_mismatches += pred[i] != labels[nn];
      }
    }
  }
  report("prototype oracle equivalence", mismatches == 0 && nn_mismatches == 0,
         std::to_string(mismatches) + " argmax/nearest-prototype disagreements over " + std::to_string(queries) +
             " queries in " + std::to_string(kOracleEpisodes) + " episodes; " + std::to_string(nn_mismatches) +
             " one-shot vs 1-NN disagreements");
}

void untrained_baselines(const std::vector<WindowedSample>& flat_pool, const std::vector<WindowedSample>& sep_pool) {
  const auto p = init_encoder(desk_encoder(), 31);
  const auto flat = embed_all(p, flat_pool);
  const auto sep = embed_all(p, sep_pool);

  std::string loss_detail, chance_detail, context;
  bool loss_ok = true, chance_ok = true;
  for (std::size_t n : {2, 5, 10}) {
    const auto r = evaluate_embedded(flat, flat_pool, n, 5, 5, kBaselineEpisodes, 500 + n);
    const double ln = std::log(static_cast<double>(n));
    loss_ok &= std::abs(r.mean_loss - ln) <= kBaselineTol;
    loss_detail += " N=" + std::to_string(n) + " loss " + fmt("%.4f", r.mean_loss) + " vs ln N " + fmt("%.4f", ln) + ";";

    const double pval = stats::binomial_two_sided(r.correct, r.total, 1.0 / static_cast<double>(n));
    chance_ok &= pval > kChanceAlpha;
    chance_detail += " N=" + std::to_string(n) + " acc " + fmt("%.4f", r.mean_accuracy) + " vs " +
                     fmt("%.4f", 1.0 / static_cast<double>(n)) + " (p=" + fmt("%.3f", pval) + ");";

    const auto s = evaluate_embedded(sep, sep_pool, n, 5, 5, kBaselineEpisodes, 500 + n);
    context += " N=" + std::to_string(n) + " acc " + fmt("%.3f", s.mean_accuracy) + " loss " + fmt("%.3f", s.mean_loss) + ";";
  }
  report("untrained episode loss is ln N", loss_ok,
         "signal-free drivers, " + std::to_string(kBaselineEpisodes) + " episodes, 5-shot 5-query, tol 0.15:" +
             loss_detail);
  report("chance-floor control", chance_ok,
         "untrained encoder on signal-free drivers, two-sided binomial over query outcomes, alpha 0.01:" +
             chance_detail);
  std::cout << "     context: the same untrained encoder on the well-separated drivers:" << context << std::endl;
}

void windowing() {
  TimeSeriesRecord r;
  r.driver_id = "d";
  r.sample_rate = 1.0;
  r.channel_names = {"speed", "flat"};
  std::vector<double> speed(60);
  for (std::size_t t = 0; t < 60; ++t) speed[t] = 40.0 + 10.0 * std::sin(0.3 * static_cast<double>(t));
  r.channels = {speed, std::vector<double>(60, 7.0)};
  const std::vector<TimeSeriesRecord> recs{r};
  const auto norm = apply_minmax(r, fit_minmax(recs));
  const auto slice = slice_windows(norm, 0, WindowingConfig{30.0, 0.5});
  bool in_range = true, degenerate_zero = true;
  std::string offsets;
  for (const auto& w : slice.windows) {
    offsets += (offsets.empty() ? "" : "/") + std::to_string(w.offset);
    for (std::size_t t = 0; t < w.matrix.rows(); ++t) {
      in_range &= w.matrix.at(t, 0) >= 0.0 && w.matrix.at(t, 0) <= 1.0;
      degenerate_zero &= w.matrix.at(t, 1) == 0.0;
    }
  }
  report("windowing and minmax", slice.windows.size() == 3 && in_range && degenerate_zero,
         std::to_string(slice.windows.size()) + " windows at offsets " + offsets + " (expected 3 at 0/15/30); values in [0,1]: " +
             (in_range ? "yes" : "no") + "; degenerate channel all zero: " + (degenerate_zero ? "yes" : "no"));
}

void stage1(const std::vector<WindowedSample>& raw) {
  std::vector<std::size_t> per(10, 0);
  for (const auto& w : raw) ++per[static_cast<std::size_t>(w.label)];
  const auto min_per = *std::min_element(per.begin(), per.end());
  ClassifierConfig cfg;
  cfg.epochs = kStage1Epochs;
  const auto t0 = std::chrono::steady_clock::now();
  const auto cv = cross_validate(raw, 10, desk_encoder(), cfg, 5, 7, true);
  const double secs = seconds_since(t0);
  std::string folds;
  for (double a : cv.fold_accuracies) folds += (folds.empty() ? "" : " ") + fmt("%.4f", a);
  report("stage-1 cross-validated accuracy",
         cv.mean_accuracy >= kStage1Accuracy && kStage1Epochs <= kStage1MaxEpochs && secs <= kStage1Seconds &&
             min_per >= kMinWindowsPerDriver,
         "10 drivers, >= " + std::to_string(min_per) + " windows each, 5-fold accuracy " +
             format_accuracy(cv.mean_accuracy, cv.std_accuracy) + " [" + folds + "] after " +
             std::to_string(kStage1Epochs) + " epochs (need >= 95.0 within 150), " + fmt("%.0f", secs) +
             " s (limit 900 s), " + std::to_string(cv.param_count) + " parameters");
}

struct Comparison {
  bool pass;
  std::string text;
};

// a should be >= b: margin of 2 points, or a sign test that cannot tell them apart
Comparison ordered(const EvalResult& a, const EvalResult& b, const std::string& label) {
  std::size_t wins = 0, losses = 0;
  for (std::size_t i = 0; i < a.episode_accuracies.size(); ++i) {
    wins += a.episode_accuracies[i] > b.episode_accuracies[i];
    losses += a.episode_accuracies[i] < b.episode_accuracies[i];
  }
  const double diff = a.mean_accuracy - b.mean_accuracy;
  const double p = stats::sign_test(wins, losses);
  const bool margin = diff >= kTrendMargin;
  const bool tie = p >= kTrendAlpha;
  return {margin || tie, label + " diff " + fmt("%+.4f", diff) + (margin ? " (margin)" : tie ? " (tie, sign p=" + fmt("%.3f", p) + ")" : " (sign p=" + fmt("%.3f", p) + ")")};
}

void stage2_trends(const std::vector<WindowedSample>& raw) {
  const auto s = split(raw, 0.8, 11);
  const auto train_raw = select(raw, s.train);
  const auto test_raw = select(raw, s.test);
  const auto train = normalised(train_raw, train_raw);
  const auto test = normalised(train_raw, test_raw);
  ProtoConfig cfg;
  cfg.epochs = kProtoEpochs;
  cfg.way = 10;
  const auto t0 = std::chrono::steady_clock::now();
  const auto model = train_protonet(train, desk_encoder(), cfg, 13);
  const double secs = seconds_since(t0);
  const auto emb = embed_all(model.params, test);
  EvalResult r[2][3];
  const std::size_t ways[2] = {5, 10}, shots[3] = {1, 5, 10};
  std::string grid;
  for (int w = 0; w < 2; ++w)
    for (int k = 0; k < 3; ++k) {
      r[w][k] = evaluate_embedded(emb, test, ways[w], shots[k], 5, kEvalEpisodes, 900);
      grid += " " + std::to_string(ways[w]) + "w" + std::to_string(shots[k]) + "s=" + fmt("%.4f", r[w][k].mean_accuracy);
    }
  bool pass = true;
  std::string detail;
  auto add = [&](const Comparison& c) {
    pass &= c.pass;
    detail += " " + c.text + ";";
  };
  add(ordered(r[0][2], r[0][0], "5-way 10>=1 shot"));
  add(ordered(r[1][2], r[1][0], "10-way 10>=1 shot"));
  for (int k = 0; k < 3; ++k) add(ordered(r[0][k], r[1][k], std::to_string(shots[k]) + "-shot 5>=10 way"));
  report("stage-2 shot and way trends", pass,
         "10-way training " + std::to_string(kProtoEpochs) + "x200 episodes (" + fmt("%.0f", secs) + " s);" + grid +
             ";" + detail);
}

void unknown_drivers(const std::vector<WindowedSample>& raw) {
  EvalResult res[3];
  std::string detail;
  for (std::size_t n = 6; n <= 8; ++n) {
    Rng rng(17);
    const auto s = split_known_unknown(raw, n, rng);
    const auto train = normalised(s.train, s.train);
    const auto test = normalised(s.train, s.test);
    ProtoConfig cfg;
    cfg.epochs = kUnknownEpochs;
    cfg.episodes_per_epoch = kUnknownEpisodes;
    cfg.way = n;
    const auto model = train_protonet(train, desk_encoder(), cfg, 19);
    res[n - 6] = evaluate_episodes(model.params, test, 2, 1, 5, kEvalEpisodes, 23);
    detail += " " + std::to_string(n) + "-way acc " + fmt("%.4f", res[n - 6].mean_accuracy) + ";";
  }
  const auto& r8 = res[2];
  const double p_above = stats::binomial_upper_tail(r8.correct, r8.total, 0.5);
  const bool above = r8.mean_accuracy > 0.5 && p_above < kUnknownAlpha;
  bool trend = true;
  for (int i = 0; i < 2; ++i) {
    const auto& lo = res[i];
    const auto& hi = res[i + 1];
    const double p = stats::two_proportion_test(hi.correct, hi.total, lo.correct, lo.total);
    const bool ok = hi.mean_accuracy >= lo.mean_accuracy || p >= kTrendAlpha;
    trend &= ok;
    detail += " " + std::to_string(i + 7) + " vs " + std::to_string(i + 6) + (hi.mean_accuracy >= lo.mean_accuracy ? " non-decreasing" : ok ? " within noise (p=" + fmt("%.3f", p) + ")" : " decreasing (p=" + fmt("%.3f", p) + ")") + ";";
  }
  report("unknown-driver protocol", above && trend,
         "2-way 1-shot on held-out drivers, 200 episodes; 8 known drivers: " + std::to_string(r8.correct) + "/" +
             std::to_string(r8.total) + " queries, one-sided binomial p=" + fmt("%.2e", p_above) + " vs 0.5 (alpha 0.01);" +
             detail);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void determinism() {
  const auto root = fs::temp_directory_path() / "attenc_acceptance_determinism";
  fs::remove_all(root);
  const std::vector<std::string> commands{
      "synth -o d.csv",
      "preprocess -i d.csv -o w.bin",
      "train-cls -i w.bin -o cls.ckpt",
      "train-proto -i w.bin -o proto.ckpt",
      "eval -i w.bin --checkpoint proto.ckpt --shot 1 --query 3 --report eval.csv",
      "train-proto -i w.bin -o unknown.ckpt --set unknown=true --set train_way=3 --way 3",
      "eval -i w.bin --checkpoint unknown.ckpt --unknown --way 2 --shot 1 --report unknown.csv",
      "export-embeddings -i w.bin --checkpoint proto.ckpt -o emb.csv",
      "param-count --checkpoint cls.ckpt",
  };
  const std::string cfg =
      "conv1_channels = 8\nmodel_dim = 16\nheads = 4\nff_dim = 32\nembedding_dim = 16\ndrivers = 5\n"
      "seconds_per_driver = 400\nepochs = 2\nfolds = 2\nproto_epochs = 2\nepisodes_per_epoch = 5\nway = 4\n"
      "eval_episodes = 20\nseed = 99\n";
  bool all_ok = true;
  std::vector<fs::path> runs{root / "a", root / "b"};
  for (const auto& dir : runs) {
    fs::create_directories(dir);
    std::ofstream(dir / "run.cfg") << cfg;
    for (std::size_t i = 0; i < commands.size(); ++i) {
      const std::string cmd = "cd " + dir.string() + " && " + ATTENC_CLI + " " + commands[i] + " -c run.cfg > out" +
                              std::to_string(i) + ".txt 2> /dev/null";
      const int status = std::system(cmd.c_str());
      all_ok &= WIFEXITED(status) && WEXITSTATUS(status) == 0;
    }
  }
  std::size_t files = 0, differing = 0;
  std::string which;
  for (const auto& entry : fs::directory_iterator(runs[0])) {
    ++files;
    const auto other = runs[1] / entry.path().filename();
    if (!fs::exists(other) || slurp(entry.path()) != slurp(other)) {
      ++differing;
      which += " " + entry.path().filename().string();
    }
  }
  report("CLI determinism", all_ok && differing == 0 && files > commands.size(),
         std::to_string(commands.size()) + " commands run twice, " + std::to_string(files) +
             " output files and stdout captures compared byte for byte, " + std::to_string(differing) + " differ" +
             which + (all_ok ? "" : "; a command failed"));
}

// Counts values by reading the checkpoint text back, independently of the loader.
std::size_t count_checkpoint_values(const std::string& path) {
  std::ifstream in(path);
  std::string line;
  std::size_t total = 0;
  while (std::getline(in, line)) {
    if (line.rfind("param ", 0) != 0) continue;
    std::istringstream ls(line);
    std::string tag, name;
    std::size_t rank = 0;
    ls >> tag >> name >> rank;
    std::size_t n = 1;
    for (std::size_t i = 0; i < rank; ++i) {
      std::size_t d = 0;
      ls >> d;
      n *= d;
    }
    std::string values;
    std::getline(in, values);
    std::istringstream vs(values);
    std::string tok;
    std::size_t seen = 0;
    while (vs >> tok) ++seen;
    if (seen != n) return 0;
    total += n;
  }
  return total;
}

void parameter_accounting() {
  const auto dir = fs::temp_directory_path() / "attenc_acceptance_params";
  fs::create_directories(dir);
  Rng rng(55);
  int agree = 0;
  for (int i = 0; i < 10; ++i) {
    AttEncConfig c;
    c.input_channels = 1 + rng.index(10);
    c.window_length = 2 + rng.index(40);
    c.conv1_width = 1 + 2 * rng.index(3);
    c.conv2_width = 1 + 2 * rng.index(3);
    c.conv1_channels = 1 + rng.index(32);
    c.heads = 1 + rng.index(8);
    c.model_dim = c.heads * (1 + rng.index(4));
    c.stack = 1 + rng.index(3);
    c.ff_dim = 1 + rng.index(64);
    c.embedding_dim = 1 + rng.index(32);
    c.classes = rng.index(12);
    const auto p = init_encoder(c, i);
    const auto path = (dir / ("c" + std::to_string(i) + ".ckpt")).string();
    save_checkpoint(path, p);
    agree += param_count(c) == count_checkpoint_values(path) && param_count(p) == param_count(c);
  }
  AttEncConfig def;
  def.classes = 10;
  report("parameter accounting", agree == 10,
         std::to_string(agree) + "/10 random configs match the enumerated checkpoint arrays; default config with a "
         "10-class head has " + std::to_string(param_count(def)) + " parameters (" +
             std::to_string(param_count(AttEncConfig{})) + " without the head), published AttEnc figure " +
             fmt("%.0f", kPublishedParams) + " (context only)");
}

}  // namespace

int main() {
  const auto t0 = std::chrono::steady_clock::now();
  gradient_correctness();
  attention_normalisation();
  prototype_oracle();

  const auto sep_raw = windows_of(separable_dataset());
  const auto flat_raw = windows_of(signal_free_dataset());
  const auto sep_all = normalised(sep_raw, sep_raw);
  const auto flat_all = normalised(flat_raw, flat_raw);
  untrained_baselines(flat_all, sep_all);
  windowing();
  stage1(sep_raw);
  stage2_trends(sep_raw);
  unknown_drivers(sep_raw);
  determinism();
  parameter_accounting();
  std::cout << (failures == 0 ? "ALL CRITERIA PASSED" : std::to_string(failures) + " CRITERIA FAILED") << " ("
            << fmt("%.0f", seconds_since(t0)) << " s)" << std::endl;
  return failures;
}
