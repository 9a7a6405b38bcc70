// Runs the eight acceptance checks and prints one PASS/FAIL line per check.
// Exit status is the number of failed checks.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "kgcbm/cli.hpp"
#include "support.hpp"

using namespace kgcbm;
using namespace kgcbm::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

Outcome gradient_check() {
  double worst = 0.0;
  std::size_t checked = 0, kinks = 0;
  for (auto kind : {ClassifierKind::Linear, ClassifierKind::Mlp20, ClassifierKind::Mlp128}) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto p = random_problem(1000 + seed);
      auto model = CbmModel::create(p.scheme, p.data.feature_width(), kind, seed, {6});
      const AlignMode mode = seed % 2 ? AlignMode::Column : AlignMode::Pairwise;
      const LossWeights w{0.5 + 0.1 * static_cast<double>(seed), 1.0};
      const auto r = check_gradients(model, [&](const CbmModel& m, std::vector<Tensor>* g) {
        return full_loss(m, p.data, p.matrix, w, 0.3, mode, g);
      });
      worst = std::max(worst, r.worst);
      checked += r.checked;
      kinks += r.kinks;
    }
  }
  return {worst <= 1e-4, "30 configs, " + std::to_string(checked) + " entries (" + std::to_string(kinks) +
                               " redone at a smaller step across a kink), worst rel err " + fmt("%.2e", worst)};
}

Outcome delta_y_oracle() {
  const auto d = delta_y(hand_model(), hand_bottleneck());
  const ImportanceMatrix m(2, 2, {Importance::High, Importance::Low, Importance::High, Importance::Low});
  const double high = align_loss_high(d, m, AlignMode::Pairwise, std::vector<int>{0});
  const bool ok = std::abs(d.at(0, 0, 0) - 0.3320) <= 1e-4 && std::abs(d.at(0, 1, 0) - 0.3320) <= 1e-4 &&
                  std::abs(d.at(0, 0, 1)) <= 1e-4 && std::abs(d.at(0, 1, 1)) <= 1e-4 &&
                  std::abs(high - 1.3360) <= 1e-4;
  return {ok, "DeltaY col1 [" + fmt("%.4f", d.at(0, 0, 0)) + ", " + fmt("%.4f", d.at(0, 1, 0)) + "], col2 [" +
                  fmt("%.4f", d.at(0, 0, 1)) + ", " + fmt("%.4f", d.at(0, 1, 1)) + "], L_high " + fmt("%.4f", high)};
}

Outcome baseline_equivalence() {
  const auto cfg = SynthConfig::defaults();
  const auto tr = generate(cfg, Domain::InDomain, Split::Train);
  const auto va = generate(cfg, Domain::InDomain, Split::Val);
  TrainConfig tc;
  tc.epochs = 5;
  tc.lambda = 0.0;
  auto a = train(tc, tr, va, synth_importance(cfg));
  auto b = train(tc, tr, va);
  bool same = true;
  const auto pa = a.model.parameters(), pb = b.model.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) same = same && *pa[i] == *pb[i];
  for (std::size_t e = 0; e < a.record.epochs.size(); ++e)
    same = same && a.record.epochs[e].total == b.record.epochs[e].total &&
           a.record.epochs[e].val_macro_f1 == b.record.epochs[e].val_macro_f1;
  return {same, same ? "5 epochs, parameters and losses bitwise equal" : "runs differ"};
}

struct BenchmarkResult {
  double base_in = 0, base_ood = 0, aligned_ood = 0, random_ood = 0;
  std::vector<double> aligned_scores, baseline_scores;
  bool ran = false;
  std::string error;
};

double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

BenchmarkResult run_benchmark(const std::string& work) {
  BenchmarkResult out;
  const std::string manifest = std::string(KGCBM_SOURCE_DIR) + "/configs/synthetic/benchmark.json";
  const std::string dir = work + "/benchmark";
  fs::remove_all(dir);
  try {
    std::ostringstream table;
    const auto rows = cli::cmd_compare({{}, manifest, dir, dir + "/compare.json", false}, table, std::cerr);
    std::cout << table.str();
    for (const auto& r : rows) {
      const double in = r.by_domain.at("in_domain").ci.mean, ood = r.by_domain.at("out_of_domain").ci.mean;
      if (r.variant == "baseline") out.base_in = in, out.base_ood = ood;
      if (r.variant == "aligned") out.aligned_ood = ood;
      if (r.variant == "random") out.random_ood = ood;
    }
    const auto m = cli::load_manifest(manifest, dir);
    for (const auto& run : m.runs) {
      const auto variant = cli::variant_of(run.config.knowledge);
      if (variant == "random") continue;
      std::ostringstream sink;
      const auto r = cli::cmd_audit({dir + "/" + run.name + "/model.json", run.data_dir + "/test_ood.csv",
                                     run.data_dir + "/knowledge.json", dir + "/" + run.name + "/audit", false},
                                    sink);
      (variant == "aligned" ? out.aligned_scores : out.baseline_scores).push_back(r.alignment_score);
    }
    out.ran = true;
  } catch (const std::exception& e) {
    out.error = e.what();
  }
  return out;
}

Outcome ood_gain(const BenchmarkResult& b) {
  if (!b.ran) return {false, "benchmark failed: " + b.error};
  const double gap = b.aligned_ood - b.base_ood;
  const bool a = b.base_in >= 0.95, g = gap >= 0.05, c = b.aligned_ood >= b.random_ood;
  return {a && g && c, "baseline in " + fmt("%.4f", b.base_in) + (a ? "" : " (<0.95)") + "; OOD baseline " +
                           fmt("%.4f", b.base_ood) + ", aligned " + fmt("%.4f", b.aligned_ood) + " (gap " +
                           fmt("%+.2f", 100 * gap) + " pts" + (g ? "" : ", <5") + "), random " +
                           fmt("%.4f", b.random_ood) + (c ? "" : " (above aligned)")};
}

Outcome importance_alignment(const BenchmarkResult& b) {
  if (!b.ran) return {false, "benchmark failed: " + b.error};
  const double al = mean(b.aligned_scores), base = mean(b.baseline_scores);
  std::string per;
  for (double s : b.aligned_scores) per += (per.empty() ? "" : ", ") + fmt("%.3f", s);
  return {al >= 0.2 && al > base,
          "OOD alignment score aligned " + fmt("%.3f", al) + " [" + per + "], baseline " + fmt("%.3f", base)};
}

Outcome metric_oracles() {
  std::mt19937_64 rng(2);
  double worst = 0.0;
  for (int c = 0; c < 100; ++c) {
    const std::size_t K = std::uniform_int_distribution<std::size_t>(2, 6)(rng);
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 50)(rng);
    const int hi = c % 3 == 0 ? 1 : static_cast<int>(K) - 1;  // leaves classes empty
    std::uniform_int_distribution<int> lab(0, hi);
    std::vector<int> t(n), p(n);
    for (auto& v : t) v = lab(rng);
    for (auto& v : p) v = lab(rng);
    const auto want = brute_force_f1(t, p, K);
    const auto got = macro_f1(t, p, K);
    double macro = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      worst = std::max(worst, std::abs(got.per_class[k] - want[k]));
      macro += want[k];
    }
    worst = std::max(worst, std::abs(got.macro - macro / static_cast<double>(K)));
  }
  const std::vector<int> t{0, 0, 1, 1, 2}, p{0, 1, 1, 1, 2};
  const double hand = macro_f1(t, p, 3).macro;
  const std::vector<double> v{0.6, 0.7, 0.8};
  const auto ci = confidence_interval(v);
  const bool ok = worst <= 1e-12 && std::abs(hand - 0.8222) <= 1e-4 && std::abs(ci.mean - 0.7) <= 1e-4 &&
                  std::abs(ci.half_width - 0.1132) <= 1e-4;
  return {ok, "oracle worst diff " + fmt("%.1e", worst) + ", hand macro F1 " + fmt("%.4f", hand) + ", CI " +
                  fmt("%.4f", ci.mean) + " +- " + fmt("%.4f", ci.half_width)};
}

Outcome determinism(const std::string& work) {
  const std::string dir = work + "/determinism";
  fs::remove_all(dir);
  std::ostringstream sink;
  cli::cmd_synth({"", dir + "/data_a", std::nullopt}, sink);
  cli::cmd_synth({"", dir + "/data_b", std::nullopt}, sink);
  std::vector<std::string> differ;
  for (const char* f : {"scheme.json", "knowledge.json", "synth_config.json", "train.csv", "val.csv", "test_in.csv",
                        "test_ood.csv"})
    if (read_bytes(dir + "/data_a/" + f) != read_bytes(dir + "/data_b/" + f)) differ.push_back(f);
  TrainConfig tc;
  tc.epochs = 2;
  tc.knowledge = dir + "/data_a/knowledge.json";
  cli::cmd_train({dir + "/data_a", "", dir + "/run_a", tc}, sink);
  cli::cmd_train({dir + "/data_a", "", dir + "/run_b", tc}, sink);
  for (const char* f : {"model.json", "run.jsonl", "config.json"})
    if (read_bytes(dir + "/run_a/" + f) != read_bytes(dir + "/run_b/" + f)) differ.push_back(f);
  std::string list;
  for (const auto& f : differ) list += " " + f;
  return {differ.empty(), differ.empty() ? "synth (7 files) and train (3 files) reruns byte-identical"
                                         : "differs:" + list};
}

Outcome optimizer_and_loss() {
  nn::AdamW opt({1e-4, 0.9, 0.999, 1e-8, 0.01});
  Tensor theta = Tensor::scalar(1.0);
  const Tensor grad = Tensor::scalar(1.0);
  std::vector<Tensor*> params{&theta};
  std::vector<const Tensor*> grads{&grad};
  opt.step(params, grads);

  auto ce = [](const std::vector<double>& p, double s) {
    ad::Graph g;
    const std::vector<int> t{0};
    return g.value(nn::cross_entropy(g, g.constant(Tensor::matrix(1, p.size(), p)), t, s, p.size())).item();
  };
  double worst_uniform = 0.0;
  for (std::size_t K : {2u, 3u, 5u, 8u})
    for (double s : {0.0, 0.1, 0.3, 0.7, 1.0})
      worst_uniform = std::max(worst_uniform,
                               std::abs(ce(std::vector<double>(K, 1.0 / static_cast<double>(K)), s) -
                                        std::log(static_cast<double>(K))));
  const double smoothed = ce({0.8, 0.2}, 1.0);
  const bool ok = std::abs(theta.item() - 0.9998990) <= 1e-6 && worst_uniform <= 1e-12 &&
                  std::abs(smoothed - 0.9163) <= 1e-4;
  return {ok, "AdamW step " + fmt("%.7f", theta.item()) + ", uniform CE - ln K worst " + fmt("%.1e", worst_uniform) +
                  ", smoothed CE " + fmt("%.4f", smoothed)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::string work = (fs::temp_directory_path() / "kgcbm_acceptance").string();
  app.add_option("--work-dir", work, "scratch directory for benchmark runs");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);

  int failed = 0;
  auto report = [&](int id, const char* name, const std::function<Outcome()>& check) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << id << " " << name << ": " << o.detail << " ["
              << fmt("%.1f", secs) << " s]" << std::endl;
  };

  report(1, "gradient correctness", gradient_check);
  report(2, "DeltaY unit oracle", delta_y_oracle);
  report(3, "baseline equivalence", baseline_equivalence);
  BenchmarkResult bench;
  report(4, "directional OOD gain", [&] {
    bench = run_benchmark(work);
    return ood_gain(bench);
  });
  report(5, "importance alignment", [&] { return importance_alignment(bench); });
  report(6, "metric oracles", metric_oracles);
  report(7, "determinism", [&] { return determinism(work); });
  report(8, "optimizer and loss checks", optimizer_and_loss);
  return failed;
}
