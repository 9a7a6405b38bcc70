#include <gtest/gtest.h>

#include <cstdlib>
#include <sstream>

#include "kgcbm/cli.hpp"
#include "support.hpp"

using namespace kgcbm;
using namespace kgcbm::testing;
using nlohmann::json;

namespace {

std::string tiny_synth_config(const std::string& dir) {
  auto cfg = small_synth(160);
  cfg.n_val = 60;
  cfg.n_test_in = 60;
  cfg.n_test_ood = 60;
  const auto path = dir + "/synth.json";
  write_json_file(path, to_json(cfg));
  return path;
}

TrainConfig tiny_train(std::uint64_t seed, const std::string& knowledge = "none") {
  TrainConfig c;
  c.epochs = 2;
  c.lr = 1e-3;
  c.classifier = ClassifierKind::Mlp20;
  c.predictor_hidden = {16};
  c.seed = seed;
  c.knowledge = knowledge;
  return c;
}

std::string synth_into(const std::string& dir) {
  std::ostringstream log;
  cli::cmd_synth({tiny_synth_config(dir), dir + "/data", std::nullopt}, log);
  return dir + "/data";
}

void train_and_eval(const std::string& data, const std::string& run, const TrainConfig& cfg) {
  std::ostringstream sink;
  cli::cmd_train({data, "", run, cfg}, sink);
  for (const char* f : {"test_in.csv", "test_ood.csv"})
    cli::cmd_eval({run + "/model.json", data + "/" + f, run + "/metrics_" + std::string(f).substr(0, std::string(f).size() - 4) + ".json", false},
                  sink);
}

int run_cli(const std::string& args) {
  const int status = std::system((std::string(KGCBM_CLI) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Synth, WritesEveryFileWithConfiguredCounts) {
  const auto dir = scratch_dir("cli_synth");
  const auto data = synth_into(dir);
  const auto scheme = load_scheme(data + "/scheme.json");
  EXPECT_EQ(load_dataset(data + "/train.csv", scheme).size(), 160u);
  EXPECT_EQ(load_dataset(data + "/val.csv", scheme).size(), 60u);
  EXPECT_EQ(load_dataset(data + "/test_in.csv", scheme).domain, Domain::InDomain);
  EXPECT_EQ(load_dataset(data + "/test_ood.csv", scheme).domain, Domain::OutOfDomain);
  EXPECT_NO_THROW(load_importance(data + "/knowledge.json", scheme));
  EXPECT_NO_THROW(synth_config_from_json(read_json_file(data + "/synth_config.json")));
}

TEST(Synth, RerunIsByteIdenticalAndSeedMatters) {
  const auto dir = scratch_dir("cli_synth_rerun");
  const auto cfg = tiny_synth_config(dir);
  std::ostringstream log;
  cli::cmd_synth({cfg, dir + "/a", std::nullopt}, log);
  cli::cmd_synth({cfg, dir + "/b", std::nullopt}, log);
  cli::cmd_synth({cfg, dir + "/c", 99}, log);
  for (const char* f : {"scheme.json", "knowledge.json", "synth_config.json", "train.csv", "val.csv", "test_in.csv",
                        "test_ood.csv"})
    EXPECT_EQ(read_bytes(dir + "/a/" + f), read_bytes(dir + "/b/" + f)) << f;
  EXPECT_NE(read_bytes(dir + "/a/train.csv"), read_bytes(dir + "/c/train.csv"));
}

TEST(Train, RerunIsByteIdentical) {
  const auto dir = scratch_dir("cli_train");
  const auto data = synth_into(dir);
  std::ostringstream log;
  cli::cmd_train({data, "", dir + "/r1", tiny_train(3, "random:7")}, log);
  cli::cmd_train({data, "", dir + "/r2", tiny_train(3, "random:7")}, log);
  for (const char* f : {"model.json", "run.jsonl", "config.json"})
    EXPECT_EQ(read_bytes(dir + "/r1/" + f), read_bytes(dir + "/r2/" + f)) << f;
  const auto snap = read_json_file(dir + "/r1/config.json");
  EXPECT_EQ(snap.at("variant"), "random");
  const auto scheme = load_scheme(data + "/scheme.json");
  const auto expected = randomize_importance(load_importance(data + "/knowledge.json", scheme), 7);
  EXPECT_EQ(importance_from_json(snap.at("importance"), scheme), expected);
}

TEST(Train, BaselineForcesZeroLambdaAndBadRandomSeedFails) {
  const auto dir = scratch_dir("cli_train_base");
  const auto data = synth_into(dir);
  std::ostringstream log;
  cli::cmd_train({data, "", dir + "/r", tiny_train(0)}, log);
  const auto snap = read_json_file(dir + "/r/config.json");
  EXPECT_EQ(snap.at("variant"), "baseline");
  EXPECT_EQ(snap.at("train_config").at("lambda"), 0.0);
  EXPECT_THROW(cli::cmd_train({data, "", dir + "/x", tiny_train(0, "random:abc")}, log), ConfigError);
  EXPECT_THROW(cli::cmd_train({dir + "/nowhere", "", dir + "/x", tiny_train(0)}, log), ParseError);
}

TEST(Compare, FourCellTable) {
  const auto dir = scratch_dir("cli_compare");
  const auto data = synth_into(dir);
  std::vector<std::string> runs;
  for (std::uint64_t seed : {0u, 1u}) {
    for (const std::string k : {"none", "knowledge"}) {
      const auto run = dir + "/" + (k == "none" ? "base" : "aligned") + std::to_string(seed);
      train_and_eval(data, run, tiny_train(seed, k == "none" ? "none" : data + "/knowledge.json"));
      runs.push_back(run);
    }
  }
  std::ostringstream out;
  const auto rows = cli::cmd_compare({runs, "", "", dir + "/compare.json", false}, out);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].variant, "baseline");
  EXPECT_EQ(rows[1].variant, "aligned");
  for (const auto& r : rows) {
    ASSERT_EQ(r.by_domain.size(), 2u);
    for (const auto& [domain, cell] : r.by_domain) EXPECT_EQ(cell.values.size(), 2u) << domain;
  }
  const auto doc = read_json_file(dir + "/compare.json");
  EXPECT_EQ(doc.at("ci_method"), kCiMethod);
  EXPECT_NE(out.str().find("baseline"), std::string::npos);

  const std::vector<std::string> single{runs[0], runs[1], runs[3]};
  EXPECT_THROW(cli::cmd_compare({single, "", "", "", false}, out), UsageError);
  EXPECT_THROW(cli::cmd_compare({{}, "", "", "", false}, out), UsageError);
}

TEST(Manifest, TrainsOnceAndReusesRuns) {
  const auto dir = scratch_dir("cli_manifest");
  const auto synth = tiny_synth_config(dir);
  json runs = json::array();
  for (int seed : {0, 1}) {
    runs.push_back({{"name", "baseline_s" + std::to_string(seed)}, {"config", {{"seed", seed}}}});
    runs.push_back({{"name", "aligned_s" + std::to_string(seed)}, {"knowledge", "knowledge.json"},
                    {"config", {{"seed", seed}}}});
  }
  const json manifest{{"format_version", 1},
                      {"output_dir", "out"},
                      {"synth_config", "synth.json"},
                      {"defaults", to_json(tiny_train(0))},
                      {"runs", runs}};
  write_json_file(dir + "/m.json", manifest);
  std::ostringstream out, log;
  const auto rows = cli::cmd_compare({{}, dir + "/m.json", "", "", true}, out, log);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_TRUE(fs::exists(dir + "/out/data/test_ood.csv"));
  EXPECT_TRUE(fs::exists(dir + "/out/aligned_s1/metrics_test_ood.json"));
  const auto model = read_bytes(dir + "/out/aligned_s1/model.json");

  std::ostringstream log2;
  cli::cmd_compare({{}, dir + "/m.json", "", "", true}, out, log2);
  EXPECT_EQ(log2.str().find("training"), std::string::npos);
  EXPECT_EQ(read_bytes(dir + "/out/aligned_s1/model.json"), model);

  cli::cmd_compare({{}, dir + "/m.json", dir + "/elsewhere", "", true}, out, log2);
  EXPECT_TRUE(fs::exists(dir + "/elsewhere/baseline_s0/model.json"));
}

TEST(Manifest, Errors) {
  const auto dir = scratch_dir("cli_manifest_err");
  tiny_synth_config(dir);
  auto write = [&](const json& j) {
    write_json_file(dir + "/m.json", j);
    return dir + "/m.json";
  };
  const json good{{"output_dir", "out"}, {"synth_config", "synth.json"}, {"runs", {{{"name", "a"}}}}};
  EXPECT_NO_THROW(cli::load_manifest(write(good)));

  auto bad = good;
  bad["runs"] = {{{"name", "a"}}, {{"name", "a"}}};
  EXPECT_THROW(cli::load_manifest(write(bad)), ConfigError);
  bad = good;
  bad["runs"] = {{{"name", "x/y"}}};
  EXPECT_THROW(cli::load_manifest(write(bad)), ConfigError);
  bad = good;
  bad["runz"] = json::array();
  EXPECT_THROW(cli::load_manifest(write(bad)), ParseError);
  bad = good;
  bad["runs"] = {{{"name", "a"}, {"seed", 1}}};
  EXPECT_THROW(cli::load_manifest(write(bad)), ParseError);
  bad = good;
  bad["synth_config"] = "missing.json";
  EXPECT_THROW(cli::load_manifest(write(bad)), ConfigError);
  bad = good;
  bad.erase("synth_config");
  EXPECT_THROW(cli::load_manifest(write(bad)), ConfigError);
  bad = good;
  bad["runs"] = {{{"name", "a"}, {"data", "nodata"}}};
  EXPECT_THROW(cli::load_manifest(write(bad)), ConfigError);
  bad = good;
  bad["runs"] = {{{"name", "a"}, {"config", {{"lamda", 1}}}}};
  EXPECT_THROW(cli::load_manifest(write(bad)), ParseError);
}

TEST(Output, RootFromEnvironment) {
  ::setenv(cli::kOutputRootEnv, "/tmp/kgcbm_root", 1);
  EXPECT_EQ(cli::default_output("synth"), "/tmp/kgcbm_root/synth");
  ::unsetenv(cli::kOutputRootEnv);
  EXPECT_EQ(cli::default_output("synth"), "runs/synth");
}

TEST(Binary, ExitCodes) {
  const auto dir = scratch_dir("cli_bin");
  EXPECT_EQ(run_cli("synth --config " + tiny_synth_config(dir) + " --out " + dir + "/data"), 0);
  EXPECT_EQ(run_cli("compare"), 2);
  EXPECT_EQ(run_cli("eval --model " + dir + "/none.json --data " + dir + "/data/val.csv"), 1);
  EXPECT_NE(run_cli("frobnicate"), 0);
  EXPECT_NE(run_cli("train"), 0);
  EXPECT_EQ(run_cli("train --data " + dir + "/data --epochs 1 --classifier linear --predictor-hidden 8 --out " + dir +
                    "/run"),
            0);
  EXPECT_EQ(read_json_file(dir + "/run/config.json").at("train_config").at("epochs"), 1);
  EXPECT_EQ(run_cli("train --data " + dir + "/data --classifier resnet --out " + dir + "/run2"), 1);
}
