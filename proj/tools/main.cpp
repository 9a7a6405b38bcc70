#include <functional>
#include <iostream>
#include <utility>
#include <vector>
#include <string>

#include "CLI11.hpp"
#include "kgcbm/cli.hpp"

namespace {

using namespace kgcbm;

// Train flags are bound to a scratch config and copied over the base (defaults
// or --config file) only when given, so the file supplies everything else.
struct TrainFlags {
  TrainConfig v;
  std::string classifier, align_mode, mode;
  std::vector<std::pair<CLI::Option*, std::function<void(TrainConfig&)>>> setters;

  void add(CLI::App* cmd) {
    auto bind = [&](CLI::Option* opt, std::function<void(TrainConfig&)> set) { setters.emplace_back(opt, std::move(set)); };
    bind(cmd->add_option("--knowledge", v.knowledge, "importance matrix path, none, or random:<seed> (default none)"),
         [this](TrainConfig& c) { c.knowledge = v.knowledge; });
    bind(cmd->add_option("--lambda", v.lambda, "alignment weight (default 1)"),
         [this](TrainConfig& c) { c.lambda = v.lambda; });
    bind(cmd->add_option("--phi", v.phi, "concept loss weight (default 1)"), [this](TrainConfig& c) { c.phi = v.phi; });
    bind(cmd->add_option("--ls", v.label_smoothing, "label smoothing on the class loss (default 0.3)"),
         [this](TrainConfig& c) { c.label_smoothing = v.label_smoothing; });
    bind(cmd->add_flag("--smooth-concepts", v.smooth_concepts, "also smooth concept targets"),
         [this](TrainConfig& c) { c.smooth_concepts = v.smooth_concepts; });
    bind(cmd->add_option("--classifier", classifier, "linear, mlp20 or mlp128 (default mlp128)"),
         [this](TrainConfig& c) { c.classifier = parse_classifier(classifier); });
    bind(cmd->add_option("--align-mode", align_mode, "pairwise or column (default pairwise)"),
         [this](TrainConfig& c) { c.align_mode = parse_align_mode(align_mode); });
    bind(cmd->add_option("--mode", mode, "joint or sequential (default joint)"),
         [this](TrainConfig& c) { c.mode = parse_train_mode(mode); });
    bind(cmd->add_option("--seed", v.seed, "(default 0)"), [this](TrainConfig& c) { c.seed = v.seed; });
    bind(cmd->add_option("--epochs", v.epochs, "(default 30)"), [this](TrainConfig& c) { c.epochs = v.epochs; });
    bind(cmd->add_option("--batch-size", v.batch_size, "(default 64)"),
         [this](TrainConfig& c) { c.batch_size = v.batch_size; });
    bind(cmd->add_option("--lr", v.lr, "(default 1e-4)"), [this](TrainConfig& c) { c.lr = v.lr; });
    bind(cmd->add_option("--weight-decay", v.weight_decay, "(default 0.01)"),
         [this](TrainConfig& c) { c.weight_decay = v.weight_decay; });
    bind(cmd->add_option("--predictor-hidden", v.predictor_hidden, "hidden widths of the concept predictor (default 64)"),
         [this](TrainConfig& c) { c.predictor_hidden = v.predictor_hidden; });
  }

  TrainConfig apply(TrainConfig base) const {
    for (const auto& [opt, set] : setters)
      if (opt->count() > 0) set(base);
    base.validate();
    return base;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Concept bottleneck models with knowledge-guided importance alignment"};
  app.require_subcommand(1);

  cli::SynthOptions synth;
  std::uint64_t synth_seed = 0;
  auto* s = app.add_subcommand("synth", "write a synthetic domain-shift benchmark");
  s->add_option("--config", synth.config_path, "SynthConfig JSON (default: built-in)");
  s->add_option("--out", synth.out_dir, "output directory (default $KGCBM_OUTPUT_ROOT/synth)");
  auto* seed_opt = s->add_option("--seed", synth_seed, "override the config seed");

  cli::TrainOptions train;
  TrainFlags train_flags;
  std::string train_config;
  auto* t = app.add_subcommand("train", "train a baseline, aligned or random-matrix CBM");
  t->add_option("--data", train.data_dir, "directory with scheme.json, train.csv, val.csv")->required();
  t->add_option("--config", train_config, "TrainConfig JSON; flags given on the command line win");
  t->add_option("--knowledge-file", train.knowledge_base,
                "matrix permuted by random:<seed> (default <data>/knowledge.json)");
  t->add_option("--out", train.out_dir, "run directory (default $KGCBM_OUTPUT_ROOT/run)");
  train_flags.add(t);

  cli::EvalOptions ev;
  auto* e = app.add_subcommand("eval", "macro F1 and concept accuracy of a trained model");
  e->add_option("--model", ev.model_path)->required();
  e->add_option("--data", ev.data_path, "dataset CSV")->required();
  e->add_option("--report", ev.report_path, "write the JSON report here");
  e->add_flag("--json", ev.json_output, "print JSON instead of a table");

  cli::AuditOptions au;
  auto* a = app.add_subcommand("audit", "mean DeltaY heatmap against an importance matrix");
  a->add_option("--model", au.model_path)->required();
  a->add_option("--data", au.data_path, "dataset CSV")->required();
  a->add_option("--knowledge", au.knowledge_path, "importance matrix JSON")->required();
  a->add_option("--out", au.out_dir, "output directory (default $KGCBM_OUTPUT_ROOT/audit)");
  a->add_flag("--json", au.json_output, "print JSON instead of a table");

  cli::CompareOptions cmp;
  auto* c = app.add_subcommand("compare", "aggregate runs into mean +- 95% CI per variant");
  c->add_option("runs", cmp.run_dirs, "run directories holding config.json and metrics*.json");
  c->add_option("--manifest", cmp.manifest_path, "train and evaluate the runs listed in a manifest first");
  c->add_option("--output-dir", cmp.output_dir, "run directory root, overriding the manifest's output_dir");
  c->add_option("--out", cmp.out_path, "write the comparison JSON here");
  c->add_flag("--json", cmp.json_output, "print JSON instead of a table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err);
  }

  try {
    if (*s) {
      if (*seed_opt) synth.seed = synth_seed;
      cli::cmd_synth(synth);
    } else if (*t) {
      const TrainConfig base = train_config.empty() ? TrainConfig{} : train_config_from_json(read_json_file(train_config));
      train.config = train_flags.apply(base);
      cli::cmd_train(train);
    } else if (*e) {
      cli::cmd_eval(ev);
    } else if (*a) {
      cli::cmd_audit(au);
    } else if (*c) {
      cli::cmd_compare(cmp);
    }
  } catch (const UsageError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  }
  return 0;
}
