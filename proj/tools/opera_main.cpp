#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "opera/corpus.hpp"
#include "opera/derivations.hpp"
#include "opera/eval.hpp"
#include "opera/model.hpp"
#include "opera/rules.hpp"
#include "opera/synth.hpp"
#include "opera/tensor.hpp"
#include "opera/training.hpp"

namespace {

namespace fs = std::filesystem;
using namespace opera;

void write_file(const fs::path& path, const std::string& content) {
  if (path == "-") {
    std::cout << content;
    return;
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

rules::RuleSet load_rules(const std::string& path) {
  return path.empty() ? rules::builtin_rules() : rules::compile_ruleset(path);
}

struct CommonOpts {
  std::vector<std::string> data;
  std::string rules_path, ckpt, config_path, out, profile;
  std::uint64_t seed = 0;
  double lambda = -1.0;
  bool seed_set = false, lambda_set = false, ablate_op = false;
};

training::TrainConfig resolve_config(const CommonOpts& opts) {
  training::TrainConfig cfg;
  if (!opts.profile.empty()) training::apply_profile(cfg, opts.profile);
  if (!opts.config_path.empty()) cfg = training::parse_config_file(opts.config_path, cfg);
  if (opts.seed_set) cfg.seed = opts.seed;
  if (opts.lambda_set) cfg.lambda_op = opts.lambda;
  if (opts.ablate_op) cfg.model.ablate_op = true;
  cfg.model.lambda_op = cfg.lambda_op;
  cfg.model.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

std::vector<derivations::LabeledInstance> load_and_label(const std::string& data_path,
                                                         const corpus::Vocab& vocab,
                                                         const rules::RuleSet& ruleset,
                                                         std::size_t max_seq_len) {
  corpus::LoadReport report;
  std::vector<corpus::RawInstance> raw = corpus::load_drop_json(data_path, &report);
  if (report.skipped_empty_answer)
    std::cerr << data_path << ": skipped " << report.skipped_empty_answer
              << " qa_pairs with empty answers\n";
  return derivations::label_all(raw, vocab, ruleset, max_seq_len);
}

int cmd_ingest(const CommonOpts& opts) {
  corpus::LoadReport report;
  std::vector<corpus::RawInstance> raw = corpus::load_drop_json(opts.data.front(), &report);
  write_file(opts.out, corpus::dataset_dump_jsonl(raw));
  std::cerr << "ingested " << report.instances << " instances from " << report.passages
            << " passages; skipped " << report.skipped_empty_answer << " empty answers\n";
  return 0;
}

int cmd_label(const CommonOpts& opts) {
  training::TrainConfig cfg = resolve_config(opts);
  rules::RuleSet ruleset = load_rules(opts.rules_path);
  std::vector<corpus::RawInstance> raw = corpus::load_drop_json(opts.data.front());
  corpus::Vocab vocab = corpus::build_vocab(raw);
  derivations::SearchStats stats;
  std::vector<derivations::LabeledInstance> labeled =
      derivations::label_all(raw, vocab, ruleset, cfg.model.max_seq_len, &stats);
  write_file(opts.out, derivations::labeled_dump_jsonl(labeled));
  std::size_t usable = 0;
  for (const auto& inst : labeled) usable += inst.usable ? 1 : 0;
  std::cerr << "labeled " << labeled.size() << " instances, " << usable << " usable, "
            << stats.dropped_unsound << " unsound candidates dropped\n";
  return 0;
}

int cmd_train(const CommonOpts& opts) {
  training::TrainConfig cfg = resolve_config(opts);
  rules::RuleSet ruleset = load_rules(opts.rules_path);
  std::vector<corpus::RawInstance> raw = corpus::load_drop_json(opts.data.front());
  corpus::Vocab vocab = corpus::build_vocab(raw);
  cfg.model.vocab_size = vocab.size();
  std::vector<derivations::LabeledInstance> labeled =
      derivations::label_all(raw, vocab, ruleset, cfg.model.max_seq_len);

  model::Model m(cfg.model);
  training::TrainResult result = training::train(m, labeled, cfg);
  training::save_checkpoint(opts.out, m, vocab);
  write_file(opts.out + ".metrics.csv", result.metrics_csv());
  if (!result.history.empty()) {
    const training::EpochMetrics& last = result.history.back();
    std::cerr << "trained " << cfg.epochs << " epochs; final loss " << last.loss << ", train EM "
              << last.train_em << "\n";
  }
  std::cerr << "checkpoint: " << opts.out << "\nmetrics: " << opts.out << ".metrics.csv\n";
  return 0;
}

int cmd_eval(const CommonOpts& opts) {
  training::LoadedCheckpoint ckpt = training::load_checkpoint(opts.ckpt);
  rules::RuleSet ruleset = load_rules(opts.rules_path);
  std::vector<derivations::LabeledInstance> labeled =
      load_and_label(opts.data.front(), ckpt.vocab, ruleset, ckpt.config.max_seq_len);
  evalcli::MetricsReport report = evalcli::evaluate(*ckpt.model, labeled);
  std::cout << report.json() << "\n";
  if (!opts.out.empty() && opts.out != "-") {
    write_file(opts.out, report.json() + "\n");
    write_file(opts.out + ".by_kind.csv", report.per_kind_csv());
  }
  return 0;
}

int cmd_predict(const CommonOpts& opts) {
  training::LoadedCheckpoint ckpt = training::load_checkpoint(opts.ckpt);
  rules::RuleSet ruleset = load_rules(opts.rules_path);
  std::vector<derivations::LabeledInstance> labeled =
      load_and_label(opts.data.front(), ckpt.vocab, ruleset, ckpt.config.max_seq_len);
  write_file(opts.out, evalcli::predictions_jsonl(evalcli::predict_all(*ckpt.model, labeled)));
  return 0;
}

void write_analysis_files(const fs::path& dir, model::Model& m,
                          const std::vector<derivations::LabeledInstance>& eval_data) {
  std::vector<evalcli::Prediction> preds = evalcli::predict_all(m, eval_data);
  std::vector<std::set<rules::Op>> gold_ops;
  for (const auto& inst : eval_data) gold_ops.push_back(inst.operations);
  write_file(dir / "p_at_n.csv", evalcli::p_at_n_csv(preds, gold_ops));
  write_file(dir / "correlation.csv", evalcli::correlation_matrix(preds).csv());
  write_file(dir / "operation_distribution.csv",
             rules::distribution_csv(rules::operation_distribution(gold_ops)));
}

int cmd_analyze(const CommonOpts& opts) {
  fs::path dir = opts.out.empty() ? fs::path(".") : fs::path(opts.out);
  fs::create_directories(dir);
  rules::RuleSet ruleset = load_rules(opts.rules_path);

  if (!opts.ablate_op) {
    if (opts.ckpt.empty()) throw std::runtime_error("analyze needs --ckpt (or --ablate-op)");
    training::LoadedCheckpoint ckpt = training::load_checkpoint(opts.ckpt);
    std::vector<derivations::LabeledInstance> eval_data =
        load_and_label(opts.data.front(), ckpt.vocab, ruleset, ckpt.config.max_seq_len);
    write_analysis_files(dir, *ckpt.model, eval_data);
    std::cerr << "analysis written to " << dir << "\n";
    return 0;
  }

  if (opts.data.size() != 2)
    throw std::runtime_error("analyze --ablate-op needs --data <train.json> --data <eval.json>");
  CommonOpts base_opts = opts;
  base_opts.ablate_op = false;  // the comparison trains its own ablated run
  training::TrainConfig base = resolve_config(base_opts);

  std::vector<corpus::RawInstance> train_raw = corpus::load_drop_json(opts.data[0]);
  corpus::Vocab vocab = corpus::build_vocab(train_raw);
  base.model.vocab_size = vocab.size();
  std::vector<derivations::LabeledInstance> train_data =
      derivations::label_all(train_raw, vocab, ruleset, base.model.max_seq_len);
  std::vector<derivations::LabeledInstance> eval_data =
      load_and_label(opts.data[1], vocab, ruleset, base.model.max_seq_len);

  std::vector<evalcli::VariantScore> rows;
  auto run_variant = [&](const std::string& name, double lambda,
                         bool ablate) -> model::Model {
    training::TrainConfig cfg = base;
    cfg.lambda_op = lambda;
    cfg.model.lambda_op = lambda;
    cfg.model.ablate_op = ablate;
    model::Model m(cfg.model);
    training::train(m, train_data, cfg);
    rows.push_back(evalcli::score_variant(name, m, eval_data));
    return m;
  };

  model::Model full = run_variant("full", base.lambda_op, false);
  run_variant("wo_l_op", 0.0, false);
  run_variant("wo_op", 0.0, true);
  write_file(dir / "ablation.csv", evalcli::ablation_csv(rows));
  write_analysis_files(dir, full, eval_data);
  std::cerr << "paired comparison written to " << (dir / "ablation.csv") << "\n";
  return 0;
}

int cmd_gradcheck(std::size_t d_h, std::uint64_t seed, const std::string& out) {
  synth::GradcheckFixture fixture = synth::make_gradcheck_fixture();
  model::Model m(synth::gradcheck_config(fixture, d_h, seed));
  tensor::GradCheckReport report = tensor::gradcheck(
      [&] { return synth::gradcheck_loss(m, fixture); }, m.params(), 1e-5, 1e-4, seed);
  if (!out.empty()) write_file(out, report.csv());
  std::cout << "gradcheck d_h=" << d_h << " max_rel_err=" << report.max_rel_err
            << (report.pass ? " PASS" : " FAIL") << "\n";
  return report.pass ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"operation-pivoted discrete reasoning over text"};
  app.require_subcommand(1);

  CommonOpts opts;
  std::size_t gradcheck_dh = 16;

  auto add_common = [&](CLI::App* cmd, bool needs_data, bool needs_ckpt, bool needs_out) {
    auto* data = cmd->add_option("--data", opts.data, "dataset JSON file(s)");
    if (needs_data) data->required();
    cmd->add_option("--rules", opts.rules_path, "rule file (default: built-in rules)");
    auto* ckpt = cmd->add_option("--ckpt", opts.ckpt, "checkpoint file");
    if (needs_ckpt) ckpt->required();
    cmd->add_option("--config", opts.config_path, "training config file");
    cmd->add_option("--seed", opts.seed, "seed override")->each([&](const std::string&) {
      opts.seed_set = true;
    });
    cmd->add_option("--lambda", opts.lambda, "operation-loss weight override")
        ->each([&](const std::string&) { opts.lambda_set = true; });
    cmd->add_flag("--ablate-op", opts.ablate_op, "remove the operation-pivoted path");
    cmd->add_option("--profile", opts.profile, "hyperparameter profile: desk | paper");
    auto* out = cmd->add_option("--out", opts.out, "output path");
    if (needs_out) out->required();
  };

  CLI::App* ingest = app.add_subcommand("ingest", "dump a dataset as line-delimited JSON");
  add_common(ingest, true, false, true);
  CLI::App* label = app.add_subcommand("label", "emit operations and derivations per instance");
  add_common(label, true, false, true);
  CLI::App* train = app.add_subcommand("train", "train a model and write a checkpoint");
  add_common(train, true, false, true);
  CLI::App* eval = app.add_subcommand("eval", "EM/F1 report for a checkpoint");
  add_common(eval, true, true, false);
  CLI::App* predict = app.add_subcommand("predict", "write predictions as line-delimited JSON");
  add_common(predict, true, true, true);
  CLI::App* analyze =
      app.add_subcommand("analyze", "operation P@n, correlation matrix, distribution, ablation");
  add_common(analyze, true, false, false);
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check");
  gradcheck->add_option("--dh", gradcheck_dh, "hidden size");
  gradcheck->add_option("--seed", opts.seed, "seed")->each([&](const std::string&) {
    opts.seed_set = true;
  });
  gradcheck->add_option("--out", opts.out, "report CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (app.got_subcommand(ingest)) return cmd_ingest(opts);
    if (app.got_subcommand(label)) return cmd_label(opts);
    if (app.got_subcommand(train)) return cmd_train(opts);
    if (app.got_subcommand(eval)) return cmd_eval(opts);
    if (app.got_subcommand(predict)) return cmd_predict(opts);
    if (app.got_subcommand(analyze)) return cmd_analyze(opts);
    if (app.got_subcommand(gradcheck))
      return cmd_gradcheck(gradcheck_dh, opts.seed_set ? opts.seed : 13, opts.out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
