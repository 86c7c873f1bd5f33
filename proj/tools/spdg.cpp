// Copyright 2026 The spdg Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Command-line front end. Every subcommand writes its artifacts under
// --out-dir and prints a JSON summary on stdout; failures print
// {"error": {"code", "message"}} on stderr and exit nonzero.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "spdg/datagen/dataset.hpp"
#include "spdg/error.hpp"
#include "spdg/eval/evaluate.hpp"
#include "spdg/eval/inference.hpp"
#include "spdg/trainer/config.hpp"
#include "spdg/trainer/grad_suite.hpp"
#include "spdg/trainer/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace spdg;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string out_dir = "spdg_out";
  std::string precision = "f64";
  std::size_t threads = 1;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

json read_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorCode::kIo, "cannot open " + path);
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::kConfig, path + " is not valid JSON: " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) fail(ErrorCode::kIo, "cannot write " + path.string());
  os << text;
}

std::size_t resolve_domain(const Dataset& ds, const std::string& name_or_index) {
  const auto& names = ds.domain_names();
  for (std::size_t d = 0; d < names.size(); ++d)
    if (names[d] == name_or_index) return d;
  try {
    std::size_t pos = 0;
    const std::size_t d = std::stoul(name_or_index, &pos);
    if (pos == name_or_index.size() && d < names.size()) return d;
  } catch (const std::exception&) {
  }
  fail(ErrorCode::kConfig, "unknown domain '" + name_or_index + "'");
}

struct TrainedRun {
  FrozenEncoderBundle bundle;
  StylePrompter prompter;
  RunConfig config;
};

TrainedRun load_run(const std::string& run_dir) {
  TrainedRun r;
  json cfg;
  r.prompter = load_checkpoint(fs::path(run_dir) / "checkpoint", &cfg);
  r.bundle = load_bundle(fs::path(run_dir) / "bundle");
  if (fs::exists(fs::path(run_dir) / "config.json")) {
    r.config = run_config_from_json(read_json((fs::path(run_dir) / "config.json").string()));
  } else {
    cfg.erase("config_hash");
    r.config = run_config_from_json(cfg);
  }
  return r;
}

void apply_globals(RunConfig& cfg, const Globals& g) {
  if (g.seed) cfg.seed = *g.seed;
  cfg.precision = parse_precision(g.precision);
}

json report_summary(const EvalReport& r) {
  json rows = json::array();
  for (const auto& row : r.rows) rows.push_back({{"label", row.label}, {"average", row.average}, {"average_std", row.average_std}});
  return {{"mode", r.mode}, {"partial", r.partial}, {"rows", rows}};
}

void emit_report(const EvalReport& r, const fs::path& out) {
  write_text(out / "report.json", to_json(r).dump(2) + "\n");
  write_text(out / "report.csv", report_csv(r));
  json s = report_summary(r);
  s["report"] = (out / "report.json").string();
  std::cout << s.dump() << '\n';
}

EvalMatrix load_matrix(const std::string& path, const Globals& g) {
  EvalMatrix m = path.empty() ? EvalMatrix{} : eval_matrix_from_json(read_json(path));
  m.threads = g.threads;
  m.base.precision = parse_precision(g.precision);
  if (g.seed && path.empty()) m.seeds = {*g.seed};
  return m;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Style-prompted domain generalization on a synthetic vision-language stand-in"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand
  Globals g;
  app.add_option("--seed", g.seed, "Seed for the run (data, training or bundle, depending on the subcommand)");
  app.add_option("--out-dir", g.out_dir, "Output directory")->capture_default_str();
  app.add_option("--precision", g.precision, "Checkpoint storage precision")->check(CLI::IsMember({"f64", "f32"}))->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads for evaluation")->check(CLI::PositiveNumber)->capture_default_str();

  // gen-data
  GenerateParams gp;
  std::string class_names, domain_names;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic multi-domain dataset");
  gen->add_option("--classes", gp.num_classes, "Number of classes")->capture_default_str();
  gen->add_option("--domains", gp.num_domains, "Number of domains")->capture_default_str();
  gen->add_option("--per-cell", gp.per_cell, "Samples per (class, domain)")->capture_default_str();
  gen->add_option("--input-dim", gp.input_dim, "Raw input dimension")->capture_default_str();
  gen->add_option("--style-strength", gp.style_strength, "Domain style transform strength")->capture_default_str();
  gen->add_option("--noise-std", gp.noise_std, "Per-sample noise")->capture_default_str();
  gen->add_option("--class-names", class_names, "Comma-separated class names");
  gen->add_option("--domain-names", domain_names, "Comma-separated domain names");

  // train
  std::string train_config, dataset, held_out, prompter_kind;
  std::optional<std::size_t> epochs, batch, mc;
  std::optional<double> lr_max, w_d, w_reg;
  std::optional<std::uint64_t> bundle_seed;
  bool no_style_reg = false, select_best = false;
  auto* train = app.add_subcommand("train", "Train a style prompter");
  train->add_option("--config", train_config, "RunConfig JSON");
  train->add_option("--dataset", dataset, "Dataset directory");
  train->add_option("--held-out", held_out, "Held-out domain (name or index)");
  train->add_option("--prompter", prompter_kind, "basic or gaussian")->check(CLI::IsMember({"basic", "gaussian"}));
  train->add_option("--epochs", epochs);
  train->add_option("--batch-size", batch);
  train->add_option("--mc-samples", mc);
  train->add_option("--lr-max", lr_max);
  train->add_option("--w-d", w_d);
  train->add_option("--w-reg", w_reg);
  train->add_option("--bundle-seed", bundle_seed);
  train->add_flag("--no-style-reg", no_style_reg, "Disable the style regularization term");
  train->add_flag("--select-best", select_best, "Keep the epoch with the best validation accuracy");

  // eval-lodo / ablation
  std::string matrix;
  auto* lodo = app.add_subcommand("eval-lodo", "Leave-one-domain-out evaluation over a config matrix");
  lodo->add_option("--matrix", matrix, "Config matrix JSON");
  lodo->add_option("--dataset", dataset, "Dataset directory (overrides the matrix)");
  auto* ablation = app.add_subcommand("ablation", "Four-row component ablation");
  ablation->add_option("--matrix", matrix, "Config matrix JSON");
  ablation->add_option("--dataset", dataset, "Dataset directory (overrides the matrix)");

  // eval-crosscat
  std::string train_dataset, test_dataset;
  auto* cross = app.add_subcommand("eval-crosscat", "Train on one label/domain space, test on a disjoint one");
  cross->add_option("--matrix", matrix, "Config matrix JSON");
  cross->add_option("--train-dataset", train_dataset, "Training dataset directory")->required();
  cross->add_option("--test-dataset", test_dataset, "Test dataset directory")->required();

  // infer
  std::string run_dir, x_values, classes;
  std::optional<std::size_t> index;
  auto* inf = app.add_subcommand("infer", "Classify one sample with a trained run");
  inf->add_option("--run", run_dir, "Training output directory")->required();
  inf->add_option("--dataset", dataset, "Dataset to take the sample from");
  inf->add_option("--index", index, "Sample index in --dataset");
  inf->add_option("--x", x_values, "Comma-separated raw input vector");
  inf->add_option("--classes", classes, "Comma-separated candidate classes");

  // similarity-report
  std::string domain;
  auto* sim = app.add_subcommand("similarity-report", "Per-image similarity to styled captions");
  sim->add_option("--run", run_dir, "Training output directory")->required();
  sim->add_option("--dataset", dataset, "Dataset directory (default: the run's dataset)");
  sim->add_option("--domain", domain, "Test domain (default: the run's held-out domain)");

  // grad-check
  auto* grad = app.add_subcommand("grad-check", "Finite-difference check of the full objective");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << json{{"error", {{"code", "usage_error"}, {"message", e.what()}}}}.dump() << '\n';
    return 2;
  }

  try {
    const fs::path out = g.out_dir;
    if (*gen) {
      if (g.seed) gp.seed = *g.seed;
      gp.class_names = split_list(class_names);
      gp.domain_names = split_list(domain_names);
      if (!gp.class_names.empty() && !gen->count("--classes")) gp.num_classes = gp.class_names.size();
      if (!gp.domain_names.empty() && !gen->count("--domains")) gp.num_domains = gp.domain_names.size();
      const Dataset ds = generate(gp);
      save_dataset(ds, out);
      std::cout << json{{"dataset", out.string()}, {"samples", ds.size()}}.dump() << '\n';
    } else if (*train) {
      RunConfig cfg = train_config.empty() ? RunConfig{} : load_run_config(train_config);
      apply_globals(cfg, g);
      cfg.output_dir = out.string();
      if (!dataset.empty()) cfg.dataset_path = dataset;
      if (!prompter_kind.empty()) cfg.prompter_kind = parse_prompter_kind(prompter_kind);
      if (epochs) cfg.epochs = *epochs;
      if (batch) cfg.batch_size = *batch;
      if (mc) cfg.mc_samples = *mc;
      if (lr_max) cfg.lr_max = *lr_max;
      if (w_d) cfg.weights.w_d = *w_d;
      if (w_reg) cfg.weights.w_reg = *w_reg;
      if (bundle_seed) cfg.bundle_seed = *bundle_seed;
      if (no_style_reg) cfg.use_style_reg = false;
      if (select_best) cfg.select_best = true;
      if (cfg.dataset_path.empty()) fail(ErrorCode::kConfig, "train needs --dataset or dataset_path in the config");
      const Dataset ds = load_dataset(cfg.dataset_path);
      if (!held_out.empty()) cfg.held_out_domain = resolve_domain(ds, held_out);
      const FrozenEncoderBundle bundle = make_bundle(cfg, ds.class_names());
      const TrainResult r = train_style_prompter(cfg, bundle, ds);
      json s{{"checkpoint", (out / "checkpoint").string()},
             {"config_hash", hex64(config_hash(cfg))},
             {"steps", r.steps.size()},
             {"final_loss", r.steps.back().loss_total},
             {"val_accuracy", r.epochs.back().val_accuracy},
             {"encoder_checksum", hex64(r.encoder_checksum_after)}};
      if (cfg.held_out_domain) {
        const Dataset test = ds.subset(ds.indices_where_domain(*cfg.held_out_domain));
        s["held_out_domain"] = ds.domain_names()[*cfg.held_out_domain];
        s["held_out_accuracy"] = accuracy(predict_all(bundle, r.selected, test.x, ds.class_names(), g.threads), test.class_labels);
      }
      std::cout << s.dump() << '\n';
    } else if (*lodo || *ablation) {
      EvalMatrix m = load_matrix(matrix, g);
      if (!dataset.empty()) m.base.dataset_path = dataset;
      if (m.base.dataset_path.empty()) fail(ErrorCode::kConfig, "evaluation needs --dataset or dataset_path in the matrix");
      const Dataset ds = load_dataset(m.base.dataset_path);
      const FrozenEncoderBundle bundle = make_bundle(m.base, ds.class_names());
      const EvalReport r = *lodo ? evaluate_leave_one_out(m, ds, bundle) : run_ablation(m, ds, bundle);
      emit_report(r, out);
    } else if (*cross) {
      const EvalMatrix m = load_matrix(matrix, g);
      const EvalReport r = evaluate_cross_category(m, load_dataset(train_dataset), load_dataset(test_dataset));
      emit_report(r, out);
    } else if (*inf) {
      const TrainedRun run = load_run(run_dir);
      std::vector<double> x;
      std::vector<std::string> cls = split_list(classes);
      if (!x_values.empty()) {
        for (const auto& v : split_list(x_values)) x.push_back(std::stod(v));
      } else {
        if (dataset.empty() || !index) fail(ErrorCode::kConfig, "infer needs --x or --dataset with --index");
        const Dataset ds = load_dataset(dataset);
        if (*index >= ds.size()) fail(ErrorCode::kConfig, "sample index out of range");
        const auto row = ds.x.row(*index);
        x.assign(row.begin(), row.end());
        if (cls.empty()) cls = ds.class_names();
      }
      if (cls.empty()) fail(ErrorCode::kEmptyInput, "no candidate classes; pass --classes");
      const Prediction p = infer(run.bundle, run.prompter, x, cls);
      std::cout << json{{"prediction", p.label}, {"class", cls[p.label]}, {"scores", p.scores}}.dump() << '\n';
    } else if (*sim) {
      const TrainedRun run = load_run(run_dir);
      const Dataset ds = load_dataset(dataset.empty() ? run.config.dataset_path : dataset);
      std::size_t d = 0;
      if (!domain.empty()) {
        d = resolve_domain(ds, domain);
      } else if (run.config.held_out_domain) {
        d = *run.config.held_out_domain;
      } else {
        fail(ErrorCode::kConfig, "similarity-report needs --domain for a run without a held-out domain");
      }
      const Dataset test = ds.subset(ds.indices_where_domain(d));
      const SimilarityMatrix m = style_similarity_report(run.bundle, run.prompter, test, run.config.style_words, g.threads);
      write_text(out / "similarity.csv", similarity_csv(m));
      const auto means = m.column_means();
      json col = json::object();
      for (std::size_t c = 0; c < m.columns.size(); ++c) col[m.columns[c]] = means[c];
      const json s{{"domain", ds.domain_names()[d]}, {"rows", m.ids.size()}, {"column_means", col},
                   {"csv", (out / "similarity.csv").string()}};
      write_text(out / "similarity_summary.json", s.dump(2) + "\n");
      std::cout << s.dump() << '\n';
    } else if (*grad) {
      const ObjectiveGradCheck r = check_objective_gradients(g.seed.value_or(0));
      const json s{{"max_rel_error", r.report.max_rel_error},
                   {"worst_parameter", r.worst_parameter},
                   {"worst_index", r.report.worst_index},
                   {"analytic", r.report.worst_analytic},
                   {"numeric", r.report.worst_numeric},
                   {"coordinates", r.report.coordinates},
                   {"seconds", r.seconds},
                   {"pass", r.report.max_rel_error < 1e-4}};
      std::cout << s.dump() << '\n';
      if (r.report.max_rel_error >= 1e-4) {
        std::cerr << json{{"error", {{"code", "grad_check_failed"}, {"message", "max relative error " + std::to_string(r.report.max_rel_error)}}}}.dump()
                  << '\n';
        return 1;
      }
    }
  } catch (const Error& e) {
    std::cerr << json{{"error", {{"code", std::string(to_string(e.code()))}, {"message", e.what()}}}}.dump() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", {{"code", "internal_error"}, {"message", e.what()}}}}.dump() << '\n';
    return 1;
  }
  return 0;
}
