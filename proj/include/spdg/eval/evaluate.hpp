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

// Evaluation drivers: leave-one-domain-out, cross-category transfer, the
// component ablation and the per-image style similarity report.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "spdg/datagen/dataset.hpp"
#include "spdg/error.hpp"
#include "spdg/eval/inference.hpp"
#include "spdg/trainer/config.hpp"
#include "spdg/trainer/train.hpp"

namespace spdg {

inline const std::vector<std::string> kAllMethods = {"baseline_C", "baseline_PC", "BSP", "GSP", "GSP+SR"};

inline bool is_baseline(const std::string& method) { return method == "baseline_C" || method == "baseline_PC"; }

/// Run config for a trained method; baselines have no training config.
inline RunConfig method_config(const RunConfig& base, const std::string& method) {
  RunConfig c = base;
  if (method == "BSP") {
    c.prompter_kind = PrompterKind::kBasic;
    c.use_style_reg = false;
  } else if (method == "GSP") {
    c.prompter_kind = PrompterKind::kGaussian;
    c.use_style_reg = false;
  } else if (method == "GSP+SR") {
    c.prompter_kind = PrompterKind::kGaussian;
    c.use_style_reg = true;
  } else if (!is_baseline(method)) {
    fail(ErrorCode::kConfig, "unknown method '" + method + "'");
  }
  return c;
}

/// Trained methods hash their run config; baselines hash the bundle-defining
/// fields under their own name so every row carries a distinct tag.
inline std::string method_hash(const RunConfig& base, const std::string& method) {
  if (!is_baseline(method)) return hex64(config_hash(method_config(base, method)));
  const nlohmann::json j = {{"method", method},
                            {"bundle_seed", base.bundle_seed},
                            {"logit_scale", base.logit_scale},
                            {"dims", to_json(base)["dims"]},
                            {"extra_classes", base.extra_classes}};
  return hex64(fnv1a(j.dump()));
}

struct RunOutcome {
  std::string method;
  std::string domain;
  std::uint64_t seed = 0;
  bool ok = true;
  double accuracy = 0.0;
  std::string error_code;
  std::string error_message;
};

struct MethodRow {
  std::string method;
  std::string label;  // display name
  std::string config_hash;
  std::map<std::string, double> per_domain;      // mean over seeds
  std::map<std::string, double> per_domain_std;  // population std over seeds
  double average = 0.0;                          // mean of per_domain
  double average_std = 0.0;                      // std over seeds of the per-seed domain average
  std::size_t runs = 0;
};

struct EvalReport {
  std::string mode;
  std::vector<std::string> domains;
  std::vector<MethodRow> rows;
  std::vector<RunOutcome> outcomes;
  std::vector<std::uint64_t> seeds;
  bool partial = false;

  const MethodRow& row(const std::string& method) const {
    for (const auto& r : rows)
      if (r.method == method) return r;
    fail(ErrorCode::kConfig, "report has no row for method '" + method + "'");
  }
};

namespace detail {

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

/// Aggregates successful outcomes of one method into a row.
inline MethodRow aggregate(const std::string& method, const std::vector<std::string>& domains,
                           const std::vector<RunOutcome>& outcomes, const std::vector<std::uint64_t>& seeds) {
  MethodRow row;
  row.method = method;
  row.label = method;
  std::map<std::uint64_t, std::vector<double>> by_seed;
  for (const auto& d : domains) {
    std::vector<double> acc;
    for (const auto& o : outcomes) {
      if (o.method == method && o.domain == d && o.ok) {
        acc.push_back(o.accuracy);
        by_seed[o.seed].push_back(o.accuracy);
      }
    }
    if (acc.empty()) continue;
    row.per_domain[d] = mean_of(acc);
    row.per_domain_std[d] = std_of(acc);
    row.runs += acc.size();
  }
  std::vector<double> per_domain;
  for (const auto& [d, a] : row.per_domain) per_domain.push_back(a);
  row.average = mean_of(per_domain);
  std::vector<double> seed_avgs;
  for (std::uint64_t s : seeds) {
    const auto it = by_seed.find(s);
    if (it != by_seed.end() && it->second.size() == row.per_domain.size()) seed_avgs.push_back(mean_of(it->second));
  }
  row.average_std = std_of(seed_avgs);
  return row;
}

inline std::filesystem::path run_dir(const std::string& out_dir, const std::string& mode, const std::string& method,
                                     const std::string& domain, std::uint64_t seed) {
  if (out_dir.empty()) return {};
  std::string safe = method;
  std::replace(safe.begin(), safe.end(), '+', '_');
  std::string dom = domain;
  std::replace(dom.begin(), dom.end(), ' ', '_');
  return std::filesystem::path(out_dir) / mode / safe / dom / ("seed_" + std::to_string(seed));
}

}  // namespace detail

/// Which methods, seeds and folds to evaluate.
struct EvalMatrix {
  RunConfig base;
  std::vector<std::string> methods = kAllMethods;
  std::vector<std::uint64_t> seeds = {0};
  std::vector<std::size_t> folds;  // held-out domain ids; empty means all
  std::size_t threads = 1;
  std::string output_dir;          // per-run artifacts when non-empty
};

inline EvalMatrix eval_matrix_from_json(const nlohmann::json& j) {
  EvalMatrix m;
  if (!j.is_object()) fail(ErrorCode::kConfig, "config matrix must be a JSON object");
  try {
    if (j.contains("base")) m.base = run_config_from_json(j["base"]);
    m.methods = j.value("methods", m.methods);
    m.seeds = j.value("seeds", m.seeds);
    m.folds = j.value("folds", m.folds);
    m.threads = j.value("threads", m.threads);
    m.output_dir = j.value("output_dir", m.output_dir);
    if (j.contains("dataset_path")) m.base.dataset_path = j["dataset_path"].get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kConfig, std::string("malformed config matrix: ") + e.what());
  }
  for (const auto& meth : m.methods) method_config(m.base, meth);
  if (m.seeds.empty()) fail(ErrorCode::kConfig, "config matrix needs at least one seed");
  return m;
}

/// Trains each (method, held-out domain, seed) and scores it on the entire
/// held-out domain. Failed runs are recorded and mark the report partial.
inline EvalReport evaluate_leave_one_out(const EvalMatrix& m, const Dataset& ds, const FrozenEncoderBundle& bundle) {
  const std::size_t num_domains = ds.manifest.num_domains();
  if (num_domains < 3) fail(ErrorCode::kConfig, "leave-one-domain-out needs at least 3 domains");
  std::vector<std::size_t> folds = m.folds;
  if (folds.empty())
    for (std::size_t d = 0; d < num_domains; ++d) folds.push_back(d);
  for (std::size_t d : folds)
    if (d >= num_domains) fail(ErrorCode::kConfig, "fold domain " + std::to_string(d) + " out of range");

  EvalReport report;
  report.mode = "leave_one_domain_out";
  report.seeds = m.seeds;
  for (std::size_t d : folds) report.domains.push_back(ds.domain_names()[d]);

  struct Job {
    std::string method;
    std::size_t fold;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const auto& meth : m.methods)
    for (std::size_t d : folds) {
      if (is_baseline(meth)) {
        jobs.push_back({meth, d, m.seeds.front()});
        continue;
      }
      for (std::uint64_t s : m.seeds) jobs.push_back({meth, d, s});
    }

  std::vector<Dataset> held(num_domains);
  for (std::size_t d : folds) held[d] = ds.subset(ds.indices_where_domain(d));
  const ZeroShotClassifier zs_c(bundle, ds.class_names(), ZeroShotTemplate::kClass);
  const ZeroShotClassifier zs_pc(bundle, ds.class_names(), ZeroShotTemplate::kPhotoOfClass);

  std::vector<RunOutcome> outcomes(jobs.size());
  parallel_for(jobs.size(), m.threads, [&](std::size_t k) {
    const Job& job = jobs[k];
    RunOutcome& o = outcomes[k];
    o.method = job.method;
    o.domain = ds.domain_names()[job.fold];
    o.seed = job.seed;
    const Dataset& test = held[job.fold];
    try {
      if (job.method == "baseline_C") {
        o.accuracy = accuracy(predict_all(zs_c, test.x), test.class_labels);
      } else if (job.method == "baseline_PC") {
        o.accuracy = accuracy(predict_all(zs_pc, test.x), test.class_labels);
      } else {
        RunConfig cfg = method_config(m.base, job.method);
        cfg.seed = job.seed;
        cfg.held_out_domain = job.fold;
        cfg.output_dir = detail::run_dir(m.output_dir, "lodo", job.method, o.domain, job.seed).string();
        const TrainResult r = train_style_prompter(cfg, bundle, ds);
        o.accuracy = accuracy(predict_all(bundle, r.selected, test.x, ds.class_names()), test.class_labels);
      }
    } catch (const Error& e) {
      o.ok = false;
      o.error_code = std::string(to_string(e.code()));
      o.error_message = e.what();
    } catch (const std::exception& e) {
      o.ok = false;
      o.error_code = "internal_error";
      o.error_message = e.what();
    }
  });

  report.outcomes = outcomes;
  for (const auto& o : outcomes) report.partial = report.partial || !o.ok;
  for (const auto& meth : m.methods) {
    MethodRow row = detail::aggregate(meth, report.domains, outcomes, is_baseline(meth) ? std::vector<std::uint64_t>{m.seeds.front()} : m.seeds);
    row.config_hash = method_hash(m.base, meth);
    report.rows.push_back(std::move(row));
  }
  return report;
}

/// Four-row component ablation: zero-shot "[CLASS]", then the prompter variants.
inline EvalReport run_ablation(EvalMatrix m, const Dataset& ds, const FrozenEncoderBundle& bundle) {
  m.methods = {"baseline_C", "BSP", "GSP", "GSP+SR"};
  EvalReport r = evaluate_leave_one_out(m, ds, bundle);
  r.mode = "ablation";
  const std::map<std::string, std::string> labels = {{"baseline_C", "baseline"}, {"BSP", "+BSP"}, {"GSP", "+GSP"}, {"GSP+SR", "+GSP+SR"}};
  for (auto& row : r.rows) row.label = labels.at(row.method);
  return r;
}

/// Trains on every domain of `train` and scores on the unseen classes and
/// domains of `test`, next to the zero-shot "[CLASS]" baseline.
inline EvalReport evaluate_cross_category(const EvalMatrix& m, const Dataset& train, const Dataset& test) {
  const std::set<std::string> train_classes(train.class_names().begin(), train.class_names().end());
  const std::set<std::string> train_domains(train.domain_names().begin(), train.domain_names().end());
  for (const auto& c : test.class_names())
    if (train_classes.count(c)) fail(ErrorCode::kContract, "class '" + c + "' appears in both train and test sets");
  for (const auto& d : test.domain_names())
    if (train_domains.count(d)) fail(ErrorCode::kContract, "domain '" + d + "' appears in both train and test sets");

  RunConfig base = m.base;
  base.held_out_domain.reset();
  for (const auto& c : test.class_names())
    if (std::find(base.extra_classes.begin(), base.extra_classes.end(), c) == base.extra_classes.end()) base.extra_classes.push_back(c);
  const FrozenEncoderBundle bundle = make_bundle(base, train.class_names());

  EvalReport report;
  report.mode = "cross_category";
  report.seeds = m.seeds;
  report.domains = test.domain_names();
  std::vector<Dataset> held;
  for (std::size_t d = 0; d < test.manifest.num_domains(); ++d) held.push_back(test.subset(test.indices_where_domain(d)));

  std::vector<std::string> methods = {"baseline_C"};
  for (const auto& meth : m.methods)
    if (!is_baseline(meth)) methods.push_back(meth);

  std::vector<RunOutcome> outcomes;
  const ZeroShotClassifier zs(bundle, test.class_names(), ZeroShotTemplate::kClass);
  for (std::size_t d = 0; d < held.size(); ++d) {
    outcomes.push_back({"baseline_C", report.domains[d], m.seeds.front(), true,
                        accuracy(predict_all(zs, held[d].x, m.threads), held[d].class_labels), "", ""});
  }

  struct Job {
    std::string method;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (std::size_t k = 1; k < methods.size(); ++k)
    for (std::uint64_t s : m.seeds) jobs.push_back({methods[k], s});
  std::vector<std::vector<RunOutcome>> per_job(jobs.size());
  parallel_for(jobs.size(), m.threads, [&](std::size_t k) {
    const Job& job = jobs[k];
    RunConfig cfg = method_config(base, job.method);
    cfg.seed = job.seed;
    cfg.output_dir = detail::run_dir(m.output_dir, "crosscat", job.method, "train", job.seed).string();
    try {
      const TrainResult r = train_style_prompter(cfg, bundle, train);
      for (std::size_t d = 0; d < held.size(); ++d) {
        per_job[k].push_back({job.method, report.domains[d], job.seed, true,
                              accuracy(predict_all(bundle, r.selected, held[d].x, test.class_names()), held[d].class_labels), "", ""});
      }
    } catch (const Error& e) {
      for (const auto& dn : report.domains) per_job[k].push_back({job.method, dn, job.seed, false, 0.0, std::string(to_string(e.code())), e.what()});
    }
  });
  for (auto& v : per_job) outcomes.insert(outcomes.end(), v.begin(), v.end());

  report.outcomes = outcomes;
  for (const auto& o : outcomes) report.partial = report.partial || !o.ok;
  for (const auto& meth : methods) {
    MethodRow row = detail::aggregate(meth, report.domains, outcomes, is_baseline(meth) ? std::vector<std::uint64_t>{m.seeds.front()} : m.seeds);
    row.config_hash = method_hash(base, meth);
    report.rows.push_back(std::move(row));
  }
  return report;
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j;
  j["mode"] = r.mode;
  j["domains"] = r.domains;
  j["seeds"] = r.seeds;
  j["partial"] = r.partial;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) {
    rows.push_back({{"method", row.method},
                    {"label", row.label},
                    {"config_hash", row.config_hash},
                    {"per_domain", row.per_domain},
                    {"per_domain_std", row.per_domain_std},
                    {"average", row.average},
                    {"average_std", row.average_std},
                    {"runs", row.runs}});
  }
  j["rows"] = rows;
  nlohmann::json failures = nlohmann::json::array();
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& o : r.outcomes) {
    runs.push_back({{"method", o.method}, {"domain", o.domain}, {"seed", o.seed}, {"ok", o.ok}, {"accuracy", o.accuracy}});
    if (!o.ok) {
      failures.push_back({{"method", o.method}, {"domain", o.domain}, {"seed", o.seed}, {"code", o.error_code}, {"message", o.error_message}});
    }
  }
  j["runs"] = runs;
  j["failures"] = failures;
  return j;
}

/// One line per method: label, per-domain accuracy in report order, average, std.
inline std::string report_csv(const EvalReport& r) {
  std::ostringstream os;
  os.precision(6);
  os << "method,config_hash";
  for (const auto& d : r.domains) os << ',' << d;
  os << ",average,average_std\n";
  for (const auto& row : r.rows) {
    os << row.label << ',' << row.config_hash;
    for (const auto& d : r.domains) {
      const auto it = row.per_domain.find(d);
      os << ',';
      if (it != row.per_domain.end()) os << it->second;
    }
    os << ',' << row.average << ',' << row.average_std << '\n';
  }
  return os.str();
}

/// Cosine between each test image and captions of its true class.
struct SimilarityMatrix {
  std::vector<std::size_t> ids;
  std::vector<std::string> domains;
  std::vector<std::string> classes;
  std::vector<std::string> columns;  // style words, then "learned"
  Tensor values;                     // rows x columns

  std::vector<double> column_means() const {
    std::vector<double> out(columns.size(), 0.0);
    for (std::size_t r = 0; r < values.dim(0); ++r)
      for (std::size_t c = 0; c < columns.size(); ++c) out[c] += values.at(r, c);
    for (double& v : out) v /= static_cast<double>(values.dim(0));
    return out;
  }
};

inline SimilarityMatrix style_similarity_report(const FrozenEncoderBundle& bundle, const StylePrompter& prompter, const Dataset& test,
                                                const std::vector<std::string>& style_words, std::size_t threads = 1) {
  if (test.size() == 0) fail(ErrorCode::kEmptyInput, "similarity report needs at least one test image");
  SimilarityMatrix m;
  m.columns = style_words;
  m.columns.push_back("learned");
  m.values = Tensor(Shape{test.size(), m.columns.size()});
  for (std::size_t i = 0; i < test.size(); ++i) {
    m.ids.push_back(i);
    m.domains.push_back(test.domain_names()[test.domain_labels[i]]);
    m.classes.push_back(test.class_names()[test.class_labels[i]]);
  }
  parallel_for(test.size(), threads, [&](std::size_t i) {
    const std::vector<double> z = encode_image(bundle, test.x.row(i));
    const std::vector<double> u = project_image(bundle, z);
    const std::string& cls = m.classes[i];
    for (std::size_t s = 0; s < style_words.size(); ++s) {
      m.values.at(i, s) = cosine_similarity(u, encode_text(bundle, style_template_text(style_words[s], cls)).data());
    }
    const std::vector<double> style = style_for_prompt(prompter, z);
    m.values.at(i, style_words.size()) = cosine_similarity(u, encode_text(bundle, style_prompt_text(cls), style).data());
  });
  return m;
}

inline std::string similarity_csv(const SimilarityMatrix& m) {
  std::ostringstream os;
  os.precision(17);
  os << "id,domain,class";
  for (const auto& c : m.columns) os << ',' << c;
  os << '\n';
  for (std::size_t r = 0; r < m.ids.size(); ++r) {
    os << m.ids[r] << ',' << m.domains[r] << ',' << m.classes[r];
    for (std::size_t c = 0; c < m.columns.size(); ++c) os << ',' << m.values.at(r, c);
    os << '\n';
  }
  return os.str();
}

}  // namespace spdg
