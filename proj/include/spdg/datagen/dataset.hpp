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

#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "spdg/error.hpp"
#include "spdg/numerics/blob.hpp"
#include "spdg/numerics/rng.hpp"
#include "spdg/numerics/tensor.hpp"
#include "spdg/pseudo_clip/world.hpp"

namespace spdg {

inline constexpr int kDatasetFormatVersion = 1;

inline const std::vector<std::string> kDefaultClassNames = {"dog", "elephant", "guitar", "horse"};
inline const std::vector<std::string> kDefaultDomainNames = {"photo", "cartoon", "sketch", "clipart"};

struct GenerateParams {
  std::size_t num_classes = 4;
  std::size_t num_domains = 4;
  std::size_t per_cell = 60;
  std::size_t input_dim = 32;
  double style_strength = 0.8;
  double noise_std = 0.15;
  std::uint64_t seed = 0;
  std::uint64_t world_seed = kDefaultWorldSeed;
  std::vector<std::string> class_names;   // defaults when empty
  std::vector<std::string> domain_names;  // defaults when empty
};

struct DatasetManifest {
  GenerateParams params;
  int format_version = kDatasetFormatVersion;

  std::size_t num_classes() const { return params.class_names.size(); }
  std::size_t num_domains() const { return params.domain_names.size(); }
};

struct LabeledSample {
  std::span<const double> x;
  std::size_t class_label;
  std::size_t domain_label;
};

/// Samples stored as one (n x D_x) matrix plus parallel label arrays.
struct Dataset {
  DatasetManifest manifest;
  Tensor x;
  std::vector<std::size_t> class_labels;
  std::vector<std::size_t> domain_labels;

  std::size_t size() const { return class_labels.size(); }
  LabeledSample sample(std::size_t i) const { return {x.row(i), class_labels[i], domain_labels[i]}; }
  const std::vector<std::string>& class_names() const { return manifest.params.class_names; }
  const std::vector<std::string>& domain_names() const { return manifest.params.domain_names; }

  std::vector<std::size_t> indices_where_domain(std::size_t d) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < size(); ++i)
      if (domain_labels[i] == d) out.push_back(i);
    return out;
  }

  /// Rows gathered from `indices`; labels and manifest copied over.
  Dataset subset(const std::vector<std::size_t>& indices) const {
    if (indices.empty()) fail(ErrorCode::kEmptyInput, "empty dataset subset");
    Dataset out;
    out.manifest = manifest;
    const std::size_t dx = x.dim(1);
    std::vector<double> data;
    data.reserve(indices.size() * dx);
    for (std::size_t i : indices) {
      const auto r = x.row(i);
      data.insert(data.end(), r.begin(), r.end());
      out.class_labels.push_back(class_labels[i]);
      out.domain_labels.push_back(domain_labels[i]);
    }
    out.x = Tensor(Shape{indices.size(), dx}, std::move(data));
    return out;
  }
};

namespace detail {

inline void fill_names(GenerateParams& p) {
  if (p.class_names.empty()) {
    for (std::size_t c = 0; c < p.num_classes; ++c)
      p.class_names.push_back(c < kDefaultClassNames.size() ? kDefaultClassNames[c] : "class" + std::to_string(c));
  }
  if (p.domain_names.empty()) {
    std::vector<std::string> pool = kDefaultDomainNames;
    for (const auto& s : kStyleWords)
      if (std::find(pool.begin(), pool.end(), s) == pool.end()) pool.push_back(s);
    for (std::size_t d = 0; d < p.num_domains; ++d)
      p.domain_names.push_back(d < pool.size() ? pool[d] : "domain" + std::to_string(d));
  }
  if (p.class_names.size() != p.num_classes || p.domain_names.size() != p.num_domains) {
    fail(ErrorCode::kConfig, "name lists do not match class/domain counts");
  }
  if (std::set<std::string>(p.class_names.begin(), p.class_names.end()).size() != p.class_names.size() ||
      std::set<std::string>(p.domain_names.begin(), p.domain_names.end()).size() != p.domain_names.size()) {
    fail(ErrorCode::kConfig, "class and domain names must be unique");
  }
}

}  // namespace detail

/// x = A_d (mu_c + eps) with A_d = I + style_strength * R_d. Prototypes and
/// style directions come from the concept world; eps from `seed`.
inline Dataset generate(GenerateParams p) {
  if (p.num_classes < 2) fail(ErrorCode::kConfig, "need at least 2 classes");
  if (p.num_domains < 3) fail(ErrorCode::kConfig, "need at least 3 domains for leave-one-domain-out");
  if (p.per_cell < 10) fail(ErrorCode::kConfig, "need at least 10 samples per (class, domain) cell");
  if (p.input_dim < 2) fail(ErrorCode::kConfig, "input_dim must be >= 2");
  if (p.style_strength < 0.0 || p.noise_std < 0.0) fail(ErrorCode::kConfig, "style_strength and noise_std must be >= 0");
  detail::fill_names(p);

  const ConceptWorld world(p.world_seed, p.input_dim);
  Rng rng(derive_seed(p.seed, "datagen-noise"));
  Dataset ds;
  const std::size_t total = p.num_classes * p.num_domains * p.per_cell;
  std::vector<double> data;
  data.reserve(total * p.input_dim);
  for (std::size_t d = 0; d < p.num_domains; ++d) {
    const Tensor transform = world.style_transform(p.domain_names[d], p.style_strength);
    for (std::size_t c = 0; c < p.num_classes; ++c) {
      const auto proto = world.prototype(p.class_names[c]);
      for (std::size_t k = 0; k < p.per_cell; ++k) {
        std::vector<double> v = proto;
        for (double& e : v) e += p.noise_std * rng.normal();
        const auto x = apply_transform(transform, v);
        data.insert(data.end(), x.begin(), x.end());
        ds.class_labels.push_back(c);
        ds.domain_labels.push_back(d);
      }
    }
  }
  ds.x = Tensor(Shape{total, p.input_dim}, std::move(data));
  ds.manifest.params = std::move(p);
  return ds;
}

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
  const auto& p = m.params;
  return {{"format_version", m.format_version},
          {"num_classes", p.num_classes},
          {"num_domains", p.num_domains},
          {"per_cell", p.per_cell},
          {"input_dim", p.input_dim},
          {"seed", p.seed},
          {"world_seed", p.world_seed},
          {"generator", {{"style_strength", p.style_strength}, {"noise_std", p.noise_std}}},
          {"class_names", p.class_names},
          {"domain_names", p.domain_names}};
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(dir / "manifest.json");
    if (!os) fail(ErrorCode::kIo, "cannot write dataset manifest in " + dir.string());
    os << manifest_to_json(ds.manifest).dump(2) << '\n';
  }
  save_blob(dir / "samples.spdg", ds.x);
  std::ofstream csv(dir / "labels.csv");
  if (!csv) fail(ErrorCode::kIo, "cannot write labels.csv in " + dir.string());
  csv << "index,class,domain\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    csv << i << ',' << ds.class_names()[ds.class_labels[i]] << ',' << ds.domain_names()[ds.domain_labels[i]] << '\n';
  }
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) fail(ErrorCode::kIo, "missing dataset manifest in " + dir.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kIo, std::string("bad dataset manifest: ") + e.what());
  }
  const int version = j.value("format_version", -1);
  if (version != kDatasetFormatVersion) fail(ErrorCode::kUnsupportedVersion, "dataset format_version " + std::to_string(version));

  Dataset ds;
  auto& p = ds.manifest.params;
  p.num_classes = j.at("num_classes").get<std::size_t>();
  p.num_domains = j.at("num_domains").get<std::size_t>();
  p.per_cell = j.at("per_cell").get<std::size_t>();
  p.input_dim = j.at("input_dim").get<std::size_t>();
  p.seed = j.at("seed").get<std::uint64_t>();
  p.world_seed = j.at("world_seed").get<std::uint64_t>();
  p.style_strength = j.at("generator").at("style_strength").get<double>();
  p.noise_std = j.at("generator").at("noise_std").get<double>();
  p.class_names = j.at("class_names").get<std::vector<std::string>>();
  p.domain_names = j.at("domain_names").get<std::vector<std::string>>();
  if (p.class_names.size() != p.num_classes || p.domain_names.size() != p.num_domains) {
    fail(ErrorCode::kShapeMismatch, "manifest name lists disagree with counts");
  }

  ds.x = load_blob(dir / "samples.spdg");
  const std::size_t total = p.num_classes * p.num_domains * p.per_cell;
  if (ds.x.rank() != 2 || ds.x.dim(0) != total || ds.x.dim(1) != p.input_dim) {
    fail(ErrorCode::kShapeMismatch, "samples blob has shape " + shape_string(ds.x.shape()) + ", manifest implies [" +
                                        std::to_string(total) + "x" + std::to_string(p.input_dim) + "]");
  }

  std::ifstream csv(dir / "labels.csv");
  if (!csv) fail(ErrorCode::kIo, "missing labels.csv in " + dir.string());
  std::string line;
  std::getline(csv, line);
  if (line != "index,class,domain") fail(ErrorCode::kIo, "labels.csv has unexpected header '" + line + "'");
  auto lookup = [](const std::vector<std::string>& names, const std::string& n) {
    auto it = std::find(names.begin(), names.end(), n);
    if (it == names.end()) fail(ErrorCode::kIo, "labels.csv names unknown label '" + n + "'");
    return static_cast<std::size_t>(it - names.begin());
  };
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string idx, cls, dom;
    std::getline(ls, idx, ',');
    std::getline(ls, cls, ',');
    std::getline(ls, dom, ',');
    if (std::stoul(idx) != ds.class_labels.size()) fail(ErrorCode::kIo, "labels.csv index out of order");
    ds.class_labels.push_back(lookup(p.class_names, cls));
    ds.domain_labels.push_back(lookup(p.domain_names, dom));
  }
  if (ds.class_labels.size() != total) {
    fail(ErrorCode::kShapeMismatch, "labels.csv has " + std::to_string(ds.class_labels.size()) + " rows, expected " +
                                        std::to_string(total));
  }
  return ds;
}

}  // namespace spdg
