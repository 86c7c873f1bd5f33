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

// The style prompter is the only trainable module. It maps image features z
// (D_i) to a token-space style embedding (D_t):
//
//   basic:    Linear(D_i, D_i/2) -> ELU -> Linear(D_i/2, D_i/2) -> ELU -> Linear(D_i/2, D_t)
//   gaussian: same two-layer trunk, then a mu head and a sigma head with
//             sigma = softplus(raw) + sigma_floor (diagonal covariance).

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "spdg/error.hpp"
#include "spdg/numerics/blob.hpp"
#include "spdg/numerics/ops.hpp"
#include "spdg/numerics/rng.hpp"
#include "spdg/numerics/tape.hpp"
#include "spdg/numerics/tensor.hpp"

namespace spdg {

inline constexpr double kSigmaFloor = 1e-6;
inline constexpr double kInitialSigma = 0.1;
inline constexpr int kCheckpointFormatVersion = 1;

enum class PrompterKind { kBasic, kGaussian };

inline std::string to_string(PrompterKind k) { return k == PrompterKind::kBasic ? "basic" : "gaussian"; }

inline PrompterKind parse_prompter_kind(const std::string& s) {
  if (s == "basic") return PrompterKind::kBasic;
  if (s == "gaussian") return PrompterKind::kGaussian;
  fail(ErrorCode::kConfig, "unknown prompter kind '" + s + "' (expected basic or gaussian)");
}

struct PrompterDims {
  std::size_t image_feature = 64;  // D_i
  std::size_t token = 32;          // D_t

  std::size_t hidden() const { return image_feature / 2; }
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

class StylePrompter {
 public:
  StylePrompter() = default;

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases; the sigma
  /// head bias starts at softplus^-1(kInitialSigma).
  static StylePrompter initialize(PrompterKind kind, PrompterDims dims, std::uint64_t seed, double sigma_floor = kSigmaFloor) {
    if (dims.image_feature < 2 || dims.image_feature % 2 != 0) {
      fail(ErrorCode::kConfig, "image feature dimension must be even, got " + std::to_string(dims.image_feature));
    }
    if (dims.token < 1) fail(ErrorCode::kConfig, "token dimension must be positive");
    if (!(sigma_floor > 0.0)) fail(ErrorCode::kConfig, "sigma_floor must be positive");
    StylePrompter p;
    p.kind_ = kind;
    p.dims_ = dims;
    p.sigma_floor_ = sigma_floor;

    Rng rng(derive_seed(seed, "prompter-init"));
    const std::size_t di = dims.image_feature, h = dims.hidden(), dt = dims.token;
    auto weight = [&rng](std::size_t fan_in, std::size_t fan_out) {
      Tensor w(Shape{fan_in, fan_out});
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (double& v : w.storage()) v = rng.uniform(-bound, bound);
      return w;
    };
    p.params_.push_back({"w1", weight(di, h)});
    p.params_.push_back({"b1", Tensor(Shape{h})});
    p.params_.push_back({"w2", weight(h, h)});
    p.params_.push_back({"b2", Tensor(Shape{h})});
    if (kind == PrompterKind::kBasic) {
      p.params_.push_back({"w3", weight(h, dt)});
      p.params_.push_back({"b3", Tensor(Shape{dt})});
    } else {
      p.params_.push_back({"w_mu", weight(h, dt)});
      p.params_.push_back({"b_mu", Tensor(Shape{dt})});
      p.params_.push_back({"w_sigma", weight(h, dt)});
      p.params_.push_back({"b_sigma", Tensor(Shape{dt}, std::log(std::expm1(kInitialSigma)))});
    }
    return p;
  }

  PrompterKind kind() const noexcept { return kind_; }
  const PrompterDims& dims() const noexcept { return dims_; }
  double sigma_floor() const noexcept { return sigma_floor_; }

  std::vector<NamedTensor>& params() noexcept { return params_; }
  const std::vector<NamedTensor>& params() const noexcept { return params_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  std::uint64_t checksum() const {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (const auto& p : params_) h = spdg::checksum(p.value, fnv1a(p.name, h));
    return h;
  }

  friend bool operator==(const StylePrompter& a, const StylePrompter& b) {
    if (a.kind_ != b.kind_ || a.params_.size() != b.params_.size()) return false;
    for (std::size_t i = 0; i < a.params_.size(); ++i) {
      if (a.params_[i].name != b.params_[i].name || !(a.params_[i].value == b.params_[i].value)) return false;
    }
    return true;
  }

 private:
  friend StylePrompter load_checkpoint(const std::filesystem::path& dir, nlohmann::json* run_config);

  PrompterKind kind_ = PrompterKind::kBasic;
  PrompterDims dims_;
  double sigma_floor_ = kSigmaFloor;
  std::vector<NamedTensor> params_;
};

/// Prompter parameters placed on a tape, in the order of StylePrompter::params().
struct BoundPrompter {
  PrompterKind kind;
  PrompterDims dims;
  double sigma_floor;
  std::vector<Var> vars;
};

inline BoundPrompter bind(const StylePrompter& p, Tape& tape, bool trainable) {
  BoundPrompter b{p.kind(), p.dims(), p.sigma_floor(), {}};
  for (const auto& param : p.params()) b.vars.push_back(tape.leaf(param.value, trainable));
  return b;
}

struct StyleDistribution {
  Var mu;     // B x D_t
  Var sigma;  // B x D_t, strictly positive
};

namespace detail {

inline void check_features(const BoundPrompter& p, const Var& z) {
  const Tensor& zv = z.value();
  if (zv.rank() != 2 || zv.dim(1) != p.dims.image_feature) {
    fail(ErrorCode::kDimension, "prompter expects [B x " + std::to_string(p.dims.image_feature) + "] features, got " +
                                    shape_string(zv.shape()));
  }
}

inline Var trunk(const BoundPrompter& p, const Var& z) {
  check_features(p, z);
  const Var h1 = ad::elu(ad::linear(z, p.vars[0], p.vars[1]));
  return ad::elu(ad::linear(h1, p.vars[2], p.vars[3]));
}

}  // namespace detail

/// Point style embedding per row, (B x D_i) -> (B x D_t).
inline Var basic_forward(const BoundPrompter& p, const Var& z) {
  if (p.kind != PrompterKind::kBasic) fail(ErrorCode::kConfig, "basic_forward on a gaussian prompter");
  return ad::linear(detail::trunk(p, z), p.vars[4], p.vars[5]);
}

/// Per-row diagonal Gaussian N(mu(z), diag(sigma(z)^2)).
inline StyleDistribution gaussian_forward(const BoundPrompter& p, const Var& z) {
  if (p.kind != PrompterKind::kGaussian) fail(ErrorCode::kConfig, "gaussian_forward on a basic prompter");
  const Var h = detail::trunk(p, z);
  const Var mu = ad::linear(h, p.vars[4], p.vars[5]);
  const Var sigma = ad::add_scalar(ad::softplus(ad::linear(h, p.vars[6], p.vars[7])), p.sigma_floor);
  return {mu, sigma};
}

/// s[i*N + n] = mu_i + sigma_i * eps[i*N + n]; eps has B*N rows.
inline Var reparameterize(const StyleDistribution& dist, const Tensor& eps) {
  const Tensor& mu = dist.mu.value();
  if (eps.rank() != 2 || eps.dim(1) != mu.dim(1) || eps.dim(0) % mu.dim(0) != 0) {
    fail(ErrorCode::kDimension, "noise shape " + shape_string(eps.shape()) + " does not fit mu " + shape_string(mu.shape()));
  }
  const std::size_t n = eps.dim(0) / mu.dim(0);
  Tape& tape = *dist.mu.tape();
  return ad::add(ad::repeat_rows(dist.mu, n), ad::mul(ad::repeat_rows(dist.sigma, n), tape.constant(eps)));
}

/// Draws the standard-normal noise for sample_styles.
inline Tensor draw_noise(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor eps(Shape{rows, cols});
  for (double& v : eps.storage()) v = rng.normal();
  return eps;
}

/// N Monte-Carlo style samples per row via the reparameterization trick.
inline Var sample_styles(const StyleDistribution& dist, std::size_t n, Rng& rng) {
  if (n == 0) fail(ErrorCode::kEmptyInput, "need at least one Monte-Carlo sample");
  const Tensor& mu = dist.mu.value();
  return reparameterize(dist, draw_noise(mu.dim(0) * n, mu.dim(1), rng));
}

/// The embedding placed in the pseudo-word slot: the point output (basic) or mu (gaussian).
inline Var style_for_prompt(const BoundPrompter& p, const Var& z) {
  return p.kind == PrompterKind::kBasic ? basic_forward(p, z) : gaussian_forward(p, z).mu;
}

/// Value-only style for a single image feature vector.
inline std::vector<double> style_for_prompt(const StylePrompter& prompter, std::span<const double> z) {
  Tape tape;
  const BoundPrompter bound = bind(prompter, tape, false);
  const Var zv = tape.constant(Tensor(Shape{1, z.size()}, std::vector<double>(z.begin(), z.end())));
  return style_for_prompt(bound, zv).value().storage();
}

inline void save_checkpoint(const StylePrompter& p, const std::filesystem::path& dir, const nlohmann::json& run_config,
                            DType dtype = DType::kF64) {
  std::filesystem::create_directories(dir);
  nlohmann::json m;
  m["format_version"] = kCheckpointFormatVersion;
  m["prompter_kind"] = to_string(p.kind());
  m["dims"] = {{"image_feature", p.dims().image_feature}, {"token", p.dims().token}};
  m["sigma_floor"] = p.sigma_floor();
  m["dtype"] = dtype == DType::kF64 ? "f64" : "f32";
  m["run_config"] = run_config;
  std::vector<std::string> names;
  for (const auto& param : p.params()) {
    names.push_back(param.name);
    save_blob(dir / (param.name + ".spdg"), param.value, dtype);
  }
  m["params"] = names;
  std::ofstream os(dir / "manifest.json", std::ios::trunc);
  if (!os) fail(ErrorCode::kIo, "cannot write checkpoint manifest in " + dir.string());
  os << m.dump(2) << '\n';
}

inline StylePrompter load_checkpoint(const std::filesystem::path& dir, nlohmann::json* run_config = nullptr) {
  std::ifstream is(dir / "manifest.json");
  if (!is) fail(ErrorCode::kIo, "missing checkpoint manifest in " + dir.string());
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kIo, std::string("bad checkpoint manifest: ") + e.what());
  }
  if (m.value("format_version", -1) != kCheckpointFormatVersion) {
    fail(ErrorCode::kUnsupportedVersion, "checkpoint format_version " + m.value("format_version", nlohmann::json()).dump());
  }
  const PrompterKind kind = parse_prompter_kind(m.at("prompter_kind").get<std::string>());
  const PrompterDims dims{m.at("dims").at("image_feature").get<std::size_t>(), m.at("dims").at("token").get<std::size_t>()};
  StylePrompter p = StylePrompter::initialize(kind, dims, 0, m.at("sigma_floor").get<double>());
  const auto names = m.at("params").get<std::vector<std::string>>();
  if (names.size() != p.params_.size()) fail(ErrorCode::kShapeMismatch, "checkpoint parameter list has the wrong length");
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] != p.params_[i].name) fail(ErrorCode::kShapeMismatch, "unexpected parameter '" + names[i] + "'");
    Tensor t = load_blob(dir / (names[i] + ".spdg"));
    if (t.shape() != p.params_[i].value.shape()) {
      fail(ErrorCode::kShapeMismatch, names[i] + " has shape " + shape_string(t.shape()) + ", expected " +
                                          shape_string(p.params_[i].value.shape()));
    }
    p.params_[i].value = std::move(t);
  }
  if (run_config) *run_config = m.value("run_config", nlohmann::json::object());
  return p;
}

}  // namespace spdg
