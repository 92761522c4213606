#pragma once

// Small sentence-pair classifier with hand-written backprop.
//
//   x_i    = E[t_i] + P[i]                 (P absent when positional_mode = none)
//   h_i    = relu(W x_i + b)
//   pooled = mean of h_i over non-pad positions
//   logits = H pooled + c
//
// Body = {E, P, W, b}; head = {H, c}.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "atlas/error.hpp"
#include "atlas/param_space.hpp"
#include "atlas/rng.hpp"

namespace atlas {

inline constexpr int kSeparatorId = 0;
inline constexpr int kPadId = 1;

enum class PositionalMode { learned, none };

struct ModelConfig {
  std::size_t vocab_size = 64;
  std::size_t embed_dim = 16;
  std::size_t max_len = 14;
  PositionalMode positional_mode = PositionalMode::learned;
  std::size_t hidden_dim = 32;
  std::size_t n_classes = 2;

  void validate() const {
    require(vocab_size >= 2, "model config: vocab_size must cover the reserved separator and pad ids");
    require(embed_dim >= 1 && max_len >= 1 && hidden_dim >= 1, "model config: dimensions must be >= 1");
    require(n_classes >= 2, "model config: n_classes must be >= 2");
  }
  bool operator==(const ModelConfig&) const = default;
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size},
          {"embed_dim", c.embed_dim},
          {"max_len", c.max_len},
          {"positional_mode", c.positional_mode == PositionalMode::learned ? "learned" : "none"},
          {"hidden_dim", c.hidden_dim},
          {"n_classes", c.n_classes},
          {"activation", "relu"}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.max_len = j.value("max_len", c.max_len);
  const auto mode = j.value("positional_mode", std::string("learned"));
  require(mode == "learned" || mode == "none", "model config: positional_mode must be learned|none");
  c.positional_mode = mode == "learned" ? PositionalMode::learned : PositionalMode::none;
  c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
  c.n_classes = j.value("n_classes", c.n_classes);
  require(j.value("activation", std::string("relu")) == "relu", "model config: only relu activation is supported");
  c.validate();
  return c;
}

namespace tensor_names {
inline const std::string token = "embed.token";
inline const std::string position = "embed.position";
inline const std::string dense_w = "dense.weight";
inline const std::string dense_b = "dense.bias";
inline const std::string head_w = "head.weight";
inline const std::string head_b = "head.bias";
}  // namespace tensor_names

inline std::vector<TensorSpec> body_specs(const ModelConfig& c) {
  std::vector<TensorSpec> s{{tensor_names::token, {c.vocab_size, c.embed_dim}}};
  if (c.positional_mode == PositionalMode::learned) s.push_back({tensor_names::position, {c.max_len, c.embed_dim}});
  s.push_back({tensor_names::dense_w, {c.hidden_dim, c.embed_dim}});
  s.push_back({tensor_names::dense_b, {c.hidden_dim}});
  return s;
}

inline std::vector<TensorSpec> head_specs(const ModelConfig& c) {
  return {{tensor_names::head_w, {c.n_classes, c.hidden_dim}}, {tensor_names::head_b, {c.n_classes}}};
}

inline ManifestPtr make_manifest(const ModelConfig& c) {
  c.validate();
  auto specs = body_specs(c);
  for (auto& h : head_specs(c)) specs.push_back(std::move(h));
  return std::make_shared<const ShapeManifest>(std::move(specs));
}

inline std::size_t param_count(const ModelConfig& c) {
  std::size_t n = c.vocab_size * c.embed_dim + c.hidden_dim * c.embed_dim + c.hidden_dim;
  if (c.positional_mode == PositionalMode::learned) n += c.max_len * c.embed_dim;
  return n + c.n_classes * c.hidden_dim + c.n_classes;
}

inline bool is_head_tensor(const std::string& name) {
  return name == tensor_names::head_w || name == tensor_names::head_b;
}

/// Per-coordinate mask over the manifest: true where the coordinate belongs to the head.
inline std::vector<bool> head_mask(const ShapeManifest& m) {
  std::vector<bool> mask(m.total_len(), false);
  for (std::size_t i = 0; i < m.tensors().size(); ++i)
    if (is_head_tensor(m.tensors()[i].name))
      std::fill_n(mask.begin() + static_cast<std::ptrdiff_t>(m.offset(i)), m.tensors()[i].size(), true);
  return mask;
}

struct NamedTensor {
  std::string name;
  std::vector<double> values;
};

namespace detail {

// Glorot-uniform for matrices, exact zero for vectors (biases).
inline std::vector<NamedTensor> glorot_init(const std::vector<TensorSpec>& specs, std::uint64_t seed) {
  std::vector<NamedTensor> out;
  for (const auto& s : specs) {
    NamedTensor t{s.name, std::vector<double>(s.size(), 0.0)};
    if (s.shape.size() == 2) {
      Rng rng(derive_seed(seed, tag_of(s.name.c_str())));
      const double limit = std::sqrt(6.0 / static_cast<double>(s.shape[0] + s.shape[1]));
      for (auto& v : t.values) v = uniform(rng, -limit, limit);
    }
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace detail

inline std::vector<NamedTensor> init_body(const ModelConfig& c, std::uint64_t body_seed) {
  c.validate();
  return detail::glorot_init(body_specs(c), derive_seed(body_seed, tag_of("body")));
}

inline std::vector<NamedTensor> init_head(const ModelConfig& c, std::uint64_t head_seed) {
  c.validate();
  return detail::glorot_init(head_specs(c), derive_seed(head_seed, tag_of("head")));
}

inline void assign_tensors(ParamVector& p, const std::vector<NamedTensor>& tensors) {
  for (const auto& t : tensors) {
    auto dst = p.tensor(t.name);
    require(dst.size() == t.values.size(), "assign_tensors: size mismatch for '" + t.name + "'");
    std::copy(t.values.begin(), t.values.end(), dst.begin());
  }
}

inline ParamVector init_params(const ModelConfig& c, std::uint64_t body_seed, std::uint64_t head_seed) {
  ParamVector p(make_manifest(c));
  assign_tensors(p, init_body(c, body_seed));
  assign_tensors(p, init_head(c, head_seed));
  return p;
}

/// Token matrix (rows x max_len) plus labels. Pad positions (id 1) are masked.
struct Batch {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<int> tokens;
  std::vector<std::uint8_t> mask;  // 1 = real token
  std::vector<int> labels;

  Batch() = default;
  Batch(std::size_t r, std::size_t c, std::vector<int> toks, std::vector<int> labs)
      : rows(r), cols(c), tokens(std::move(toks)), labels(std::move(labs)) {
    require(tokens.size() == rows * cols, "batch: token matrix shape mismatch");
    require(labels.size() == rows, "batch: label count mismatch");
    mask.resize(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) mask[i] = tokens[i] == kPadId ? 0 : 1;
  }

  int token(std::size_t r, std::size_t c) const { return tokens[r * cols + c]; }
  bool real(std::size_t r, std::size_t c) const { return mask[r * cols + c] != 0; }

  Batch select(std::span<const std::size_t> idx) const {
    std::vector<int> t;
    std::vector<int> l;
    t.reserve(idx.size() * cols);
    for (auto i : idx) {
      t.insert(t.end(), tokens.begin() + static_cast<std::ptrdiff_t>(i * cols),
               tokens.begin() + static_cast<std::ptrdiff_t>((i + 1) * cols));
      l.push_back(labels[i]);
    }
    return Batch(idx.size(), cols, std::move(t), std::move(l));
  }
};

/// Row-major (rows x n_classes) logits.
struct Logits {
  std::size_t rows = 0;
  std::size_t classes = 0;
  std::vector<double> values;

  double at(std::size_t r, std::size_t c) const { return values[r * classes + c]; }
};

struct LossAcc {
  double loss = 0.0;
  double accuracy = 0.0;
};

namespace detail {

struct Views {
  std::span<const double> token, position, dense_w, dense_b, head_w, head_b;
};

inline Views views_of(const ParamVector& p, const ModelConfig& c) {
  Views v;
  v.token = p.tensor(tensor_names::token);
  if (c.positional_mode == PositionalMode::learned) v.position = p.tensor(tensor_names::position);
  v.dense_w = p.tensor(tensor_names::dense_w);
  v.dense_b = p.tensor(tensor_names::dense_b);
  v.head_w = p.tensor(tensor_names::head_w);
  v.head_b = p.tensor(tensor_names::head_b);
  return v;
}

inline void check_inputs(const ParamVector& p, const Batch& batch, const ModelConfig& c) {
  require(p.size() == param_count(c), "model: params do not match config manifest");
  require(batch.cols <= c.max_len, "model: batch wider than max_len");
  for (int t : batch.tokens)
    if (t < 0 || static_cast<std::size_t>(t) >= c.vocab_size)
      throw ValidationError("model: token id " + std::to_string(t) + " out of range");
}

// Pre-activation z = W (E[t] + P[pos]) + b for one position, written to `z`, input to `x`.
inline void position_preact(const Views& v, const ModelConfig& c, int tok, std::size_t pos, double* x, double* z) {
  const std::size_t d = c.embed_dim;
  const double* e = v.token.data() + static_cast<std::size_t>(tok) * d;
  if (!v.position.empty()) {
    const double* pe = v.position.data() + pos * d;
    for (std::size_t k = 0; k < d; ++k) x[k] = e[k] + pe[k];
  } else {
    for (std::size_t k = 0; k < d; ++k) x[k] = e[k];
  }
  for (std::size_t j = 0; j < c.hidden_dim; ++j) {
    const double* w = v.dense_w.data() + j * d;
    double s = v.dense_b[j];
    for (std::size_t k = 0; k < d; ++k) s += w[k] * x[k];
    z[j] = s;
  }
}

inline double log_sum_exp(const double* row, std::size_t n) {
  const double m = *std::max_element(row, row + n);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(row[i] - m);
  return m + std::log(s);
}

}  // namespace detail

inline Logits forward(const ParamVector& params, const Batch& batch, const ModelConfig& c) {
  detail::check_inputs(params, batch, c);
  const auto v = detail::views_of(params, c);
  const std::size_t d = c.embed_dim, hdim = c.hidden_dim, nc = c.n_classes;
  Logits out{batch.rows, nc, std::vector<double>(batch.rows * nc, 0.0)};
  std::vector<double> x(d), z(hdim), pooled(hdim);
  for (std::size_t r = 0; r < batch.rows; ++r) {
    std::fill(pooled.begin(), pooled.end(), 0.0);
    std::size_t n_real = 0;
    for (std::size_t pos = 0; pos < batch.cols; ++pos) {
      if (!batch.real(r, pos)) continue;
      ++n_real;
      detail::position_preact(v, c, batch.token(r, pos), pos, x.data(), z.data());
      for (std::size_t j = 0; j < hdim; ++j) pooled[j] += std::max(z[j], 0.0);
    }
    if (n_real > 0)
      for (auto& p : pooled) p /= static_cast<double>(n_real);
    for (std::size_t k = 0; k < nc; ++k) {
      double s = v.head_b[k];
      for (std::size_t j = 0; j < hdim; ++j) s += v.head_w[k * hdim + j] * pooled[j];
      out.values[r * nc + k] = s;
    }
  }
  return out;
}

/// Argmax with ties resolved toward the lower class index.
inline std::size_t predicted_class(const Logits& logits, std::size_t r) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < logits.classes; ++k)
    if (logits.at(r, k) > logits.at(r, best)) best = k;
  return best;
}

inline LossAcc loss_acc(const Logits& logits, std::span<const int> labels) {
  require(labels.size() == logits.rows, "loss_acc: label count does not match logits");
  if (logits.rows == 0) return {};
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t r = 0; r < logits.rows; ++r) {
    const double* row = logits.values.data() + r * logits.classes;
    const auto y = static_cast<std::size_t>(labels[r]);
    require(y < logits.classes, "loss_acc: label out of range");
    loss += detail::log_sum_exp(row, logits.classes) - row[y];
    if (predicted_class(logits, r) == y) ++correct;
  }
  const auto n = static_cast<double>(logits.rows);
  return {loss / n, static_cast<double>(correct) / n};
}

/// Mean cross-entropy and its exact gradient. Returns the loss; writes the gradient to `grad`.
inline double loss_and_gradient(const ParamVector& params, const Batch& batch, const ModelConfig& c,
                                ParamVector& grad) {
  detail::check_inputs(params, batch, c);
  require(grad.same_manifest(params), "gradient: output manifest mismatch");
  std::fill(grad.values().begin(), grad.values().end(), 0.0);
  const auto v = detail::views_of(params, c);
  auto g_token = grad.tensor(tensor_names::token);
  std::span<double> g_pos;
  if (c.positional_mode == PositionalMode::learned) g_pos = grad.tensor(tensor_names::position);
  auto g_dw = grad.tensor(tensor_names::dense_w);
  auto g_db = grad.tensor(tensor_names::dense_b);
  auto g_hw = grad.tensor(tensor_names::head_w);
  auto g_hb = grad.tensor(tensor_names::head_b);

  const std::size_t d = c.embed_dim, hdim = c.hidden_dim, nc = c.n_classes, L = batch.cols;
  const double inv_b = batch.rows > 0 ? 1.0 / static_cast<double>(batch.rows) : 0.0;
  std::vector<double> xs(L * d), zs(L * hdim), pooled(hdim), logits(nc), dlogits(nc), dpooled(hdim), dz(hdim);
  double total_loss = 0.0;

  for (std::size_t r = 0; r < batch.rows; ++r) {
    std::fill(pooled.begin(), pooled.end(), 0.0);
    std::size_t n_real = 0;
    for (std::size_t pos = 0; pos < L; ++pos) {
      if (!batch.real(r, pos)) continue;
      ++n_real;
      detail::position_preact(v, c, batch.token(r, pos), pos, &xs[pos * d], &zs[pos * hdim]);
      for (std::size_t j = 0; j < hdim; ++j) pooled[j] += std::max(zs[pos * hdim + j], 0.0);
    }
    const double inv_n = n_real > 0 ? 1.0 / static_cast<double>(n_real) : 0.0;
    for (auto& p : pooled) p *= inv_n;
    for (std::size_t k = 0; k < nc; ++k) {
      double s = v.head_b[k];
      for (std::size_t j = 0; j < hdim; ++j) s += v.head_w[k * hdim + j] * pooled[j];
      logits[k] = s;
    }
    const auto y = static_cast<std::size_t>(batch.labels[r]);
    require(y < nc, "gradient: label out of range");
    const double lse = detail::log_sum_exp(logits.data(), nc);
    total_loss += lse - logits[y];
    for (std::size_t k = 0; k < nc; ++k) dlogits[k] = (std::exp(logits[k] - lse) - (k == y ? 1.0 : 0.0)) * inv_b;

    std::fill(dpooled.begin(), dpooled.end(), 0.0);
    for (std::size_t k = 0; k < nc; ++k) {
      g_hb[k] += dlogits[k];
      for (std::size_t j = 0; j < hdim; ++j) {
        g_hw[k * hdim + j] += dlogits[k] * pooled[j];
        dpooled[j] += v.head_w[k * hdim + j] * dlogits[k];
      }
    }
    for (std::size_t pos = 0; pos < L; ++pos) {
      if (!batch.real(r, pos)) continue;
      const double* x = &xs[pos * d];
      const double* z = &zs[pos * hdim];
      for (std::size_t j = 0; j < hdim; ++j) dz[j] = z[j] > 0.0 ? dpooled[j] * inv_n : 0.0;
      double* gt = g_token.data() + static_cast<std::size_t>(batch.token(r, pos)) * d;
      double* gp = g_pos.empty() ? nullptr : g_pos.data() + pos * d;
      for (std::size_t j = 0; j < hdim; ++j) {
        if (dz[j] == 0.0) continue;
        g_db[j] += dz[j];
        const double* w = v.dense_w.data() + j * d;
        double* gw = g_dw.data() + j * d;
        for (std::size_t k = 0; k < d; ++k) {
          gw[k] += dz[j] * x[k];
          gt[k] += dz[j] * w[k];
          if (gp) gp[k] += dz[j] * w[k];
        }
      }
    }
  }
  return total_loss * inv_b;
}

inline ParamVector gradient(const ParamVector& params, const Batch& batch, const ModelConfig& c) {
  ParamVector g(params.manifest_ptr());
  loss_and_gradient(params, batch, c, g);
  return g;
}

/// Maps source-class logits onto two targets: each target takes the max over its sources.
inline Logits collapse_logits(const Logits& logits, std::span<const int> mapping) {
  require(mapping.size() == logits.classes, "collapse_logits: mapping must cover every source class");
  bool has[2] = {false, false};
  for (int t : mapping) {
    require(t == 0 || t == 1, "collapse_logits: targets must be 0 or 1");
    has[t] = true;
  }
  require(has[0] && has[1], "collapse_logits: mapping must reach both targets");
  Logits out{logits.rows, 2, std::vector<double>(logits.rows * 2, -std::numeric_limits<double>::infinity())};
  for (std::size_t r = 0; r < logits.rows; ++r)
    for (std::size_t k = 0; k < logits.classes; ++k) {
      auto& slot = out.values[r * 2 + static_cast<std::size_t>(mapping[k])];
      slot = std::max(slot, logits.at(r, k));
    }
  return out;
}

}  // namespace atlas
