#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "dynaflow/autodiff.hpp"
#include "dynaflow/rng.hpp"
#include "dynaflow/tensor.hpp"

namespace dynaflow {

// MLP over the flattened noisy trajectory, the conditioning vector and a
// sinusoidal time embedding. flow_dim/out_dim/squash bounds are derived from
// the method that owns the network (action prediction squashes into the
// action box; state heads emit raw values).
struct NetworkConfig {
  std::size_t hidden_width = 256;
  std::size_t n_hidden_layers = 3;
  std::size_t time_embed_dim = 32;  // even; half sin / half cos features
  std::size_t horizon = 16;
  std::size_t state_dim = 0;
  std::size_t action_dim = 0;
  std::size_t cond_dim = 0;
  std::size_t flow_dim = 0;  // channels per step seen by the network input
  std::size_t out_dim = 0;   // flattened network output width
  bool squash_output = false;
  std::vector<double> squash_low, squash_high;  // per action dim

  std::size_t input_dim() const {
    return horizon * flow_dim + cond_dim + time_embed_dim;
  }

  void validate() const {
    if (hidden_width < 1 || n_hidden_layers < 1 || horizon < 1 || state_dim < 1 ||
        action_dim < 1 || cond_dim < 1 || flow_dim < 1 || out_dim < 1)
      throw ValidationError("NetworkConfig: all dimensions must be >= 1");
    if (time_embed_dim < 4 || time_embed_dim % 2 != 0)
      throw ValidationError("NetworkConfig: time_embed_dim must be even and >= 4");
    if (squash_output && squash_low.size() != action_dim)
      throw ValidationError("NetworkConfig: squash bounds must match action_dim");
  }
};

struct Parameters {
  std::vector<std::pair<std::string, Tensor>> named;

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : named) n += t.numel();
    return n;
  }

  const Tensor& find(const std::string& name) const {
    for (const auto& [n, t] : named)
      if (n == name) return t;
    throw ValidationError("Parameters: no tensor named " + name);
  }

  std::vector<Tensor> values() const {
    std::vector<Tensor> out;
    out.reserve(named.size());
    for (const auto& [n, t] : named) out.push_back(t);
    return out;
  }

  bool all_finite() const {
    for (const auto& [n, t] : named)
      if (!t.all_finite()) return false;
    return true;
  }
};

// Geometrically spaced frequencies for the sinusoidal time features,
// 1..64 cycles over the unit flow interval.
inline Tensor time_frequencies(const NetworkConfig& cfg) {
  const std::size_t n = cfg.time_embed_dim / 2;
  std::vector<double> f(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double frac = n == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(n - 1);
    f[k] = std::pow(64.0, frac);
  }
  return Tensor::row(std::move(f));
}

// Raw [sin(2 pi f_k t), cos(2 pi f_k t)] features, before the affine layer.
inline Tensor time_features(const NetworkConfig& cfg, double t) {
  Tensor f = time_frequencies(cfg);
  const std::size_t n = f.numel();
  Tensor out = Tensor::zeros({2 * n});
  for (std::size_t k = 0; k < n; ++k) {
    out[k] = std::sin(kTwoPi * f[k] * t);
    out[n + k] = std::cos(kTwoPi * f[k] * t);
  }
  return out;
}

// Deterministic Xavier-uniform init; the output layer starts at zero so an
// untrained model predicts zero actions (i.e. the passive rollout).
inline Parameters init_params(const NetworkConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(mix_seed(seed, 0x9e77));
  Parameters p;

  auto xavier = [&rng](std::size_t fan_in, std::size_t fan_out) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor w = Tensor::zeros({fan_in, fan_out});
    for (double& v : w.data()) v = rng.uniform(-a, a);
    return w;
  };

  const std::size_t te = cfg.time_embed_dim;
  p.named.emplace_back("time.w", xavier(te, te));
  p.named.emplace_back("time.b", Tensor::zeros({std::size_t{1}, te}));

  std::size_t in = cfg.input_dim();
  for (std::size_t l = 0; l < cfg.n_hidden_layers; ++l) {
    const std::string base = "h" + std::to_string(l);
    p.named.emplace_back(base + ".w", xavier(in, cfg.hidden_width));
    p.named.emplace_back(base + ".b", Tensor::zeros({std::size_t{1}, cfg.hidden_width}));
    in = cfg.hidden_width;
  }
  p.named.emplace_back("out.w", Tensor::zeros({in, cfg.out_dim}));
  p.named.emplace_back("out.b", Tensor::zeros({std::size_t{1}, cfg.out_dim}));
  return p;
}

// Closed-form parameter count for a given config.
inline std::size_t param_count(const NetworkConfig& cfg) {
  const std::size_t te = cfg.time_embed_dim;
  std::size_t n = te * te + te;
  std::size_t in = cfg.input_dim();
  for (std::size_t l = 0; l < cfg.n_hidden_layers; ++l) {
    n += in * cfg.hidden_width + cfg.hidden_width;
    in = cfg.hidden_width;
  }
  n += in * cfg.out_dim + cfg.out_dim;
  return n;
}

// Forward pass, batched over rows. `params` must hold the tensors of
// Parameters::named in order. xt: [B, H*flow_dim], cond: [B, cond_dim],
// tcol: [B, 1].
template <class V>
V net_forward(const NetworkConfig& cfg, const std::vector<V>& params, const V& xt,
              const V& cond, const V& tcol) {
  if (params.size() != 2 * (cfg.n_hidden_layers + 2))
    throw ValidationError("net_forward: parameter tensor count mismatch");

  V f2pi = lift(mul(time_frequencies(cfg), Tensor::scalar(kTwoPi)), xt);
  V angles = tcol * f2pi;  // [B, n_freq] outer-product broadcast
  V feats = concat(sin(angles), cos(angles), 1);
  V emb = tanh(matmul(feats, params[0]) + params[1]);

  V h = concat(concat(xt, cond, 1), emb, 1);
  for (std::size_t l = 0; l < cfg.n_hidden_layers; ++l)
    h = tanh(matmul(h, params[2 + 2 * l]) + params[3 + 2 * l]);

  V z = matmul(h, params[2 + 2 * cfg.n_hidden_layers]) +
        params[3 + 2 * cfg.n_hidden_layers];

  if (cfg.squash_output) {
    // tanh scaled into the action box: outputs stay strictly inside U and
    // keep nonzero gradients everywhere, unlike a hard clamp.
    std::vector<double> lo, hi;
    for (std::size_t i = 0; i < cfg.horizon; ++i)
      for (std::size_t d = 0; d < cfg.action_dim; ++d) {
        lo.push_back(cfg.squash_low[d]);
        hi.push_back(cfg.squash_high[d]);
      }
    Tensor lo_row = Tensor::row(std::move(lo));
    Tensor hi_row = Tensor::row(std::move(hi));
    V half_span = lift(mul(sub(hi_row, lo_row), Tensor::scalar(0.5)), xt);
    V mid = lift(mul(add(hi_row, lo_row), Tensor::scalar(0.5)), xt);
    z = mid + half_span * tanh(z);
  }
  return z;
}

// Time embedding as a standalone vector (single t).
inline Tensor time_embedding(const NetworkConfig& cfg, const Parameters& p, double t) {
  if (t < 0.0 || t > 1.0) throw ValidationError("time_embedding: t outside [0,1]");
  Tensor feats = reshape(time_features(cfg, t), {std::size_t{1}, cfg.time_embed_dim});
  return reshape(tanh(add(matmul(feats, p.find("time.w")), p.find("time.b"))),
                 {cfg.time_embed_dim});
}

// Single-item action prediction: X_t {H, flow_dim}, c {cond_dim} -> {H, d_u}.
inline Tensor predict_actions(const NetworkConfig& cfg, const Parameters& p,
                              const Tensor& xt, const Tensor& cond, double t) {
  if (xt.rows() != cfg.horizon || xt.cols() != cfg.flow_dim)
    throw ValidationError("predict_actions: X_t shape mismatch, got " + shape_str(xt));
  if (cond.numel() != cfg.cond_dim)
    throw ValidationError("predict_actions: conditioning width mismatch");
  Tensor xt_flat = reshape(xt, {std::size_t{1}, cfg.horizon * cfg.flow_dim});
  Tensor cond_row = reshape(cond, {std::size_t{1}, cfg.cond_dim});
  Tensor tcol = Tensor({std::size_t{1}, std::size_t{1}}, {t});
  Tensor z = net_forward(cfg, p.values(), xt_flat, cond_row, tcol);
  return reshape(std::move(z), {cfg.horizon, cfg.out_dim / cfg.horizon});
}

}  // namespace dynaflow
