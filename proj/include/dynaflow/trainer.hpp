#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dynaflow/datagen.hpp"
#include "dynaflow/flow.hpp"
#include "dynaflow/io.hpp"

namespace dynaflow {

struct TrainConfig {
  double learning_rate = 2e-4;
  std::size_t batch_size = 128;  // 1024 reproduces the reference setting
  std::size_t n_steps = 3000;
  double ema_decay = 0.995;
  std::uint64_t seed = 0;
  double grad_clip_norm = 10.0;  // <= 0 disables clipping
  double velocity_weight = 1.0;  // loss weight for velocity state channels
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;

  void validate() const {
    if (learning_rate < 0.0) throw ValidationError("TrainConfig: learning_rate < 0");
    if (ema_decay < 0.0 || ema_decay >= 1.0)
      throw ValidationError("TrainConfig: ema_decay must be in [0, 1)");
    if (batch_size < 1) throw ValidationError("TrainConfig: batch_size < 1");
  }
};

struct TrainState {
  Parameters params;
  Parameters ema;
  Parameters adam_m;
  Parameters adam_v;
  std::size_t step = 0;
};

inline TrainState init_train_state(const NetworkConfig& cfg, std::uint64_t seed) {
  TrainState st;
  st.params = init_params(cfg, seed);
  st.ema = st.params;
  st.adam_m = st.params;
  st.adam_v = st.params;
  for (auto& [name, t] : st.adam_m.named) t = Tensor::zeros(t.shape());
  for (auto& [name, t] : st.adam_v.named) t = Tensor::zeros(t.shape());
  return st;
}

// Uniform window sampling per the training loop: (X1, c) from the dataset,
// X0 from the standard-normal base, t ~ U(0,1), each independent per item.
inline std::vector<FlowBatchItem> sample_batch(const ModelSpec& m, const Dataset& ds,
                                               std::size_t batch_size, Rng& rng) {
  if (ds.episodes.empty()) throw ValidationError("sample_batch: empty dataset");
  const std::size_t horizon = m.horizon();
  for (const Episode& ep : ds.episodes)
    if (ep.length() < horizon)
      throw ValidationError("sample_batch: episode shorter than the horizon");
  if (m.method == Method::kSaFlow && !ds.has_actions())
    throw ValidationError("sample_batch: dataset lacks actions");

  std::vector<FlowBatchItem> items;
  items.reserve(batch_size);
  for (std::size_t b = 0; b < batch_size; ++b) {
    const Episode& ep = ds.episodes[rng.uniform_index(ds.episodes.size())];
    const std::size_t anchor = rng.uniform_index(ep.length() - horizon + 1);
    FlowBatchItem it;
    it.x0 = ep.state_at(anchor);
    it.x1 = Tensor::zeros({horizon, m.system.state_dim});
    for (std::size_t i = 0; i < horizon; ++i) {
      Tensor s = ep.state_at(anchor + 1 + i);
      for (std::size_t d = 0; d < m.system.state_dim; ++d) it.x1.at(i, d) = s[d];
    }
    if (ds.has_actions() && ep.actions)
      it.actions = slice(*ep.actions, 0, anchor, horizon);
    it.x0_noise = rng.normal_tensor({horizon, m.flow_dim()});
    it.t = rng.uniform();
    it.cond = Conditioning{it.x0, ep.command, ds.tag()};
    items.push_back(std::move(it));
  }
  return items;
}

struct StepStats {
  double loss = 0.0;
  double grad_norm = 0.0;  // pre-clip global norm
};

// One Adam update on the conditional matching loss; EMA refreshed afterwards.
inline StepStats train_step(const ModelSpec& m, TrainState& st,
                            const std::vector<FlowBatchItem>& items,
                            const TrainConfig& cfg) {
  cfg.validate();
  BatchRows rows = to_rows(m, items);
  Tensor w_row = weight_row(m, cfg.velocity_weight);

  Recording rec = record(
      ScalarFn([&](Tape&, const std::vector<Var>& pvars) {
        return cm_loss_rows<Var>(m, pvars, rows, w_row, pvars[0]);
      }),
      st.params.values());

  const double loss = rec.outputs[0][0];
  if (!std::isfinite(loss)) {
    throw NumericError("train_step: non-finite loss at step " + std::to_string(st.step) +
                       " (batch of " + std::to_string(items.size()) +
                       "; check learning rate and data scaling)");
  }
  std::vector<Tensor> grads = rec.tape.backward(Tensor::scalar(1.0));

  double sq = 0.0;
  for (const Tensor& g : grads)
    for (double v : g.data()) sq += v * v;
  const double gnorm = std::sqrt(sq);
  double scale = 1.0;
  if (cfg.grad_clip_norm > 0.0 && gnorm > cfg.grad_clip_norm)
    scale = cfg.grad_clip_norm / gnorm;

  st.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  for (std::size_t p = 0; p < st.params.named.size(); ++p) {
    auto& theta = st.params.named[p].second.data();
    auto& mm = st.adam_m.named[p].second.data();
    auto& vv = st.adam_v.named[p].second.data();
    auto& ema = st.ema.named[p].second.data();
    const auto& g = grads[p].data();
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const double gk = g[k] * scale;
      mm[k] = cfg.beta1 * mm[k] + (1.0 - cfg.beta1) * gk;
      vv[k] = cfg.beta2 * vv[k] + (1.0 - cfg.beta2) * gk * gk;
      const double mhat = mm[k] / bc1;
      const double vhat = vv[k] / bc2;
      theta[k] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps);
      ema[k] = cfg.ema_decay * ema[k] + (1.0 - cfg.ema_decay) * theta[k];
    }
  }
  return {loss, gnorm};
}

struct TrainLogRow {
  std::size_t step;
  double loss;
  double grad_norm;
};

inline TrainState train(const ModelSpec& m, const Dataset& ds, const TrainConfig& cfg,
                        std::vector<TrainLogRow>* log = nullptr,
                        const std::function<void(std::size_t, double)>& progress = {}) {
  cfg.validate();
  TrainState st = init_train_state(m.net, cfg.seed);
  Rng rng(mix_seed(cfg.seed, 0x7261));
  for (std::size_t i = 0; i < cfg.n_steps; ++i) {
    auto items = sample_batch(m, ds, cfg.batch_size, rng);
    StepStats s = train_step(m, st, items, cfg);
    if (log) log->push_back({st.step, s.loss, s.grad_norm});
    if (progress) progress(st.step, s.loss);
  }
  return st;
}

// ---------------------------------------------------------------------------
// Checkpoint container ("DYNF" version 1): config JSON + every state tensor,
// bit-exact round trip.

inline constexpr char kCheckpointMagic[4] = {'D', 'Y', 'N', 'F'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelSpec model;
  TrainConfig train;
  TrainState state;
};

inline json network_config_json(const NetworkConfig& c) {
  return json{{"hidden_width", c.hidden_width},
              {"n_hidden_layers", c.n_hidden_layers},
              {"time_embed_dim", c.time_embed_dim},
              {"horizon", c.horizon},
              {"state_dim", c.state_dim},
              {"action_dim", c.action_dim},
              {"cond_dim", c.cond_dim},
              {"flow_dim", c.flow_dim},
              {"out_dim", c.out_dim},
              {"squash_output", c.squash_output}};
}

inline NetworkConfig network_config_from_json(const json& j) {
  NetworkConfig c;
  c.hidden_width = j.at("hidden_width").get<std::size_t>();
  c.n_hidden_layers = j.at("n_hidden_layers").get<std::size_t>();
  c.time_embed_dim = j.at("time_embed_dim").get<std::size_t>();
  c.horizon = j.at("horizon").get<std::size_t>();
  c.state_dim = j.at("state_dim").get<std::size_t>();
  c.action_dim = j.at("action_dim").get<std::size_t>();
  c.cond_dim = j.at("cond_dim").get<std::size_t>();
  c.flow_dim = j.at("flow_dim").get<std::size_t>();
  c.out_dim = j.at("out_dim").get<std::size_t>();
  c.squash_output = j.at("squash_output").get<bool>();
  return c;
}

inline json train_config_json(const TrainConfig& c) {
  return json{{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
              {"n_steps", c.n_steps},             {"ema_decay", c.ema_decay},
              {"seed", c.seed},                   {"grad_clip_norm", c.grad_clip_norm},
              {"velocity_weight", c.velocity_weight}};
}

inline TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.learning_rate = j.at("learning_rate").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.n_steps = j.at("n_steps").get<std::size_t>();
  c.ema_decay = j.at("ema_decay").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.grad_clip_norm = j.at("grad_clip_norm").get<double>();
  c.velocity_weight = j.at("velocity_weight").get<double>();
  return c;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  json header;
  header["format_version"] = kCheckpointVersion;
  header["method"] = method_name(ck.model.method);
  header["system"] = ck.model.system.name;
  header["dt"] = ck.model.system.dt;
  header["net"] = network_config_json(ck.model.net);
  header["train"] = train_config_json(ck.train);
  header["step"] = ck.state.step;
  header["t_max_clip"] = ck.model.schedule.t_max_clip;
  header["norm"] = {{"state_mean", ck.model.norm.state_mean},
                    {"state_std", ck.model.norm.state_std},
                    {"action_mean", ck.model.norm.action_mean},
                    {"action_std", ck.model.norm.action_std}};

  std::vector<NamedTensor> tensors;
  auto dump = [&tensors](const char* prefix, const Parameters& p) {
    for (const auto& [name, t] : p.named)
      tensors.push_back({std::string(prefix) + "." + name, t});
  };
  dump("p", ck.state.params);
  dump("ema", ck.state.ema);
  dump("m", ck.state.adam_m);
  dump("v", ck.state.adam_v);
  write_container(path, kCheckpointMagic, kCheckpointVersion, header, tensors);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  Container c = read_container(path, kCheckpointMagic, kCheckpointVersion);
  Checkpoint ck;
  const std::string sys_name = c.header.at("system").get<std::string>();
  SystemSpec system = make_system(sys_name);
  const double dt = c.header.at("dt").get<double>();
  if (std::abs(dt - system.dt) > 1e-12)
    throw ValidationError("checkpoint dt " + std::to_string(dt) +
                          " does not match system " + sys_name);

  NetworkConfig net = network_config_from_json(c.header.at("net"));
  Normalization norm;
  const auto& jn = c.header.at("norm");
  norm.state_mean = jn.at("state_mean").get<std::vector<double>>();
  norm.state_std = jn.at("state_std").get<std::vector<double>>();
  norm.action_mean = jn.at("action_mean").get<std::vector<double>>();
  norm.action_std = jn.at("action_std").get<std::vector<double>>();

  Method method = parse_method(c.header.at("method").get<std::string>());
  ck.model = make_model_spec(method, system, net, norm);
  if (ck.model.net.out_dim != net.out_dim || ck.model.net.flow_dim != net.flow_dim)
    throw ValidationError("checkpoint net config inconsistent with method/system");
  ck.model.schedule.t_max_clip = c.header.at("t_max_clip").get<double>();
  ck.train = train_config_from_json(c.header.at("train"));
  ck.state.step = c.header.at("step").get<std::size_t>();

  auto load = [&c, &ck](const char* prefix) {
    Parameters p = init_params(ck.model.net, 0);
    for (auto& [name, t] : p.named) {
      const Tensor& stored = c.find(std::string(prefix) + "." + name);
      if (stored.shape() != t.shape())
        throw ValidationError("checkpoint tensor shape mismatch for " + name);
      t = stored;
    }
    return p;
  };
  ck.state.params = load("p");
  ck.state.ema = load("ema");
  ck.state.adam_m = load("m");
  ck.state.adam_v = load("v");
  if (!ck.state.params.all_finite() || !ck.state.ema.all_finite())
    throw NumericError("checkpoint contains non-finite parameters");
  return ck;
}

// Config-mismatch guard used before evaluating a checkpoint against a dataset.
inline void check_checkpoint_compatible(const Checkpoint& ck, const Dataset& ds) {
  if (ck.model.system.name != ds.system_name)
    throw ValidationError("checkpoint system " + ck.model.system.name +
                          " does not match dataset system " + ds.system_name);
  if (ck.model.norm.state_mean.size() != ds.norm.state_mean.size())
    throw ValidationError("checkpoint d_x does not match dataset d_x");
  if (ck.model.net.cond_dim != cond_width(ck.model.system.state_dim, ds.command_dim))
    throw ValidationError("checkpoint conditioning width does not match dataset");
  if (ck.model.method == Method::kSaFlow && !ds.has_actions())
    throw ValidationError("dataset lacks actions");
}

}  // namespace dynaflow
