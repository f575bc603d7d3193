#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mlsl/preprocess.hpp"
#include "mlsl/rng.hpp"

namespace mlsl {

struct MlpLayer {
  int n_in = 0;
  int n_out = 0;
  std::vector<double> w;  // row-major, n_out x n_in
  std::vector<double> b;  // n_out
};

/// Error-correcting multilayer perceptron: four ReLU hidden layers, a linear
/// error neuron, and a non-trainable output stage that adds the last input
/// coordinate (the h-normalized numerical level-set value) to the predicted
/// error.  The trunk consumes the first n_inputs-1 coordinates; the skip
/// coordinate bypasses it entirely.
struct MlpModel {
  int n_inputs = 0;  // preprocessed components + 1 skip coordinate
  std::vector<MlpLayer> layers;

  int trunk_inputs() const { return n_inputs - 1; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.w.size() + l.b.size();
    return n;
  }
};

/// He-style uniform fan-in initialization with a seeded generator.
inline MlpModel make_mlp(int n_components, int n_hidden, std::uint64_t seed) {
  if (n_components < 1 || n_hidden < 1)
    throw std::invalid_argument("make_mlp: invalid architecture");
  MlpModel m;
  m.n_inputs = n_components + 1;
  Rng rng(derive_seed(seed, 0xA11CE));
  std::vector<int> widths = {n_components, n_hidden, n_hidden, n_hidden, n_hidden, 1};
  for (std::size_t k = 0; k + 1 < widths.size(); ++k) {
    MlpLayer layer;
    layer.n_in = widths[k];
    layer.n_out = widths[k + 1];
    const double bound = std::sqrt(6.0 / layer.n_in);
    layer.w.resize(static_cast<std::size_t>(layer.n_in) * static_cast<std::size_t>(layer.n_out));
    for (double& v : layer.w) v = rng.uniform(-bound, bound);
    layer.b.assign(static_cast<std::size_t>(layer.n_out), 0.0);
    m.layers.push_back(std::move(layer));
  }
  return m;
}

/// Forward pass for one input row.  Batch evaluation loops this routine, so
/// batched and per-row results are identical by construction.
inline double forward(const MlpModel& m, std::span<const double> input) {
  if (static_cast<int>(input.size()) != m.n_inputs)
    throw std::invalid_argument("forward: input width does not match the model");
  std::vector<double> cur(input.begin(), input.end() - 1);
  std::vector<double> next;
  for (std::size_t k = 0; k < m.layers.size(); ++k) {
    const MlpLayer& l = m.layers[k];
    if (static_cast<int>(cur.size()) != l.n_in)
      throw std::invalid_argument("forward: layer width mismatch");
    next.assign(static_cast<std::size_t>(l.n_out), 0.0);
    for (int o = 0; o < l.n_out; ++o) {
      double acc = l.b[static_cast<std::size_t>(o)];
      const double* wr = &l.w[static_cast<std::size_t>(o) * static_cast<std::size_t>(l.n_in)];
      for (int i = 0; i < l.n_in; ++i) acc += wr[i] * cur[static_cast<std::size_t>(i)];
      const bool hidden = k + 1 < m.layers.size();
      next[static_cast<std::size_t>(o)] = hidden ? std::max(acc, 0.0) : acc;
    }
    cur.swap(next);
  }
  return cur[0] + input[input.size() - 1];  // error estimate + skip value
}

inline std::vector<double> forward_batch(const MlpModel& m,
                                         const std::vector<std::vector<double>>& inputs) {
  std::vector<double> out;
  out.reserve(inputs.size());
  for (const auto& row : inputs) out.push_back(forward(m, row));
  return out;
}

struct TrainConfig {
  int batch_size = 64;
  double lr_init = 1.5e-4;
  double lr_floor = 1.5e-5;
  int lr_halving_patience = 15;
  int early_stop_patience = 50;
  int max_epochs = 1000;
  double l2_factor = 1e-6;
  std::uint64_t seed = 0;
  int n_hidden = 130;

  void validate() const {
    if (batch_size < 1 || lr_init <= 0 || lr_floor <= 0 || lr_floor > lr_init ||
        lr_halving_patience < 1 || early_stop_patience < 1 || max_epochs < 1 ||
        l2_factor < 0 || n_hidden < 1)
      throw std::invalid_argument("TrainConfig: invalid field");
  }
};

struct EvalReport {
  double mae = 0.0;
  double linf = 0.0;
  double rmse = 0.0;
  std::size_t count = 0;
};

struct TrainSample {
  std::vector<double> input;  // n_components + 1 values, skip last
  double target = 0.0;
};

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double train_rmse = 0.0;
  double val_mae = 0.0;
};

inline EvalReport evaluate(const MlpModel& m, const std::vector<TrainSample>& split) {
  if (split.empty()) throw std::invalid_argument("evaluate: empty split");
  EvalReport r;
  double se = 0.0;
  for (const auto& s : split) {
    const double e = std::fabs(forward(m, s.input) - s.target);
    r.mae += e;
    r.linf = std::max(r.linf, e);
    se += e * e;
  }
  r.count = split.size();
  r.mae /= static_cast<double>(split.size());
  r.rmse = std::sqrt(se / static_cast<double>(split.size()));
  return r;
}

namespace detail {

struct AdamState {
  std::vector<std::vector<double>> mw, vw, mb, vb;
  long t = 0;

  explicit AdamState(const MlpModel& m) {
    for (const auto& l : m.layers) {
      mw.emplace_back(l.w.size(), 0.0);
      vw.emplace_back(l.w.size(), 0.0);
      mb.emplace_back(l.b.size(), 0.0);
      vb.emplace_back(l.b.size(), 0.0);
    }
  }
};

struct BatchGrad {
  std::vector<std::vector<double>> gw, gb;

  explicit BatchGrad(const MlpModel& m) {
    for (const auto& l : m.layers) {
      gw.emplace_back(l.w.size(), 0.0);
      gb.emplace_back(l.b.size(), 0.0);
    }
  }
  void zero() {
    for (auto& g : gw) std::fill(g.begin(), g.end(), 0.0);
    for (auto& g : gb) std::fill(g.begin(), g.end(), 0.0);
  }
};

// Forward pass keeping pre-activation outputs, then backpropagation of
// dL/dpred into the accumulated gradients.
struct Workspace {
  std::vector<std::vector<double>> act;  // act[k] = output of layer k-1 (act[0] = trunk input)
  std::vector<std::vector<double>> delta;
};

inline double forward_train(const MlpModel& m, const TrainSample& s, Workspace& ws) {
  const std::size_t L = m.layers.size();
  ws.act.resize(L + 1);
  ws.act[0].assign(s.input.begin(), s.input.end() - 1);
  for (std::size_t k = 0; k < L; ++k) {
    const MlpLayer& l = m.layers[k];
    ws.act[k + 1].assign(static_cast<std::size_t>(l.n_out), 0.0);
    for (int o = 0; o < l.n_out; ++o) {
      double acc = l.b[static_cast<std::size_t>(o)];
      const double* wr = &l.w[static_cast<std::size_t>(o) * static_cast<std::size_t>(l.n_in)];
      for (int i = 0; i < l.n_in; ++i) acc += wr[i] * ws.act[k][static_cast<std::size_t>(i)];
      ws.act[k + 1][static_cast<std::size_t>(o)] = (k + 1 < L) ? std::max(acc, 0.0) : acc;
    }
  }
  return ws.act[L][0] + s.input.back();
}

inline void backward_train(const MlpModel& m, const TrainSample& s, double dpred,
                           Workspace& ws, BatchGrad& grad) {
  const std::size_t L = m.layers.size();
  ws.delta.resize(L);
  ws.delta[L - 1].assign(1, dpred);
  for (std::size_t k = L; k-- > 0;) {
    const MlpLayer& l = m.layers[k];
    auto& d = ws.delta[k];
    // ReLU mask for hidden layers (output of layer k is act[k+1]).
    if (k + 1 < L)
      for (int o = 0; o < l.n_out; ++o)
        if (ws.act[k + 1][static_cast<std::size_t>(o)] <= 0.0) d[static_cast<std::size_t>(o)] = 0.0;
    for (int o = 0; o < l.n_out; ++o) {
      const double dv = d[static_cast<std::size_t>(o)];
      if (dv == 0.0) continue;
      grad.gb[k][static_cast<std::size_t>(o)] += dv;
      double* gw = &grad.gw[k][static_cast<std::size_t>(o) * static_cast<std::size_t>(l.n_in)];
      for (int i = 0; i < l.n_in; ++i) gw[i] += dv * ws.act[k][static_cast<std::size_t>(i)];
    }
    if (k > 0) {
      ws.delta[k - 1].assign(static_cast<std::size_t>(l.n_in), 0.0);
      for (int o = 0; o < l.n_out; ++o) {
        const double dv = d[static_cast<std::size_t>(o)];
        if (dv == 0.0) continue;
        const double* wr = &l.w[static_cast<std::size_t>(o) * static_cast<std::size_t>(l.n_in)];
        for (int i = 0; i < l.n_in; ++i) ws.delta[k - 1][static_cast<std::size_t>(i)] += dv * wr[i];
      }
    }
  }
}

}  // namespace detail

/// Loss of one batch: RMSE of the residuals plus the L2 penalty on the weight
/// matrices.  Exposed for the finite-difference gradient check.
inline double batch_loss(const MlpModel& m, const std::vector<TrainSample>& batch,
                         double l2_factor) {
  double se = 0.0;
  for (const auto& s : batch) {
    const double e = forward(m, s.input) - s.target;
    se += e * e;
  }
  double loss = std::sqrt(se / static_cast<double>(batch.size()));
  for (const auto& l : m.layers)
    for (double w : l.w) loss += l2_factor * w * w;
  return loss;
}

/// Analytic gradients of batch_loss, accumulated per layer.  Returns the sum
/// of squared residuals of the batch.  Exposed for the finite-difference
/// gradient check.
inline double batch_gradients(const MlpModel& m, const std::vector<TrainSample>& batch,
                              double l2_factor, detail::BatchGrad& grad) {
  grad.zero();
  std::vector<double> residuals(batch.size());
  double se = 0.0;
  std::vector<detail::Workspace> spaces(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    residuals[i] = detail::forward_train(m, batch[i], spaces[i]) - batch[i].target;
    se += residuals[i] * residuals[i];
  }
  const double rmse = std::sqrt(se / static_cast<double>(batch.size()));
  if (rmse > 1e-300) {
    const double scale = 1.0 / (rmse * static_cast<double>(batch.size()));
    for (std::size_t i = 0; i < batch.size(); ++i)
      detail::backward_train(m, batch[i], residuals[i] * scale, spaces[i], grad);
  }
  for (std::size_t k = 0; k < m.layers.size(); ++k)
    for (std::size_t j = 0; j < m.layers[k].w.size(); ++j)
      grad.gw[k][j] += 2.0 * l2_factor * m.layers[k].w[j];
  return se;
}

struct TrainResult {
  MlpModel model;
  std::vector<EpochLog> log;
  double best_val_mae = 0.0;
  int best_epoch = 0;
};

/// Adaptive-moment training with per-batch RMSE loss, plateau-halved learning
/// rate, early stopping, and a best-validation checkpoint.  Deterministic for
/// a fixed seed.
inline TrainResult train(const std::vector<TrainSample>& train_split,
                         const std::vector<TrainSample>& val_split, const TrainConfig& cfg) {
  cfg.validate();
  if (train_split.empty() || val_split.empty())
    throw std::invalid_argument("train: empty split");
  const int n_components = static_cast<int>(train_split.front().input.size()) - 1;

  MlpModel model = make_mlp(n_components, cfg.n_hidden, cfg.seed);
  detail::AdamState adam(model);
  detail::BatchGrad grad(model);
  Rng rng(derive_seed(cfg.seed, 0x5EED));

  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double lr = cfg.lr_init;

  TrainResult result;
  result.model = model;
  result.best_val_mae = std::numeric_limits<double>::infinity();

  std::vector<std::size_t> order(train_split.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  int epochs_no_improve = 0;
  int lr_wait = 0;
  std::vector<TrainSample> batch;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_se = 0.0;
    std::size_t epoch_n = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(train_split[order[i]]);

      const double se = batch_gradients(model, batch, cfg.l2_factor, grad);
      if (!std::isfinite(se)) throw std::runtime_error("train: non-finite loss, aborting");
      epoch_se += se;
      epoch_n += batch.size();

      ++adam.t;
      const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(adam.t));
      const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(adam.t));
      for (std::size_t k = 0; k < model.layers.size(); ++k) {
        auto& l = model.layers[k];
        for (std::size_t j = 0; j < l.w.size(); ++j) {
          auto& mw = adam.mw[k][j];
          auto& vw = adam.vw[k][j];
          const double gv = grad.gw[k][j];
          mw = beta1 * mw + (1 - beta1) * gv;
          vw = beta2 * vw + (1 - beta2) * gv * gv;
          l.w[j] -= lr * (mw / bc1) / (std::sqrt(vw / bc2) + eps);
        }
        for (std::size_t j = 0; j < l.b.size(); ++j) {
          auto& mb = adam.mb[k][j];
          auto& vb = adam.vb[k][j];
          const double gv = grad.gb[k][j];
          mb = beta1 * mb + (1 - beta1) * gv;
          vb = beta2 * vb + (1 - beta2) * gv * gv;
          l.b[j] -= lr * (mb / bc1) / (std::sqrt(vb / bc2) + eps);
        }
      }
    }

    const EvalReport val = evaluate(model, val_split);
    result.log.push_back({epoch, lr, std::sqrt(epoch_se / static_cast<double>(epoch_n)), val.mae});

    if (val.mae < result.best_val_mae) {
      result.best_val_mae = val.mae;
      result.best_epoch = epoch;
      result.model = model;
      epochs_no_improve = 0;
      lr_wait = 0;
    } else {
      ++epochs_no_improve;
      ++lr_wait;
      if (lr_wait >= cfg.lr_halving_patience) {
        lr = std::max(lr / 2.0, cfg.lr_floor);
        lr_wait = 0;
      }
      if (epochs_no_improve >= cfg.early_stop_patience) break;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Model bundle serialization (network + training stats + PCA, one document).

inline constexpr int model_format_version = 1;

struct ModelBundle {
  MlpModel model;
  TrainingStats stats;
  PcaModel pca;
  double h = 0.0;    // mesh size the model was trained at
  int l_max = 0;     // maximum refinement level of the training grids
};

namespace detail {

inline nlohmann::json layer_to_json(const MlpLayer& l) {
  return {{"n_in", l.n_in}, {"n_out", l.n_out}, {"w", l.w}, {"b", l.b}};
}

inline MlpLayer layer_from_json(const nlohmann::json& j, std::size_t index) {
  MlpLayer l;
  l.n_in = j.at("n_in").get<int>();
  l.n_out = j.at("n_out").get<int>();
  l.w = j.at("w").get<std::vector<double>>();
  l.b = j.at("b").get<std::vector<double>>();
  if (l.w.size() != static_cast<std::size_t>(l.n_in) * static_cast<std::size_t>(l.n_out) ||
      l.b.size() != static_cast<std::size_t>(l.n_out))
    throw std::runtime_error("model file: dimension mismatch in layer " + std::to_string(index));
  return l;
}

}  // namespace detail

inline void save_model(const std::string& path, const ModelBundle& bundle) {
  nlohmann::json j;
  j["format_version"] = model_format_version;
  j["grid"] = {{"h", bundle.h}, {"l_max", bundle.l_max}};
  j["network"]["n_inputs"] = bundle.model.n_inputs;
  auto& layers = j["network"]["layers"];
  layers = nlohmann::json::array();
  for (const auto& l : bundle.model.layers) layers.push_back(detail::layer_to_json(l));
  j["stats"] = {{"mu_phi", bundle.stats.mu_phi},       {"sigma_phi", bundle.stats.sigma_phi},
                {"mu_u", bundle.stats.mu_u},           {"sigma_u", bundle.stats.sigma_u},
                {"mu_d", bundle.stats.mu_d},           {"sigma_d", bundle.stats.sigma_d},
                {"mu_coords", bundle.stats.mu_coords}, {"sigma_coords", bundle.stats.sigma_coords},
                {"mu_xxyy", bundle.stats.mu_xxyy},     {"sigma_xxyy", bundle.stats.sigma_xxyy},
                {"mu_kappa", bundle.stats.mu_kappa},   {"sigma_kappa", bundle.stats.sigma_kappa},
                {"n_components", bundle.stats.n_components}};
  j["pca"]["mean"] = bundle.pca.mean;
  j["pca"]["eigenvalues"] = bundle.pca.eigenvalues;
  auto& comps = j["pca"]["components"];
  comps = nlohmann::json::array();
  for (const auto& row : bundle.pca.components) comps.push_back(row);

  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_model: cannot open " + path);
  out << j.dump(2) << '\n';
}

inline ModelBundle load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_model: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("load_model: malformed document: ") + e.what());
  }
  if (!j.contains("format_version") || j["format_version"].get<int>() != model_format_version)
    throw std::runtime_error("load_model: unsupported format version");

  ModelBundle b;
  b.h = j.at("grid").at("h").get<double>();
  b.l_max = j.at("grid").at("l_max").get<int>();
  b.model.n_inputs = j.at("network").at("n_inputs").get<int>();
  const auto& layers = j.at("network").at("layers");
  for (std::size_t k = 0; k < layers.size(); ++k)
    b.model.layers.push_back(detail::layer_from_json(layers[k], k));
  if (!b.model.layers.empty() && b.model.layers.front().n_in != b.model.n_inputs - 1)
    throw std::runtime_error("model file: dimension mismatch in layer 0");
  for (std::size_t k = 1; k < b.model.layers.size(); ++k)
    if (b.model.layers[k].n_in != b.model.layers[k - 1].n_out)
      throw std::runtime_error("model file: dimension mismatch in layer " + std::to_string(k));

  const auto& s = j.at("stats");
  b.stats.mu_phi = s.at("mu_phi").get<double>();
  b.stats.sigma_phi = s.at("sigma_phi").get<double>();
  b.stats.mu_u = s.at("mu_u").get<double>();
  b.stats.sigma_u = s.at("sigma_u").get<double>();
  b.stats.mu_d = s.at("mu_d").get<double>();
  b.stats.sigma_d = s.at("sigma_d").get<double>();
  b.stats.mu_coords = s.at("mu_coords").get<double>();
  b.stats.sigma_coords = s.at("sigma_coords").get<double>();
  b.stats.mu_xxyy = s.at("mu_xxyy").get<double>();
  b.stats.sigma_xxyy = s.at("sigma_xxyy").get<double>();
  b.stats.mu_kappa = s.at("mu_kappa").get<double>();
  b.stats.sigma_kappa = s.at("sigma_kappa").get<double>();
  b.stats.n_components = s.at("n_components").get<int>();

  b.pca.mean = j.at("pca").at("mean").get<std::array<double, DataPacket::n_features>>();
  b.pca.eigenvalues = j.at("pca").at("eigenvalues").get<std::vector<double>>();
  for (const auto& row : j.at("pca").at("components"))
    b.pca.components.push_back(row.get<std::array<double, DataPacket::n_features>>());
  if (b.pca.components.size() != b.pca.eigenvalues.size() ||
      static_cast<int>(b.pca.components.size()) != b.stats.n_components)
    throw std::runtime_error("model file: PCA dimension mismatch");
  if (b.model.n_inputs != b.stats.n_components + 1)
    throw std::runtime_error("model file: network/PCA width mismatch");
  return b;
}

}  // namespace mlsl
