#pragma once

// Shared oracles for the unit tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "nbvlearn/dataset.hpp"
#include "nbvlearn/models.hpp"
#include "nbvlearn/nn.hpp"
#include "nbvlearn/rng.hpp"

namespace nbvtest {

using namespace nbvlearn;

/// ||a - n|| / max(||a||, ||n||); zero when both are negligible.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& n) {
  double d = 0, na = 0, nn_ = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - n[i]) * (a[i] - n[i]);
    na += a[i] * a[i];
    nn_ += n[i] * n[i];
  }
  const double scale = std::sqrt(std::max(na, nn_));
  if (scale < 1e-12) return 0.0;
  return std::sqrt(d) / scale;
}

template <class T>
nn::Tensor<T> random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  nn::Tensor<T> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

/// Central differences of a scalar function of a parameter array.
template <class T>
std::vector<double> numeric_gradient(T* values, std::size_t n, const std::function<double()>& f, double h) {
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T keep = values[i];
    values[i] = static_cast<T>(static_cast<double>(keep) + h);
    const double up = f();
    values[i] = static_cast<T>(static_cast<double>(keep) - h);
    const double down = f();
    values[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// Largest relative error over every parameter block and the input gradient
/// of loss = sum(output * R). Dropout (train mode) reuses one fixed mask.
template <class T>
double check_network_gradients(nn::Network<T>& net, nn::Tensor<T> x, bool train, double h, std::uint64_t seed = 5) {
  auto run = [&](nn::ForwardCache<T>* cache) {
    Rng r(seed);
    return net.forward(x, train, &r, cache);
  };
  Rng rr(seed + 1);
  const auto out0 = run(nullptr);
  const auto weights = random_tensor<T>(out0.shape, rr);
  auto loss = [&]() {
    const auto out = run(nullptr);
    double s = 0;
    for (std::size_t i = 0; i < out.size(); ++i) s += static_cast<double>(out.data[i]) * weights.data[i];
    return s;
  };
  nn::ForwardCache<T> cache;
  run(&cache);
  nn::Gradients<T> grads;
  const auto dx = net.backward(cache, weights, grads);

  double worst = 0.0;
  for (std::size_t l = 0; l < net.params().size(); ++l)
    for (std::size_t b = 0; b < net.params()[l].size(); ++b) {
      auto& p = net.params()[l][b];
      const auto num = numeric_gradient<T>(p.data(), static_cast<std::size_t>(p.size()), loss, h);
      const auto& g = grads.layers[l][b];
      std::vector<double> ana(g.data(), g.data() + g.size());
      worst = std::max(worst, relative_error(ana, num));
    }
  const auto num_x = numeric_gradient<T>(x.data.data(), x.size(), loss, h);
  worst = std::max(worst, relative_error(std::vector<double>(dx.data.begin(), dx.data.end()), num_x));
  return worst;
}

/// Gradient check of the full CVAE loss with fixed latent noise, dropout off.
/// Analytic gradients come from the T pipeline; the finite-difference
/// reference is always taken in 64-bit on identical weights and inputs.
template <class T>
double check_cvae_gradients(const CvaeConfig& cfg, std::uint64_t seed, double h, int batch = 4) {
  Rng rng(seed);
  CvaeModel init(cfg);
  init.init(rng);
  auto enc = init.encoder.template cast<double>();
  auto dec = init.decoder.template cast<double>();
  // Bias terms start at zero; perturb them so every path is exercised.
  for (auto* net : {&enc, &dec})
    for (auto& layer : net->params())
      for (auto& m : layer)
        if (m.rows() == 1)
          for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = static_cast<float>(rng.uniform(-0.1, 0.1));

  nn::Matrix<double> cond(batch, kConditioningSize);
  std::vector<PoseTarget> targets;
  for (int i = 0; i < batch; ++i) {
    for (int c = 0; c < kPooledSide * kPooledSide; ++c) {
      const int hot = static_cast<int>(rng.uniform_index(3));
      for (int k = 0; k < 3; ++k) cond(i, c * 3 + k) = k == hot ? 1 : 0;
    }
    const double yaw = rng.uniform(-3.0, 3.0);
    cond(i, kConditioningSize - 2) = static_cast<float>(std::sin(yaw));
    cond(i, kConditioningSize - 1) = static_cast<float>(std::cos(yaw));
    PoseTarget t{rng.uniform(0.0, cfg.extent), rng.uniform(0.0, cfg.extent), rng.uniform(-3.0, 3.0), std::nullopt};
    if (cfg.joint_gain) t.gain = rng.uniform(0.0, 200.0);
    targets.push_back(t);
  }
  nn::Matrix<double> eps(batch, cfg.latent);
  for (Eigen::Index k = 0; k < eps.size(); ++k) eps.data()[k] = static_cast<double>(static_cast<float>(rng.normal()));

  Rng dummy(0);
  auto enc_t = enc.template cast<T>();
  auto dec_t = dec.template cast<T>();
  const nn::Matrix<T> cond_t = cond.cast<T>(), eps_t = eps.cast<T>();
  nn::Gradients<T> ge = enc_t.zero_gradients(), gd = dec_t.zero_gradients();
  cvae_loss<T>(enc_t, dec_t, cfg, cond_t, targets, dummy, false, &eps_t, &ge, &gd);

  auto loss = [&]() { return cvae_loss<double>(enc, dec, cfg, cond, targets, dummy, false, &eps).total; };
  double worst = 0.0;
  for (auto [net, grads] : {std::pair{&enc, &ge}, std::pair{&dec, &gd}})
    for (std::size_t l = 0; l < net->params().size(); ++l)
      for (std::size_t b = 0; b < net->params()[l].size(); ++b) {
        auto& p = net->params()[l][b];
        const auto num = numeric_gradient<double>(p.data(), static_cast<std::size_t>(p.size()), loss, h);
        const auto& g = grads->layers[l][b];
        worst = std::max(worst, relative_error(std::vector<double>(g.data(), g.data() + g.size()), num));
      }
  return worst;
}

/// Monte-Carlo KL(q || N(0, I)) with its standard error.
struct McEstimate {
  double mean;
  double standard_error;
};

inline McEstimate monte_carlo_kl(const std::vector<double>& mu, const std::vector<double>& logvar, int samples,
                                 Rng& rng) {
  double sum = 0, sum2 = 0;
  for (int s = 0; s < samples; ++s) {
    double log_ratio = 0;
    for (std::size_t d = 0; d < mu.size(); ++d) {
      const double e = rng.normal();
      const double z = mu[d] + std::exp(0.5 * logvar[d]) * e;
      // log q(z) - log p(z), normalizers cancel except the variance term
      log_ratio += -0.5 * logvar[d] - 0.5 * e * e + 0.5 * z * z;
    }
    sum += log_ratio;
    sum2 += log_ratio * log_ratio;
  }
  const double m = sum / samples;
  const double var = std::max(0.0, sum2 / samples - m * m);
  return {m, std::sqrt(var / samples)};
}

inline LocalMap blank_local(VoxelState fill, double yaw = 0.0) {
  LocalMap m;
  m.cells = OccupancyGrid(kLocalMapSize, kLocalMapSize, 0.2, {}, fill);
  m.robot_yaw = yaw;
  return m;
}

/// One record whose 20 targets split between two far-apart poses.
inline std::vector<DatasetRecord> bimodal_records(int copies, std::uint32_t world) {
  DatasetRecord r;
  r.world_id = world;
  r.local = blank_local(VoxelState::free, 0.3);
  for (int y = 20; y < 30; ++y) r.local.cells.set(25, y, VoxelState::occupied);
  for (int i = 0; i < 20; ++i) {
    const bool left = i % 2 == 0;
    r.targets.push_back({left ? 2.0 : 8.0, 5.0, left ? 3.0 : 0.0, std::nullopt});
    r.negative.push_back(0);
  }
  return std::vector<DatasetRecord>(static_cast<std::size_t>(copies), r);
}

}  // namespace nbvtest
