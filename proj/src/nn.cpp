#include "nbvlearn/nn.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>

#include "binary_io.hpp"
#include "nbvlearn/errors.hpp"

namespace nbvlearn::nn {

template <class T>
Tensor<T>::Tensor(std::vector<int> s, T fill) : shape(std::move(s)) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("tensor dimensions must be positive");
    n *= static_cast<std::size_t>(d);
  }
  data.assign(n, fill);
}

template <class T>
Tensor<T>::Tensor(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
  std::size_t n = 1;
  for (int x : shape) n *= static_cast<std::size_t>(x);
  if (n != data.size()) throw ShapeError("tensor data length does not match its shape");
}

template <class T>
std::size_t Tensor<T>::sample_size() const {
  std::size_t n = 1;
  for (std::size_t i = 1; i < shape.size(); ++i) n *= static_cast<std::size_t>(shape[i]);
  return n;
}

template <class T>
Tensor<T> Tensor<T>::from_matrix(const Matrix<T>& m) {
  Tensor<T> t({static_cast<int>(m.rows()), static_cast<int>(m.cols())});
  t.matrix() = m;
  return t;
}

LayerSpec LayerSpec::dense(int in, int out) {
  LayerSpec s;
  s.kind = LayerKind::dense;
  s.in = in;
  s.out = out;
  return s;
}

LayerSpec LayerSpec::conv2d(int in_ch, int out_ch, int kernel, int stride) {
  LayerSpec s;
  s.kind = LayerKind::conv2d;
  s.in = in_ch;
  s.out = out_ch;
  s.kernel = kernel;
  s.stride = stride;
  return s;
}

LayerSpec LayerSpec::maxpool2d(int window) {
  LayerSpec s;
  s.kind = LayerKind::maxpool2d;
  s.window = window;
  return s;
}

LayerSpec LayerSpec::dropout(float rate) {
  LayerSpec s;
  s.kind = LayerKind::dropout;
  s.rate = rate;
  return s;
}

LayerSpec LayerSpec::activation(Activation a) {
  LayerSpec s;
  s.kind = LayerKind::activation;
  s.act = a;
  return s;
}

void LayerSpec::validate() const {
  switch (kind) {
    case LayerKind::dense:
      if (in <= 0 || out <= 0) throw ShapeError("dense dims must be positive");
      break;
    case LayerKind::conv2d:
      if (in <= 0 || out <= 0 || kernel <= 0 || stride <= 0) throw ShapeError("conv2d dims must be positive");
      break;
    case LayerKind::maxpool2d:
      if (window <= 0) throw ShapeError("pool window must be positive");
      break;
    case LayerKind::dropout:
      if (!(rate >= 0.0f && rate < 1.0f)) throw ShapeError("dropout rate must be in [0, 1)");
      break;
    case LayerKind::activation:
      if (static_cast<int>(act) > 3) throw ShapeError("unknown activation");
      break;
    default:
      throw ShapeError("unknown layer kind");
  }
}

std::vector<LayerSpec> mlp_specs(int in, int hidden, int layers, int out, float dropout, Activation output) {
  std::vector<LayerSpec> s;
  int width = in;
  for (int i = 0; i < layers; ++i) {
    s.push_back(LayerSpec::dense(width, hidden));
    s.push_back(LayerSpec::activation(Activation::relu));
    if (dropout > 0.0f) s.push_back(LayerSpec::dropout(dropout));
    width = hidden;
  }
  s.push_back(LayerSpec::dense(width, out));
  if (output != Activation::identity) s.push_back(LayerSpec::activation(output));
  return s;
}

template <class T>
void Gradients<T>::zero() {
  for (auto& l : layers)
    for (auto& m : l) m.setZero();
}

template <class T>
void Gradients<T>::scale(T s) {
  for (auto& l : layers)
    for (auto& m : l) m *= s;
}

template <class T>
void Gradients<T>::add(const Gradients& other) {
  if (layers.empty()) {
    layers = other.layers;
    return;
  }
  for (std::size_t i = 0; i < layers.size(); ++i)
    for (std::size_t j = 0; j < layers[i].size(); ++j) layers[i][j] += other.layers[i][j];
}

template <class T>
Network<T>::Network(std::vector<LayerSpec> specs) : specs_(std::move(specs)) {
  params_.resize(specs_.size());
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    const auto& s = specs_[i];
    s.validate();
    if (s.kind == LayerKind::dense) {
      params_[i] = {Matrix<T>::Zero(s.in, s.out), Matrix<T>::Zero(1, s.out)};
    } else if (s.kind == LayerKind::conv2d) {
      params_[i] = {Matrix<T>::Zero(s.out, s.in * s.kernel * s.kernel), Matrix<T>::Zero(1, s.out)};
    }
  }
}

template <class T>
std::size_t Network<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : params_)
    for (const auto& m : l) n += static_cast<std::size_t>(m.size());
  return n;
}

template <class T>
void Network<T>::init(Rng& rng) {
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    const auto& s = specs_[i];
    if (params_[i].empty()) continue;
    const int fan_in = s.kind == LayerKind::dense ? s.in : s.in * s.kernel * s.kernel;
    const double bound = std::sqrt(6.0 / fan_in);
    auto& w = params_[i][0];
    for (Eigen::Index k = 0; k < w.size(); ++k) w.data()[k] = static_cast<T>(rng.uniform(-bound, bound));
    params_[i][1].setZero();
  }
}

namespace {

template <class T>
T softplus(T x) {
  return x > T(20) ? x : std::log1p(std::exp(x));
}

template <class T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

template <class T>
void require_4d(const Tensor<T>& t, std::size_t layer, const char* what) {
  if (t.shape.size() != 4)
    throw ShapeError("layer " + std::to_string(layer) + " (" + what + ") expects a [batch, channels, height, width] input");
}

/// colsT: (C*k*k) x (OH*OW) for one sample starting at x.
template <class T>
void im2col(const T* x, int C, int H, int W, int k, int s, int OH, int OW, Matrix<T>& colsT) {
  colsT.resize(static_cast<Eigen::Index>(C) * k * k, static_cast<Eigen::Index>(OH) * OW);
  for (int c = 0; c < C; ++c)
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj) {
        const Eigen::Index row = (static_cast<Eigen::Index>(c) * k + ki) * k + kj;
        T* dst = colsT.row(row).data();
        for (int oh = 0; oh < OH; ++oh) {
          const T* src = x + (static_cast<std::size_t>(c) * H + static_cast<std::size_t>(oh * s + ki)) * W + kj;
          for (int ow = 0; ow < OW; ++ow) dst[oh * OW + ow] = src[ow * s];
        }
      }
}

template <class T>
void col2im_add(const Matrix<T>& dcolsT, int C, int H, int W, int k, int s, int OH, int OW, T* dx) {
  for (int c = 0; c < C; ++c)
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj) {
        const Eigen::Index row = (static_cast<Eigen::Index>(c) * k + ki) * k + kj;
        const T* src = dcolsT.row(row).data();
        for (int oh = 0; oh < OH; ++oh) {
          T* dst = dx + (static_cast<std::size_t>(c) * H + static_cast<std::size_t>(oh * s + ki)) * W + kj;
          for (int ow = 0; ow < OW; ++ow) dst[ow * s] += src[oh * OW + ow];
        }
      }
}

}  // namespace

template <class T>
Tensor<T> Network<T>::forward(const Tensor<T>& input, bool train, Rng* rng, ForwardCache<T>* cache) const {
  if (cache) cache->layers.assign(specs_.size(), {});
  Tensor<T> x = input;
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    const auto& s = specs_[i];
    if (x.batch() <= 0) throw ShapeError("layer " + std::to_string(i) + ": empty batch");
    LayerCache<T>* lc = cache ? &cache->layers[i] : nullptr;
    if (lc) lc->input = x;
    Tensor<T> y;
    switch (s.kind) {
      case LayerKind::dense: {
        if (x.sample_size() != static_cast<std::size_t>(s.in))
          throw ShapeError("layer " + std::to_string(i) + " (dense) expects " + std::to_string(s.in) +
                           " inputs, got " + std::to_string(x.sample_size()));
        y = Tensor<T>({x.batch(), s.out});
        y.matrix().noalias() = x.matrix() * params_[i][0];
        y.matrix().rowwise() += params_[i][1].row(0);
        break;
      }
      case LayerKind::conv2d: {
        require_4d(x, i, "conv2d");
        const int C = x.shape[1], H = x.shape[2], W = x.shape[3];
        if (C != s.in || H < s.kernel || W < s.kernel)
          throw ShapeError("layer " + std::to_string(i) + " (conv2d) input shape mismatch");
        const int OH = (H - s.kernel) / s.stride + 1, OW = (W - s.kernel) / s.stride + 1;
        y = Tensor<T>({x.batch(), s.out, OH, OW});
        Matrix<T> colsT;
        const std::size_t in_sz = x.sample_size(), out_sz = y.sample_size();
        for (int b = 0; b < x.batch(); ++b) {
          im2col(x.data.data() + b * in_sz, C, H, W, s.kernel, s.stride, OH, OW, colsT);
          Eigen::Map<Matrix<T>> out(y.data.data() + b * out_sz, s.out, static_cast<Eigen::Index>(OH) * OW);
          out.noalias() = params_[i][0] * colsT;
          out.colwise() += params_[i][1].row(0).transpose();
        }
        break;
      }
      case LayerKind::maxpool2d: {
        require_4d(x, i, "maxpool2d");
        const int C = x.shape[1], H = x.shape[2], W = x.shape[3], w = s.window;
        const int OH = H / w, OW = W / w;
        if (OH <= 0 || OW <= 0) throw ShapeError("layer " + std::to_string(i) + " (maxpool2d) input too small");
        y = Tensor<T>({x.batch(), C, OH, OW});
        if (lc) lc->argmax.assign(y.size(), 0);
        const std::size_t in_sz = x.sample_size();
        std::size_t o = 0;
        for (int b = 0; b < x.batch(); ++b)
          for (int c = 0; c < C; ++c)
            for (int oh = 0; oh < OH; ++oh)
              for (int ow = 0; ow < OW; ++ow, ++o) {
                std::size_t best = b * in_sz + (static_cast<std::size_t>(c) * H + oh * w) * W + ow * w;
                for (int di = 0; di < w; ++di)
                  for (int dj = 0; dj < w; ++dj) {
                    const std::size_t idx =
                        b * in_sz + (static_cast<std::size_t>(c) * H + oh * w + di) * W + ow * w + dj;
                    if (x.data[idx] > x.data[best]) best = idx;
                  }
                y.data[o] = x.data[best];
                if (lc) lc->argmax[o] = static_cast<std::int32_t>(best);
              }
        break;
      }
      case LayerKind::dropout: {
        y = x;
        if (train && s.rate > 0.0f) {
          if (!rng) throw Error("dropout in training mode needs a random source");
          const T keep = T(1) - static_cast<T>(s.rate);
          std::vector<T> mask(x.size());
          for (std::size_t k = 0; k < mask.size(); ++k) mask[k] = rng->bernoulli(keep) ? T(1) / keep : T(0);
          for (std::size_t k = 0; k < mask.size(); ++k) y.data[k] *= mask[k];
          if (lc) lc->mask = std::move(mask);
        }
        break;
      }
      case LayerKind::activation: {
        y = x;
        switch (s.act) {
          case Activation::identity: break;
          case Activation::relu:
            for (auto& v : y.data) v = v > T(0) ? v : T(0);
            break;
          case Activation::tanh:
            for (auto& v : y.data) v = std::tanh(v);
            break;
          case Activation::softplus:
            for (auto& v : y.data) v = softplus(v);
            break;
        }
        break;
      }
    }
    if (lc) lc->output = y;
    x = std::move(y);
  }
  return x;
}

template <class T>
Gradients<T> Network<T>::zero_gradients() const {
  Gradients<T> g;
  g.layers.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i)
    for (const auto& m : params_[i]) g.layers[i].push_back(Matrix<T>::Zero(m.rows(), m.cols()));
  return g;
}

template <class T>
Tensor<T> Network<T>::backward(const ForwardCache<T>& cache, const Tensor<T>& grad_output, Gradients<T>& grads) const {
  if (cache.layers.size() != specs_.size() || !cache.valid()) throw Error("backward called without a matching forward cache");
  if (grads.layers.size() != params_.size()) grads = zero_gradients();
  Tensor<T> g = grad_output;
  for (std::size_t ii = specs_.size(); ii-- > 0;) {
    const auto& s = specs_[ii];
    const auto& lc = cache.layers[ii];
    if (g.shape != lc.output.shape) throw ShapeError("layer " + std::to_string(ii) + ": gradient shape mismatch");
    Tensor<T> dx(lc.input.shape);
    switch (s.kind) {
      case LayerKind::dense: {
        const auto X = lc.input.matrix();
        const auto dY = g.matrix();
        grads.layers[ii][0].noalias() += X.transpose() * dY;
        grads.layers[ii][1] += dY.colwise().sum();
        dx.matrix().noalias() = dY * params_[ii][0].transpose();
        break;
      }
      case LayerKind::conv2d: {
        const auto& x = lc.input;
        const int C = x.shape[1], H = x.shape[2], W = x.shape[3];
        const int OH = g.shape[2], OW = g.shape[3];
        const std::size_t in_sz = x.sample_size(), out_sz = g.sample_size();
        Matrix<T> colsT, dcolsT;
        for (int b = 0; b < x.batch(); ++b) {
          im2col(x.data.data() + b * in_sz, C, H, W, s.kernel, s.stride, OH, OW, colsT);
          Eigen::Map<const Matrix<T>> dY(g.data.data() + b * out_sz, s.out, static_cast<Eigen::Index>(OH) * OW);
          grads.layers[ii][0].noalias() += dY * colsT.transpose();
          grads.layers[ii][1] += dY.rowwise().sum().transpose();
          dcolsT.noalias() = params_[ii][0].transpose() * dY;
          col2im_add(dcolsT, C, H, W, s.kernel, s.stride, OH, OW, dx.data.data() + b * in_sz);
        }
        break;
      }
      case LayerKind::maxpool2d:
        for (std::size_t o = 0; o < g.size(); ++o) dx.data[static_cast<std::size_t>(lc.argmax[o])] += g.data[o];
        break;
      case LayerKind::dropout:
        if (lc.mask.empty()) {
          dx = g;
        } else {
          for (std::size_t k = 0; k < g.size(); ++k) dx.data[k] = g.data[k] * lc.mask[k];
        }
        break;
      case LayerKind::activation:
        switch (s.act) {
          case Activation::identity: dx = g; break;
          case Activation::relu:
            for (std::size_t k = 0; k < g.size(); ++k) dx.data[k] = lc.output.data[k] > T(0) ? g.data[k] : T(0);
            break;
          case Activation::tanh:
            for (std::size_t k = 0; k < g.size(); ++k) {
              const T y = lc.output.data[k];
              dx.data[k] = g.data[k] * (T(1) - y * y);
            }
            break;
          case Activation::softplus:
            for (std::size_t k = 0; k < g.size(); ++k) dx.data[k] = g.data[k] * sigmoid(lc.input.data[k]);
            break;
        }
        break;
    }
    g = std::move(dx);
  }
  return g;
}

void adam_step(std::vector<ParamList<float>>& params, const Gradients<float>& grads, AdamState& state) {
  if (grads.layers.size() != params.size()) throw ShapeError("adam: gradient/parameter layer count mismatch");
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i)
      for (const auto& p : params[i]) {
        state.m[i].push_back(Matrix<float>::Zero(p.rows(), p.cols()));
        state.v[i].push_back(Matrix<float>::Zero(p.rows(), p.cols()));
      }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads.layers[i].size() != params[i].size() || state.m[i].size() != params[i].size())
      throw ShapeError("adam: parameter block count mismatch at layer " + std::to_string(i));
    for (std::size_t j = 0; j < params[i].size(); ++j) {
      if (grads.layers[i][j].rows() != params[i][j].rows() || grads.layers[i][j].cols() != params[i][j].cols() ||
          state.m[i][j].rows() != params[i][j].rows() || state.m[i][j].cols() != params[i][j].cols())
        throw ShapeError("adam: shape mismatch at layer " + std::to_string(i));
    }
  }
  ++state.step;
  const auto& c = state.config;
  const double bc1 = 1.0 - std::pow(static_cast<double>(c.beta1), static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(static_cast<double>(c.beta2), static_cast<double>(state.step));
  const float step_size = static_cast<float>(c.learning_rate / bc1);
  const float inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (std::size_t j = 0; j < params[i].size(); ++j) {
      auto m = state.m[i][j].array();
      auto v = state.v[i][j].array();
      const auto g = grads.layers[i][j].array();
      m = c.beta1 * m + (1.0f - c.beta1) * g;
      v = c.beta2 * v + (1.0f - c.beta2) * g.square();
      params[i][j].array() -= step_size * m / (v.sqrt() * inv_sqrt_bc2 + c.epsilon);
    }
  }
}

template <class T>
GaussianHead<T> split_head(const Matrix<T>& raw) {
  if (raw.cols() % 2 != 0) throw ShapeError("gaussian head needs an even number of outputs");
  const auto d = raw.cols() / 2;
  GaussianHead<T> h;
  h.mu = raw.leftCols(d);
  h.logvar = raw.rightCols(d).cwiseMax(T(kLogVarMin)).cwiseMin(T(kLogVarMax));
  return h;
}

template <class T>
Matrix<T> split_head_backward(const Matrix<T>& raw, const Matrix<T>& d_mu, const Matrix<T>& d_logvar) {
  const auto d = raw.cols() / 2;
  Matrix<T> g(raw.rows(), raw.cols());
  g.leftCols(d) = d_mu;
  for (Eigen::Index r = 0; r < raw.rows(); ++r)
    for (Eigen::Index k = 0; k < d; ++k) {
      const T v = raw(r, d + k);
      g(r, d + k) = (v < T(kLogVarMin) || v > T(kLogVarMax)) ? T(0) : d_logvar(r, k);
    }
  return g;
}

template <class T>
Matrix<T> reparam_apply(const GaussianHead<T>& head, const Matrix<T>& eps) {
  return head.mu.array() + (T(0.5) * head.logvar.array()).exp() * eps.array();
}

template <class T>
Matrix<T> reparam_sample(const GaussianHead<T>& head, Rng& rng, Matrix<T>* eps_out) {
  Matrix<T> eps(head.mu.rows(), head.mu.cols());
  for (Eigen::Index k = 0; k < eps.size(); ++k) eps.data()[k] = static_cast<T>(rng.normal());
  Matrix<T> z = reparam_apply(head, eps);
  if (eps_out) *eps_out = std::move(eps);
  return z;
}

template <class T>
std::vector<T> kl_standard_normal(const GaussianHead<T>& head) {
  std::vector<T> out(static_cast<std::size_t>(head.mu.rows()));
  for (Eigen::Index r = 0; r < head.mu.rows(); ++r) {
    T s = 0;
    for (Eigen::Index k = 0; k < head.mu.cols(); ++k) {
      const T mu = head.mu(r, k), lv = head.logvar(r, k);
      s += mu * mu + std::exp(lv) - T(1) - lv;
    }
    out[static_cast<std::size_t>(r)] = T(0.5) * s;
  }
  return out;
}

// --- weight files -----------------------------------------------------------

namespace {
constexpr std::array<std::uint8_t, 4> kWeightMagic{'N', 'B', 'V', 'M'};
}

void save_weights(const WeightFile& file, const std::filesystem::path& path) {
  io::ByteWriter w;
  w.bytes(kWeightMagic);
  w.u32(kWeightFileVersion);
  w.str(file.model_kind);
  w.str(file.metadata);
  w.u32(static_cast<std::uint32_t>(file.networks.size()));
  for (const auto& [name, net] : file.networks) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(net.specs().size()));
    for (std::size_t i = 0; i < net.specs().size(); ++i) {
      const auto& s = net.specs()[i];
      w.u8(static_cast<std::uint8_t>(s.kind));
      w.u32(static_cast<std::uint32_t>(s.in));
      w.u32(static_cast<std::uint32_t>(s.out));
      w.u32(static_cast<std::uint32_t>(s.kernel));
      w.u32(static_cast<std::uint32_t>(s.stride));
      w.u32(static_cast<std::uint32_t>(s.window));
      w.f32(s.rate);
      w.u8(static_cast<std::uint8_t>(s.act));
      const auto& ps = net.params()[i];
      w.u32(static_cast<std::uint32_t>(ps.size()));
      for (const auto& m : ps) {
        w.u32(static_cast<std::uint32_t>(m.rows()));
        w.u32(static_cast<std::uint32_t>(m.cols()));
        for (Eigen::Index k = 0; k < m.size(); ++k) w.f32(m.data()[k]);
      }
    }
  }
  w.u32(io::crc32(w.data()));
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open weight file for writing: " + path.string());
  io::write_all(os, w.data());
  if (!os) throw Error("failed writing weight file: " + path.string());
}

WeightFile load_weights(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open weight file: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  const std::string ctx = "weight file " + path.string();
  if (bytes.size() < 12) throw FormatError(ctx + ": truncated");
  io::ByteReader r(bytes, ctx);
  const auto magic = r.bytes(4);
  if (!std::equal(magic.begin(), magic.end(), kWeightMagic.begin())) throw FormatError(ctx + ": bad magic");
  const auto version = r.u32();
  if (version != kWeightFileVersion) throw VersionError(ctx, kWeightFileVersion, version);
  const std::span<const std::uint8_t> body(bytes.data(), bytes.size() - 4);
  io::ByteReader tail(std::span<const std::uint8_t>(bytes).subspan(bytes.size() - 4), ctx);
  if (io::crc32(body) != tail.u32()) throw FormatError(ctx + ": checksum mismatch");

  WeightFile f;
  f.model_kind = r.str();
  f.metadata = r.str();
  const auto n_nets = r.u32();
  for (std::uint32_t n = 0; n < n_nets; ++n) {
    std::string name = r.str();
    const auto n_layers = r.u32();
    if (n_layers > 4096) throw FormatError(ctx + ": implausible layer count");
    std::vector<LayerSpec> specs;
    std::vector<ParamList<float>> blocks;
    for (std::uint32_t i = 0; i < n_layers; ++i) {
      LayerSpec s;
      s.kind = static_cast<LayerKind>(r.u8());
      s.in = static_cast<int>(r.u32());
      s.out = static_cast<int>(r.u32());
      s.kernel = static_cast<int>(r.u32());
      s.stride = static_cast<int>(r.u32());
      s.window = static_cast<int>(r.u32());
      s.rate = r.f32();
      s.act = static_cast<Activation>(r.u8());
      try {
        s.validate();
      } catch (const ShapeError& e) {
        throw FormatError(ctx + ": layer " + std::to_string(i) + ": " + e.what());
      }
      specs.push_back(s);
      ParamList<float> ps(r.u32());
      for (auto& m : ps) {
        const auto rows = r.u32(), cols = r.u32();
        if (static_cast<std::size_t>(rows) * cols * 4 > r.remaining()) throw FormatError(ctx + ": truncated parameters");
        m.resize(rows, cols);
        for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = r.f32();
      }
      blocks.push_back(std::move(ps));
    }
    Network<float> net(specs);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      if (blocks[i].size() != net.params()[i].size()) throw FormatError(ctx + ": parameter block count mismatch");
      for (std::size_t j = 0; j < blocks[i].size(); ++j) {
        if (blocks[i][j].rows() != net.params()[i][j].rows() || blocks[i][j].cols() != net.params()[i][j].cols())
          throw FormatError(ctx + ": parameter shape mismatch in layer " + std::to_string(i));
        net.params()[i][j] = std::move(blocks[i][j]);
      }
    }
    f.networks.emplace(std::move(name), std::move(net));
  }
  if (r.remaining() != 4) throw FormatError(ctx + ": trailing data");
  return f;
}

#define NBVLEARN_INSTANTIATE(T)                                                                          \
  template struct Tensor<T>;                                                                             \
  template struct Gradients<T>;                                                                          \
  template class Network<T>;                                                                             \
  template GaussianHead<T> split_head<T>(const Matrix<T>&);                                              \
  template Matrix<T> split_head_backward<T>(const Matrix<T>&, const Matrix<T>&, const Matrix<T>&);       \
  template Matrix<T> reparam_apply<T>(const GaussianHead<T>&, const Matrix<T>&);                         \
  template Matrix<T> reparam_sample<T>(const GaussianHead<T>&, Rng&, Matrix<T>*);                        \
  template std::vector<T> kl_standard_normal<T>(const GaussianHead<T>&);

NBVLEARN_INSTANTIATE(float)
NBVLEARN_INSTANTIATE(double)

}  // namespace nbvlearn::nn
