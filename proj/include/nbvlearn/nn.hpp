#pragma once

// Small dense/convolutional network stack with hand-written backward passes.
// Everything is templated on the scalar type: float for training and
// inference, double for gradient checks.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "nbvlearn/rng.hpp"

namespace nbvlearn::nn {

template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;

/// Dense row-major buffer. shape[0] is the batch dimension.
template <class T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, T fill = T(0));
  Tensor(std::vector<int> s, std::vector<T> d);

  int batch() const { return shape.empty() ? 0 : shape[0]; }
  std::size_t sample_size() const;
  std::size_t size() const { return data.size(); }

  /// View as batch x sample_size.
  Eigen::Map<Matrix<T>> matrix() {
    return {data.data(), static_cast<Eigen::Index>(batch()), static_cast<Eigen::Index>(sample_size())};
  }
  Eigen::Map<const Matrix<T>> matrix() const {
    return {data.data(), static_cast<Eigen::Index>(batch()), static_cast<Eigen::Index>(sample_size())};
  }

  static Tensor from_matrix(const Matrix<T>& m);
};

using TensorBuf = Tensor<float>;

enum class LayerKind : std::uint8_t { dense = 1, conv2d = 2, maxpool2d = 3, dropout = 4, activation = 5 };
enum class Activation : std::uint8_t { identity = 0, relu = 1, tanh = 2, softplus = 3 };

struct LayerSpec {
  LayerKind kind = LayerKind::activation;
  int in = 0;       ///< dense inputs, conv input channels
  int out = 0;      ///< dense outputs, conv output channels
  int kernel = 0;   ///< conv kernel size
  int stride = 1;   ///< conv stride
  int window = 0;   ///< pooling window (stride = window)
  float rate = 0;   ///< dropout rate
  Activation act = Activation::identity;

  static LayerSpec dense(int in, int out);
  static LayerSpec conv2d(int in_ch, int out_ch, int kernel, int stride = 1);
  static LayerSpec maxpool2d(int window);
  static LayerSpec dropout(float rate);
  static LayerSpec activation(Activation a);

  void validate() const;
  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Parameters of one layer: dense {W (in x out), b (1 x out)},
/// conv {W (out_ch x in_ch*k*k), b (1 x out_ch)}, nothing otherwise.
template <class T>
using ParamList = std::vector<Matrix<T>>;

template <class T>
struct Gradients {
  std::vector<ParamList<T>> layers;
  void zero();
  void scale(T s);
  void add(const Gradients& other);
};

/// Per-layer data kept by forward for backward.
template <class T>
struct LayerCache {
  Tensor<T> input;
  Tensor<T> output;
  std::vector<T> mask;               ///< dropout
  std::vector<std::int32_t> argmax;  ///< maxpool
};

template <class T>
struct ForwardCache {
  std::vector<LayerCache<T>> layers;
  bool valid() const { return !layers.empty(); }
};

template <class T>
class Network {
 public:
  Network() = default;
  explicit Network(std::vector<LayerSpec> specs);

  const std::vector<LayerSpec>& specs() const { return specs_; }
  std::vector<ParamList<T>>& params() { return params_; }
  const std::vector<ParamList<T>>& params() const { return params_; }
  std::size_t parameter_count() const;

  /// He-uniform weights, zero biases.
  void init(Rng& rng);

  /// Runs the network. Dropout is active only when `train`, in which case a
  /// random source is required. Throws ShapeError naming the layer index.
  Tensor<T> forward(const Tensor<T>& input, bool train, Rng* rng, ForwardCache<T>* cache) const;
  Tensor<T> predict(const Tensor<T>& input) const { return forward(input, false, nullptr, nullptr); }

  /// Accumulates parameter gradients into `grads` (resized on first use) and
  /// returns the gradient w.r.t. the input.
  Tensor<T> backward(const ForwardCache<T>& cache, const Tensor<T>& grad_output, Gradients<T>& grads) const;

  Gradients<T> zero_gradients() const;

  template <class U>
  Network<U> cast() const {
    Network<U> n(specs_);
    for (std::size_t i = 0; i < params_.size(); ++i)
      for (std::size_t j = 0; j < params_[i].size(); ++j) n.params()[i][j] = params_[i][j].template cast<U>();
    return n;
  }

 private:
  std::vector<LayerSpec> specs_;
  std::vector<ParamList<T>> params_;
};

/// Hidden block used throughout the models: repeated (dense, relu, dropout),
/// then a dense output layer and an output activation.
std::vector<LayerSpec> mlp_specs(int in, int hidden, int layers, int out, float dropout,
                                 Activation output = Activation::identity);

// --- optimization -----------------------------------------------------------

struct AdamConfig {
  float learning_rate = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;
};

struct AdamState {
  AdamConfig config;
  std::int64_t step = 0;
  std::vector<ParamList<float>> m;
  std::vector<ParamList<float>> v;
};

/// One bias-corrected Adam update. Throws ShapeError on mismatched shapes.
void adam_step(std::vector<ParamList<float>>& params, const Gradients<float>& grads, AdamState& state);

// --- Gaussian latent --------------------------------------------------------

inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;

/// Diagonal Gaussian per batch row.
template <class T>
struct GaussianHead {
  Matrix<T> mu;
  Matrix<T> logvar;
};

/// Splits a (batch x 2D) encoder output into mu and clamped logvar.
template <class T>
GaussianHead<T> split_head(const Matrix<T>& raw);

/// Backward of split_head: gradient w.r.t. the raw encoder output. Entries
/// whose logvar was clamped receive zero gradient.
template <class T>
Matrix<T> split_head_backward(const Matrix<T>& raw, const Matrix<T>& d_mu, const Matrix<T>& d_logvar);

/// z = mu + exp(logvar / 2) * eps with eps ~ N(0, I); eps is returned through
/// `eps_out` when given.
template <class T>
Matrix<T> reparam_sample(const GaussianHead<T>& head, Rng& rng, Matrix<T>* eps_out = nullptr);

/// Same with externally supplied noise.
template <class T>
Matrix<T> reparam_apply(const GaussianHead<T>& head, const Matrix<T>& eps);

/// Per-row KL(N(mu, diag exp(logvar)) || N(0, I)).
template <class T>
std::vector<T> kl_standard_normal(const GaussianHead<T>& head);

// --- weight files -----------------------------------------------------------

inline constexpr std::uint32_t kWeightFileVersion = 1;

struct WeightFile {
  std::string model_kind;
  std::string metadata;  ///< free-form JSON
  std::map<std::string, Network<float>> networks;
};

void save_weights(const WeightFile& file, const std::filesystem::path& path);
WeightFile load_weights(const std::filesystem::path& path);

}  // namespace nbvlearn::nn
