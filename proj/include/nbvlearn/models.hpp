#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nbvlearn/dataset.hpp"
#include "nbvlearn/nn.hpp"
#include "nbvlearn/planning.hpp"

namespace nbvlearn {

// --- map encoding -----------------------------------------------------------

inline constexpr int kPoolWindow = 5;
inline constexpr int kPooledSide = kLocalMapSize / kPoolWindow;               // 10
inline constexpr int kConditioningSize = kPooledSide * kPooledSide * 3 + 2;  // 302
/// Channel / one-hot order.
inline constexpr int kOneHotOccupied = 0;
inline constexpr int kOneHotFree = 1;
inline constexpr int kOneHotUnknown = 2;

using Conditioning = std::vector<float>;

/// Pooled one-hot map plus (sin, cos) of the robot yaw. Throws ShapeError
/// unless the map is 50x50.
Conditioning encode_map(const LocalMap& local);
void encode_map_into(const LocalMap& local, float* out);

/// Full-resolution one-hot planes, channel-major: 3 x 50 x 50.
void encode_planes_into(const LocalMap& local, float* out);

/// Pooled state of window (px, py), for tests.
VoxelState pooled_state(const LocalMap& local, int px, int py);

// --- pose normalization -----------------------------------------------------

/// Network-side pose features: x, y mapped to [-1, 1] over the window extent,
/// then sin and cos of the yaw.
inline constexpr int kPoseFeatures = 4;
void pose_features(const PoseTarget& t, double extent, float* out);

/// Gain normalizer: cells in a full-range field-of-view sector.
double max_visible_cells(const SensorModel& sensor, double resolution);

// --- model kinds ------------------------------------------------------------

enum class ModelKind : std::uint8_t { cvae, cvae_joint, gain_mlp, gain_cnn, imitation };
std::string to_string(ModelKind k);
ModelKind parse_model_kind(const std::string& s);

/// Model kind stored in a weight file, without validating the networks.
ModelKind peek_model_kind(const std::filesystem::path& path);

// --- CVAE -------------------------------------------------------------------

struct CvaeConfig {
  int hidden = 512;
  int layers = 4;
  int latent = 3;
  float dropout = 0.2f;          ///< encoder hidden layers
  float decoder_dropout = 0.0f;  ///< decoder hidden layers
  bool joint_gain = false;
  double kl_weight = 1.0;
  double extent = kLocalMapSize * 0.2;  ///< local window side, m
  double gain_scale = 1.0;             ///< voxels per unit of normalized gain

  int encoder_inputs() const { return kPoseFeatures + (joint_gain ? 1 : 0) + kConditioningSize; }
  int decoder_inputs() const { return latent + kConditioningSize; }
  int decoder_outputs() const { return kPoseFeatures + (joint_gain ? 1 : 0); }
};

struct LossParts {
  double total = 0.0;
  double reconstruction = 0.0;
  double kl = 0.0;
};

/// Batch-mean CVAE loss: squared position error (m^2) plus squared
/// shortest-arc yaw error, plus squared normalized gain error for joint
/// models, plus kl_weight * KL. One latent draw per item; `fixed_eps` (batch
/// x latent) replaces the draw when given. Gradients are accumulated when the
/// pointers are non-null. Throws NumericalError naming `batch_index` on a
/// non-finite loss.
template <class T>
LossParts cvae_loss(const nn::Network<T>& encoder, const nn::Network<T>& decoder, const CvaeConfig& config,
                    const nn::Matrix<T>& conditioning, std::span<const PoseTarget> targets, Rng& rng, bool train,
                    const nn::Matrix<T>* fixed_eps = nullptr, nn::Gradients<T>* encoder_grads = nullptr,
                    nn::Gradients<T>* decoder_grads = nullptr, std::size_t batch_index = 0);

class CvaeModel final : public PoseProposer {
 public:
  CvaeModel() = default;
  explicit CvaeModel(CvaeConfig config);

  /// Random initialization.
  void init(Rng& rng);

  /// Decodes n independent latent draws. Positions are clamped to the window,
  /// yaws normalized, gains (joint models) in voxels.
  std::vector<PoseTarget> sample_poses(const Conditioning& cond, int n, Rng& rng) const;

  std::vector<Proposal> propose(const LocalMap& local, int n, Rng& rng) const override;

  ModelKind kind() const { return config.joint_gain ? ModelKind::cvae_joint : ModelKind::cvae; }

  CvaeConfig config;
  nn::Network<float> encoder;
  nn::Network<float> decoder;
};

// --- gain estimators --------------------------------------------------------

enum class GainEncoder : std::uint8_t { pooling, cnn };

struct GainConfig {
  GainEncoder encoder = GainEncoder::pooling;
  int hidden = 512;
  int layers = 4;
  float dropout = 0.2f;
  int cnn_features = 128;
  double extent = kLocalMapSize * 0.2;
  double gain_scale = 1.0;

  int head_inputs() const { return kPoseFeatures + (encoder == GainEncoder::cnn ? cnn_features : kConditioningSize); }
};

std::vector<nn::LayerSpec> cnn_encoder_specs(int features);

class GainModel final : public GainEstimator {
 public:
  GainModel() = default;
  explicit GainModel(GainConfig config);
  void init(Rng& rng);

  /// Eval-mode estimate in voxels, >= 0.
  double predict_gain(const PoseTarget& pose, const LocalMap& local) const;
  std::vector<double> estimate(const LocalMap& local, std::span<const Pose> poses) const override;

  ModelKind kind() const { return config.encoder == GainEncoder::cnn ? ModelKind::gain_cnn : ModelKind::gain_mlp; }

  GainConfig config;
  nn::Network<float> cnn;   ///< empty for the pooling encoder
  nn::Network<float> head;  ///< softplus output, normalized gain
};

// --- imitation --------------------------------------------------------------

struct ImitationConfig {
  int hidden = 512;
  int layers = 4;
  float dropout = 0.2f;
  double extent = kLocalMapSize * 0.2;
};

class ImitationModel final : public PoseProposer {
 public:
  ImitationModel() = default;
  explicit ImitationModel(ImitationConfig config);
  void init(Rng& rng);

  /// Deterministic; position clamped to the window.
  PoseTarget predict(const Conditioning& cond) const;
  /// Always a single proposal; the rng is not used.
  std::vector<Proposal> propose(const LocalMap& local, int n, Rng& rng) const override;

  ImitationConfig config;
  nn::Network<float> net;
};

// --- persistence ------------------------------------------------------------

void save_model(const CvaeModel& m, const std::filesystem::path& path);
void save_model(const GainModel& m, const std::filesystem::path& path);
void save_model(const ImitationModel& m, const std::filesystem::path& path);

/// Each loader refuses files of another model kind with ParameterError.
CvaeModel load_cvae(const std::filesystem::path& path);
GainModel load_gain_model(const std::filesystem::path& path);
ImitationModel load_imitation(const std::filesystem::path& path);

// --- training ---------------------------------------------------------------

struct TrainConfig {
  int epochs = 10;
  int batch_size = 128;
  nn::AdamConfig adam;
  std::uint64_t seed = 0;
  /// Caps training pairs per epoch (0: all), drawn afresh each epoch.
  std::size_t max_pairs_per_epoch = 0;
  /// Caps validation pairs (0: all); a fixed subset.
  std::size_t max_val_pairs = 0;
  std::optional<std::filesystem::path> log_path;  ///< per-epoch CSV
  bool verbose = false;
};

struct EpochLog {
  int epoch = 0;  ///< 0: before any update
  double train_loss = 0.0;
  double val_loss = 0.0;
  double seconds = 0.0;
};

template <class M>
struct TrainResult {
  M model;
  std::vector<EpochLog> log;
  int best_epoch = 0;
  double best_val_loss = 0.0;
};

/// Positive targets only. Returns the parameters with the lowest validation
/// loss (epoch 0 included). Throws DataError on an empty split.
TrainResult<CvaeModel> train_cvae(std::span<const DatasetRecord> train, std::span<const DatasetRecord> val,
                                  CvaeConfig model, const TrainConfig& config);

/// All labeled targets, positive and negative. Throws DataError when a target
/// lacks a gain label.
TrainResult<GainModel> train_gain(std::span<const DatasetRecord> train, std::span<const DatasetRecord> val,
                                  GainConfig model, const TrainConfig& config);

TrainResult<ImitationModel> train_imitation(std::span<const DatasetRecord> train,
                                            std::span<const DatasetRecord> val, ImitationConfig model,
                                            const TrainConfig& config);

/// Mean absolute gain error (voxels) over all labeled targets.
double gain_mean_absolute_error(const GainModel& model, std::span<const DatasetRecord> records);

}  // namespace nbvlearn
