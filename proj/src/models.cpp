#include "nbvlearn/models.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "json.hpp"

#include "model_internal.hpp"
#include "nbvlearn/errors.hpp"

namespace nbvlearn {

using nlohmann::json;

// --- encoding ---------------------------------------------------------------

namespace {

int one_hot_slot(VoxelState s) {
  switch (s) {
    case VoxelState::occupied: return kOneHotOccupied;
    case VoxelState::free: return kOneHotFree;
    case VoxelState::unknown: return kOneHotUnknown;
  }
  return kOneHotUnknown;
}

void require_window(const LocalMap& local) {
  if (local.cells.width() != kLocalMapSize || local.cells.height() != kLocalMapSize)
    throw ShapeError("local map must be " + std::to_string(kLocalMapSize) + "x" + std::to_string(kLocalMapSize) +
                     ", got " + std::to_string(local.cells.width()) + "x" + std::to_string(local.cells.height()));
}

}  // namespace

VoxelState pooled_state(const LocalMap& local, int px, int py) {
  VoxelState best = VoxelState::free;
  for (int dy = 0; dy < kPoolWindow; ++dy)
    for (int dx = 0; dx < kPoolWindow; ++dx) {
      const VoxelState s = local.cells.at(px * kPoolWindow + dx, py * kPoolWindow + dy);
      if (pooling_priority(s) > pooling_priority(best)) best = s;
    }
  return best;
}

void encode_map_into(const LocalMap& local, float* out) {
  require_window(local);
  std::fill(out, out + kConditioningSize, 0.0f);
  for (int py = 0; py < kPooledSide; ++py)
    for (int px = 0; px < kPooledSide; ++px)
      out[(py * kPooledSide + px) * 3 + one_hot_slot(pooled_state(local, px, py))] = 1.0f;
  out[kConditioningSize - 2] = static_cast<float>(std::sin(local.robot_yaw));
  out[kConditioningSize - 1] = static_cast<float>(std::cos(local.robot_yaw));
}

Conditioning encode_map(const LocalMap& local) {
  Conditioning c(kConditioningSize);
  encode_map_into(local, c.data());
  return c;
}

void encode_planes_into(const LocalMap& local, float* out) {
  require_window(local);
  constexpr int plane = kLocalMapSize * kLocalMapSize;
  std::fill(out, out + 3 * plane, 0.0f);
  const auto cells = local.cells.cells();
  for (int i = 0; i < plane; ++i) out[one_hot_slot(cells[static_cast<std::size_t>(i)]) * plane + i] = 1.0f;
}

void pose_features(const PoseTarget& t, double extent, float* out) {
  out[0] = static_cast<float>(2.0 * t.x / extent - 1.0);
  out[1] = static_cast<float>(2.0 * t.y / extent - 1.0);
  out[2] = static_cast<float>(std::sin(t.yaw));
  out[3] = static_cast<float>(std::cos(t.yaw));
}

double max_visible_cells(const SensorModel& sensor, double resolution) {
  const double r = sensor.range_cells(resolution);
  return 0.5 * sensor.fov * r * r;
}

// --- kinds ------------------------------------------------------------------

std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::cvae: return "cvae";
    case ModelKind::cvae_joint: return "cvae_joint";
    case ModelKind::gain_mlp: return "gain_mlp";
    case ModelKind::gain_cnn: return "gain_cnn";
    case ModelKind::imitation: return "imitation";
  }
  return "?";
}

ModelKind parse_model_kind(const std::string& s) {
  for (auto k : {ModelKind::cvae, ModelKind::cvae_joint, ModelKind::gain_mlp, ModelKind::gain_cnn,
                 ModelKind::imitation})
    if (to_string(k) == s) return k;
  throw FormatError("unknown model kind '" + s + "'");
}

ModelKind peek_model_kind(const std::filesystem::path& path) {
  return parse_model_kind(nn::load_weights(path).model_kind);
}

// --- shared pose loss -------------------------------------------------------

namespace detail {

template <class T>
double pose_reconstruction(const nn::Matrix<T>& out, std::span<const PoseTarget> targets, double extent,
                           bool with_gain, double gain_scale, nn::Matrix<T>* dout, std::vector<double>* per_item) {
  const auto B = static_cast<Eigen::Index>(targets.size());
  const double h = 0.5 * extent;
  const double inv_b = 1.0 / static_cast<double>(B);
  if (dout) dout->setZero(out.rows(), out.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < B; ++i) {
    const auto& t = targets[static_cast<std::size_t>(i)];
    const double ex = (static_cast<double>(out(i, 0)) - (2.0 * t.x / extent - 1.0)) * h;
    const double ey = (static_cast<double>(out(i, 1)) - (2.0 * t.y / extent - 1.0)) * h;
    const double s = out(i, 2), c = out(i, 3);
    const double d = angle_diff(std::atan2(s, c), t.yaw);
    double item = ex * ex + ey * ey + d * d;
    double dg = 0.0;
    if (with_gain) {
      const double raw = out(i, 4);
      const double g = raw > 20.0 ? raw : std::log1p(std::exp(raw));
      const double e = g - t.gain.value_or(0.0) / gain_scale;
      item += e * e;
      dg = 2.0 * e / (1.0 + std::exp(-raw));
    }
    total += item;
    if (per_item) per_item->push_back(item);
    if (dout) {
      const double r2 = std::max(s * s + c * c, 1e-12);
      (*dout)(i, 0) = static_cast<T>(2.0 * ex * h * inv_b);
      (*dout)(i, 1) = static_cast<T>(2.0 * ey * h * inv_b);
      (*dout)(i, 2) = static_cast<T>(2.0 * d * (c / r2) * inv_b);
      (*dout)(i, 3) = static_cast<T>(2.0 * d * (-s / r2) * inv_b);
      if (with_gain) (*dout)(i, 4) = static_cast<T>(dg * inv_b);
    }
  }
  return total * inv_b;
}

template double pose_reconstruction<float>(const nn::Matrix<float>&, std::span<const PoseTarget>, double, bool,
                                           double, nn::Matrix<float>*, std::vector<double>*);
template double pose_reconstruction<double>(const nn::Matrix<double>&, std::span<const PoseTarget>, double, bool,
                                            double, nn::Matrix<double>*, std::vector<double>*);

PoseTarget decode_pose(const float* row, double extent, bool with_gain, double gain_scale) {
  PoseTarget t;
  const double hi = std::nextafter(extent, 0.0);
  t.x = std::clamp((static_cast<double>(row[0]) + 1.0) * 0.5 * extent, 0.0, hi);
  t.y = std::clamp((static_cast<double>(row[1]) + 1.0) * 0.5 * extent, 0.0, hi);
  t.yaw = normalize_angle(std::atan2(static_cast<double>(row[2]), static_cast<double>(row[3])));
  if (with_gain) {
    const double raw = row[4];
    t.gain = (raw > 20.0 ? raw : std::log1p(std::exp(raw))) * gain_scale;
  }
  return t;
}

}  // namespace detail

// --- CVAE -------------------------------------------------------------------

template <class T>
LossParts cvae_loss(const nn::Network<T>& encoder, const nn::Network<T>& decoder, const CvaeConfig& config,
                    const nn::Matrix<T>& conditioning, std::span<const PoseTarget> targets, Rng& rng, bool train,
                    const nn::Matrix<T>* fixed_eps, nn::Gradients<T>* encoder_grads, nn::Gradients<T>* decoder_grads,
                    std::size_t batch_index) {
  const auto B = static_cast<Eigen::Index>(targets.size());
  if (B == 0) throw DataError("cvae_loss: empty batch");
  if (conditioning.rows() != B || conditioning.cols() != kConditioningSize)
    throw ShapeError("cvae_loss: conditioning must be batch x " + std::to_string(kConditioningSize));
  const int P = kPoseFeatures + (config.joint_gain ? 1 : 0);
  const int L = config.latent;
  const bool want_grads = encoder_grads || decoder_grads;

  nn::Tensor<T> enc_in({static_cast<int>(B), P + kConditioningSize});
  auto ei = enc_in.matrix();
  for (Eigen::Index i = 0; i < B; ++i) {
    const auto& t = targets[static_cast<std::size_t>(i)];
    float f[kPoseFeatures];
    pose_features(t, config.extent, f);
    for (int k = 0; k < kPoseFeatures; ++k) ei(i, k) = static_cast<T>(f[k]);
    if (config.joint_gain) ei(i, kPoseFeatures) = static_cast<T>(t.gain.value_or(0.0) / config.gain_scale);
  }
  ei.rightCols(kConditioningSize) = conditioning;

  nn::ForwardCache<T> enc_cache, dec_cache;
  const nn::Matrix<T> raw = encoder.forward(enc_in, train, &rng, want_grads ? &enc_cache : nullptr).matrix();
  if (raw.cols() != 2 * L) throw ShapeError("cvae_loss: encoder output does not match the latent size");
  const auto head = nn::split_head(raw);
  nn::Matrix<T> eps;
  if (fixed_eps) {
    if (fixed_eps->rows() != B || fixed_eps->cols() != L) throw ShapeError("cvae_loss: eps shape mismatch");
    eps = *fixed_eps;
  } else {
    eps.resize(B, L);
    for (Eigen::Index k = 0; k < eps.size(); ++k) eps.data()[k] = static_cast<T>(rng.normal());
  }
  const nn::Matrix<T> z = nn::reparam_apply(head, eps);

  nn::Tensor<T> dec_in({static_cast<int>(B), L + kConditioningSize});
  auto di = dec_in.matrix();
  di.leftCols(L) = z;
  di.rightCols(kConditioningSize) = conditioning;
  const nn::Matrix<T> out = decoder.forward(dec_in, train, &rng, want_grads ? &dec_cache : nullptr).matrix();

  nn::Matrix<T> dout;
  LossParts parts;
  parts.reconstruction = detail::pose_reconstruction(out, targets, config.extent, config.joint_gain,
                                                     config.gain_scale, want_grads ? &dout : nullptr, nullptr);
  const auto kl = nn::kl_standard_normal(head);
  double kl_sum = 0.0;
  for (T v : kl) kl_sum += static_cast<double>(v);
  parts.kl = kl_sum / static_cast<double>(B);
  parts.total = parts.reconstruction + config.kl_weight * parts.kl;
  if (!std::isfinite(parts.total))
    throw NumericalError("non-finite cvae loss in batch " + std::to_string(batch_index));

  if (want_grads) {
    nn::Gradients<T> scratch_dec;
    nn::Gradients<T>& gd = decoder_grads ? *decoder_grads : scratch_dec;
    const nn::Matrix<T> d_dec_in = decoder.backward(dec_cache, nn::Tensor<T>::from_matrix(dout), gd).matrix();
    const nn::Matrix<T> dz = d_dec_in.leftCols(L);
    const T inv_b = T(1) / static_cast<T>(B);
    const T w = static_cast<T>(config.kl_weight);
    const nn::Matrix<T> sigma = (T(0.5) * head.logvar.array()).exp().matrix();
    nn::Matrix<T> d_mu = dz + w * inv_b * head.mu;
    nn::Matrix<T> d_logvar = (dz.array() * eps.array() * T(0.5) * sigma.array()).matrix() +
                             (w * inv_b * T(0.5) * (head.logvar.array().exp() - T(1))).matrix();
    const nn::Matrix<T> d_raw = nn::split_head_backward(raw, d_mu, d_logvar);
    if (encoder_grads) encoder.backward(enc_cache, nn::Tensor<T>::from_matrix(d_raw), *encoder_grads);
  }
  return parts;
}

template LossParts cvae_loss<float>(const nn::Network<float>&, const nn::Network<float>&, const CvaeConfig&,
                                    const nn::Matrix<float>&, std::span<const PoseTarget>, Rng&, bool,
                                    const nn::Matrix<float>*, nn::Gradients<float>*, nn::Gradients<float>*,
                                    std::size_t);
template LossParts cvae_loss<double>(const nn::Network<double>&, const nn::Network<double>&, const CvaeConfig&,
                                     const nn::Matrix<double>&, std::span<const PoseTarget>, Rng&, bool,
                                     const nn::Matrix<double>*, nn::Gradients<double>*, nn::Gradients<double>*,
                                     std::size_t);

CvaeModel::CvaeModel(CvaeConfig c)
    : config(c),
      encoder(nn::mlp_specs(c.encoder_inputs(), c.hidden, c.layers, 2 * c.latent, c.dropout)),
      decoder(nn::mlp_specs(c.decoder_inputs(), c.hidden, c.layers, c.decoder_outputs(), c.decoder_dropout)) {
  if (c.latent < 1 || c.hidden < 1 || c.layers < 1) throw ParameterError("invalid cvae dimensions");
}

void CvaeModel::init(Rng& rng) {
  encoder.init(rng);
  decoder.init(rng);
}

std::vector<PoseTarget> CvaeModel::sample_poses(const Conditioning& cond, int n, Rng& rng) const {
  if (n < 1) throw ParameterError("sample_poses: n must be >= 1");
  if (cond.size() != static_cast<std::size_t>(kConditioningSize)) throw ShapeError("conditioning has wrong length");
  const int L = config.latent;
  nn::Tensor<float> in({n, L + kConditioningSize});
  auto m = in.matrix();
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < L; ++k) m(i, k) = static_cast<float>(rng.normal());
    std::copy(cond.begin(), cond.end(), m.row(i).data() + L);
  }
  const auto out = decoder.predict(in);
  std::vector<PoseTarget> poses;
  poses.reserve(static_cast<std::size_t>(n));
  const auto o = out.matrix();
  for (int i = 0; i < n; ++i)
    poses.push_back(detail::decode_pose(o.row(i).data(), config.extent, config.joint_gain, config.gain_scale));
  return poses;
}

std::vector<Proposal> CvaeModel::propose(const LocalMap& local, int n, Rng& rng) const {
  std::vector<Proposal> out;
  for (const auto& t : sample_poses(encode_map(local), n, rng)) out.push_back({t.pose(), t.gain});
  return out;
}

// --- gain -------------------------------------------------------------------

std::vector<nn::LayerSpec> cnn_encoder_specs(int features) {
  using nn::Activation;
  using nn::LayerSpec;
  const int side = ((kLocalMapSize - 4 - 4 - 4) / 2);
  return {LayerSpec::conv2d(3, 8, 5),   LayerSpec::activation(Activation::relu),
          LayerSpec::conv2d(8, 16, 5),  LayerSpec::activation(Activation::relu),
          LayerSpec::conv2d(16, 32, 5), LayerSpec::activation(Activation::relu),
          LayerSpec::maxpool2d(2),      LayerSpec::dense(32 * side * side, features),
          LayerSpec::activation(Activation::relu)};
}

GainModel::GainModel(GainConfig c)
    : config(c), head(nn::mlp_specs(c.head_inputs(), c.hidden, c.layers, 1, c.dropout, nn::Activation::softplus)) {
  if (c.encoder == GainEncoder::cnn) cnn = nn::Network<float>(cnn_encoder_specs(c.cnn_features));
}

void GainModel::init(Rng& rng) {
  if (config.encoder == GainEncoder::cnn) cnn.init(rng);
  head.init(rng);
}

namespace detail {

void map_features(const GainModel& m, const LocalMap& local, std::vector<float>& out) {
  if (m.config.encoder == GainEncoder::pooling) {
    out.resize(kConditioningSize);
    encode_map_into(local, out.data());
    return;
  }
  nn::Tensor<float> planes({1, 3, kLocalMapSize, kLocalMapSize});
  encode_planes_into(local, planes.data.data());
  out = m.cnn.predict(planes).data;
}

}  // namespace detail

std::vector<double> GainModel::estimate(const LocalMap& local, std::span<const Pose> poses) const {
  if (poses.empty()) return {};
  std::vector<float> feat;
  detail::map_features(*this, local, feat);
  const int n = static_cast<int>(poses.size());
  const int F = static_cast<int>(feat.size());
  nn::Tensor<float> in({n, kPoseFeatures + F});
  auto m = in.matrix();
  for (int i = 0; i < n; ++i) {
    const Pose& p = poses[static_cast<std::size_t>(i)];
    pose_features({p.x, p.y, p.yaw, std::nullopt}, config.extent, m.row(i).data());
    std::copy(feat.begin(), feat.end(), m.row(i).data() + kPoseFeatures);
  }
  const auto out = head.predict(in);
  std::vector<double> g(poses.size());
  for (int i = 0; i < n; ++i) g[static_cast<std::size_t>(i)] = static_cast<double>(out.data[i]) * config.gain_scale;
  return g;
}

double GainModel::predict_gain(const PoseTarget& pose, const LocalMap& local) const {
  const Pose p = pose.pose();
  return estimate(local, std::span<const Pose>(&p, 1))[0];
}

// --- imitation --------------------------------------------------------------

ImitationModel::ImitationModel(ImitationConfig c)
    : config(c), net(nn::mlp_specs(kConditioningSize, c.hidden, c.layers, kPoseFeatures, c.dropout)) {}

void ImitationModel::init(Rng& rng) { net.init(rng); }

PoseTarget ImitationModel::predict(const Conditioning& cond) const {
  if (cond.size() != static_cast<std::size_t>(kConditioningSize)) throw ShapeError("conditioning has wrong length");
  nn::Tensor<float> in({1, kConditioningSize}, std::vector<float>(cond.begin(), cond.end()));
  const auto out = net.predict(in);
  return detail::decode_pose(out.data.data(), config.extent, false, 1.0);
}

std::vector<Proposal> ImitationModel::propose(const LocalMap& local, int, Rng&) const {
  const auto t = predict(encode_map(local));
  return {Proposal{t.pose(), std::nullopt}};
}

// --- persistence ------------------------------------------------------------

namespace {

nn::WeightFile load_kind(const std::filesystem::path& path, std::initializer_list<ModelKind> accepted) {
  auto f = nn::load_weights(path);
  const ModelKind k = parse_model_kind(f.model_kind);
  if (std::find(accepted.begin(), accepted.end(), k) == accepted.end()) {
    std::string want;
    for (auto a : accepted) want += (want.empty() ? "" : " or ") + to_string(a);
    throw ParameterError(path.string() + ": model kind is " + f.model_kind + ", expected " + want);
  }
  return f;
}

nn::Network<float> take(nn::WeightFile& f, const std::string& name, const std::vector<nn::LayerSpec>& expect,
                        const std::filesystem::path& path) {
  auto it = f.networks.find(name);
  if (it == f.networks.end()) throw FormatError(path.string() + ": missing network '" + name + "'");
  if (it->second.specs() != expect)
    throw FormatError(path.string() + ": network '" + name + "' does not match the model configuration");
  return std::move(it->second);
}

json meta_of(const nn::WeightFile& f, const std::filesystem::path& path) {
  try {
    return json::parse(f.metadata);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": bad metadata: " + e.what());
  }
}

template <class V>
V get(const json& j, const char* key, const std::filesystem::path& path) {
  try {
    return j.at(key).get<V>();
  } catch (const json::exception&) {
    throw FormatError(path.string() + ": metadata lacks '" + key + "'");
  }
}

}  // namespace

void save_model(const CvaeModel& m, const std::filesystem::path& path) {
  nn::WeightFile f;
  f.model_kind = to_string(m.kind());
  const auto& c = m.config;
  f.metadata = json{{"hidden", c.hidden},       {"layers", c.layers},   {"latent", c.latent},
                    {"dropout", c.dropout},     {"decoder_dropout", c.decoder_dropout}, {"joint_gain", c.joint_gain}, {"kl_weight", c.kl_weight},
                    {"extent", c.extent},       {"gain_scale", c.gain_scale}}
                   .dump();
  f.networks.emplace("encoder", m.encoder);
  f.networks.emplace("decoder", m.decoder);
  nn::save_weights(f, path);
}

void save_model(const GainModel& m, const std::filesystem::path& path) {
  nn::WeightFile f;
  f.model_kind = to_string(m.kind());
  const auto& c = m.config;
  f.metadata = json{{"hidden", c.hidden},        {"layers", c.layers}, {"dropout", c.dropout},
                    {"cnn_features", c.cnn_features}, {"extent", c.extent}, {"gain_scale", c.gain_scale}}
                   .dump();
  if (c.encoder == GainEncoder::cnn) f.networks.emplace("cnn", m.cnn);
  f.networks.emplace("head", m.head);
  nn::save_weights(f, path);
}

void save_model(const ImitationModel& m, const std::filesystem::path& path) {
  nn::WeightFile f;
  f.model_kind = to_string(ModelKind::imitation);
  const auto& c = m.config;
  f.metadata = json{{"hidden", c.hidden}, {"layers", c.layers}, {"dropout", c.dropout}, {"extent", c.extent}}.dump();
  f.networks.emplace("net", m.net);
  nn::save_weights(f, path);
}

CvaeModel load_cvae(const std::filesystem::path& path) {
  auto f = load_kind(path, {ModelKind::cvae, ModelKind::cvae_joint});
  const json j = meta_of(f, path);
  CvaeConfig c;
  c.hidden = get<int>(j, "hidden", path);
  c.layers = get<int>(j, "layers", path);
  c.latent = get<int>(j, "latent", path);
  c.dropout = get<float>(j, "dropout", path);
  c.decoder_dropout = get<float>(j, "decoder_dropout", path);
  c.joint_gain = get<bool>(j, "joint_gain", path);
  c.kl_weight = get<double>(j, "kl_weight", path);
  c.extent = get<double>(j, "extent", path);
  c.gain_scale = get<double>(j, "gain_scale", path);
  if (c.joint_gain != (parse_model_kind(f.model_kind) == ModelKind::cvae_joint))
    throw FormatError(path.string() + ": joint flag does not match the model kind");
  CvaeModel m(c);
  m.encoder = take(f, "encoder", m.encoder.specs(), path);
  m.decoder = take(f, "decoder", m.decoder.specs(), path);
  return m;
}

GainModel load_gain_model(const std::filesystem::path& path) {
  auto f = load_kind(path, {ModelKind::gain_mlp, ModelKind::gain_cnn});
  const json j = meta_of(f, path);
  GainConfig c;
  c.encoder = parse_model_kind(f.model_kind) == ModelKind::gain_cnn ? GainEncoder::cnn : GainEncoder::pooling;
  c.hidden = get<int>(j, "hidden", path);
  c.layers = get<int>(j, "layers", path);
  c.dropout = get<float>(j, "dropout", path);
  c.cnn_features = get<int>(j, "cnn_features", path);
  c.extent = get<double>(j, "extent", path);
  c.gain_scale = get<double>(j, "gain_scale", path);
  GainModel m(c);
  if (c.encoder == GainEncoder::cnn) m.cnn = take(f, "cnn", m.cnn.specs(), path);
  m.head = take(f, "head", m.head.specs(), path);
  return m;
}

ImitationModel load_imitation(const std::filesystem::path& path) {
  auto f = load_kind(path, {ModelKind::imitation});
  const json j = meta_of(f, path);
  ImitationConfig c;
  c.hidden = get<int>(j, "hidden", path);
  c.layers = get<int>(j, "layers", path);
  c.dropout = get<float>(j, "dropout", path);
  c.extent = get<double>(j, "extent", path);
  ImitationModel m(c);
  m.net = take(f, "net", m.net.specs(), path);
  return m;
}

}  // namespace nbvlearn
