#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "model_internal.hpp"
#include "nbvlearn/errors.hpp"
#include "nbvlearn/models.hpp"

namespace nbvlearn {

namespace {

struct Pair {
  std::uint32_t record;
  std::uint32_t target;
};

enum class Which { positives, labeled };

std::vector<Pair> collect_pairs(std::span<const DatasetRecord> records, Which which, const char* what) {
  std::vector<Pair> pairs;
  for (std::size_t r = 0; r < records.size(); ++r) {
    const auto& rec = records[r];
    for (std::size_t t = 0; t < rec.targets.size(); ++t) {
      const bool neg = t < rec.negative.size() && rec.negative[t];
      if (which == Which::positives && neg) continue;
      if (which == Which::labeled && !rec.targets[t].gain)
        throw DataError(std::string(what) + ": record " + std::to_string(r) + " target " + std::to_string(t) +
                        " has no gain label");
      pairs.push_back({static_cast<std::uint32_t>(r), static_cast<std::uint32_t>(t)});
    }
  }
  return pairs;
}

template <class V>
void shuffle(std::vector<V>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.uniform_index(i)]);
}

/// Fixed subset of at most `cap` pairs (deterministic, evenly strided).
std::vector<Pair> cap_pairs(const std::vector<Pair>& pairs, std::size_t cap) {
  if (cap == 0 || pairs.size() <= cap) return pairs;
  std::vector<Pair> out;
  out.reserve(cap);
  for (std::size_t i = 0; i < cap; ++i) out.push_back(pairs[i * pairs.size() / cap]);
  return out;
}

std::vector<float> encode_all(std::span<const DatasetRecord> records) {
  std::vector<float> out(records.size() * kConditioningSize);
  for (std::size_t r = 0; r < records.size(); ++r) encode_map_into(records[r].local, out.data() + r * kConditioningSize);
  return out;
}

struct Loop {
  const TrainConfig& config;
  std::vector<EpochLog> log;
  std::FILE* csv = nullptr;

  explicit Loop(const TrainConfig& c) : config(c) {
    if (c.epochs < 0) throw ParameterError("epochs must be >= 0");
    if (c.batch_size < 1) throw ParameterError("batch_size must be >= 1");
    if (c.log_path) {
      csv = std::fopen(c.log_path->string().c_str(), "w");
      if (!csv) throw Error("cannot open training log " + c.log_path->string());
      std::fprintf(csv, "epoch,train_loss,val_loss,seconds\n");
    }
  }
  ~Loop() {
    if (csv) std::fclose(csv);
  }

  void record(int epoch, double train, double val, double seconds) {
    log.push_back({epoch, train, val, seconds});
    if (csv) {
      std::fprintf(csv, "%d,%.9g,%.9g,%.3f\n", epoch, train, val, seconds);
      std::fflush(csv);
    }
    if (config.verbose) std::fprintf(stderr, "epoch %d train %.6g val %.6g (%.1fs)\n", epoch, train, val, seconds);
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

enum class Split { train, val };

/// Generic epoch driver. `batch_loss(model, pairs, split, update, rng, index)`
/// returns the batch-mean loss and applies an optimizer step when `update`.
template <class Model, class BatchFn, class OrderFn>
TrainResult<Model> drive(Model model, const std::vector<Pair>& train_pairs, const std::vector<Pair>& val_pairs,
                         const TrainConfig& config, BatchFn&& batch_loss, OrderFn&& order) {
  Loop loop(config);
  const std::size_t bs = static_cast<std::size_t>(config.batch_size);
  auto evaluate = [&](const std::vector<Pair>& pairs, Split split) {
    Rng rng(derive_seed(config.seed, 0xE7A1));
    double sum = 0.0;
    std::size_t b = 0;
    for (std::size_t i = 0; i < pairs.size(); i += bs, ++b) {
      const std::span<const Pair> batch(pairs.data() + i, std::min(bs, pairs.size() - i));
      sum += batch_loss(model, batch, split, false, rng, b) * static_cast<double>(batch.size());
    }
    return sum / static_cast<double>(pairs.size());
  };

  auto t0 = Clock::now();
  const auto train_probe = cap_pairs(train_pairs, std::max<std::size_t>(val_pairs.size(), 1024));
  TrainResult<Model> result{model, {}, 0, evaluate(val_pairs, Split::val)};
  loop.record(0, evaluate(train_probe, Split::train), result.best_val_loss, seconds_since(t0));

  Rng rng(derive_seed(config.seed, 0x7A1F));
  std::vector<Pair> epoch_pairs = train_pairs;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    t0 = Clock::now();
    order(epoch_pairs, rng);
    const std::size_t n = config.max_pairs_per_epoch ? std::min(config.max_pairs_per_epoch, epoch_pairs.size())
                                                     : epoch_pairs.size();
    double sum = 0.0;
    std::size_t b = 0;
    for (std::size_t i = 0; i < n; i += bs, ++b) {
      const std::span<const Pair> batch(epoch_pairs.data() + i, std::min(bs, n - i));
      sum += batch_loss(model, batch, Split::train, true, rng, b) * static_cast<double>(batch.size());
    }
    const double val = evaluate(val_pairs, Split::val);
    if (val < result.best_val_loss) {
      result.best_val_loss = val;
      result.best_epoch = epoch;
      result.model = model;
    }
    loop.record(epoch, sum / static_cast<double>(n), val, seconds_since(t0));
  }
  result.log = std::move(loop.log);
  return result;
}

void check_nonempty(const std::vector<Pair>& train, const std::vector<Pair>& val, const char* what) {
  if (train.empty()) throw DataError(std::string(what) + ": training split is empty");
  if (val.empty()) throw DataError(std::string(what) + ": validation split is empty");
}

void shuffle_pairs(std::vector<Pair>& p, Rng& rng) { shuffle(p, rng); }

/// Records in random order, each record's pairs contiguous (also shuffled),
/// so a batch touches few distinct maps.
void shuffle_grouped(std::vector<Pair>& p, Rng& rng) {
  std::vector<std::vector<Pair>> groups;
  for (const auto& x : p) {
    if (groups.empty() || groups.back().front().record != x.record) groups.emplace_back();
    groups.back().push_back(x);
  }
  // p may already be grouped out of record order; merge groups of one record.
  std::sort(groups.begin(), groups.end(), [](const auto& a, const auto& b) { return a.front().record < b.front().record; });
  std::vector<std::vector<Pair>> merged;
  for (auto& g : groups) {
    if (!merged.empty() && merged.back().front().record == g.front().record)
      merged.back().insert(merged.back().end(), g.begin(), g.end());
    else
      merged.push_back(std::move(g));
  }
  for (auto& g : merged) {
    std::sort(g.begin(), g.end(), [](const Pair& a, const Pair& b) { return a.target < b.target; });
    shuffle(g, rng);
  }
  shuffle(merged, rng);
  p.clear();
  for (const auto& g : merged) p.insert(p.end(), g.begin(), g.end());
}

struct Sets {
  std::span<const DatasetRecord> train, val;
  std::span<const DatasetRecord> of(Split s) const { return s == Split::train ? train : val; }
};

}  // namespace

TrainResult<CvaeModel> train_cvae(std::span<const DatasetRecord> train, std::span<const DatasetRecord> val,
                                  CvaeConfig model_config, const TrainConfig& config) {
  const auto train_pairs = collect_pairs(train, Which::positives, "train_cvae");
  const auto val_pairs = cap_pairs(collect_pairs(val, Which::positives, "train_cvae"), config.max_val_pairs);
  check_nonempty(train_pairs, val_pairs, "train_cvae");
  if (model_config.joint_gain) {
    for (auto set : {train, val})
      for (const auto& r : set)
        for (std::size_t t = 0; t < r.targets.size(); ++t)
          if (!r.targets[t].gain) throw DataError("train_cvae: joint model needs a gain label on every target");
  }
  const Sets sets{train, val};
  const std::vector<float> conds[2] = {encode_all(train), encode_all(val)};

  CvaeModel model(model_config);
  Rng init_rng(derive_seed(config.seed, 1));
  model.init(init_rng);
  nn::AdamState enc_state{config.adam, 0, {}, {}}, dec_state{config.adam, 0, {}, {}};
  nn::Gradients<float> ge = model.encoder.zero_gradients(), gd = model.decoder.zero_gradients();
  nn::Matrix<float> cond;
  std::vector<PoseTarget> targets;

  auto batch_loss = [&](CvaeModel& m, std::span<const Pair> batch, Split split, bool update, Rng& rng,
                        std::size_t index) {
    const auto recs = sets.of(split);
    const auto& c = conds[split == Split::train ? 0 : 1];
    cond.resize(static_cast<Eigen::Index>(batch.size()), kConditioningSize);
    targets.clear();
    for (std::size_t i = 0; i < batch.size(); ++i) {
      std::copy_n(c.data() + std::size_t{batch[i].record} * kConditioningSize, kConditioningSize,
                  cond.row(static_cast<Eigen::Index>(i)).data());
      targets.push_back(recs[batch[i].record].targets[batch[i].target]);
    }
    if (!update)
      return cvae_loss<float>(m.encoder, m.decoder, m.config, cond, targets, rng, false, nullptr, nullptr, nullptr, index)
          .total;
    ge.zero();
    gd.zero();
    const auto parts = cvae_loss<float>(m.encoder, m.decoder, m.config, cond, targets, rng, true, nullptr, &ge, &gd, index);
    nn::adam_step(m.encoder.params(), ge, enc_state);
    nn::adam_step(m.decoder.params(), gd, dec_state);
    return parts.total;
  };
  return drive(std::move(model), train_pairs, val_pairs, config, batch_loss, shuffle_pairs);
}

TrainResult<GainModel> train_gain(std::span<const DatasetRecord> train, std::span<const DatasetRecord> val,
                                  GainConfig model_config, const TrainConfig& config) {
  const auto train_pairs = collect_pairs(train, Which::labeled, "train_gain");
  const auto val_pairs = cap_pairs(collect_pairs(val, Which::labeled, "train_gain"), config.max_val_pairs);
  check_nonempty(train_pairs, val_pairs, "train_gain");
  const Sets sets{train, val};
  const bool use_cnn = model_config.encoder == GainEncoder::cnn;
  std::vector<float> conds[2];
  if (!use_cnn) {
    conds[0] = encode_all(train);
    conds[1] = encode_all(val);
  }

  GainModel model(model_config);
  Rng init_rng(derive_seed(config.seed, 1));
  model.init(init_rng);
  nn::AdamState head_state{config.adam, 0, {}, {}}, cnn_state{config.adam, 0, {}, {}};
  nn::Gradients<float> gh = model.head.zero_gradients();
  nn::Gradients<float> gc = use_cnn ? model.cnn.zero_gradients() : nn::Gradients<float>{};
  const int F = use_cnn ? model_config.cnn_features : kConditioningSize;
  constexpr int plane = 3 * kLocalMapSize * kLocalMapSize;

  auto batch_loss = [&](GainModel& m, std::span<const Pair> batch, Split split, bool update, Rng& rng,
                        std::size_t index) {
    const auto recs = sets.of(split);
    const int B = static_cast<int>(batch.size());
    nn::Tensor<float> in({B, kPoseFeatures + F});
    auto x = in.matrix();
    nn::ForwardCache<float> cnn_cache, head_cache;
    std::vector<int> slot(batch.size());
    nn::Tensor<float> feats;
    if (use_cnn) {
      std::vector<std::uint32_t> unique;
      for (std::size_t i = 0; i < batch.size(); ++i) {
        if (unique.empty() || unique.back() != batch[i].record) {
          auto it = std::find(unique.begin(), unique.end(), batch[i].record);
          if (it == unique.end()) {
            unique.push_back(batch[i].record);
            it = unique.end() - 1;
          }
          slot[i] = static_cast<int>(it - unique.begin());
        } else {
          slot[i] = static_cast<int>(unique.size()) - 1;
        }
      }
      nn::Tensor<float> planes({static_cast<int>(unique.size()), 3, kLocalMapSize, kLocalMapSize});
      for (std::size_t u = 0; u < unique.size(); ++u) encode_planes_into(recs[unique[u]].local, planes.data.data() + u * plane);
      feats = m.cnn.forward(planes, update, &rng, update ? &cnn_cache : nullptr);
    }
    const auto& c = conds[split == Split::train ? 0 : 1];
    for (int i = 0; i < B; ++i) {
      const auto& p = batch[static_cast<std::size_t>(i)];
      pose_features(recs[p.record].targets[p.target], m.config.extent, x.row(i).data());
      const float* f = use_cnn ? feats.data.data() + static_cast<std::size_t>(slot[static_cast<std::size_t>(i)]) * F
                               : c.data() + std::size_t{p.record} * kConditioningSize;
      std::copy_n(f, F, x.row(i).data() + kPoseFeatures);
    }
    const auto out = m.head.forward(in, update, &rng, update ? &head_cache : nullptr);
    nn::Tensor<float> dout({B, 1});
    double loss = 0.0;
    for (int i = 0; i < B; ++i) {
      const auto& p = batch[static_cast<std::size_t>(i)];
      const double e = static_cast<double>(out.data[static_cast<std::size_t>(i)]) -
                       *recs[p.record].targets[p.target].gain / m.config.gain_scale;
      loss += e * e;
      dout.data[static_cast<std::size_t>(i)] = static_cast<float>(2.0 * e / B);
    }
    loss /= B;
    if (!std::isfinite(loss)) throw NumericalError("non-finite gain loss in batch " + std::to_string(index));
    if (!update) return loss;
    gh.zero();
    const auto din = m.head.backward(head_cache, dout, gh);
    if (use_cnn) {
      gc.zero();
      nn::Tensor<float> dfeat(feats.shape);
      const auto dm = din.matrix();
      for (int i = 0; i < B; ++i) {
        float* dst = dfeat.data.data() + static_cast<std::size_t>(slot[static_cast<std::size_t>(i)]) * F;
        for (int k = 0; k < F; ++k) dst[k] += dm(i, kPoseFeatures + k);
      }
      m.cnn.backward(cnn_cache, dfeat, gc);
      nn::adam_step(m.cnn.params(), gc, cnn_state);
    }
    nn::adam_step(m.head.params(), gh, head_state);
    return loss;
  };
  if (use_cnn) return drive(std::move(model), train_pairs, val_pairs, config, batch_loss, shuffle_grouped);
  return drive(std::move(model), train_pairs, val_pairs, config, batch_loss, shuffle_pairs);
}

TrainResult<ImitationModel> train_imitation(std::span<const DatasetRecord> train,
                                            std::span<const DatasetRecord> val, ImitationConfig model_config,
                                            const TrainConfig& config) {
  const auto train_pairs = collect_pairs(train, Which::positives, "train_imitation");
  const auto val_pairs = cap_pairs(collect_pairs(val, Which::positives, "train_imitation"), config.max_val_pairs);
  check_nonempty(train_pairs, val_pairs, "train_imitation");
  const Sets sets{train, val};
  const std::vector<float> conds[2] = {encode_all(train), encode_all(val)};

  ImitationModel model(model_config);
  Rng init_rng(derive_seed(config.seed, 1));
  model.init(init_rng);
  nn::AdamState state{config.adam, 0, {}, {}};
  nn::Gradients<float> g = model.net.zero_gradients();
  std::vector<PoseTarget> targets;

  auto batch_loss = [&](ImitationModel& m, std::span<const Pair> batch, Split split, bool update, Rng& rng,
                        std::size_t index) {
    const auto recs = sets.of(split);
    const auto& c = conds[split == Split::train ? 0 : 1];
    nn::Tensor<float> in({static_cast<int>(batch.size()), kConditioningSize});
    auto x = in.matrix();
    targets.clear();
    for (std::size_t i = 0; i < batch.size(); ++i) {
      std::copy_n(c.data() + std::size_t{batch[i].record} * kConditioningSize, kConditioningSize,
                  x.row(static_cast<Eigen::Index>(i)).data());
      targets.push_back(recs[batch[i].record].targets[batch[i].target]);
    }
    nn::ForwardCache<float> cache;
    const auto out = m.net.forward(in, update, &rng, update ? &cache : nullptr);
    nn::Matrix<float> dout;
    const double loss = detail::pose_reconstruction(nn::Matrix<float>(out.matrix()), targets, m.config.extent, false,
                                                    1.0, update ? &dout : nullptr, nullptr);
    if (!std::isfinite(loss)) throw NumericalError("non-finite imitation loss in batch " + std::to_string(index));
    if (!update) return loss;
    g.zero();
    m.net.backward(cache, nn::Tensor<float>::from_matrix(dout), g);
    nn::adam_step(m.net.params(), g, state);
    return loss;
  };
  return drive(std::move(model), train_pairs, val_pairs, config, batch_loss, shuffle_pairs);
}

double gain_mean_absolute_error(const GainModel& model, std::span<const DatasetRecord> records) {
  double sum = 0.0;
  std::size_t n = 0;
  std::vector<Pose> poses;
  for (const auto& r : records) {
    poses.clear();
    for (const auto& t : r.targets)
      if (t.gain) poses.push_back(t.pose());
    if (poses.empty()) continue;
    const auto pred = model.estimate(r.local, poses);
    std::size_t k = 0;
    for (const auto& t : r.targets) {
      if (!t.gain) continue;
      sum += std::abs(pred[k++] - *t.gain);
      ++n;
    }
  }
  if (n == 0) throw DataError("gain_mean_absolute_error: no labeled targets");
  return sum / static_cast<double>(n);
}

}  // namespace nbvlearn
