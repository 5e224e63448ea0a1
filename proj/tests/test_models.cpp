#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "model_internal.hpp"
#include "nbvlearn/errors.hpp"
#include "nbvlearn/models.hpp"
#include "test_util.hpp"

using namespace nbvlearn;
using nbvtest::bimodal_records;
using nbvtest::blank_local;

namespace {

LocalMap random_local(Rng& rng) {
  LocalMap m = blank_local(VoxelState::free, rng.uniform(-3.0, 3.0));
  for (auto& c : m.cells.cells()) {
    const double u = rng.uniform();
    c = u < 0.15 ? VoxelState::occupied : (u < 0.4 ? VoxelState::unknown : VoxelState::free);
  }
  return m;
}

}  // namespace

TEST_CASE("encode_map basics") {
  const auto c = encode_map(blank_local(VoxelState::free, 0.4));
  REQUIRE(c.size() == 302u);
  for (int i = 0; i < 100; ++i) {
    CHECK(c[i * 3 + kOneHotFree] == 1.0f);
    CHECK(c[i * 3 + kOneHotOccupied] == 0.0f);
    CHECK(c[i * 3 + kOneHotUnknown] == 0.0f);
  }
  CHECK(c[300] == doctest::Approx(std::sin(0.4)));
  CHECK(c[301] == doctest::Approx(std::cos(0.4)));

  auto m = blank_local(VoxelState::free);
  m.cells.set(7, 13, VoxelState::occupied);  // window (1, 2)
  m.cells.set(8, 12, VoxelState::unknown);
  const auto d = encode_map(m);
  const int w = 2 * kPooledSide + 1;
  CHECK(d[w * 3 + kOneHotOccupied] == 1.0f);
  CHECK(d[w * 3 + kOneHotUnknown] == 0.0f);

  LocalMap wrong;
  wrong.cells = OccupancyGrid(40, 40, 0.2);
  CHECK_THROWS_AS(encode_map(wrong), ShapeError);
}

TEST_CASE("pooled encoding matches an exhaustive window scan") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto m = random_local(rng);
    const auto c = encode_map(m);
    for (int py = 0; py < kPooledSide; ++py)
      for (int px = 0; px < kPooledSide; ++px) {
        bool occ = false, unk = false;
        for (int y = py * 5; y < py * 5 + 5; ++y)
          for (int x = px * 5; x < px * 5 + 5; ++x) {
            occ |= m.cells.at(x, y) == VoxelState::occupied;
            unk |= m.cells.at(x, y) == VoxelState::unknown;
          }
        const int slot = occ ? kOneHotOccupied : (unk ? kOneHotUnknown : kOneHotFree);
        const int base = (py * kPooledSide + px) * 3;
        CHECK(c[base] + c[base + 1] + c[base + 2] == 1.0f);
        CHECK(c[base + slot] == 1.0f);
      }
    CHECK(std::abs(c[300] * c[300] + c[301] * c[301] - 1.0f) < 1e-6);
  }
}

TEST_CASE("cvae loss closed-form cases") {
  CvaeConfig cfg;
  cfg.hidden = 8;
  cfg.layers = 1;
  cfg.dropout = 0.0f;
  CvaeModel m(cfg);  // all weights zero
  const PoseTarget target{3.0, 7.0, 0.1, std::nullopt};
  // Decoder bias reproduces the target whatever z is.
  auto& bias = m.decoder.params().back()[1];
  bias(0, 0) = static_cast<float>(2.0 * target.x / cfg.extent - 1.0);
  bias(0, 1) = static_cast<float>(2.0 * target.y / cfg.extent - 1.0);
  bias(0, 2) = static_cast<float>(std::sin(target.yaw));
  bias(0, 3) = static_cast<float>(std::cos(target.yaw));
  nn::Matrix<float> cond = nn::Matrix<float>::Zero(1, kConditioningSize);
  Rng rng(1);
  const std::vector<PoseTarget> ts{target};
  const auto exact = cvae_loss<float>(m.encoder, m.decoder, cfg, cond, ts, rng, false);
  CHECK(exact.kl == 0.0);
  CHECK(exact.total == doctest::Approx(0.0).epsilon(1e-9));

  // Reconstruction at 2*pi - 0.1 against a target at 0.1.
  bias(0, 2) = static_cast<float>(std::sin(2 * std::numbers::pi - 0.1));
  bias(0, 3) = static_cast<float>(std::cos(2 * std::numbers::pi - 0.1));
  const auto arc = cvae_loss<float>(m.encoder, m.decoder, cfg, cond, ts, rng, false);
  CHECK(arc.reconstruction == doctest::Approx(0.04).epsilon(1e-5));
  CHECK(arc.total == arc.reconstruction + arc.kl);
}

TEST_CASE("cvae loss decomposition and non-negativity") {
  CvaeConfig cfg;
  cfg.hidden = 32;
  cfg.layers = 2;
  CvaeModel m(cfg);
  Rng rng(5);
  m.init(rng);
  nn::Matrix<float> cond(6, kConditioningSize);
  std::vector<PoseTarget> ts;
  for (int i = 0; i < 6; ++i) {
    const auto c = encode_map(random_local(rng));
    std::copy(c.begin(), c.end(), cond.row(i).data());
    ts.push_back({rng.uniform(0, 10), rng.uniform(0, 10), rng.uniform(-3, 3), std::nullopt});
  }
  const auto l = cvae_loss<float>(m.encoder, m.decoder, cfg, cond, ts, rng, true);
  CHECK(l.reconstruction >= 0.0);
  CHECK(l.kl >= 0.0);
  CHECK(l.total == l.reconstruction + l.kl);
  CHECK_THROWS_AS(cvae_loss<float>(m.encoder, m.decoder, cfg, cond.topRows(2), ts, rng, false), ShapeError);
}

TEST_CASE("cvae loss gradient check") {
  CvaeConfig cfg;
  cfg.hidden = 12;
  cfg.layers = 2;
  cfg.dropout = 0.0f;
  SUBCASE("64-bit") { CHECK(nbvtest::check_cvae_gradients<double>(cfg, 7, 1e-5) < 1e-6); }
  SUBCASE("64-bit joint") {
    cfg.joint_gain = true;
    cfg.gain_scale = 490.0;
    CHECK(nbvtest::check_cvae_gradients<double>(cfg, 8, 1e-5) < 1e-6);
  }
  SUBCASE("32-bit") { CHECK(nbvtest::check_cvae_gradients<float>(cfg, 9, 1e-5) < 1e-3); }
}

TEST_CASE("non-finite loss reports the batch") {
  CvaeConfig cfg;
  cfg.hidden = 4;
  cfg.layers = 1;
  CvaeModel m(cfg);
  nn::Matrix<float> cond = nn::Matrix<float>::Zero(1, kConditioningSize);
  Rng rng(1);
  const std::vector<PoseTarget> ts{{std::numeric_limits<double>::quiet_NaN(), 1, 0, std::nullopt}};
  try {
    cvae_loss<float>(m.encoder, m.decoder, cfg, cond, ts, rng, false, nullptr, nullptr, nullptr, 17);
    FAIL("expected a numerical error");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("batch 17") != std::string::npos);
  }
}

TEST_CASE("sample_poses contract") {
  CvaeModel m(CvaeConfig{});
  Rng init(2);
  m.init(init);
  // Large weights push raw outputs far outside the window.
  for (auto& l : m.decoder.params())
    for (auto& p : l) p *= 20.0f;
  Rng rng(3);
  const auto cond = encode_map(random_local(rng));
  Rng a(4), b(4);
  const auto s1 = m.sample_poses(cond, 50, a);
  const auto s2 = m.sample_poses(cond, 50, b);
  CHECK(s1 == s2);
  for (const auto& t : s1) {
    CHECK(t.x >= 0.0);
    CHECK(t.x < m.config.extent);
    CHECK(t.y >= 0.0);
    CHECK(t.y < m.config.extent);
    CHECK(t.yaw > -std::numbers::pi);
    CHECK(t.yaw <= std::numbers::pi);
    CHECK(!t.gain);
  }
  CHECK_THROWS_AS(m.sample_poses(cond, 0, a), ParameterError);
}

TEST_CASE("two-mode conditioning: cvae covers both modes, imitation collapses") {
  const auto train = bimodal_records(64, 1);
  const auto val = bimodal_records(4, 2);
  TrainConfig tc;
  tc.epochs = 60;
  tc.seed = 3;
  auto cvae = train_cvae(train, val, CvaeConfig{}, tc);
  CHECK(cvae.best_val_loss <= cvae.log.front().val_loss);
  const auto cond = encode_map(train.front().local);
  Rng rng(9);
  const auto samples = cvae.model.sample_poses(cond, 1000, rng);
  int near_left = 0, near_right = 0;
  for (const auto& s : samples) {
    if (std::hypot(s.x - 2.0, s.y - 5.0) <= 0.5) ++near_left;
    if (std::hypot(s.x - 8.0, s.y - 5.0) <= 0.5) ++near_right;
  }
  MESSAGE("left " << near_left << " right " << near_right);
  CHECK(near_left >= 200);
  CHECK(near_right >= 200);

  TrainConfig ic = tc;
  ic.epochs = 4;
  auto imit = train_imitation(train, val, ImitationConfig{}, ic);
  const auto p0 = imit.model.predict(cond);
  for (int i = 0; i < 10; ++i) CHECK(imit.model.predict(cond) == p0);
}

TEST_CASE("training determinism and empty splits") {
  const auto train = bimodal_records(4, 1);
  const auto val = bimodal_records(1, 2);
  CvaeConfig cfg;
  cfg.hidden = 16;
  cfg.layers = 2;
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 16;
  tc.seed = 11;
  const auto a = train_cvae(train, val, cfg, tc);
  const auto b = train_cvae(train, val, cfg, tc);
  for (std::size_t l = 0; l < a.model.decoder.params().size(); ++l)
    for (std::size_t k = 0; k < a.model.decoder.params()[l].size(); ++k)
      CHECK(a.model.decoder.params()[l][k] == b.model.decoder.params()[l][k]);
  CHECK(a.log.size() == 3u);
  CHECK_THROWS_AS(train_cvae({}, val, cfg, tc), DataError);
  CHECK_THROWS_AS(train_cvae(train, {}, cfg, tc), DataError);
  CHECK_THROWS_AS(train_gain(train, val, GainConfig{}, tc), DataError);  // no gain labels
}

TEST_CASE("gain model on constant zero targets") {
  auto train = bimodal_records(8, 1);
  auto val = bimodal_records(2, 2);
  for (auto* set : {&train, &val})
    for (auto& r : *set)
      for (auto& t : r.targets) t.gain = 0.0;
  GainConfig cfg;
  cfg.hidden = 32;
  cfg.layers = 2;
  cfg.gain_scale = 490.0;
  TrainConfig tc;
  tc.epochs = 30;
  tc.batch_size = 32;
  tc.seed = 2;
  const auto r = train_gain(train, val, cfg, tc);
  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    const PoseTarget p{rng.uniform(0, 10), rng.uniform(0, 10), rng.uniform(-3, 3), std::nullopt};
    CHECK(r.model.predict_gain(p, val.front().local) <= 1.0);
  }
}

TEST_CASE("gain cnn trains and is deterministic in eval") {
  auto train = bimodal_records(4, 1);
  auto val = bimodal_records(1, 2);
  for (auto* set : {&train, &val})
    for (auto& r : *set)
      for (auto& t : r.targets) t.gain = t.x * 10.0;
  GainConfig cfg;
  cfg.encoder = GainEncoder::cnn;
  cfg.hidden = 16;
  cfg.layers = 1;
  cfg.gain_scale = 100.0;
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 20;
  const auto r = train_gain(train, val, cfg, tc);
  CHECK(r.log.size() == 4u);
  const PoseTarget p{4.0, 5.0, 1.0, std::nullopt};
  const double g = r.model.predict_gain(p, val.front().local);
  CHECK(g >= 0.0);
  CHECK(r.model.predict_gain(p, val.front().local) == g);
}

TEST_CASE("model files keep their kind") {
  const auto dir = std::filesystem::temp_directory_path();
  Rng rng(1);
  CvaeConfig cc;
  cc.hidden = 8;
  cc.layers = 1;
  cc.joint_gain = true;
  cc.gain_scale = 123.0;
  CvaeModel c(cc);
  c.init(rng);
  const auto cp = dir / "nbvlearn_test_cvae.bin";
  save_model(c, cp);
  CHECK(peek_model_kind(cp) == ModelKind::cvae_joint);
  const auto c2 = load_cvae(cp);
  CHECK(c2.config.joint_gain);
  CHECK(c2.config.gain_scale == 123.0);
  const auto cond = encode_map(random_local(rng));
  Rng a(5), b(5);
  CHECK(c.sample_poses(cond, 5, a) == c2.sample_poses(cond, 5, b));
  CHECK_THROWS_AS(load_gain_model(cp), ParameterError);
  CHECK_THROWS_AS(load_imitation(cp), ParameterError);

  GainConfig gc;
  gc.encoder = GainEncoder::cnn;
  gc.hidden = 8;
  gc.layers = 1;
  GainModel g(gc);
  g.init(rng);
  const auto gp = dir / "nbvlearn_test_gain.bin";
  save_model(g, gp);
  const auto g2 = load_gain_model(gp);
  CHECK(g2.kind() == ModelKind::gain_cnn);
  const auto local = random_local(rng);
  const PoseTarget p{5, 5, 0, std::nullopt};
  CHECK(g.predict_gain(p, local) == g2.predict_gain(p, local));
  CHECK_THROWS_AS(load_cvae(gp), ParameterError);

  ImitationConfig ic;
  ic.hidden = 8;
  ic.layers = 1;
  ImitationModel im(ic);
  im.init(rng);
  const auto ip = dir / "nbvlearn_test_imitation.bin";
  save_model(im, ip);
  CHECK(load_imitation(ip).predict(cond) == im.predict(cond));
  for (const auto& p2 : {cp, gp, ip}) std::filesystem::remove(p2);
}

TEST_CASE("imitation prediction stays in the window") {
  ImitationModel m(ImitationConfig{});
  Rng rng(6);
  m.init(rng);
  for (auto& l : m.net.params())
    for (auto& p : l) p *= 30.0f;
  for (int i = 0; i < 20; ++i) {
    const auto t = m.predict(encode_map(random_local(rng)));
    CHECK(t.x >= 0.0);
    CHECK(t.x < m.config.extent);
    CHECK(t.y >= 0.0);
    CHECK(t.y < m.config.extent);
  }
}
