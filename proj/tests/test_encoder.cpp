#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "reltraj/encoder.hpp"

using namespace reltraj;

namespace {

constexpr double kDt = 0.2;

// Positions on a 1/64 grid so that translating by a dyadic offset and taking
// differences is exact in floating point.
AgentTrack grid_track(Rng& rng, std::int64_t id, int t_h, double x0, double y0, bool ped = false) {
  AgentTrack a;
  a.agent_id = id;
  double x = x0, y = y0, vx_prev = 0, vy_prev = 0;
  for (int t = 0; t < t_h; ++t) {
    const double dx = std::floor(rng.uniform(0, 128)) / 64.0;
    const double dy = std::floor(rng.uniform(-32, 32)) / 64.0;
    x += dx;
    y += dy;
    AgentState s{x, y, dx / kDt, dy / kDt, 0, 0, ped};
    if (!ped) {
      s.ax = (s.vx - vx_prev) / kDt;
      s.ay = (s.vy - vy_prev) / kDt;
    }
    vx_prev = s.vx;
    vy_prev = s.vy;
    a.history.push_back(s);
  }
  a.future.assign(2, Point2{x, y});
  return a;
}

Scene translate(Scene s, double tx, double ty) {
  for (auto& a : s.agents) {
    for (auto& h : a.history) {
      h.x += tx;
      h.y += ty;
    }
    for (auto& f : a.future) {
      f.x += tx;
      f.y += ty;
    }
  }
  return s;
}

EncoderModel small_model(int t_h, double radius, std::uint64_t seed = 1) {
  EncoderConfig cfg;
  cfg.t_h = t_h;
  cfg.latent_dim = 6;
  cfg.hidden_dim = 8;
  cfg.radius = radius;
  Rng rng(seed);
  return EncoderModel::create(cfg, rng);
}

}  // namespace

TEST_CASE("feature dimension follows the history length") {
  CHECK(track_feature_dim(25) == 24 * 2 + 25 * 5);
  CHECK(neighbor_feature_dim(25) == track_feature_dim(25) + 2);
}

TEST_CASE("preprocessing cancels translation") {
  Rng rng(1);
  const AgentTrack a = grid_track(rng, 0, 6, 3.0, -7.5);
  Scene s;
  s.agents = {a};
  const Scene shifted = translate(s, 100.0, 100.0);
  CHECK(preprocess_track(a, 6) == preprocess_track(shifted.agents[0], 6));

  // General offsets and positions: equal up to rounding of the differences.
  AgentTrack b = a;
  for (auto& h : b.history) {
    h.x = h.x * 1.37 + 0.1;
    h.y = h.y * 0.91 - 0.3;
  }
  AgentTrack c = b;
  for (auto& h : c.history) {
    h.x += 123.456;
    h.y -= 98.765;
  }
  const Eigen::VectorXd pb = preprocess_track(b, 6), pc = preprocess_track(c, 6);
  CHECK((pb - pc).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("stationary agent has zero displacements") {
  AgentTrack a;
  a.history.assign(5, AgentState{4.0, 2.0, 0, 0, 0, 0, false});
  const Eigen::VectorXd p = preprocess_track(a, 5);
  CHECK(p.head(8).isZero(0.0));
  CHECK(p.isZero(0.0));
}

TEST_CASE("constant 2 m/s at 5 Hz gives 0.4 m displacements") {
  AgentTrack a;
  for (int t = 0; t < 10; ++t) a.history.push_back({0.4 * t, 0.0, 2.0, 0.0, 0.0, 0.0, false});
  const Eigen::VectorXd p = preprocess_track(a, 10);
  for (int t = 0; t < 9; ++t) {
    CHECK(p(2 * t) == doctest::Approx(0.4).epsilon(1e-12));
    CHECK(p(2 * t + 1) == 0.0);
  }
  // velocity, acceleration and flag blocks of the first state
  CHECK(p(18) == 2.0);
  CHECK(p(19) == 0.0);
  CHECK(p(22) == 0.0);
}

TEST_CASE("pedestrian flag is part of the features") {
  AgentTrack a;
  a.history.assign(3, AgentState{0, 0, 1, 0, 0, 0, true});
  const Eigen::VectorXd p = preprocess_track(a, 3);
  for (int t = 0; t < 3; ++t) CHECK(p(4 + 5 * t + 4) == 1.0);
}

TEST_CASE("short or mismatched histories are rejected") {
  AgentTrack a;
  a.history.assign(3, AgentState{});
  CHECK_THROWS_WITH_AS(preprocess_track(a, 5), doctest::Contains("history too short"), std::invalid_argument);
  CHECK_THROWS_AS(preprocess_track(a, 2), std::invalid_argument);
}

TEST_CASE("single-agent scene uses a zero neighbor summary") {
  Rng rng(2);
  Scene s;
  s.agents = {grid_track(rng, 0, 4, 0, 0)};
  const auto inputs = scene_inputs(s, 4, 50.0);
  REQUIRE(inputs.size() == 1);
  CHECK_FALSE(inputs[0].has_neighbors);
  CHECK(inputs[0].neighbors.isZero(0.0));

  const EncoderModel m = small_model(4, 50.0);
  const auto h = encode_scene(m, s);
  CHECK(h[0].h == m.track_net.forward(m.track_norm.apply(inputs[0].track)));
}

TEST_CASE("neighbor summary is the mean of neighbor features plus relative offset") {
  Rng rng(3);
  Scene s;
  s.agents = {grid_track(rng, 0, 4, 0, 0), grid_track(rng, 1, 4, 5, 5), grid_track(rng, 2, 4, -4, 6)};
  const auto inputs = scene_inputs(s, 4, 50.0);
  const int td = track_feature_dim(4);
  Eigen::VectorXd expect = Eigen::VectorXd::Zero(td + 2);
  for (int j : {1, 2}) {
    expect.head(td) += preprocess_track(s.agents[j], 4);
    expect(td) += s.agents[j].history.back().x - s.agents[0].history.back().x;
    expect(td + 1) += s.agents[j].history.back().y - s.agents[0].history.back().y;
  }
  expect /= 2.0;
  CHECK(inputs[0].has_neighbors);
  CHECK((inputs[0].neighbors - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("agents farther apart than the radius encode as if alone") {
  Rng rng(4);
  const AgentTrack a = grid_track(rng, 0, 4, 0, 0);
  const AgentTrack b = grid_track(rng, 1, 4, 200, 0);
  Scene both, alone_a, alone_b;
  both.agents = {a, b};
  alone_a.agents = {a};
  alone_b.agents = {b};
  const EncoderModel m = small_model(4, 50.0);
  const auto hb = encode_scene(m, both);
  CHECK((hb[0].h - encode_scene(m, alone_a)[0].h).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((hb[1].h - encode_scene(m, alone_b)[0].h).cwiseAbs().maxCoeff() < 1e-12);

  // With r = 0 no agent is anyone's neighbor, however close.
  Scene close;
  close.agents = {a, grid_track(rng, 1, 4, 1, 1)};
  for (const auto& in : scene_inputs(close, 4, 0.0)) CHECK_FALSE(in.has_neighbors);
}

TEST_CASE("translating a whole scene leaves latent features unchanged") {
  Rng rng(5);
  Scene s;
  s.scene_id = 7;
  s.agents = {grid_track(rng, 0, 5, 0, 0), grid_track(rng, 1, 5, 3, 4), grid_track(rng, 2, 5, -10, 2, true)};
  const EncoderModel m = small_model(5, 30.0);
  const auto h0 = encode_scene(m, s);
  const auto h1 = encode_scene(m, translate(s, 256.0, -1024.0));
  for (std::size_t i = 0; i < h0.size(); ++i) {
    CHECK(h0[i].h == h1[i].h);
    CHECK(h0[i].agent_id == h1[i].agent_id);
    CHECK(h1[i].scene_id == 7);
  }
}

TEST_CASE("reordering agents permutes the outputs") {
  Rng rng(6);
  Scene s;
  s.agents = {grid_track(rng, 0, 4, 0, 0), grid_track(rng, 1, 4, 3, 4), grid_track(rng, 2, 4, -6, 2),
              grid_track(rng, 3, 4, 8, -1)};
  Scene r = s;
  std::swap(r.agents[0], r.agents[3]);
  std::swap(r.agents[1], r.agents[2]);
  const EncoderModel m = small_model(4, 50.0);
  const auto hs = encode_scene(m, s);
  const auto hr = encode_scene(m, r);
  for (const auto& x : hs) {
    for (const auto& y : hr) {
      if (x.agent_id == y.agent_id) CHECK((x.h - y.h).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("batched encoding matches per-sample encoding") {
  Rng rng(7);
  Scene s;
  s.agents = {grid_track(rng, 0, 4, 0, 0), grid_track(rng, 1, 4, 3, 4), grid_track(rng, 2, 4, 90, 90)};
  EncoderModel m = small_model(4, 20.0);
  const auto inputs = scene_inputs(s, 4, 20.0);
  m.fit_normalization(inputs);
  const auto hs = encode_scene(m, s);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    CHECK((encode_input(m, inputs[i]) - hs[i].h).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("encoder backward matches finite differences") {
  Rng rng(8);
  Scene s;
  s.agents = {grid_track(rng, 0, 3, 0, 0), grid_track(rng, 1, 3, 2, 1), grid_track(rng, 2, 3, 100, 0)};
  EncoderModel m = small_model(3, 10.0, 9);
  for (auto* net : {&m.track_net, &m.neighbor_net}) {
    for (auto& l : net->layers()) {
      for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias(i) = rng.uniform(-0.3, 0.3);
    }
  }
  const auto inputs = scene_inputs(s, 3, 10.0);
  m.fit_normalization(inputs);
  std::vector<const EncoderInput*> ptrs;
  for (const auto& in : inputs) ptrs.push_back(&in);
  const EncoderBatch batch = make_encoder_batch(m, ptrs);
  Eigen::MatrixXd w(6, 3);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-1, 1);

  EncoderCache cache;
  encode_batch(m, batch, &cache);
  const EncoderGradient g = encoder_backward(m, cache, w);
  const auto loss = [&] { return encode_batch(m, batch).cwiseProduct(w).sum(); };

  int checked = 0;
  for (auto [net, grad] : {std::pair{&m.track_net, &g.track}, std::pair{&m.neighbor_net, &g.neighbor}}) {
    for (std::size_t li = 0; li < net->layers().size(); ++li) {
      auto& l = net->layers()[li];
      for (Eigen::Index i = 0; i < l.weight.size(); ++i) {
        double& p = l.weight.data()[i];
        const double saved = p;
        const double num = oracle::central_difference(
            [&](double v) {
              p = v;
              return loss();
            },
            saved);
        p = saved;
        CHECK(oracle::close_rel(grad->layers[li].weight.data()[i], num, 1e-4));
        ++checked;
      }
    }
  }
  CHECK(checked > 100);
}

TEST_CASE("checkpoint round trip preserves the model") {
  Rng rng(10);
  Scene s;
  s.agents = {grid_track(rng, 0, 4, 0, 0), grid_track(rng, 1, 4, 3, 4)};
  EncoderModel m = small_model(4, 50.0);
  m.fit_normalization(scene_inputs(s, 4, 50.0));
  const EncoderModel back = encoder_from_json(encoder_to_json(m));
  CHECK(parameter_hash(back) == parameter_hash(m));
  const auto a = encode_scene(m, s), b = encode_scene(back, s);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].h == b[i].h);

  auto j = encoder_to_json(m);
  j["kind"] = "predictor";
  CHECK_THROWS_WITH_AS(encoder_from_json(j), doctest::Contains("checkpoint schema error"), std::runtime_error);
}
