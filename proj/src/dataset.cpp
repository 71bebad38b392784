#include "reltraj/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "json.hpp"
#include "reltraj/random.hpp"

namespace reltraj {

using ordered_json = nlohmann::ordered_json;

std::string_view split_name(Split split) {
  switch (split) {
    case Split::kTrain:
      return "train";
    case Split::kDev:
      return "dev";
    case Split::kEval:
      return "eval";
  }
  return "train";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "dev") return Split::kDev;
  if (name == "eval") return Split::kEval;
  throw std::invalid_argument("unknown split '" + std::string(name) + "'");
}

RegimeParams DatasetConfig::default_id_regime() { return RegimeParams{}; }

RegimeParams DatasetConfig::default_ood_regime() {
  RegimeParams p;
  p.history_turn_rate_max = 0.4;
  p.turn_rate_min = 0.3;
  p.turn_rate_max = 0.6;
  p.accel_noise = 1.5;
  p.yaw_noise = 0.06;
  p.p_straight = 0.2;
  p.p_left = 0.4;
  p.p_right = 0.4;
  return p;
}

namespace {

void require(bool ok, const std::string& message) {
  if (!ok) throw std::invalid_argument(message);
}

void validate_regime(const RegimeParams& r, const std::string& name) {
  require(std::isfinite(r.speed_min) && r.speed_min >= 0.0, name + ".speed_min must be >= 0");
  require(std::isfinite(r.speed_max) && r.speed_max >= r.speed_min,
          name + ".speed_max must be >= speed_min");
  require(r.speed_max > 0.0, name + ".speed_max must be > 0");
  require(std::isfinite(r.history_turn_rate_max) && r.history_turn_rate_max >= 0.0,
          name + ".history_turn_rate_max must be >= 0");
  require(std::isfinite(r.turn_rate_min) && r.turn_rate_min >= 0.0,
          name + ".turn_rate_min must be >= 0");
  require(std::isfinite(r.turn_rate_max) && r.turn_rate_max >= r.turn_rate_min,
          name + ".turn_rate_max must be >= turn_rate_min");
  require(r.maneuver_onset_max >= 0, name + ".maneuver_onset_max must be >= 0");
  require(std::isfinite(r.accel_noise) && r.accel_noise >= 0.0, name + ".accel_noise must be >= 0");
  require(std::isfinite(r.yaw_noise) && r.yaw_noise >= 0.0, name + ".yaw_noise must be >= 0");
  for (auto [p, field] : {std::pair{r.p_straight, "p_straight"}, std::pair{r.p_left, "p_left"},
                          std::pair{r.p_right, "p_right"}}) {
    require(std::isfinite(p) && p >= 0.0 && p <= 1.0, name + "." + field + " must be in [0,1]");
  }
  require(std::abs(r.p_straight + r.p_left + r.p_right - 1.0) < 1e-9,
          name + " branch probabilities must sum to 1");
}

}  // namespace

void DatasetConfig::validate() const {
  require(t_h >= 1, "t_h must be >= 1");
  require(t_f >= 1, "t_f must be >= 1");
  require(std::isfinite(sample_rate_hz) && sample_rate_hz > 0.0, "sample_rate_hz must be > 0");
  require(n_train >= 1, "n_train must be >= 1");
  require(n_dev >= 1, "n_dev must be >= 1");
  require(n_eval >= 1, "n_eval must be >= 1");
  require(std::isfinite(ood_fraction_dev) && ood_fraction_dev >= 0.0 && ood_fraction_dev <= 1.0,
          "ood_fraction_dev must be in [0,1]");
  require(std::isfinite(ood_fraction_eval) && ood_fraction_eval >= 0.0 && ood_fraction_eval <= 1.0,
          "ood_fraction_eval must be in [0,1]");
  require(max_agents >= 1, "max_agents must be >= 1");
  require(std::isfinite(pedestrian_probability) && pedestrian_probability >= 0.0 &&
              pedestrian_probability <= 1.0,
          "pedestrian_probability must be in [0,1]");
  require(std::isfinite(spawn_extent) && spawn_extent >= 0.0, "spawn_extent must be >= 0");
  validate_regime(id_regime, "id_regime");
  validate_regime(ood_regime, "ood_regime");
}

namespace {

// Two extra leading samples so velocity and acceleration of the first
// observed step are backward differences like every other step.
constexpr int kLeadIn = 2;

Maneuver draw_maneuver(Rng& rng, const RegimeParams& regime) {
  const double u = rng.uniform();
  if (u < regime.p_straight) return Maneuver::kStraight;
  if (u < regime.p_straight + regime.p_left) return Maneuver::kLeft;
  return Maneuver::kRight;
}

struct SimulatedAgent {
  AgentTrack track;
  Maneuver maneuver = Maneuver::kStraight;
};

SimulatedAgent simulate_agent(Rng& rng, const DatasetConfig& config, const RegimeParams& regime,
                              std::int64_t agent_id) {
  const double dt = config.dt();
  const bool pedestrian = rng.uniform() < config.pedestrian_probability;
  const int total = kLeadIn + config.t_h + config.t_f;

  double x = rng.uniform(-config.spawn_extent, config.spawn_extent);
  double y = rng.uniform(-config.spawn_extent, config.spawn_extent);
  double heading = rng.uniform(0.0, 2.0 * std::numbers::pi);

  double speed, speed_cap, accel_noise, yaw_noise, history_rate = 0.0, maneuver_rate = 0.0;
  int onset = 0;
  Maneuver maneuver = Maneuver::kStraight;
  if (pedestrian) {
    speed = rng.uniform(kPedestrianSpeedMin, kPedestrianSpeedMax);
    speed_cap = kPedestrianSpeedMax;
    accel_noise = 0.3;
    yaw_noise = 0.3;
  } else {
    speed = rng.uniform(regime.speed_min, regime.speed_max);
    speed_cap = regime.speed_max;
    accel_noise = regime.accel_noise;
    yaw_noise = regime.yaw_noise;
    history_rate = rng.uniform(-regime.history_turn_rate_max, regime.history_turn_rate_max);
    maneuver = draw_maneuver(rng, regime);
    const double magnitude = rng.uniform(regime.turn_rate_min, regime.turn_rate_max);
    maneuver_rate = maneuver == Maneuver::kLeft    ? magnitude
                    : maneuver == Maneuver::kRight ? -magnitude
                                                   : 0.0;
    onset = static_cast<int>(rng.index(static_cast<std::size_t>(regime.maneuver_onset_max) + 1));
  }

  std::vector<Point2> positions(static_cast<std::size_t>(total));
  positions[0] = {x, y};
  const int first_future = kLeadIn + config.t_h;
  for (int j = 1; j < total; ++j) {
    double rate = history_rate;
    if (j >= first_future && j - first_future >= onset) rate = maneuver_rate;
    heading += (rate + yaw_noise * rng.normal()) * dt;
    speed = std::clamp(speed + accel_noise * rng.normal() * dt, 0.0, speed_cap);
    x += speed * dt * std::cos(heading);
    y += speed * dt * std::sin(heading);
    positions[static_cast<std::size_t>(j)] = {x, y};
  }

  SimulatedAgent out;
  out.maneuver = maneuver;
  out.track.agent_id = agent_id;
  out.track.history.reserve(static_cast<std::size_t>(config.t_h));
  auto velocity = [&](int j) {
    const auto& a = positions[static_cast<std::size_t>(j - 1)];
    const auto& b = positions[static_cast<std::size_t>(j)];
    return Point2{(b.x - a.x) / dt, (b.y - a.y) / dt};
  };
  for (int j = kLeadIn; j < first_future; ++j) {
    const Point2 v = velocity(j);
    const Point2 v_prev = velocity(j - 1);
    AgentState s;
    s.x = positions[static_cast<std::size_t>(j)].x;
    s.y = positions[static_cast<std::size_t>(j)].y;
    s.vx = v.x;
    s.vy = v.y;
    if (!pedestrian) {
      s.ax = (v.x - v_prev.x) / dt;
      s.ay = (v.y - v_prev.y) / dt;
    }
    s.is_pedestrian = pedestrian;
    out.track.history.push_back(s);
  }
  out.track.future.assign(positions.begin() + first_future, positions.end());
  return out;
}

}  // namespace

GeneratedDataset generate_dataset_traced(const DatasetConfig& config) {
  config.validate();
  Rng rng(config.seed);
  GeneratedDataset out;
  std::int64_t next_scene_id = 0;

  const struct {
    Split split;
    int count;
    double ood_fraction;
  } plan[] = {{Split::kTrain, config.n_train, 0.0},
              {Split::kDev, config.n_dev, config.ood_fraction_dev},
              {Split::kEval, config.n_eval, config.ood_fraction_eval}};

  for (const auto& part : plan) {
    const auto n_ood = static_cast<std::size_t>(std::llround(part.ood_fraction * part.count));
    std::vector<int> labels(static_cast<std::size_t>(part.count), 0);
    std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n_ood), 1);
    rng.shuffle(labels);

    for (int label : labels) {
      Scene scene;
      scene.scene_id = next_scene_id++;
      scene.split = part.split;
      scene.ood_label = label;
      const RegimeParams& regime = label == 1 ? config.ood_regime : config.id_regime;
      const auto n_agents = 1 + rng.index(static_cast<std::size_t>(config.max_agents));
      for (std::size_t a = 0; a < n_agents; ++a) {
        SimulatedAgent agent = simulate_agent(rng, config, regime, static_cast<std::int64_t>(a));
        if (!agent.track.is_pedestrian()) {
          out.maneuvers.push_back({scene.scene_id, agent.track.agent_id, label, agent.maneuver});
        }
        scene.agents.push_back(std::move(agent.track));
      }
      out.scenes.push_back(std::move(scene));
    }
  }
  return out;
}

std::vector<Scene> generate_dataset(const DatasetConfig& config) {
  return generate_dataset_traced(config).scenes;
}

std::vector<Scene> scenes_in_split(const std::vector<Scene>& scenes, Split split) {
  std::vector<Scene> out;
  std::copy_if(scenes.begin(), scenes.end(), std::back_inserter(out),
               [split](const Scene& s) { return s.split == split; });
  return out;
}

// ---------------------------------------------------------------------------
// JSON Lines format

namespace {

ordered_json scene_to_json(const Scene& scene) {
  ordered_json agents = ordered_json::array();
  for (const auto& agent : scene.agents) {
    ordered_json hist = ordered_json::array();
    for (const auto& s : agent.history) hist.push_back({s.x, s.y, s.vx, s.vy, s.ax, s.ay});
    ordered_json fut = ordered_json::array();
    for (const auto& p : agent.future) fut.push_back({p.x, p.y});
    ordered_json a;
    a["id"] = agent.agent_id;
    a["ped"] = agent.is_pedestrian();
    a["hist"] = std::move(hist);
    a["fut"] = std::move(fut);
    agents.push_back(std::move(a));
  }
  ordered_json j;
  j["scene_id"] = scene.scene_id;
  j["split"] = split_name(scene.split);
  j["ood"] = scene.ood_label;
  j["agents"] = std::move(agents);
  return j;
}

double finite_number(const ordered_json& v) {
  if (!v.is_number()) throw std::invalid_argument("expected a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw std::invalid_argument("non-finite number");
  return d;
}

Scene scene_from_json(const ordered_json& j, const DatasetHeader& header) {
  Scene scene;
  scene.scene_id = j.at("scene_id").get<std::int64_t>();
  scene.split = parse_split(j.at("split").get<std::string>());
  scene.ood_label = j.at("ood").get<int>();
  if (scene.ood_label != 0 && scene.ood_label != 1) throw std::invalid_argument("ood must be 0 or 1");
  if (scene.split == Split::kTrain && scene.ood_label != 0) {
    throw std::invalid_argument("train split must not contain OOD scenes");
  }
  const auto& agents = j.at("agents");
  if (!agents.is_array() || agents.empty()) throw std::invalid_argument("scene needs at least one agent");
  std::set<std::int64_t> ids;
  for (const auto& a : agents) {
    AgentTrack track;
    track.agent_id = a.at("id").get<std::int64_t>();
    if (!ids.insert(track.agent_id).second) {
      throw std::invalid_argument("duplicate agent id " + std::to_string(track.agent_id));
    }
    const bool ped = a.at("ped").get<bool>();
    const auto& hist = a.at("hist");
    const auto& fut = a.at("fut");
    if (!hist.is_array() || static_cast<int>(hist.size()) != header.t_h) {
      throw std::invalid_argument("history length differs from t_h");
    }
    if (!fut.is_array() || static_cast<int>(fut.size()) != header.t_f) {
      throw std::invalid_argument("future length differs from t_f");
    }
    for (const auto& h : hist) {
      if (!h.is_array() || h.size() != 6) throw std::invalid_argument("history state needs 6 values");
      AgentState s{finite_number(h[0]), finite_number(h[1]), finite_number(h[2]),
                   finite_number(h[3]), finite_number(h[4]), finite_number(h[5]), ped};
      if (ped && (s.ax != 0.0 || s.ay != 0.0)) {
        throw std::invalid_argument("pedestrian with non-zero acceleration");
      }
      track.history.push_back(s);
    }
    for (const auto& f : fut) {
      if (!f.is_array() || f.size() != 2) throw std::invalid_argument("future point needs 2 values");
      track.future.push_back({finite_number(f[0]), finite_number(f[1])});
    }
    scene.agents.push_back(std::move(track));
  }
  return scene;
}

}  // namespace

void write_dataset(const std::filesystem::path& path, const DatasetHeader& header,
                   const std::vector<Scene>& scenes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  ordered_json meta;
  meta["schema"] = header.schema;
  meta["t_h"] = header.t_h;
  meta["t_f"] = header.t_f;
  meta["rate_hz"] = header.rate_hz;
  out << meta.dump() << '\n';
  for (const auto& scene : scenes) out << scene_to_json(scene).dump() << '\n';
  if (!out) throw std::runtime_error("write to '" + path.string() + "' failed");
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "' for reading");
  const std::string source = path.string();

  Dataset dataset;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(source, line_no, std::string("malformed JSON: ") + e.what());
    }
    try {
      if (!have_header) {
        const int schema = j.at("schema").get<int>();
        if (schema != kDatasetSchemaVersion) {
          throw ParseError(source, line_no,
                           "unsupported schema version " + std::to_string(schema) + " (expected " +
                               std::to_string(kDatasetSchemaVersion) + ")");
        }
        dataset.header.schema = schema;
        dataset.header.t_h = j.at("t_h").get<int>();
        dataset.header.t_f = j.at("t_f").get<int>();
        dataset.header.rate_hz = j.at("rate_hz").get<double>();
        if (dataset.header.t_h < 1 || dataset.header.t_f < 1 || !(dataset.header.rate_hz > 0.0)) {
          throw std::invalid_argument("invalid metadata values");
        }
        have_header = true;
        continue;
      }
      dataset.scenes.push_back(scene_from_json(j, dataset.header));
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception& e) {
      throw ParseError(source, line_no, e.what());
    }
  }
  if (!have_header) throw ParseError(source, line_no + 1, "missing metadata line");
  return dataset;
}

}  // namespace reltraj
