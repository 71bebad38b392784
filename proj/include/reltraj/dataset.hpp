#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace reltraj {

/// One observed time step of an agent: position, velocity, acceleration and
/// the agent-type flag. Pedestrians carry zero acceleration.
struct AgentState {
  double x = 0.0;
  double y = 0.0;
  double vx = 0.0;
  double vy = 0.0;
  double ax = 0.0;
  double ay = 0.0;
  bool is_pedestrian = false;

  bool operator==(const AgentState&) const = default;
};

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  bool operator==(const Point2&) const = default;
};

struct AgentTrack {
  std::int64_t agent_id = 0;
  std::vector<AgentState> history;  // oldest first, length t_h
  std::vector<Point2> future;       // length t_f

  bool is_pedestrian() const { return !history.empty() && history.back().is_pedestrian; }

  bool operator==(const AgentTrack&) const = default;
};

enum class Split { kTrain, kDev, kEval };

std::string_view split_name(Split split);
Split parse_split(std::string_view name);

struct Scene {
  std::int64_t scene_id = 0;
  std::vector<AgentTrack> agents;
  int ood_label = 0;  // 0 = in-distribution, 1 = shifted
  Split split = Split::kTrain;

  bool operator==(const Scene&) const = default;
};

/// Motion statistics of one regime (in-distribution or shifted).
struct RegimeParams {
  double speed_min = 3.0;            // m/s
  double speed_max = 15.0;           // m/s, also the hard speed clamp
  double history_turn_rate_max = 0.05;  // |yaw rate| during the observed window, rad/s
  double turn_rate_min = 0.15;       // maneuver yaw-rate magnitude range, rad/s
  double turn_rate_max = 0.35;
  int maneuver_onset_max = 5;        // maneuver starts within this many future steps
  double accel_noise = 0.2;          // process noise on speed, m/s^2
  double yaw_noise = 0.01;           // process noise on yaw rate, rad/s
  double p_straight = 0.5;
  double p_left = 0.25;
  double p_right = 0.25;

  bool operator==(const RegimeParams&) const = default;
};

struct DatasetConfig {
  int t_h = 25;
  int t_f = 25;
  double sample_rate_hz = 5.0;
  int n_train = 2000;
  int n_dev = 500;
  int n_eval = 500;
  double ood_fraction_dev = 0.4;
  double ood_fraction_eval = 0.4;
  std::uint64_t seed = 20230417;
  int max_agents = 4;
  double pedestrian_probability = 0.1;
  double spawn_extent = 40.0;  // agents start in [-extent, extent]^2
  RegimeParams id_regime = default_id_regime();
  RegimeParams ood_regime = default_ood_regime();

  static RegimeParams default_id_regime();
  static RegimeParams default_ood_regime();

  double dt() const { return 1.0 / sample_rate_hz; }

  // Throws std::invalid_argument naming the offending field.
  void validate() const;
};

// Pedestrian motion is shared by both regimes.
inline constexpr double kPedestrianSpeedMin = 0.5;
inline constexpr double kPedestrianSpeedMax = 2.0;

enum class Maneuver { kStraight, kLeft, kRight };

/// Which maneuver branch each generated vehicle followed; not serialized.
struct ManeuverRecord {
  std::int64_t scene_id = 0;
  std::int64_t agent_id = 0;
  int ood_label = 0;
  Maneuver maneuver = Maneuver::kStraight;
};

struct GeneratedDataset {
  std::vector<Scene> scenes;
  std::vector<ManeuverRecord> maneuvers;
};

std::vector<Scene> generate_dataset(const DatasetConfig& config);
GeneratedDataset generate_dataset_traced(const DatasetConfig& config);

struct DatasetHeader {
  int schema = 1;
  int t_h = 25;
  int t_f = 25;
  double rate_hz = 5.0;

  bool operator==(const DatasetHeader&) const = default;
};

inline constexpr int kDatasetSchemaVersion = 1;

struct Dataset {
  DatasetHeader header;
  std::vector<Scene> scenes;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : std::runtime_error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

void write_dataset(const std::filesystem::path& path, const DatasetHeader& header,
                   const std::vector<Scene>& scenes);
Dataset read_dataset(const std::filesystem::path& path);

std::vector<Scene> scenes_in_split(const std::vector<Scene>& scenes, Split split);

}  // namespace reltraj
