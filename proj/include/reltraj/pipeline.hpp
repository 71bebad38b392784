#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <iterator>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "reltraj/dataset.hpp"
#include "reltraj/encoder.hpp"
#include "reltraj/metrics.hpp"
#include "reltraj/ood_gmm.hpp"
#include "reltraj/predictor.hpp"
#include "reltraj/training.hpp"
#include "reltraj/uncertainty.hpp"

namespace reltraj {

struct GmmSettings {
  std::vector<int> grid{std::begin(kDefaultComponentGrid), std::end(kDefaultComponentGrid)};
  EmOptions em;
};

/// Everything a run depends on. All seeds derive from `seed`.
struct RunConfig {
  std::string profile = "desk";
  std::uint64_t seed = 20230417;
  std::filesystem::path out_dir = "runs";
  DatasetConfig dataset;
  EncoderConfig encoder;
  PredictorConfig predictor;
  Phase1Config phase1;
  RegressorTrainConfig phase2;
  GmmSettings gmm;
  bool dump_latent = true;

  // Re-derives component seeds and the horizon fields from the top level.
  void sync();
  void validate() const;
};

/// "desk" (defaults sized for a laptop) or "full" (full-scale training schedule).
RunConfig profile_defaults(const std::string& profile);

/// Parses a config object on top of its profile defaults. Unknown keys and
/// invalid values throw std::invalid_argument naming the field.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::ordered_json run_config_to_json(const RunConfig& config);

/// Hex digest of the resolved config (out_dir excluded).
std::string config_hash(const RunConfig& config);

struct RunPaths {
  std::filesystem::path root;
  std::filesystem::path dataset() const { return root / "data" / "dataset.jsonl"; }
  std::filesystem::path checkpoints() const { return root / "checkpoints"; }
  std::filesystem::path reports() const { return root / "reports"; }
  std::filesystem::path encoder() const { return checkpoints() / "encoder.json"; }
  std::filesystem::path predictor() const { return checkpoints() / "predictor.json"; }
  std::filesystem::path gmm() const { return checkpoints() / "gmm.json"; }
  std::filesystem::path regressor() const { return checkpoints() / "regressor.json"; }
};

RunPaths run_paths(const RunConfig& config);

/// Stops a command: message for the user, non-zero exit.
class CommandError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void cmd_generate(const RunConfig& config, std::ostream& log);
void cmd_train(const RunConfig& config, std::ostream& log);
void cmd_fit_reliability(const RunConfig& config, std::ostream& log);
/// Writes reports and prints the table to `out`. Returns the report.
EvalReport cmd_evaluate(const RunConfig& config, std::ostream& out, std::ostream& log);
EvalReport cmd_all(const RunConfig& config, std::ostream& out, std::ostream& log);

nlohmann::json read_json_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace reltraj
