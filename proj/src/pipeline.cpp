#include "reltraj/pipeline.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

namespace reltraj {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// Independent seed streams from the master seed (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

enum SeedStream : std::uint64_t { kModelInit = 1, kPhase1 = 2, kGmm = 3, kPhase2 = 4, kRandomBaseline = 5 };

std::string field_error(const std::string& field, const std::string& what) {
  return "config field " + field + ": " + what;
}

class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw std::invalid_argument(field_error(name_, "must be an object"));
  }

  void get(const char* key, int& dst) { read(key, dst, [](const json& v) { return v.is_number_integer(); }); }
  void get(const char* key, std::uint64_t& dst) {
    read(key, dst, [](const json& v) { return v.is_number_unsigned(); });
  }
  void get(const char* key, double& dst) { read(key, dst, [](const json& v) { return v.is_number(); }); }
  void get(const char* key, bool& dst) { read(key, dst, [](const json& v) { return v.is_boolean(); }); }
  void get(const char* key, std::string& dst) { read(key, dst, [](const json& v) { return v.is_string(); }); }
  void get(const char* key, std::vector<int>& dst) {
    read(key, dst, [](const json& v) {
      if (!v.is_array()) return false;
      for (const auto& e : v) {
        if (!e.is_number_integer()) return false;
      }
      return true;
    });
  }

  std::optional<Section> child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return std::nullopt;
    return Section(*it, path(key));
  }

  // Anything not consumed is a typo or an unsupported option.
  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw std::invalid_argument("unknown config field " + path(item.key()));
    }
  }

 private:
  template <class T, class Check>
  void read(const char* key, T& dst, Check check) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    if (!check(*it)) throw std::invalid_argument(field_error(path(key), "wrong type"));
    dst = it->get<T>();
  }

  std::string path(const std::string& key) const { return name_.empty() ? key : name_ + "." + key; }

  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

void read_regime(Section s, RegimeParams& r) {
  s.get("speed_min", r.speed_min);
  s.get("speed_max", r.speed_max);
  s.get("history_turn_rate_max", r.history_turn_rate_max);
  s.get("turn_rate_min", r.turn_rate_min);
  s.get("turn_rate_max", r.turn_rate_max);
  s.get("maneuver_onset_max", r.maneuver_onset_max);
  s.get("accel_noise", r.accel_noise);
  s.get("yaw_noise", r.yaw_noise);
  s.get("p_straight", r.p_straight);
  s.get("p_left", r.p_left);
  s.get("p_right", r.p_right);
  s.finish();
}

ordered_json regime_json(const RegimeParams& r) {
  return ordered_json{{"speed_min", r.speed_min},
                      {"speed_max", r.speed_max},
                      {"history_turn_rate_max", r.history_turn_rate_max},
                      {"turn_rate_min", r.turn_rate_min},
                      {"turn_rate_max", r.turn_rate_max},
                      {"maneuver_onset_max", r.maneuver_onset_max},
                      {"accel_noise", r.accel_noise},
                      {"yaw_noise", r.yaw_noise},
                      {"p_straight", r.p_straight},
                      {"p_left", r.p_left},
                      {"p_right", r.p_right}};
}

void require(bool ok, const std::string& field, const std::string& what) {
  if (!ok) throw std::invalid_argument(field_error(field, what));
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Notes are free text; keep them inside one CSV cell.
std::string csv_field(std::string text) {
  for (char& c : text) {
    if (c == ',' || c == '\n') c = ';';
  }
  return text;
}

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

Dataset load_run_dataset(const RunConfig& config, const RunPaths& paths) {
  if (!fs::exists(paths.dataset())) {
    throw CommandError("dataset not found: " + paths.dataset().string() + " (run `generate` first)");
  }
  Dataset data = read_dataset(paths.dataset());
  if (data.header.t_h != config.dataset.t_h || data.header.t_f != config.dataset.t_f) {
    throw CommandError("dataset horizons (t_h=" + std::to_string(data.header.t_h) +
                       ", t_f=" + std::to_string(data.header.t_f) + ") do not match the config");
  }
  return data;
}

std::vector<TargetSample> split_targets(const RunConfig& config, const Dataset& data, Split split) {
  return collect_targets(scenes_in_split(data.scenes, split), config.dataset.t_h, config.dataset.t_f,
                         config.encoder.radius);
}

void write_json_file(const fs::path& path, const json& j) { write_text_file(path, j.dump(1) + "\n"); }

void write_checkpoint(const fs::path& path, json j, const std::string& hash) {
  j["config_hash"] = hash;
  write_json_file(path, j);
}

struct Checkpoints {
  std::optional<EncoderModel> encoder;
  std::optional<PredictorModel> predictor;
  std::optional<GmmModel> gmm;
  std::optional<ErrorRegressor> regressor;
};

// Loads the named checkpoints; every missing file is reported at once.
Checkpoints load_checkpoints(const RunPaths& paths, bool reliability) {
  std::vector<std::pair<std::string, fs::path>> wanted{{"encoder", paths.encoder()},
                                                       {"predictor", paths.predictor()}};
  if (reliability) {
    wanted.emplace_back("gmm", paths.gmm());
    wanted.emplace_back("regressor", paths.regressor());
  }
  std::string missing;
  for (const auto& [name, path] : wanted) {
    if (!fs::exists(path)) missing += (missing.empty() ? "" : ", ") + name + " (" + path.string() + ")";
  }
  if (!missing.empty()) throw CommandError("missing checkpoints: " + missing);

  Checkpoints c;
  for (const auto& [name, path] : wanted) {
    try {
      const json j = read_json_file(path);
      if (name == "encoder") c.encoder = encoder_from_json(j);
      if (name == "predictor") c.predictor = predictor_from_json(j);
      if (name == "gmm") c.gmm = gmm_from_json(j);
      if (name == "regressor") c.regressor = regressor_from_json(j);
    } catch (const std::exception& e) {
      throw CommandError("cannot load " + name + " checkpoint " + path.string() + ": " + e.what());
    }
  }
  if (c.encoder->config.latent_dim != c.predictor->config.latent_dim) {
    throw CommandError("encoder and predictor checkpoints disagree on the latent dimension");
  }
  return c;
}

}  // namespace

void RunConfig::sync() {
  dataset.seed = seed;
  encoder.t_h = dataset.t_h;
  predictor.t_f = dataset.t_f;
  predictor.latent_dim = encoder.latent_dim;
  phase1.seed = derive_seed(seed, kPhase1);
  phase2.seed = derive_seed(seed, kPhase2);
}

void RunConfig::validate() const {
  require(profile == "desk" || profile == "full", "profile", "must be \"desk\" or \"full\"");
  try {
    dataset.validate();
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(std::string("config field dataset.") + e.what());
  }
  require(encoder.latent_dim >= 1, "encoder.latent_dim", "must be >= 1");
  require(encoder.hidden_dim >= 1, "encoder.hidden_dim", "must be >= 1");
  require(std::isfinite(encoder.radius) && encoder.radius >= 0.0, "encoder.radius", "must be >= 0");
  require(predictor.modes >= 1, "predictor.modes", "must be >= 1");
  require(predictor.hidden_dim >= 1, "predictor.hidden_dim", "must be >= 1");
  require(phase1.epochs >= 1, "phase1.epochs", "must be >= 1");
  require(phase1.batch_size >= 1, "phase1.batch_size", "must be >= 1");
  require(std::isfinite(phase1.learning_rate) && phase1.learning_rate > 0.0, "phase1.learning_rate",
          "must be > 0");
  require(std::isfinite(phase1.weight_decay) && phase1.weight_decay >= 0.0, "phase1.weight_decay",
          "must be >= 0");
  require(phase2.epochs >= 1, "phase2.epochs", "must be >= 1");
  require(phase2.batch_size >= 1, "phase2.batch_size", "must be >= 1");
  require(std::isfinite(phase2.learning_rate) && phase2.learning_rate > 0.0, "phase2.learning_rate",
          "must be > 0");
  require(std::isfinite(phase2.weight_decay) && phase2.weight_decay >= 0.0, "phase2.weight_decay",
          "must be >= 0");
  require(!gmm.grid.empty(), "gmm.grid", "must not be empty");
  for (int c : gmm.grid) require(c >= 1, "gmm.grid", "component counts must be >= 1");
  require(gmm.em.max_iter >= 1, "gmm.max_iter", "must be >= 1");
  require(std::isfinite(gmm.em.tol) && gmm.em.tol >= 0.0, "gmm.tol", "must be >= 0");
}

RunConfig profile_defaults(const std::string& profile) {
  RunConfig c;
  c.profile = profile;
  if (profile == "desk") {
    c.phase1.epochs = 40;
    c.phase1.learning_rate = 1e-3;
    c.phase1.batch_size = 32;
    c.phase2.epochs = 100;
    c.phase2.learning_rate = 1e-3;
    c.phase2.batch_size = 256;
  } else if (profile == "full") {
    c.phase1.epochs = 64;
    c.phase1.learning_rate = 1e-4;
    c.phase1.batch_size = 48;
    c.phase2.epochs = 100;
    c.phase2.learning_rate = 1e-3;
    c.phase2.batch_size = 1024;
  } else {
    throw std::invalid_argument(field_error("profile", "must be \"desk\" or \"full\""));
  }
  c.sync();
  return c;
}

RunConfig run_config_from_json(const json& j) {
  Section top(j, "");
  std::string profile = "desk";
  top.get("profile", profile);
  RunConfig c = profile_defaults(profile);
  top.get("seed", c.seed);
  std::string out_dir;
  top.get("out_dir", out_dir);
  if (!out_dir.empty()) c.out_dir = out_dir;

  if (auto s = top.child("dataset")) {
    auto& d = c.dataset;
    s->get("t_h", d.t_h);
    s->get("t_f", d.t_f);
    s->get("sample_rate_hz", d.sample_rate_hz);
    s->get("n_train", d.n_train);
    s->get("n_dev", d.n_dev);
    s->get("n_eval", d.n_eval);
    s->get("ood_fraction_dev", d.ood_fraction_dev);
    s->get("ood_fraction_eval", d.ood_fraction_eval);
    s->get("max_agents", d.max_agents);
    s->get("pedestrian_probability", d.pedestrian_probability);
    s->get("spawn_extent", d.spawn_extent);
    if (auto r = s->child("id_regime")) read_regime(*r, d.id_regime);
    if (auto r = s->child("ood_regime")) read_regime(*r, d.ood_regime);
    s->finish();
  }
  if (auto s = top.child("encoder")) {
    s->get("latent_dim", c.encoder.latent_dim);
    s->get("hidden_dim", c.encoder.hidden_dim);
    s->get("radius", c.encoder.radius);
    s->finish();
  }
  if (auto s = top.child("predictor")) {
    s->get("modes", c.predictor.modes);
    s->get("hidden_dim", c.predictor.hidden_dim);
    s->finish();
  }
  if (auto s = top.child("phase1")) {
    s->get("epochs", c.phase1.epochs);
    s->get("learning_rate", c.phase1.learning_rate);
    s->get("batch_size", c.phase1.batch_size);
    s->get("weight_decay", c.phase1.weight_decay);
    s->finish();
  }
  if (auto s = top.child("phase2")) {
    s->get("epochs", c.phase2.epochs);
    s->get("learning_rate", c.phase2.learning_rate);
    s->get("batch_size", c.phase2.batch_size);
    s->get("weight_decay", c.phase2.weight_decay);
    s->finish();
  }
  if (auto s = top.child("gmm")) {
    s->get("grid", c.gmm.grid);
    s->get("max_iter", c.gmm.em.max_iter);
    s->get("tol", c.gmm.em.tol);
    s->get("standardize", c.gmm.em.standardize);
    s->finish();
  }
  top.get("dump_latent", c.dump_latent);
  top.finish();
  c.sync();
  c.validate();
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  json j;
  try {
    j = read_json_file(path);
  } catch (const std::exception& e) {
    throw std::invalid_argument(e.what());
  }
  return run_config_from_json(j);
}

ordered_json run_config_to_json(const RunConfig& c) {
  const auto& d = c.dataset;
  ordered_json j;
  j["profile"] = c.profile;
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir.string();
  j["dataset"] = ordered_json{{"t_h", d.t_h},
                              {"t_f", d.t_f},
                              {"sample_rate_hz", d.sample_rate_hz},
                              {"n_train", d.n_train},
                              {"n_dev", d.n_dev},
                              {"n_eval", d.n_eval},
                              {"ood_fraction_dev", d.ood_fraction_dev},
                              {"ood_fraction_eval", d.ood_fraction_eval},
                              {"max_agents", d.max_agents},
                              {"pedestrian_probability", d.pedestrian_probability},
                              {"spawn_extent", d.spawn_extent},
                              {"id_regime", regime_json(d.id_regime)},
                              {"ood_regime", regime_json(d.ood_regime)}};
  j["encoder"] = ordered_json{{"latent_dim", c.encoder.latent_dim},
                              {"hidden_dim", c.encoder.hidden_dim},
                              {"radius", c.encoder.radius}};
  j["predictor"] = ordered_json{{"modes", c.predictor.modes}, {"hidden_dim", c.predictor.hidden_dim}};
  j["phase1"] = ordered_json{{"epochs", c.phase1.epochs},
                             {"learning_rate", c.phase1.learning_rate},
                             {"batch_size", c.phase1.batch_size},
                             {"weight_decay", c.phase1.weight_decay}};
  j["phase2"] = ordered_json{{"epochs", c.phase2.epochs},
                             {"learning_rate", c.phase2.learning_rate},
                             {"batch_size", c.phase2.batch_size},
                             {"weight_decay", c.phase2.weight_decay}};
  j["gmm"] = ordered_json{{"grid", c.gmm.grid},
                          {"max_iter", c.gmm.em.max_iter},
                          {"tol", c.gmm.em.tol},
                          {"standardize", c.gmm.em.standardize}};
  j["dump_latent"] = c.dump_latent;
  return j;
}

std::string config_hash(const RunConfig& config) {
  ordered_json j = run_config_to_json(config);
  j.erase("out_dir");
  return hex64(fnv1a(j.dump()));
}

RunPaths run_paths(const RunConfig& config) { return RunPaths{config.out_dir / ("run-" + config_hash(config))}; }

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path.string() + ": invalid JSON: " + e.what());
  }
}

void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  out.close();
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void cmd_generate(const RunConfig& config, std::ostream& log) {
  const RunPaths paths = run_paths(config);
  fs::create_directories(paths.root / "data");
  write_text_file(paths.root / "config.json", run_config_to_json(config).dump(2) + "\n");

  const auto scenes = generate_dataset(config.dataset);
  DatasetHeader header;
  header.t_h = config.dataset.t_h;
  header.t_f = config.dataset.t_f;
  header.rate_hz = config.dataset.sample_rate_hz;
  write_dataset(paths.dataset(), header, scenes);

  log << "run root: " << paths.root.string() << "\n";
  for (Split split : {Split::kTrain, Split::kDev, Split::kEval}) {
    const auto part = scenes_in_split(scenes, split);
    std::size_t ood = 0;
    for (const auto& s : part) ood += static_cast<std::size_t>(s.ood_label);
    char line[128];
    std::snprintf(line, sizeof line, "%-5s scenes=%zu ood_fraction=%.3f\n", std::string(split_name(split)).c_str(),
                  part.size(), part.empty() ? 0.0 : static_cast<double>(ood) / static_cast<double>(part.size()));
    log << line;
  }
  log << "wrote " << paths.dataset().string() << "\n";
}

void cmd_train(const RunConfig& config, std::ostream& log) {
  const RunPaths paths = run_paths(config);
  const Dataset data = load_run_dataset(config, paths);
  const auto targets = split_targets(config, data, Split::kTrain);
  if (targets.empty()) throw CommandError("train split has no vehicle targets");

  Rng init(derive_seed(config.seed, kModelInit));
  EncoderModel encoder = EncoderModel::create(config.encoder, init);
  PredictorModel predictor = PredictorModel::create(config.predictor, init);

  log << "phase 1: " << targets.size() << " targets, " << config.phase1.epochs << " epochs\n";
  std::string csv = "epoch,loss,learning_rate\n";
  std::vector<EpochLog> history;
  try {
    history = train_prediction_model(encoder, predictor, targets, config.phase1, [&](const EpochLog& e) {
      char line[96];
      std::snprintf(line, sizeof line, "  epoch %3d  loss %.6f  lr %.3e\n", e.epoch, e.loss, e.learning_rate);
      log << line << std::flush;
    });
  } catch (const NonFiniteLossError& e) {
    throw CommandError(std::string("training aborted: ") + e.what());
  }
  for (const auto& e : history) {
    csv += std::to_string(e.epoch) + "," + fmt_double(e.loss) + "," + fmt_double(e.learning_rate) + "\n";
  }
  const std::string hash = config_hash(config);
  write_text_file(paths.reports() / "train_log.csv", csv);
  write_checkpoint(paths.encoder(), encoder_to_json(encoder), hash);
  write_checkpoint(paths.predictor(), predictor_to_json(predictor), hash);
  log << "wrote " << paths.encoder().string() << ", " << paths.predictor().string() << "\n";
}

void cmd_fit_reliability(const RunConfig& config, std::ostream& log) {
  const RunPaths paths = run_paths(config);
  const Dataset data = load_run_dataset(config, paths);
  const Checkpoints ck = load_checkpoints(paths, false);
  const EncoderModel& encoder = *ck.encoder;
  const PredictorModel& predictor = *ck.predictor;
  const std::uint64_t encoder_before = parameter_hash(encoder);
  const std::uint64_t predictor_before = parameter_hash(predictor);

  const auto train = split_targets(config, data, Split::kTrain);
  const auto dev = split_targets(config, data, Split::kDev);
  std::vector<int> dev_labels;
  for (const auto& s : dev) dev_labels.push_back(s.ood);
  const auto n_dev_ood = std::count(dev_labels.begin(), dev_labels.end(), 1);
  if (n_dev_ood == 0 || n_dev_ood == static_cast<std::ptrdiff_t>(dev_labels.size())) {
    throw CommandError("dev split needs both ID and OOD targets for component selection");
  }

  const Eigen::MatrixXd h_train = encode_targets(encoder, train);
  const Eigen::MatrixXd h_dev = encode_targets(encoder, dev);

  log << "phase 2: GMM component selection over " << config.gmm.grid.size() << " grid values\n";
  const ComponentSelection selection = select_components(h_train, h_dev, dev_labels, config.gmm.grid,
                                                         derive_seed(config.seed, kGmm), config.gmm.em);
  std::string csv = "components,auroc,selected,note\n";
  for (const auto& row : selection.table) {
    csv += std::to_string(row.components) + "," + fmt_double(row.auroc) + "," +
           (row.components == selection.best_components ? "1" : "0") + "," + csv_field(row.note) + "\n";
    char line[96];
    std::snprintf(line, sizeof line, "  C=%-3d dev AUROC %.4f%s\n", row.components, row.auroc,
                  row.components == selection.best_components ? "  <- selected" : "");
    log << line;
  }
  const std::string hash = config_hash(config);
  write_text_file(paths.reports() / "gmm_selection.csv", csv);
  write_checkpoint(paths.gmm(), gmm_to_json(selection.best_model), hash);

  const auto train_pred = predict_from_latent(predictor, h_train);
  Eigen::VectorXd e_train(static_cast<Eigen::Index>(train.size()));
  for (std::size_t i = 0; i < train.size(); ++i) {
    e_train(static_cast<Eigen::Index>(i)) = regression_target(train_pred[i], train[i].gt);
  }
  // Validation on the ID part of dev: the regressor is only ever trained on ID data.
  std::vector<Eigen::Index> dev_id;
  for (std::size_t i = 0; i < dev.size(); ++i) {
    if (dev[i].ood == 0) dev_id.push_back(static_cast<Eigen::Index>(i));
  }
  Eigen::MatrixXd h_val(static_cast<Eigen::Index>(dev_id.size()), h_dev.cols());
  Eigen::VectorXd e_val(static_cast<Eigen::Index>(dev_id.size()));
  const auto dev_pred = predict_from_latent(predictor, h_dev);
  for (std::size_t r = 0; r < dev_id.size(); ++r) {
    const auto i = dev_id[r];
    h_val.row(static_cast<Eigen::Index>(r)) = h_dev.row(i);
    e_val(static_cast<Eigen::Index>(r)) =
        regression_target(dev_pred[static_cast<std::size_t>(i)], dev[static_cast<std::size_t>(i)].gt);
  }

  log << "phase 2: error regressor, " << config.phase2.epochs << " epochs\n";
  std::vector<double> losses;
  const ErrorRegressor regressor = train_error_regressor(h_train, e_train, config.phase2, &h_val, &e_val, &losses);
  std::string reg_csv = "epoch,loss\n";
  for (std::size_t e = 0; e < losses.size(); ++e) reg_csv += std::to_string(e) + "," + fmt_double(losses[e]) + "\n";
  write_text_file(paths.reports() / "regressor_log.csv", reg_csv);
  write_checkpoint(paths.regressor(), regressor_to_json(regressor), hash);
  log << "  train MSE " << regressor.train_loss;
  if (regressor.validation_loss) log << "  dev-ID MSE " << *regressor.validation_loss;
  log << "\n";

  // Freeze contract: neither the in-memory models nor the stored checkpoints moved.
  const Checkpoints reloaded = load_checkpoints(paths, false);
  const std::uint64_t encoder_after = parameter_hash(encoder);
  const std::uint64_t predictor_after = parameter_hash(predictor);
  const bool unchanged = encoder_before == encoder_after && predictor_before == predictor_after &&
                         parameter_hash(*reloaded.encoder) == encoder_before &&
                         parameter_hash(*reloaded.predictor) == predictor_before;
  ordered_json freeze{{"encoder_before", hex64(encoder_before)},
                      {"encoder_after", hex64(encoder_after)},
                      {"predictor_before", hex64(predictor_before)},
                      {"predictor_after", hex64(predictor_after)},
                      {"unchanged", unchanged}};
  write_text_file(paths.reports() / "freeze_check.json", freeze.dump(1) + "\n");
  if (!unchanged) throw CommandError("encoder/predictor parameters changed during phase 2");
  log << "selected C=" << selection.best_components << "; encoder/predictor hashes unchanged\n";
}

EvalReport cmd_evaluate(const RunConfig& config, std::ostream& out, std::ostream& log) {
  const RunPaths paths = run_paths(config);
  const Dataset data = load_run_dataset(config, paths);
  const Checkpoints ck = load_checkpoints(paths, true);

  const auto eval = split_targets(config, data, Split::kEval);
  if (eval.empty()) throw CommandError("eval split has no vehicle targets");
  const Eigen::MatrixXd h = encode_targets(*ck.encoder, eval);
  const auto preds = predict_from_latent(*ck.predictor, h);
  const Eigen::VectorXd alpha = ood_scores(*ck.gmm, h);
  const Eigen::VectorXd e_hat = estimate_uncertainties(*ck.regressor, h);

  std::vector<EvalSample> samples(eval.size());
  std::string predictions, scores = "scene_id,agent_id,ood_label,alpha_hat\n",
                           uncertainty = "scene_id,agent_id,ood_label,e_true,e_hat,nll_proxy\n";
  for (std::size_t i = 0; i < eval.size(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    auto& s = samples[i];
    s.scene_id = eval[i].scene_id;
    s.agent_id = eval[i].agent_id;
    s.ood = eval[i].ood;
    s.pred = preds[i];
    s.gt = eval[i].gt;
    s.alpha_hat = alpha(ii);
    s.e_hat = e_hat(ii);
    s.nll_proxy = nll_proxy_uncertainty(s.pred);

    predictions += prediction_record_to_line({s.scene_id, s.agent_id, s.ood, s.pred, s.gt}) + "\n";
    const std::string key = std::to_string(s.scene_id) + "," + std::to_string(s.agent_id) + "," + std::to_string(s.ood);
    scores += key + "," + fmt_double(s.alpha_hat) + "\n";
    uncertainty += key + "," + fmt_double(regression_target(s.pred, s.gt)) + "," + fmt_double(s.e_hat) + "," +
                   fmt_double(s.nll_proxy) + "\n";
  }

  EvalOptions options;
  options.random_seed = derive_seed(config.seed, kRandomBaseline);
  const EvalReport report = evaluate(samples, options);

  ordered_json j;
  j["config_hash"] = config_hash(config);
  j["targets"] = eval.size();
  j["gmm_components"] = ck.gmm->size();
  const ordered_json body = report_to_json(report);
  for (const auto& [key, value] : body.items()) j[key] = value;
  write_text_file(paths.reports() / "report.json", j.dump(2) + "\n");
  write_text_file(paths.reports() / "retention_id.csv", retention_csv(report, "ID"));
  write_text_file(paths.reports() / "retention_ood.csv", retention_csv(report, "OOD"));
  write_text_file(paths.reports() / "retention_full.csv", retention_csv(report, "Full"));
  write_text_file(paths.reports() / "predictions.jsonl", predictions);
  write_text_file(paths.reports() / "ood_scores.csv", scores);
  write_text_file(paths.reports() / "uncertainty.csv", uncertainty);
  if (config.dump_latent) {
    std::string latent = "scene_id,agent_id";
    for (Eigen::Index c = 0; c < h.cols(); ++c) latent += ",h_" + std::to_string(c + 1);
    latent += "\n";
    for (std::size_t i = 0; i < eval.size(); ++i) {
      latent += std::to_string(eval[i].scene_id) + "," + std::to_string(eval[i].agent_id);
      for (Eigen::Index c = 0; c < h.cols(); ++c) latent += "," + fmt_double(h(static_cast<Eigen::Index>(i), c));
      latent += "\n";
    }
    write_text_file(paths.reports() / "latent_eval.csv", latent);
  }
  out << format_report_table(report);
  log << "wrote reports to " << paths.reports().string() << "\n";
  return report;
}

EvalReport cmd_all(const RunConfig& config, std::ostream& out, std::ostream& log) {
  cmd_generate(config, log);
  cmd_train(config, log);
  cmd_fit_reliability(config, log);
  return cmd_evaluate(config, out, log);
}

}  // namespace reltraj
