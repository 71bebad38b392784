#include "reltraj/ood_gmm.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "reltraj/metrics.hpp"
#include "reltraj/random.hpp"

namespace reltraj {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kRidge = 1e-6;

double squared_distance(const Eigen::MatrixXd& a, Eigen::Index i, const Eigen::MatrixXd& b,
                        Eigen::Index j) {
  return (a.row(i) - b.row(j)).squaredNorm();
}

int nearest_center(const Eigen::MatrixXd& x, Eigen::Index i, const Eigen::MatrixXd& centers,
                   double* dist = nullptr) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < centers.rows(); ++c) {
    const double d = squared_distance(x, i, centers, c);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  if (dist) *dist = best_d;
  return best;
}

bool all_rows_identical(const Eigen::MatrixXd& x) {
  for (Eigen::Index i = 1; i < x.rows(); ++i) {
    if (x.row(i) != x.row(0)) return false;
  }
  return true;
}

// Per-component Cholesky factors for log-density evaluation.
struct ComponentDensity {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double log_norm = 0.0;  // log weight - 0.5 (H log 2pi + log det)
};

std::vector<ComponentDensity> factorize(const GmmModel& model) {
  std::vector<ComponentDensity> out;
  out.reserve(model.components.size());
  for (std::size_t c = 0; c < model.components.size(); ++c) {
    const auto& comp = model.components[c];
    ComponentDensity d;
    d.llt.compute(comp.covariance);
    if (d.llt.info() != Eigen::Success) {
      throw std::runtime_error("GMM component " + std::to_string(c) +
                               " covariance is not positive definite");
    }
    const Eigen::MatrixXd l = d.llt.matrixL();
    const double log_det = 2.0 * l.diagonal().array().log().sum();
    const double h = static_cast<double>(comp.mean.size());
    d.log_norm = std::log(comp.weight) - 0.5 * (h * kLog2Pi + log_det);
    out.push_back(std::move(d));
  }
  return out;
}

// n x C matrix of log(phi_c N(x_i | mu_c, Sigma_c)) on already-standardized rows.
Eigen::MatrixXd joint_log_density(const GmmModel& model, const Eigen::MatrixXd& x) {
  const auto dens = factorize(model);
  Eigen::MatrixXd out(x.rows(), model.size());
  for (int c = 0; c < model.size(); ++c) {
    const auto& comp = model.components[static_cast<std::size_t>(c)];
    Eigen::MatrixXd centered = (x.rowwise() - comp.mean.transpose()).transpose();
    dens[static_cast<std::size_t>(c)].llt.matrixL().solveInPlace(centered);
    out.col(c) = (dens[static_cast<std::size_t>(c)].log_norm -
                  0.5 * centered.colwise().squaredNorm().array()).matrix().transpose();
  }
  return out;
}

Eigen::VectorXd row_log_sum_exp(const Eigen::MatrixXd& a) {
  Eigen::VectorXd out(a.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double m = a.row(i).maxCoeff();
    out(i) = std::isfinite(m) ? m + std::log((a.row(i).array() - m).exp().sum()) : m;
  }
  return out;
}

Eigen::MatrixXd standardized(const GmmModel& model, const Eigen::MatrixXd& x) {
  if (x.cols() != model.dim()) {
    throw std::invalid_argument("feature dim " + std::to_string(x.cols()) + " != GMM dim " +
                                std::to_string(model.dim()));
  }
  if (!model.shift) return x;
  return (x.rowwise() - model.shift->transpose()).array().rowwise() / model.scale->transpose().array();
}

double log_jacobian(const GmmModel& model) {
  return model.scale ? model.scale->array().log().sum() : 0.0;
}

Eigen::MatrixXd sample_covariance(const Eigen::MatrixXd& x, const std::vector<Eigen::Index>& rows,
                                  const Eigen::VectorXd& mean) {
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(x.cols(), x.cols());
  for (auto i : rows) {
    const Eigen::VectorXd d = x.row(i).transpose() - mean;
    cov.noalias() += d * d.transpose();
  }
  return cov / static_cast<double>(rows.size());
}

void add_ridge(Eigen::MatrixXd& cov) {
  const double lambda = covariance_ridge(cov);
  cov.diagonal().array() += lambda;
  cov = 0.5 * (cov + cov.transpose());
}

GmmModel single_point_model(const Eigen::MatrixXd& x) {
  GmmModel m;
  GaussianComponent c;
  c.mean = x.row(0).transpose();
  c.covariance = Eigen::MatrixXd::Identity(x.cols(), x.cols()) * kRidge;
  m.components.push_back(std::move(c));
  return m;
}

}  // namespace

double covariance_ridge(const Eigen::MatrixXd& covariance) {
  const double per_dim = covariance.trace() / static_cast<double>(covariance.rows());
  return kRidge * std::max(1.0, per_dim);
}

void GmmModel::validate() const {
  if (components.empty()) throw std::invalid_argument("GMM has no components");
  double total = 0.0;
  for (const auto& c : components) {
    if (!(c.weight >= 0.0)) throw std::invalid_argument("GMM weight must be >= 0");
    total += c.weight;
    if (c.mean.size() != dim() || c.covariance.rows() != dim() || c.covariance.cols() != dim()) {
      throw std::invalid_argument("GMM component dimensions disagree");
    }
    if (!c.covariance.isApprox(c.covariance.transpose(), 1e-12)) {
      throw std::invalid_argument("GMM covariance is not symmetric");
    }
  }
  if (std::abs(total - 1.0) > 1e-12) throw std::invalid_argument("GMM weights do not sum to 1");
  factorize(*this);
}

KMeansResult kmeans(const Eigen::MatrixXd& x, int clusters, std::uint64_t seed) {
  const auto n = x.rows();
  if (clusters < 1) throw std::invalid_argument("kmeans: need at least one cluster");
  if (n < clusters) {
    throw std::invalid_argument("kmeans: " + std::to_string(n) + " samples for " +
                                std::to_string(clusters) + " clusters");
  }
  Rng rng(seed);
  KMeansResult res;
  res.centers.resize(clusters, x.cols());

  // k-means++ seeding
  const auto first = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(n)));
  res.centers.row(0) = x.row(first);
  Eigen::VectorXd d2(n);
  for (Eigen::Index i = 0; i < n; ++i) d2(i) = squared_distance(x, i, res.centers, 0);
  for (int c = 1; c < clusters; ++c) {
    const double total = d2.sum();
    if (!(total > 0.0)) {
      throw std::invalid_argument("kmeans: fewer than " + std::to_string(clusters) +
                                  " distinct feature vectors");
    }
    const double target = rng.uniform() * total;
    double cum = 0.0;
    Eigen::Index pick = -1;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (d2(i) <= 0.0) continue;
      pick = i;
      cum += d2(i);
      if (cum > target) break;
    }
    res.centers.row(c) = x.row(pick);
    for (Eigen::Index i = 0; i < n; ++i) {
      d2(i) = std::min(d2(i), squared_distance(x, i, res.centers, c));
    }
  }

  res.assignment.assign(static_cast<std::size_t>(n), 0);
  for (int iter = 0; iter < kKMeansMaxIter; ++iter) {
    res.iterations = iter + 1;
    for (Eigen::Index i = 0; i < n; ++i) {
      res.assignment[static_cast<std::size_t>(i)] = nearest_center(x, i, res.centers);
    }
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(clusters, x.cols());
    std::vector<int> counts(static_cast<std::size_t>(clusters), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int c = res.assignment[static_cast<std::size_t>(i)];
      sums.row(c) += x.row(i);
      ++counts[static_cast<std::size_t>(c)];
    }
    Eigen::MatrixXd next = res.centers;
    for (int c = 0; c < clusters; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        next.row(c) = sums.row(c) / counts[static_cast<std::size_t>(c)];
      }
    }
    for (int c = 0; c < clusters; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) continue;
      // Empty cluster: move it to the point farthest from every other center.
      Eigen::Index far = 0;
      double far_d = -1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        double nearest = std::numeric_limits<double>::infinity();
        for (int o = 0; o < clusters; ++o) {
          if (o != c) nearest = std::min(nearest, squared_distance(x, i, next, o));
        }
        if (nearest > far_d) {
          far_d = nearest;
          far = i;
        }
      }
      next.row(c) = x.row(far);
    }
    const double shift = (next - res.centers).rowwise().norm().maxCoeff();
    res.centers = std::move(next);
    if (shift < kKMeansTol) break;
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    res.assignment[static_cast<std::size_t>(i)] = nearest_center(x, i, res.centers);
  }
  return res;
}

GmmModel kmeans_init(const Eigen::MatrixXd& x, int clusters, std::uint64_t seed) {
  const KMeansResult km = kmeans(x, clusters, seed);
  const auto n = x.rows();
  const Eigen::VectorXd global_mean = x.colwise().mean().transpose();
  std::vector<Eigen::Index> all(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;
  const Eigen::MatrixXd global_cov = sample_covariance(x, all, global_mean);

  std::vector<std::vector<Eigen::Index>> members(static_cast<std::size_t>(clusters));
  for (Eigen::Index i = 0; i < n; ++i) {
    members[static_cast<std::size_t>(km.assignment[static_cast<std::size_t>(i)])].push_back(i);
  }
  GmmModel model;
  double total = 0.0;
  for (int c = 0; c < clusters; ++c) {
    const auto& rows = members[static_cast<std::size_t>(c)];
    GaussianComponent comp;
    comp.mean = km.centers.row(c).transpose();
    comp.weight = std::max<double>(static_cast<double>(rows.size()), 1e-3) / static_cast<double>(n);
    // A singleton cluster has no spread of its own; borrow the global one.
    comp.covariance = rows.size() >= 2 ? sample_covariance(x, rows, comp.mean) : global_cov;
    add_ridge(comp.covariance);
    total += comp.weight;
    model.components.push_back(std::move(comp));
  }
  for (auto& comp : model.components) comp.weight /= total;
  return model;
}

GmmModel em_fit(const Eigen::MatrixXd& raw, int clusters, std::uint64_t seed,
                const EmOptions& options) {
  const auto n = raw.rows();
  const auto h = raw.cols();
  if (h < 1) throw std::invalid_argument("em_fit: feature dimension must be >= 1");
  if (clusters < 1) throw std::invalid_argument("em_fit: need at least one component");
  if (n < clusters + 1) {
    throw std::invalid_argument("em_fit: need at least C + 1 = " + std::to_string(clusters + 1) +
                                " samples, got " + std::to_string(n));
  }
  if (!raw.allFinite()) throw std::invalid_argument("em_fit: non-finite features");

  std::optional<Eigen::VectorXd> shift, scale;
  Eigen::MatrixXd x = raw;
  if (options.standardize) {
    shift = raw.colwise().mean().transpose();
    Eigen::VectorXd s(h);
    for (Eigen::Index d = 0; d < h; ++d) {
      const double sd = std::sqrt((raw.col(d).array() - (*shift)(d)).square().mean());
      s(d) = sd > 1e-12 ? sd : 1.0;
    }
    scale = s;
    x = (raw.rowwise() - shift->transpose()).array().rowwise() / s.transpose().array();
  }

  if (all_rows_identical(x)) {
    GmmModel m = single_point_model(x);
    m.shift = shift;
    m.scale = scale;
    m.log_likelihood_trace.push_back(row_log_sum_exp(joint_log_density(m, x)).mean());
    return m;
  }

  GmmModel model = kmeans_init(x, clusters, seed);
  const double tiny = 10.0 * std::numeric_limits<double>::epsilon();
  double previous = -std::numeric_limits<double>::infinity();
  bool converged = false;
  for (int iter = 0; iter < options.max_iter; ++iter) {
    // E-step
    const Eigen::MatrixXd joint = joint_log_density(model, x);
    const Eigen::VectorXd log_px = row_log_sum_exp(joint);
    const double mean_ll = log_px.mean();
    model.log_likelihood_trace.push_back(mean_ll);
    if (iter > 0 && mean_ll - previous < options.tol) {
      converged = true;
      break;
    }
    previous = mean_ll;
    const Eigen::MatrixXd resp = (joint.colwise() - log_px).array().exp();

    // M-step
    const Eigen::RowVectorXd nk = resp.colwise().sum().array() + tiny;
    for (int c = 0; c < clusters; ++c) {
      auto& comp = model.components[static_cast<std::size_t>(c)];
      const double mass = nk(c);
      comp.weight = mass / static_cast<double>(n);
      comp.mean = (resp.col(c).transpose() * x).transpose() / mass;
      const Eigen::MatrixXd centered = x.rowwise() - comp.mean.transpose();
      comp.covariance = (centered.array().colwise() * resp.col(c).array()).matrix().transpose() *
                        centered / mass;
      add_ridge(comp.covariance);
    }
    double total = 0.0;
    for (const auto& comp : model.components) total += comp.weight;
    for (auto& comp : model.components) comp.weight /= total;
  }
  if (!converged) {
    model.log_likelihood_trace.push_back(row_log_sum_exp(joint_log_density(model, x)).mean());
  }
  model.shift = shift;
  model.scale = scale;
  return model;
}

Eigen::MatrixXd responsibilities(const GmmModel& model, const Eigen::MatrixXd& features) {
  const Eigen::MatrixXd joint = joint_log_density(model, standardized(model, features));
  const Eigen::VectorXd log_px = row_log_sum_exp(joint);
  return (joint.colwise() - log_px).array().exp();
}

double mean_log_likelihood(const GmmModel& model, const Eigen::MatrixXd& features) {
  return -ood_scores(model, features).mean();
}

Eigen::VectorXd ood_scores(const GmmModel& model, const Eigen::MatrixXd& features) {
  const Eigen::MatrixXd joint = joint_log_density(model, standardized(model, features));
  return -(row_log_sum_exp(joint).array() - log_jacobian(model)).matrix();
}

double ood_score(const GmmModel& model, const Eigen::VectorXd& h) {
  return ood_scores(model, h.transpose())(0);
}

ComponentSelection select_components(const Eigen::MatrixXd& train, const Eigen::MatrixXd& dev,
                                     std::span<const int> dev_labels, std::span<const int> grid,
                                     std::uint64_t seed, const EmOptions& options) {
  if (static_cast<Eigen::Index>(dev_labels.size()) != dev.rows()) {
    throw std::invalid_argument("select_components: one label per dev sample required");
  }
  bool has_id = false, has_ood = false;
  for (int l : dev_labels) (l == 1 ? has_ood : has_id) = true;
  if (!has_id || !has_ood) {
    throw std::invalid_argument("select_components: dev set needs both ID and OOD samples");
  }
  if (grid.empty()) throw std::invalid_argument("select_components: empty grid");

  ComponentSelection out;
  double best_auroc = -1.0;
  for (int c : grid) {
    SelectionRow row;
    row.components = c;
    GmmModel model;
    try {
      model = em_fit(train, c, seed, options);
    } catch (const std::exception& e) {
      row.auroc = std::numeric_limits<double>::quiet_NaN();
      row.note = std::string("fit failed: ") + e.what();
      out.table.push_back(row);
      continue;
    }
    const Eigen::VectorXd scores = ood_scores(model, dev);
    row.auroc = auroc(std::span<const double>(scores.data(), static_cast<std::size_t>(scores.size())),
                      dev_labels);
    if ((scores.array() == scores(0)).all()) row.note = "warning: all dev scores tied";
    if (row.auroc > best_auroc || (row.auroc == best_auroc && c < out.best_components)) {
      best_auroc = row.auroc;
      out.best_components = c;
      out.best_model = std::move(model);
    }
    out.table.push_back(row);
  }
  if (out.best_components == 0) {
    throw std::runtime_error("select_components: no grid value could be fitted");
  }
  return out;
}

nlohmann::json gmm_to_json(const GmmModel& model) {
  nlohmann::json weights = nlohmann::json::array();
  nlohmann::json means = nlohmann::json::array();
  nlohmann::json covs = nlohmann::json::array();
  for (const auto& c : model.components) {
    weights.push_back(c.weight);
    means.push_back(std::vector<double>(c.mean.data(), c.mean.data() + c.mean.size()));
    std::vector<double> flat;
    for (Eigen::Index r = 0; r < c.covariance.rows(); ++r)
      for (Eigen::Index k = 0; k < c.covariance.cols(); ++k) flat.push_back(c.covariance(r, k));
    covs.push_back(std::move(flat));
  }
  nlohmann::json j{{"kind", "gmm"},
                   {"schema", 1},
                   {"components", model.size()},
                   {"dim", model.dim()},
                   {"weights", std::move(weights)},
                   {"means", std::move(means)},
                   {"covariances", std::move(covs)},
                   {"trace", model.log_likelihood_trace}};
  if (model.shift) {
    j["shift"] = std::vector<double>(model.shift->data(), model.shift->data() + model.shift->size());
    j["scale"] = std::vector<double>(model.scale->data(), model.scale->data() + model.scale->size());
  }
  return j;
}

GmmModel gmm_from_json(const nlohmann::json& j) {
  try {
    if (j.at("kind").get<std::string>() != "gmm" || j.at("schema").get<int>() != 1) {
      throw std::runtime_error("checkpoint schema error: not a GMM checkpoint (schema 1)");
    }
    const int c = j.at("components").get<int>();
    const int h = j.at("dim").get<int>();
    const auto weights = j.at("weights").get<std::vector<double>>();
    const auto means = j.at("means").get<std::vector<std::vector<double>>>();
    const auto covs = j.at("covariances").get<std::vector<std::vector<double>>>();
    if (c < 1 || h < 1 || weights.size() != static_cast<std::size_t>(c) ||
        means.size() != weights.size() || covs.size() != weights.size()) {
      throw std::runtime_error("checkpoint schema error: GMM component counts disagree");
    }
    GmmModel m;
    for (int k = 0; k < c; ++k) {
      const auto& mu = means[static_cast<std::size_t>(k)];
      const auto& cov = covs[static_cast<std::size_t>(k)];
      if (mu.size() != static_cast<std::size_t>(h) || cov.size() != static_cast<std::size_t>(h) * h) {
        throw std::runtime_error("checkpoint schema error: GMM component dimensions disagree");
      }
      GaussianComponent comp;
      comp.weight = weights[static_cast<std::size_t>(k)];
      comp.mean = Eigen::Map<const Eigen::VectorXd>(mu.data(), h);
      comp.covariance = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                                       Eigen::RowMajor>>(cov.data(), h, h);
      m.components.push_back(std::move(comp));
    }
    m.log_likelihood_trace = j.at("trace").get<std::vector<double>>();
    if (j.contains("shift")) {
      const auto s = j.at("shift").get<std::vector<double>>();
      const auto sc = j.at("scale").get<std::vector<double>>();
      if (s.size() != static_cast<std::size_t>(h) || sc.size() != s.size()) {
        throw std::runtime_error("checkpoint schema error: GMM standardization size mismatch");
      }
      m.shift = Eigen::Map<const Eigen::VectorXd>(s.data(), h);
      m.scale = Eigen::Map<const Eigen::VectorXd>(sc.data(), h);
    }
    m.validate();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("checkpoint schema error: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(std::string("checkpoint schema error: ") + e.what());
  }
}

}  // namespace reltraj
