#pragma once

// Naive reference implementations used as test oracles. They deliberately
// avoid the library's code paths (no log-space tricks, no Eigen reductions
// where a plain loop will do).

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <numeric>
#include <vector>

#include "reltraj/predictor.hpp"
#include "reltraj/random.hpp"

namespace oracle {

using reltraj::MixturePrediction;
using reltraj::Rng;
using reltraj::Trajectory;

// log(2 pi), correctly rounded. std::log(2.0 * pi) lands one ulp low.
inline constexpr double kLog2Pi = 1.8378770664093454836;

inline double dist(double ax, double ay, double bx, double by) {
  return std::sqrt((ax - bx) * (ax - bx) + (ay - by) * (ay - by));
}

inline double ade(const Trajectory& a, const Trajectory& b) {
  double s = 0.0;
  for (int t = 0; t < a.rows(); ++t) s += dist(a(t, 0), a(t, 1), b(t, 0), b(t, 1));
  return s / a.rows();
}

inline double fde(const Trajectory& a, const Trajectory& b) {
  const int t = static_cast<int>(a.rows()) - 1;
  return dist(a(t, 0), a(t, 1), b(t, 0), b(t, 1));
}

inline double wade(const Trajectory& gt, const MixturePrediction& p) {
  double s = 0.0;
  for (int k = 0; k < p.modes(); ++k) s += p.pi(k) * ade(gt, p.mu[k]);
  return s;
}

inline double wfde(const Trajectory& gt, const MixturePrediction& p) {
  double s = 0.0;
  for (int k = 0; k < p.modes(); ++k) s += p.pi(k) * fde(gt, p.mu[k]);
  return s;
}

inline double min_ade(const Trajectory& gt, const MixturePrediction& p) {
  double best = 1e300;
  for (int k = 0; k < p.modes(); ++k) best = std::min(best, ade(gt, p.mu[k]));
  return best;
}

inline double min_fde(const Trajectory& gt, const MixturePrediction& p) {
  double best = 1e300;
  for (int k = 0; k < p.modes(); ++k) best = std::min(best, fde(gt, p.mu[k]));
  return best;
}

// Direct product of densities; only sensible for moderate sigma and short horizons.
inline double mixture_density(const MixturePrediction& p, const Trajectory& gt) {
  double total = 0.0;
  for (int k = 0; k < p.modes(); ++k) {
    double prod = p.pi(k);
    for (int t = 0; t < p.horizon(); ++t) {
      const double s2 = p.sigma(k, t) * p.sigma(k, t);
      const double dx = gt(t, 0) - p.mu[k](t, 0);
      const double dy = gt(t, 1) - p.mu[k](t, 1);
      prod *= std::exp(-(dx * dx + dy * dy) / (2.0 * s2)) / (2.0 * std::numbers::pi * s2);
    }
    total += prod;
  }
  return total;
}

inline double nll(const MixturePrediction& p, const Trajectory& gt) { return -std::log(mixture_density(p, gt)); }

// Probability that a random OOD score beats a random ID score; ties count half.
inline double pair_auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      pairs += 1.0;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

struct Point {
  double fraction;
  double mean_error;
};

// Sort-discard-average, recomputing each mean from scratch.
inline std::vector<Point> retention(const std::vector<double>& e, const std::vector<double>& u) {
  const std::size_t n = e.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return u[a] > u[b]; });
  std::vector<Point> out;
  for (std::size_t m = n; m >= 1; --m) {
    double s = 0.0;
    for (std::size_t r = n - m; r < n; ++r) s += e[order[r]];
    out.push_back({static_cast<double>(m) / n, s / m});
  }
  return out;
}

inline double trapezoid_rauc(const std::vector<Point>& pts) {
  if (pts.size() == 1) return pts[0].mean_error;
  double area = 0.0;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    area += 0.5 * (pts[i].mean_error + pts[i + 1].mean_error) * (pts[i].fraction - pts[i + 1].fraction);
  }
  return area / (pts.front().fraction - pts.back().fraction);
}

inline MixturePrediction random_mixture(Rng& rng, int modes, int horizon, double sigma_lo = 0.5,
                                        double sigma_hi = 2.0, double spread = 2.0) {
  MixturePrediction p;
  p.pi.resize(modes);
  double z = 0.0;
  for (int k = 0; k < modes; ++k) z += (p.pi(k) = rng.uniform(0.1, 1.0));
  p.pi /= z;
  p.sigma.resize(modes, horizon);
  for (int k = 0; k < modes; ++k) {
    Trajectory m(horizon, 2);
    for (int t = 0; t < horizon; ++t) {
      m(t, 0) = rng.uniform(-spread, spread);
      m(t, 1) = rng.uniform(-spread, spread);
      p.sigma(k, t) = rng.uniform(sigma_lo, sigma_hi);
    }
    p.mu.push_back(m);
  }
  return p;
}

inline Trajectory random_trajectory(Rng& rng, int horizon, double spread = 2.0) {
  Trajectory t(horizon, 2);
  for (int i = 0; i < horizon; ++i) {
    t(i, 0) = rng.uniform(-spread, spread);
    t(i, 1) = rng.uniform(-spread, spread);
  }
  return t;
}

// Relative agreement with a floor so near-zero entries compare absolutely.
inline bool close_rel(double a, double b, double rel, double floor = 1e-2) {
  return std::abs(a - b) <= rel * std::max({std::abs(a), std::abs(b), floor});
}

inline double central_difference(const std::function<double(double)>& f, double x, double h = 1e-5) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

}  // namespace oracle
