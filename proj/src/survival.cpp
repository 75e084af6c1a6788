#include "dcmil/survival.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace dcmil::survival {

double concordance_index(const std::vector<double>& times, const std::vector<int>& events,
                         const std::vector<double>& risks) {
  std::size_t n = times.size();
  if (events.size() != n || risks.size() != n)
    throw std::invalid_argument("concordance_index: array length mismatch");
  double num = 0.0;
  long comparable = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (events[i] != 1) continue;
    for (std::size_t j = 0; j < n; ++j) {
      if (times[i] >= times[j]) continue;
      ++comparable;
      if (risks[i] > risks[j]) num += 1.0;
      else if (risks[i] == risks[j]) num += 0.5;
    }
  }
  if (comparable == 0)
    throw std::invalid_argument("concordance_index: no comparable pairs");
  return num / static_cast<double>(comparable);
}

KMCurve km_estimate(const std::vector<double>& times, const std::vector<int>& events) {
  std::size_t n = times.size();
  if (n == 0 || events.size() != n)
    throw std::invalid_argument("km_estimate: empty or mismatched arrays");
  std::set<double> distinct;
  for (std::size_t i = 0; i < n; ++i)
    if (events[i] == 1) distinct.insert(times[i]);
  KMCurve curve;
  double s = 1.0;
  for (double t : distinct) {
    int at_risk = 0, deaths = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (times[i] >= t) ++at_risk;
      if (times[i] == t && events[i] == 1) ++deaths;
    }
    s *= 1.0 - static_cast<double>(deaths) / static_cast<double>(at_risk);
    curve.event_times.push_back(t);
    curve.survival_probs.push_back(s);
    curve.at_risk_counts.push_back(at_risk);
  }
  return curve;
}

double chi2_1_sf(double x) {
  if (x <= 0.0) return 1.0;
  return std::erfc(std::sqrt(0.5 * x));
}

LogrankResult logrank_test(const Group& a, const Group& b) {
  if (a.times.empty() || b.times.empty())
    throw std::invalid_argument("logrank_test: groups must be nonempty");
  std::set<double> distinct;
  for (std::size_t i = 0; i < a.times.size(); ++i)
    if (a.events[i] == 1) distinct.insert(a.times[i]);
  for (std::size_t i = 0; i < b.times.size(); ++i)
    if (b.events[i] == 1) distinct.insert(b.times[i]);

  double obs_minus_exp = 0.0, variance = 0.0;
  for (double t : distinct) {
    int n1 = 0, n2 = 0, d1 = 0, d2 = 0;
    for (std::size_t i = 0; i < a.times.size(); ++i) {
      if (a.times[i] >= t) ++n1;
      if (a.times[i] == t && a.events[i] == 1) ++d1;
    }
    for (std::size_t i = 0; i < b.times.size(); ++i) {
      if (b.times[i] >= t) ++n2;
      if (b.times[i] == t && b.events[i] == 1) ++d2;
    }
    int n = n1 + n2, d = d1 + d2;
    if (n == 0 || d == 0) continue;
    double fn = n, fn1 = n1, fn2 = n2, fd = d;
    obs_minus_exp += d1 - fd * fn1 / fn;
    if (n > 1) variance += fd * (fn1 / fn) * (fn2 / fn) * (fn - fd) / (fn - 1.0);
  }
  LogrankResult r;
  if (variance > 0.0) {
    r.statistic = obs_minus_exp * obs_minus_exp / variance;
    r.p_value = chi2_1_sf(r.statistic);
  }
  return r;
}

std::pair<double, double> youden_threshold(const std::vector<double>& uncertainties,
                                           const std::vector<int>& correctness) {
  std::size_t n = uncertainties.size();
  if (correctness.size() != n)
    throw std::invalid_argument("youden_threshold: array length mismatch");
  long n_pos = 0, n_neg = 0;
  for (int c : correctness) (c ? n_pos : n_neg) += 1;
  if (n_pos == 0 || n_neg == 0)
    throw std::invalid_argument("youden_threshold: needs both correct and incorrect instances");

  std::vector<double> uniq(uncertainties);
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());

  std::vector<double> candidates;
  candidates.push_back(uniq.front() - 1.0);
  for (std::size_t i = 0; i + 1 < uniq.size(); ++i)
    candidates.push_back(0.5 * (uniq[i] + uniq[i + 1]));
  candidates.push_back(uniq.back() + 1.0);

  double best_thr = candidates.front();
  double best_j = -2.0;
  for (double thr : candidates) {
    long tp = 0, fp = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (uncertainties[i] < thr) (correctness[i] ? tp : fp) += 1;
    }
    double j = static_cast<double>(tp) / n_pos - static_cast<double>(fp) / n_neg;
    if (j > best_j) {  // strict: ties keep the smallest threshold
      best_j = j;
      best_thr = thr;
    }
  }
  return {best_thr, best_j};
}

DistanceHeatmap distance_heatmap(const Eigen::MatrixXd& reference_reps,
                                 const Eigen::MatrixXd& query_reps, double bin_width) {
  if (reference_reps.cols() != query_reps.cols())
    throw std::invalid_argument("distance_heatmap: representation width mismatch");
  if (reference_reps.rows() == 0 || query_reps.rows() == 0)
    throw std::invalid_argument("distance_heatmap: empty input");
  Eigen::RowVectorXd mean_ref = reference_reps.colwise().mean();
  DistanceHeatmap out;
  out.bin_width = bin_width;
  double max_d = 0.0;
  for (Eigen::Index i = 0; i < query_reps.rows(); ++i) {
    double d = (query_reps.row(i) - mean_ref).norm();
    out.distances.push_back(d);
    max_d = std::max(max_d, d);
  }
  int n_bins = static_cast<int>(std::floor(max_d / bin_width)) + 1;
  out.histogram.assign(static_cast<std::size_t>(n_bins), 0);
  for (double d : out.distances) {
    int b = std::min(n_bins - 1, static_cast<int>(std::floor(d / bin_width)));
    ++out.histogram[static_cast<std::size_t>(b)];
  }
  return out;
}

}  // namespace dcmil::survival
