#pragma once

#include <Eigen/Dense>
#include <vector>

namespace dcmil::survival {

// Harrell's concordance index. Comparable pairs: (i,j) with T_i < T_j and
// event_i = 1. Risk ties count 0.5. Throws std::invalid_argument when no
// comparable pair exists.
double concordance_index(const std::vector<double>& times, const std::vector<int>& events,
                         const std::vector<double>& risks);

struct KMCurve {
  std::vector<double> event_times;     // ascending distinct event times
  std::vector<double> survival_probs;  // nonincreasing, in [0,1]
  std::vector<int> at_risk_counts;
};

KMCurve km_estimate(const std::vector<double>& times, const std::vector<int>& events);

struct Group {
  std::vector<double> times;
  std::vector<int> events;
};

struct LogrankResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

// Two-group logrank chi-square with 1 dof.
LogrankResult logrank_test(const Group& a, const Group& b);

struct UncertaintyReport {
  std::vector<double> per_instance_std;
  double threshold = 0.0;
  double youden_J = 0.0;
  std::vector<int> confident_mask;  // std < threshold
};

// Threshold on uncertainties maximizing J = TPR - FPR where "positive" means
// a correct prediction and the classifier is (uncertainty < threshold).
// Candidates: midpoints between sorted unique values plus both extremes; ties
// resolved toward the smallest threshold. Throws on single-class input.
std::pair<double, double> youden_threshold(const std::vector<double>& uncertainties,
                                           const std::vector<int>& correctness);

struct DistanceHeatmap {
  std::vector<double> distances;       // one per query instance
  std::vector<int> histogram;          // fixed bin width
  double bin_width = 5.0;
};

// Euclidean distance of each query instance representation to the mean
// reference representation, plus a fixed-width histogram.
DistanceHeatmap distance_heatmap(const Eigen::MatrixXd& reference_reps,
                                 const Eigen::MatrixXd& query_reps,
                                 double bin_width = 5.0);

// Survival function of the chi-square distribution with 1 dof.
double chi2_1_sf(double x);

}  // namespace dcmil::survival
