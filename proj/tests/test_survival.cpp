#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "dcmil/params.hpp"
#include "dcmil/survival.hpp"

using namespace dcmil;
using namespace dcmil::survival;

namespace {

// Independent pair-enumeration oracle for Harrell's C.
double brute_c_index(const std::vector<double>& T, const std::vector<int>& E,
                     const std::vector<double>& R) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < T.size(); ++i)
    for (std::size_t j = 0; j < T.size(); ++j) {
      if (i == j || E[i] != 1 || T[i] >= T[j]) continue;
      den += 1.0;
      if (R[i] > R[j]) num += 1.0;
      else if (R[i] == R[j]) num += 0.5;
    }
  return num / den;
}

std::mt19937_64 g_rng(20240817);

}  // namespace

TEST_CASE("concordance index basics") {
  CHECK(concordance_index({1, 2, 3}, {1, 1, 1}, {3, 2, 1}) == doctest::Approx(1.0));
  CHECK(concordance_index({1, 2, 3}, {1, 1, 1}, {1, 2, 3}) == doctest::Approx(0.0));
  CHECK(concordance_index({1, 2}, {1, 1}, {5, 5}) == doctest::Approx(0.5));  // risk tie
  // Censored patients are only comparable as the later pair member.
  CHECK(concordance_index({1, 2}, {1, 0}, {1, 9}) == doctest::Approx(0.0));
  CHECK_THROWS_AS(concordance_index({1, 2}, {0, 1}, {9, 1}), std::invalid_argument);
  CHECK_THROWS_AS(concordance_index({1, 1}, {1, 1}, {1, 2}), std::invalid_argument);
  CHECK_THROWS_AS(concordance_index({1, 2}, {0, 0}, {1, 2}), std::invalid_argument);
}

TEST_CASE("concordance index equals the brute-force oracle on random cohorts") {
  for (int trial = 0; trial < 200; ++trial) {
    int n = 3 + static_cast<int>(uniform01(g_rng) * 10);  // n <= 12
    std::vector<double> T, R;
    std::vector<int> E;
    for (int i = 0; i < n; ++i) {
      T.push_back(1.0 + std::floor(uniform01(g_rng) * 6.0));  // frequent time ties
      E.push_back(uniform01(g_rng) < 0.7 ? 1 : 0);
      R.push_back(std::floor(uniform01(g_rng) * 5.0));  // frequent risk ties
    }
    bool comparable = false;
    for (std::size_t i = 0; i < T.size() && !comparable; ++i)
      for (std::size_t j = 0; j < T.size(); ++j)
        if (i != j && E[i] == 1 && T[i] < T[j]) { comparable = true; break; }
    if (!comparable) { --trial; continue; }
    CHECK(concordance_index(T, E, R) == brute_c_index(T, E, R));
  }
}

TEST_CASE("concordance index is invariant under strictly increasing transforms") {
  std::vector<double> T{3, 1, 4, 1.5, 5, 9, 2.6, 6};
  std::vector<int> E{1, 0, 1, 1, 0, 1, 1, 0};
  std::vector<double> R{0.3, -1.2, 0.8, 0.1, 2.0, -0.5, 0.9, 0.0};
  double base = concordance_index(T, E, R);
  std::vector<double> expR = R, affR = R, cubeR = R;
  for (auto& v : expR) v = std::exp(v);
  for (auto& v : affR) v = 100.0 * v + 3.0;
  for (auto& v : cubeR) v = v * v * v;
  CHECK(concordance_index(T, E, expR) == base);
  CHECK(concordance_index(T, E, affR) == base);
  CHECK(concordance_index(T, E, cubeR) == base);
}

TEST_CASE("kaplan-meier product limit") {
  KMCurve c = km_estimate({1, 2, 3}, {1, 1, 1});
  REQUIRE(c.event_times.size() == 3);
  CHECK(c.survival_probs[0] == doctest::Approx(2.0 / 3.0));
  CHECK(c.survival_probs[1] == doctest::Approx(1.0 / 3.0));
  CHECK(c.survival_probs[2] == doctest::Approx(0.0));
  CHECK(c.at_risk_counts[0] == 3);

  KMCurve none = km_estimate({1, 2, 3}, {0, 0, 0});
  CHECK(none.event_times.empty());

  KMCurve single = km_estimate({7}, {1});
  CHECK(single.survival_probs[0] == doctest::Approx(0.0));

  // Censoring removes patients from later risk sets.
  KMCurve mix = km_estimate({1, 2, 3, 4}, {1, 0, 1, 1});
  CHECK(mix.survival_probs[0] == doctest::Approx(0.75));
  CHECK(mix.survival_probs[1] == doctest::Approx(0.75 * 0.5));
  CHECK(mix.survival_probs[2] == doctest::Approx(0.0));
  for (std::size_t i = 1; i < mix.survival_probs.size(); ++i)
    CHECK(mix.survival_probs[i] <= mix.survival_probs[i - 1]);
}

TEST_CASE("logrank test") {
  Group a{{1, 2, 3, 4}, {1, 1, 1, 1}};
  Group b{{5, 6, 7, 8}, {1, 1, 1, 1}};
  LogrankResult r = logrank_test(a, b);
  // Hand table: O_A=4, E_A=1/2+3/7+1/3+1/5, V=1/4+12/49+2/9+4/25.
  CHECK(r.statistic == doctest::Approx(7.344406814715235).epsilon(1e-10));
  CHECK(r.p_value == doctest::Approx(0.006727172585530282).epsilon(1e-9));

  LogrankResult same = logrank_test(a, a);
  CHECK(same.statistic == doctest::Approx(0.0));
  CHECK(same.p_value == doctest::Approx(1.0));

  LogrankResult sym = logrank_test(b, a);
  CHECK(sym.statistic == doctest::Approx(r.statistic));
  CHECK(r.statistic >= 0.0);
}

TEST_CASE("chi-square survival function") {
  CHECK(chi2_1_sf(0.0) == doctest::Approx(1.0));
  CHECK(chi2_1_sf(3.841458820694124) == doctest::Approx(0.05).epsilon(1e-6));
  CHECK(chi2_1_sf(6.634896601021213) == doctest::Approx(0.01).epsilon(1e-6));
}

TEST_CASE("youden threshold") {
  // Separable: correct at <=0.2, incorrect at >=0.8; midpoint 0.5 gives J=1.
  auto [thr, J] = youden_threshold({0.1, 0.2, 0.8, 0.9}, {1, 1, 0, 0});
  CHECK(J == doctest::Approx(1.0));
  CHECK(thr == doctest::Approx(0.5));

  CHECK_THROWS_AS(youden_threshold({0.1, 0.2}, {1, 1}), std::invalid_argument);

  // Exhaustive-scan oracle on overlapping random cases.
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> u;
    std::vector<int> c;
    int n = 6 + static_cast<int>(uniform01(g_rng) * 10);
    for (int i = 0; i < n; ++i) {
      u.push_back(std::floor(uniform01(g_rng) * 8.0) / 4.0);
      c.push_back(uniform01(g_rng) < 0.5 ? 1 : 0);
    }
    if (std::count(c.begin(), c.end(), 1) == 0 || std::count(c.begin(), c.end(), 0) == 0) {
      --trial;
      continue;
    }
    std::vector<double> uniq = u;
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    std::vector<double> cand{uniq.front() - 1.0, uniq.back() + 1.0};
    for (std::size_t i = 0; i + 1 < uniq.size(); ++i)
      cand.push_back(0.5 * (uniq[i] + uniq[i + 1]));
    std::sort(cand.begin(), cand.end());
    double best_j = -2.0, best_thr = 0.0;
    for (double th : cand) {
      double tp = 0, fn = 0, fp = 0, tn = 0;
      for (std::size_t i = 0; i < u.size(); ++i) {
        bool pred = u[i] < th;
        if (c[i] == 1) (pred ? tp : fn) += 1.0;
        else (pred ? fp : tn) += 1.0;
      }
      double j = tp / (tp + fn) - fp / (fp + tn);
      if (j > best_j + 1e-15) { best_j = j; best_thr = th; }
    }
    auto [got_thr, got_j] = youden_threshold(u, c);
    CHECK(got_j == doctest::Approx(best_j).epsilon(1e-12));
    CHECK(got_thr == doctest::Approx(best_thr).epsilon(1e-12));
  }
}

TEST_CASE("distance heatmap") {
  Eigen::MatrixXd ref(2, 3), query(2, 3);
  ref << 1, 0, 0, 3, 0, 0;  // mean (2,0,0)
  query << 2, 0, 0, 2, 4, 3;
  DistanceHeatmap hm = distance_heatmap(ref, query, 5.0);
  REQUIRE(hm.distances.size() == 2);
  CHECK(hm.distances[0] == doctest::Approx(0.0));
  CHECK(hm.distances[1] == doctest::Approx(5.0));

  DistanceHeatmap self = distance_heatmap(ref, ref, 5.0);
  CHECK(self.distances[0] == doctest::Approx(1.0));
  CHECK(self.distances[1] == doctest::Approx(1.0));

  // Random case against a hand recomputation.
  Eigen::MatrixXd r2 = Eigen::MatrixXd::Random(5, 4), q2 = Eigen::MatrixXd::Random(3, 4);
  Eigen::RowVectorXd mean = r2.colwise().mean();
  DistanceHeatmap hm2 = distance_heatmap(r2, q2, 5.0);
  for (int i = 0; i < 3; ++i)
    CHECK(hm2.distances[static_cast<std::size_t>(i)] ==
          doctest::Approx((q2.row(i) - mean).norm()).epsilon(1e-12));

  CHECK_THROWS_AS(distance_heatmap(Eigen::MatrixXd::Zero(2, 3), Eigen::MatrixXd::Zero(2, 4), 5.0),
                  std::invalid_argument);
}
