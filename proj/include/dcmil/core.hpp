#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace dcmil {

// Grayscale tile, values in [0,1], row-major pixel grid.
using Image = Eigen::MatrixXd;

constexpr int kTokenSide = 16;

enum class RiskStatus { LOW = 0, HIGH = 1, UNDEFINED = 2 };

enum class Source { TUMOR, NORMAL };

// Ternary risk stratification from observed time, event indicator and a
// clinical time threshold (months).
RiskStatus risk_status(double time_months, int event, double threshold_months);

std::string to_string(RiskStatus s);
std::string to_string(Source s);

struct SurvivalRecord {
  double time_months = 0.0;
  int event = 0;  // 1 = deceased (uncensored), 0 = censored
  RiskStatus risk = RiskStatus::UNDEFINED;
  std::optional<double> predicted_risk;
};

// One instance: aligned tiles at S magnifications, coarse (s=1) to fine (s=S).
// Tile sides halve as s decreases.
struct TilePyramid {
  std::vector<Image> tiles;
  int row = 0;
  int col = 0;

  // Throws std::invalid_argument on a violated side-length or token-grid rule.
  void validate() const;
};

struct Bag {
  std::string patient_id;
  std::vector<TilePyramid> instances;
  SurvivalRecord survival;
  Source source = Source::TUMOR;
};

struct RunConfig {
  // Geometry
  int S = 3;
  int tile_side_finest = 128;  // coarser sides halve: 128/64/32
  int token_dim = 64;
  int n_blocks = 4;
  int n_heads = 4;

  // Curriculum II widths
  int N_B = 8;
  int D = 32;      // instance projection width (must equal D_B, see softbag)
  int D_B = 32;    // soft-bag representation width
  int D_hat = 32;  // Q/K/V width

  // Thresholds and margins
  double T_r = 36.0;
  double iota = 0.4;
  double eta = 1e-3;
  double kappa = 1.0;

  // Loss weights
  double beta_Omega = 1e-5;
  double beta_R = 1.0;
  double beta_tcl = 1.0;
  double beta_adc = 0.1;
  double beta_s = 1e-4;

  double gumbel_temperature = 0.5;
  bool literal_indicator_softmax = false;

  // Curriculum I schedule
  double lr_c1 = 1e-3;
  int batch_c1 = 8;
  int epochs_pretrain = 30;
  int epochs_joint = 8;
  int patience = 5;
  bool self_paced = true;

  // Curriculum II schedule
  double lr_c2 = 5e-3;
  double momentum_c2 = 0.9;
  int batch_c2 = 64;
  int epochs_c2 = 60;

  // Evaluation
  int k_folds = 5;
  double val_fraction = 0.2;
  int mc_passes = 30;
  double dropout_rate = 0.1;

  std::uint64_t rng_seed = 42;

  void validate() const;
  std::string serialize() const;
  static RunConfig deserialize(const std::string& text);
  static RunConfig load(const std::string& path);
  void save(const std::string& path) const;
  std::uint64_t hash() const;

  int tile_side(int s) const;    // 1-based branch index
  int tokens_per_side(int s) const { return tile_side(s) / kTokenSide; }
  int n_tokens(int s) const { int t = tokens_per_side(s); return t * t; }
};

std::uint64_t fnv1a(const std::string& data);

}  // namespace dcmil
