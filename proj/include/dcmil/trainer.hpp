#pragma once

#include <map>
#include <string>
#include <vector>

#include "dcmil/core.hpp"
#include "dcmil/params.hpp"

// Orchestration: two-phase Curriculum I, Curriculum II with the contrastive
// batch construction, stratified k-fold cross-validation and artifact
// emission.
namespace dcmil::trainer {

using Mat = Eigen::MatrixXd;

struct FoldPlan {
  int k = 5;
  std::map<std::string, int> assignments;  // tumor patients only
};

// Stratified by risk status; NORMAL bags are never assigned (training-side
// only). Deterministic under seed.
FoldPlan make_folds(const std::vector<Bag>& bags, int k, std::uint64_t seed);

// Derives the ternary risk label of every tumor bag from its survival record;
// NORMAL bags stay UNDEFINED.
void assign_risk_labels(std::vector<Bag>& bags, double T_r);

struct C1Output {
  ParamStore params;
  std::map<std::string, Mat> reps;  // patient_id -> N_n x token_dim
  std::vector<double> train_curve;
  double best_val = 0.0;
};

// Phase 1 pretrains branch 1 on labeled tumor instances; phase 2 copies its
// parameters into branches 2..S and trains all branches jointly with the
// hybrid loss, early stopping on validation loss. Representations are then
// emitted for every bag in emit_bags (NORMAL bags inference-only).
// Throws when the training data lacks HIGH or LOW bags.
C1Output train_curriculum1(const std::vector<Bag>& train_bags,
                           const std::vector<Bag>& emit_bags, const RunConfig& cfg);

// Inference-only emission with an existing parameter store. A positive
// dropout rate gives one stochastic MC-dropout pass.
std::map<std::string, Mat> emit_representations(ParamStore& params,
                                                const std::vector<Bag>& bags,
                                                const RunConfig& cfg,
                                                double dropout_rate = 0.0,
                                                std::mt19937_64* rng = nullptr);

struct C2Output {
  ParamStore params;
  std::vector<double> train_curve;
  double best_val = 0.0;
  int cosine_warnings = 0;
};

// Minibatch SGD with momentum on the Curriculum II loss. Every batch carries
// at least two bags of each defined risk class so the same-class and
// same-source aggregates are never empty; normal bags join every batch to
// form the normal-tissue reference. Returns the best-validation checkpoint.
C2Output train_curriculum2(const std::map<std::string, Mat>& reps,
                           const std::vector<Bag>& tumor_bags,
                           const std::vector<Bag>& normal_bags, const RunConfig& cfg);

// Deterministic risk for one bag (Gumbel noise off).
double predict_risk(ParamStore& params, const Mat& G, const RunConfig& cfg);

// Selection indicator export for one bag: (instance_index, score, selected).
struct IndicatorRow {
  int instance_index = 0;
  double score = 0.0;
  int selected = 0;
};
std::vector<IndicatorRow> selection_indicators(ParamStore& params, const Mat& G,
                                               const RunConfig& cfg);

struct EvalRow {
  std::string fold;     // "0".."k-1" or "all"
  std::string dataset;  // "heldout"
  double c_index = 0.0;
  double logrank_p = 1.0;
  int n_patients = 0;
};

struct CrossvalResult {
  FoldPlan plan;
  std::vector<EvalRow> rows;  // one per fold plus the pooled row
  std::map<std::string, double> heldout_risks;
  double pooled_c_index = 0.0;
  double pooled_logrank_p = 1.0;
};

// Trains both curricula per fold, evaluates on the held-out fold, and writes
// run_dir/{config.cfg, metrics.csv, leakage.log, checkpoints/, plots/,
// exports/}. Byte-identical outputs under identical config and seed.
CrossvalResult crossval_run(const std::vector<Bag>& bags, const RunConfig& cfg,
                            const std::string& run_dir);

// MC-dropout risks: passes x patients matrix of stochastic predictions for
// the given bags using fold-free params (one C-I store + one C-II store).
std::map<std::string, std::vector<double>> mc_dropout_risks(
    ParamStore& c1_params, ParamStore& c2_params, const std::vector<Bag>& bags,
    const RunConfig& cfg, int passes, double dropout_rate);

std::string metrics_csv_text(const std::vector<EvalRow>& rows);

}  // namespace dcmil::trainer
