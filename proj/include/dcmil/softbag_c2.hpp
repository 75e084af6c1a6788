#pragma once

#include <random>
#include <vector>

#include "dcmil/core.hpp"
#include "dcmil/params.hpp"
#include "dcmil/tape.hpp"

// Curriculum II: soft-bag selection via straight-through Gumbel top-k,
// constrained self-attention pooling, triple-tier contrastive learning and the
// Cox prognosis head. Requires cfg.D == cfg.D_B so the bag and instance
// aggregation networks share one architecture.
namespace dcmil::c2 {

using Mat = Eigen::MatrixXd;

ParamStore init_c2_params(const RunConfig& cfg, std::mt19937_64& rng);

struct GumbelTopK {
  std::vector<int> selected;  // ascending indices, exactly N_B entries
  Mat hard;                   // N x 1 indicator
  int node = -1;              // hard forward, relaxed straight-through backward
  int soft_node = -1;         // the relaxed k-hot weights
};

// Hard top-k of (scores + gumbel noise)/temperature with lowest-index tie
// break; the relaxed k-hot (successive softmax) carries the gradient.
GumbelTopK gumbel_topk(ad::Tape& t, int scores, int N_B, double temperature,
                       bool noise_on, std::mt19937_64* rng);

// Row-wise linear projection of instance representations (N x C -> N x D).
int project_bag(ad::Tape& t, GraphParams& gp, const Mat& G, const RunConfig& cfg);

// Per-instance selection scores (N x 1) feeding gumbel_topk.
int selection_scores(ad::Tape& t, GraphParams& gp, int E);

// Eq.(15): per-slot softmax over the indicator-masked instance axis, then a
// weighted sum of the masked rows. `literal` keeps the paper's literal form
// (zeroed rows still receive exp(0) weight) behind the config flag.
int select_instances(ad::Tape& t, GraphParams& gp, int E, const GumbelTopK& sel,
                     const RunConfig& cfg);
// Same mechanism with the complementary indicator (discarded instances).
int select_discarded(ad::Tape& t, GraphParams& gp, int E, const GumbelTopK& sel,
                     const RunConfig& cfg);

struct AttentionOut {
  int B = -1;    // 1 x D_B soft-bag representation
  int L_s = -1;  // sparseness penalty on W_Q/W_K/W_V
};

AttentionOut constrained_self_attention(ad::Tape& t, GraphParams& gp, int E_sel,
                                        const RunConfig& cfg);

// Gated-attention aggregation over the rows of M (k x D_B) -> 1 x D_B.
// `which` selects the bag (k1) or instance (k2) network parameters.
int aggregate_K(ad::Tape& t, GraphParams& gp, int M, const std::string& which);

// log L(B, B_tilde, B_hat, B_bar) = B'W_L Bt + B'W_L Bh + B'V_L Bb.
int log_bilinear_node(ad::Tape& t, GraphParams& gp, int B, int B_tilde, int B_hat,
                      int B_bar);
// Value-level variant returning exp(...) for direct checks.
double log_bilinear(const Mat& B, const Mat& B_tilde, const Mat& B_hat, const Mat& B_bar,
                    const Mat& W_L, const Mat& V_L);

// Triple-tier InfoNCE over precomputed log-L values: entry n of logL_pos pairs
// with row n of logL_neg (column i is the negative term built from bag i;
// the diagonal is ignored). Evaluated via log-sum-exp; returns the mean.
int loss_tcl_from_logL(ad::Tape& t, const std::vector<int>& logL_pos,
                       const std::vector<std::vector<int>>& logL_neg);

// Cosine with zero-vector guard: a zero input yields cosine 0 and bumps the
// warning counter.
int cosine_node(ad::Tape& t, int a, int b, int* zero_warnings);

int loss_adc_term(ad::Tape& t, int B, int B_tilde, int B_hat, int B_bar, int B_under,
                  double kappa, int* zero_warnings);

int infer_risk(ad::Tape& t, GraphParams& gp, int B);

int loss_c2(ad::Tape& t, int cox, int tcl, int adc, int sparse, const RunConfig& cfg);

struct BagForward {
  int E = -1;
  GumbelTopK sel;
  int E_sel = -1;
  int B = -1;
  int L_s = -1;    // sparseness penalty from the attention weights
  int B_bar = -1;  // K2 aggregate of the discarded instances (bag mean when none)
  int risk = -1;
  bool degenerate_selection = false;  // N_B >= N_n, nothing discarded
};

BagForward forward_bag(ad::Tape& t, GraphParams& gp, const Mat& G, const RunConfig& cfg,
                       bool noise_on, std::mt19937_64* rng);

}  // namespace dcmil::c2
