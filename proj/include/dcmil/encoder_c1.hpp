#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dcmil/core.hpp"
#include "dcmil/params.hpp"
#include "dcmil/tape.hpp"

// Curriculum I: saliency-guided weakly-supervised instance encoding across S
// magnification branches. Branch s owns a patch projection, a stack of
// pre-norm transformer blocks, an attention aggregator and a two-class head.
namespace dcmil::c1 {

using Mat = Eigen::MatrixXd;

struct SaliencyMask {
  Mat relevance;              // token grid, values in [0,1]
  Eigen::MatrixXi values;     // binary, relevance >= iota (all-ones fallback)
};

// Parameter names are "b<s>/..."; block parameters "b<s>/blk<i>/...".
ParamStore init_c1_params(const RunConfig& cfg, std::mt19937_64& rng);

// Copies every parameter of branch `from_s` into branch `to_s` (the phase-2
// hierarchical transfer). Positional encodings are copied only when the token
// counts match.
void share_branch(ParamStore& store, int from_s, int to_s, const RunConfig& cfg);

// Names of the transformer-block parameters of branch s, blocks [1..upto].
std::vector<std::string> block_param_names(int s, int upto, const RunConfig& cfg);

// Non-overlapping 16x16 patches flattened row-major: (tokens_per_side^2) x 256.
Mat patch_tokens(const Image& tile);

// Graph builders. Branch index s is 1-based.
int patchify_embed(ad::Tape& t, GraphParams& gp, const Image& tile, int s,
                   const RunConfig& cfg);
int transformer_forward(ad::Tape& t, GraphParams& gp, int tokens, int s,
                        const RunConfig& cfg);
// g_prev < 0 means branch 1 (zero vector skip input).
int aggregate_tokens(ad::Tape& t, GraphParams& gp, int z, int g_prev, int s,
                     const RunConfig& cfg);
int classify(ad::Tape& t, GraphParams& gp, int g, int s, const RunConfig& cfg);

// gradCAM-style token relevance: alpha and z are token matrices; the raw
// relevance ReLU(sum_j alpha_tj z_tj) is max-normalized before thresholding,
// and an all-zero mask falls back to all-ones.
SaliencyMask saliency_mask(const Mat& alpha, const Mat& z, double iota);

// Nearest-neighbor block replication of the previous branch's token mask onto
// the next tile's pixel grid, applied elementwise.
Image highlight_input(const Image& tile_next, const SaliencyMask& mask_prev);

// Per-term losses; callers combine. Probabilities clamped to [1e-7, 1-1e-7].
int loss_empirical_term(ad::Tape& t, int p, int y);
int loss_ranking_term(ad::Tape& t, int p_s, int p_s_minus_1, int y, double eta);
// 2-norm of the concatenated block-parameter difference between branch s and
// branch s-1 over blocks 1..s-1.
int loss_structural(ad::Tape& t, GraphParams& gp, int s, const RunConfig& cfg);

// Indices of instances with loss strictly below lambda.
std::vector<std::size_t> self_paced_select(const std::vector<double>& instance_losses,
                                           double lambda);

struct InstanceForward {
  int g_final = -1;             // 1 x token_dim node
  std::vector<int> p;           // per-branch probability nodes (1x2)
  std::vector<int> z;           // per-branch token nodes
  std::vector<SaliencyMask> masks;  // mask applied at branch s (index s-1); s=1 empty
};

// Full multi-branch forward on one instance, computing saliency masks between
// branches via intermediate backward passes (gradients are cleared afterward,
// so a later loss backward starts clean). `upto_s` limits the branch count
// (phase 1 trains branch 1 alone). Optional dropout on g before each head for
// MC-dropout inference.
InstanceForward forward_instance(ad::Tape& t, GraphParams& gp, const TilePyramid& inst,
                                 const RunConfig& cfg, int upto_s,
                                 double dropout_rate = 0.0,
                                 std::mt19937_64* dropout_rng = nullptr);

}  // namespace dcmil::c1
