#pragma once

#include <Eigen/Dense>
#include <map>
#include <random>
#include <string>

#include "dcmil/tape.hpp"

namespace dcmil {

// Named parameter tensors plus first/second moment buffers. Iteration order is
// the map's lexicographic order, which keeps updates deterministic.
class ParamStore {
 public:
  using Mat = Eigen::MatrixXd;

  Mat& add(const std::string& name, int rows, int cols, double init_scale,
           std::mt19937_64& rng);
  Mat& add_zero(const std::string& name, int rows, int cols);
  Mat& add_const(const std::string& name, int rows, int cols, double value);

  Mat& at(const std::string& name);
  const Mat& at(const std::string& name) const;
  bool has(const std::string& name) const { return params_.count(name) != 0; }

  std::map<std::string, Mat>& params() { return params_; }
  const std::map<std::string, Mat>& params() const { return params_; }

  // One optimizer step from accumulated gradients (same keys as params).
  void sgd_step(const std::map<std::string, Mat>& grads, double lr, double momentum);
  void adam_step(const std::map<std::string, Mat>& grads, double lr,
                 double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void save(const std::string& path, std::uint64_t config_hash) const;
  // Returns the stored config hash.
  std::uint64_t load(const std::string& path);

  ParamStore clone() const;

 private:
  std::map<std::string, Mat> params_;
  std::map<std::string, Mat> m_, v_;  // moments / momentum
  long step_ = 0;
};

// Binds parameters into a tape as leaves and resolves ids by name so that
// gradients can be read back after backward().
class GraphParams {
 public:
  GraphParams(ad::Tape& tape, ParamStore& store) : tape_(tape), store_(store) {}

  int use(const std::string& name) {
    auto it = ids_.find(name);
    if (it != ids_.end()) return it->second;
    int id = tape_.leaf(store_.at(name));
    ids_.emplace(name, id);
    return id;
  }

  // Adds tape gradients of every bound parameter into `grads`.
  void harvest(std::map<std::string, Eigen::MatrixXd>& grads) const {
    for (const auto& [name, id] : ids_) {
      auto it = grads.find(name);
      if (it == grads.end())
        grads.emplace(name, tape_.grad(id));
      else
        it->second += tape_.grad(id);
    }
  }

 private:
  ad::Tape& tape_;
  ParamStore& store_;
  std::map<std::string, int> ids_;
};

// Uniform draw in [0,1) with explicit bit handling for reproducibility.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Standard normal via Box-Muller on explicit uniforms.
double normal01(std::mt19937_64& rng);

}  // namespace dcmil
