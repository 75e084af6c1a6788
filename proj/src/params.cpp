#include "dcmil/params.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>

namespace dcmil {

double normal01(std::mt19937_64& rng) {
  double u1 = uniform01(rng);
  double u2 = uniform01(rng);
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
}

ParamStore::Mat& ParamStore::add(const std::string& name, int rows, int cols,
                                 double init_scale, std::mt19937_64& rng) {
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = init_scale * normal01(rng);
  auto [it, inserted] = params_.emplace(name, std::move(m));
  if (!inserted) throw std::invalid_argument("ParamStore: duplicate parameter " + name);
  return it->second;
}

ParamStore::Mat& ParamStore::add_zero(const std::string& name, int rows, int cols) {
  return add_const(name, rows, cols, 0.0);
}

ParamStore::Mat& ParamStore::add_const(const std::string& name, int rows, int cols,
                                       double value) {
  auto [it, inserted] = params_.emplace(name, Mat::Constant(rows, cols, value));
  if (!inserted) throw std::invalid_argument("ParamStore: duplicate parameter " + name);
  return it->second;
}

ParamStore::Mat& ParamStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("ParamStore: unknown parameter " + name);
  return it->second;
}

const ParamStore::Mat& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("ParamStore: unknown parameter " + name);
  return it->second;
}

void ParamStore::sgd_step(const std::map<std::string, Mat>& grads, double lr,
                          double momentum) {
  for (auto& [name, p] : params_) {
    auto g = grads.find(name);
    if (g == grads.end()) continue;
    Mat& buf = m_.try_emplace(name, Mat::Zero(p.rows(), p.cols())).first->second;
    buf = momentum * buf + g->second;
    p -= lr * buf;
  }
}

void ParamStore::adam_step(const std::map<std::string, Mat>& grads, double lr,
                           double beta1, double beta2, double eps) {
  ++step_;
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_));
  for (auto& [name, p] : params_) {
    auto g = grads.find(name);
    if (g == grads.end()) continue;
    Mat& m = m_.try_emplace(name, Mat::Zero(p.rows(), p.cols())).first->second;
    Mat& v = v_.try_emplace(name, Mat::Zero(p.rows(), p.cols())).first->second;
    m = beta1 * m + (1.0 - beta1) * g->second;
    v = beta2 * v + (1.0 - beta2) * g->second.cwiseProduct(g->second);
    Mat mhat = m / bc1;
    Mat vhat = v / bc2;
    p -= lr * mhat.cwiseQuotient((vhat.cwiseSqrt().array() + eps).matrix());
  }
}

namespace {

void write_u64(std::ofstream& f, std::uint64_t v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint64_t read_u64(std::ifstream& f) {
  std::uint64_t v = 0;
  f.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

}  // namespace

void ParamStore::save(const std::string& path, std::uint64_t config_hash) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
  f.write("DCMILCK1", 8);
  write_u64(f, config_hash);
  write_u64(f, params_.size());
  for (const auto& [name, p] : params_) {
    write_u64(f, name.size());
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u64(f, static_cast<std::uint64_t>(p.rows()));
    write_u64(f, static_cast<std::uint64_t>(p.cols()));
    f.write(reinterpret_cast<const char*>(p.data()),
            static_cast<std::streamsize>(sizeof(double) * p.size()));
  }
}

std::uint64_t ParamStore::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  f.read(magic, 8);
  if (std::string(magic, 8) != "DCMILCK1")
    throw std::runtime_error("not a checkpoint file: " + path);
  std::uint64_t hash = read_u64(f);
  std::uint64_t count = read_u64(f);
  params_.clear();
  m_.clear();
  v_.clear();
  step_ = 0;
  for (std::uint64_t i = 0; i < count; ++i) {
    std::uint64_t len = read_u64(f);
    std::string name(len, '\0');
    f.read(name.data(), static_cast<std::streamsize>(len));
    auto rows = static_cast<Eigen::Index>(read_u64(f));
    auto cols = static_cast<Eigen::Index>(read_u64(f));
    Mat p(rows, cols);
    f.read(reinterpret_cast<char*>(p.data()),
           static_cast<std::streamsize>(sizeof(double) * p.size()));
    params_.emplace(std::move(name), std::move(p));
  }
  if (!f) throw std::runtime_error("truncated checkpoint: " + path);
  return hash;
}

ParamStore ParamStore::clone() const {
  ParamStore out;
  out.params_ = params_;
  return out;
}

}  // namespace dcmil
