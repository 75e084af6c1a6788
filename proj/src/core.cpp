#include "dcmil/core.hpp"

#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace dcmil {

RiskStatus risk_status(double time_months, int event, double threshold_months) {
  if (time_months < 0.0) throw std::invalid_argument("risk_status: negative survival time");
  if (threshold_months <= 0.0) throw std::invalid_argument("risk_status: threshold must be positive");
  if (time_months > threshold_months) return RiskStatus::LOW;
  if (event == 1) return RiskStatus::HIGH;
  return RiskStatus::UNDEFINED;
}

std::string to_string(RiskStatus s) {
  switch (s) {
    case RiskStatus::LOW: return "LOW";
    case RiskStatus::HIGH: return "HIGH";
    default: return "UNDEFINED";
  }
}

std::string to_string(Source s) { return s == Source::TUMOR ? "TUMOR" : "NORMAL"; }

void TilePyramid::validate() const {
  if (tiles.empty()) throw std::invalid_argument("TilePyramid: needs at least one magnification");
  for (std::size_t s = 0; s < tiles.size(); ++s) {
    const Image& t = tiles[s];
    if (t.rows() != t.cols()) throw std::invalid_argument("TilePyramid: tiles must be square");
    if (t.rows() % kTokenSide != 0)
      throw std::invalid_argument("TilePyramid: tile side not divisible by token side");
    if (s > 0 && tiles[s].rows() != 2 * tiles[s - 1].rows())
      throw std::invalid_argument("TilePyramid: sides must halve toward coarser levels");
  }
}

int RunConfig::tile_side(int s) const {
  int side = tile_side_finest;
  for (int i = S; i > s; --i) side /= 2;
  return side;
}

void RunConfig::validate() const {
  if (S < 1) throw std::invalid_argument("config: S >= 1 required");
  if (N_B < 1) throw std::invalid_argument("config: N_B >= 1 required");
  if (iota < 0.0 || iota > 1.0) throw std::invalid_argument("config: iota must be in [0,1]");
  if (gumbel_temperature <= 0.0) throw std::invalid_argument("config: gumbel_temperature must be positive");
  if (beta_Omega < 0 || beta_R < 0 || beta_tcl < 0 || beta_adc < 0 || beta_s < 0)
    throw std::invalid_argument("config: loss weights must be nonnegative");
  if (tile_side(1) % kTokenSide != 0)
    throw std::invalid_argument("config: coarsest tile side not divisible by token side");
  if (token_dim % n_heads != 0) throw std::invalid_argument("config: token_dim must divide by n_heads");
  if (mc_passes < 2) throw std::invalid_argument("config: mc_passes >= 2 required");
}

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::string RunConfig::serialize() const {
  std::ostringstream os;
  os << "S=" << S << "\n";
  os << "tile_side_finest=" << tile_side_finest << "\n";
  os << "token_dim=" << token_dim << "\n";
  os << "n_blocks=" << n_blocks << "\n";
  os << "n_heads=" << n_heads << "\n";
  os << "N_B=" << N_B << "\n";
  os << "D=" << D << "\n";
  os << "D_B=" << D_B << "\n";
  os << "D_hat=" << D_hat << "\n";
  os << "T_r=" << fmt(T_r) << "\n";
  os << "iota=" << fmt(iota) << "\n";
  os << "eta=" << fmt(eta) << "\n";
  os << "kappa=" << fmt(kappa) << "\n";
  os << "beta_Omega=" << fmt(beta_Omega) << "\n";
  os << "beta_R=" << fmt(beta_R) << "\n";
  os << "beta_tcl=" << fmt(beta_tcl) << "\n";
  os << "beta_adc=" << fmt(beta_adc) << "\n";
  os << "beta_s=" << fmt(beta_s) << "\n";
  os << "gumbel_temperature=" << fmt(gumbel_temperature) << "\n";
  os << "literal_indicator_softmax=" << (literal_indicator_softmax ? 1 : 0) << "\n";
  os << "lr_c1=" << fmt(lr_c1) << "\n";
  os << "batch_c1=" << batch_c1 << "\n";
  os << "epochs_pretrain=" << epochs_pretrain << "\n";
  os << "epochs_joint=" << epochs_joint << "\n";
  os << "patience=" << patience << "\n";
  os << "self_paced=" << (self_paced ? 1 : 0) << "\n";
  os << "lr_c2=" << fmt(lr_c2) << "\n";
  os << "momentum_c2=" << fmt(momentum_c2) << "\n";
  os << "batch_c2=" << batch_c2 << "\n";
  os << "epochs_c2=" << epochs_c2 << "\n";
  os << "k_folds=" << k_folds << "\n";
  os << "val_fraction=" << fmt(val_fraction) << "\n";
  os << "mc_passes=" << mc_passes << "\n";
  os << "dropout_rate=" << fmt(dropout_rate) << "\n";
  os << "rng_seed=" << rng_seed << "\n";
  return os.str();
}

RunConfig RunConfig::deserialize(const std::string& text) {
  RunConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key=value");
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    auto as_int = [&] { return std::stoi(val); };
    auto as_dbl = [&] { return std::stod(val); };
    if (key == "S") cfg.S = as_int();
    else if (key == "tile_side_finest") cfg.tile_side_finest = as_int();
    else if (key == "token_dim") cfg.token_dim = as_int();
    else if (key == "n_blocks") cfg.n_blocks = as_int();
    else if (key == "n_heads") cfg.n_heads = as_int();
    else if (key == "N_B") cfg.N_B = as_int();
    else if (key == "D") cfg.D = as_int();
    else if (key == "D_B") cfg.D_B = as_int();
    else if (key == "D_hat") cfg.D_hat = as_int();
    else if (key == "T_r") cfg.T_r = as_dbl();
    else if (key == "iota") cfg.iota = as_dbl();
    else if (key == "eta") cfg.eta = as_dbl();
    else if (key == "kappa") cfg.kappa = as_dbl();
    else if (key == "beta_Omega") cfg.beta_Omega = as_dbl();
    else if (key == "beta_R") cfg.beta_R = as_dbl();
    else if (key == "beta_tcl") cfg.beta_tcl = as_dbl();
    else if (key == "beta_adc") cfg.beta_adc = as_dbl();
    else if (key == "beta_s") cfg.beta_s = as_dbl();
    else if (key == "gumbel_temperature") cfg.gumbel_temperature = as_dbl();
    else if (key == "literal_indicator_softmax") cfg.literal_indicator_softmax = as_int() != 0;
    else if (key == "lr_c1") cfg.lr_c1 = as_dbl();
    else if (key == "batch_c1") cfg.batch_c1 = as_int();
    else if (key == "epochs_pretrain") cfg.epochs_pretrain = as_int();
    else if (key == "epochs_joint") cfg.epochs_joint = as_int();
    else if (key == "patience") cfg.patience = as_int();
    else if (key == "self_paced") cfg.self_paced = as_int() != 0;
    else if (key == "lr_c2") cfg.lr_c2 = as_dbl();
    else if (key == "momentum_c2") cfg.momentum_c2 = as_dbl();
    else if (key == "batch_c2") cfg.batch_c2 = as_int();
    else if (key == "epochs_c2") cfg.epochs_c2 = as_int();
    else if (key == "k_folds") cfg.k_folds = as_int();
    else if (key == "val_fraction") cfg.val_fraction = as_dbl();
    else if (key == "mc_passes") cfg.mc_passes = as_int();
    else if (key == "dropout_rate") cfg.dropout_rate = as_dbl();
    else if (key == "rng_seed") cfg.rng_seed = std::stoull(val);
    else if (key.rfind("gen_", 0) == 0) continue;  // data-generator keys, parsed elsewhere
    else throw std::invalid_argument("config: unknown key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config file: " + path);
  std::ostringstream buf;
  buf << f.rdbuf();
  return deserialize(buf.str());
}

void RunConfig::save(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write config file: " + path);
  f << serialize();
}

std::uint64_t RunConfig::hash() const { return fnv1a(serialize()); }

std::uint64_t fnv1a(const std::string& data) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace dcmil
