#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "dcmil/core.hpp"

using namespace dcmil;

TEST_CASE("risk status follows the ternary rule") {
  CHECK(risk_status(14.1, 1, 36.0) == RiskStatus::HIGH);
  CHECK(risk_status(47.3, 0, 36.0) == RiskStatus::LOW);
  CHECK(risk_status(20.0, 0, 36.0) == RiskStatus::UNDEFINED);
  CHECK(risk_status(36.0, 1, 36.0) == RiskStatus::HIGH);   // boundary: t <= T_r
  CHECK(risk_status(36.0, 0, 36.0) == RiskStatus::UNDEFINED);
  CHECK(risk_status(40.0, 1, 36.0) == RiskStatus::LOW);    // beyond threshold, any event
  CHECK_THROWS_AS(risk_status(-1.0, 1, 36.0), std::invalid_argument);
  CHECK_THROWS_AS(risk_status(1.0, 1, 0.0), std::invalid_argument);
}

TEST_CASE("tile pyramid validation") {
  TilePyramid tp;
  tp.tiles = {Image::Zero(32, 32), Image::Zero(64, 64), Image::Zero(128, 128)};
  CHECK_NOTHROW(tp.validate());

  TilePyramid bad = tp;
  bad.tiles[0] = Image::Zero(100, 100);
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  bad = tp;
  bad.tiles[1] = Image::Zero(48, 48);  // breaks the halving rule
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  bad = tp;
  bad.tiles[2] = Image::Zero(128, 64);
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  TilePyramid empty;
  CHECK_THROWS_AS(empty.validate(), std::invalid_argument);
}

TEST_CASE("config geometry helpers") {
  RunConfig cfg;
  CHECK(cfg.tile_side(3) == 128);
  CHECK(cfg.tile_side(2) == 64);
  CHECK(cfg.tile_side(1) == 32);
  CHECK(cfg.n_tokens(1) == 4);
  CHECK(cfg.n_tokens(3) == 64);
}

TEST_CASE("config serialization roundtrip") {
  RunConfig cfg;
  cfg.token_dim = 48;
  cfg.rng_seed = 12345;
  cfg.beta_adc = 0.25;
  cfg.literal_indicator_softmax = true;
  RunConfig back = RunConfig::deserialize(cfg.serialize());
  CHECK(back.token_dim == 48);
  CHECK(back.rng_seed == 12345);
  CHECK(back.beta_adc == doctest::Approx(0.25));
  CHECK(back.literal_indicator_softmax);
  CHECK(back.hash() == cfg.hash());

  RunConfig other;
  CHECK(other.hash() != cfg.hash());
}

TEST_CASE("config parsing rejects unknown keys but skips generator keys") {
  CHECK_THROWS_AS(RunConfig::deserialize("no_such_key=1\n"), std::invalid_argument);
  CHECK_NOTHROW(RunConfig::deserialize("gen_n_patients=10\n"));
  CHECK_THROWS_AS(RunConfig::deserialize("gumbel_temperature=0\n"), std::invalid_argument);
}

TEST_CASE("fnv1a is stable") {
  CHECK(fnv1a("") == 0xcbf29ce484222325ull);
  CHECK(fnv1a("a") != fnv1a("b"));
}
