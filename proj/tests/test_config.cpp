#include <doctest.h>

#include "gabvit/config_io.hpp"

using namespace gabvit;

namespace {

std::string error_of(const std::string& text) {
  try {
    parse_experiment_config(text, "exp.cfg");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("empty text gives the toy defaults") {
    const auto cfg = parse_experiment_config("# nothing\n\n");
    CHECK(cfg.model == ExperimentConfig::default_model());
    CHECK(cfg.model.use_ape);
    CHECK(cfg.model.use_gab);
    CHECK(cfg.model.rpe_kind == RpeKind::relposmlp);
    CHECK(cfg.train.steps == 500);
    CHECK(cfg.data.height == 8);
    CHECK(cfg.model_seed == 0);
  }

  TEST_CASE("keys, comments and seed overrides") {
    const auto cfg = parse_experiment_config(
        "image_height = 16   # taller\n"
        "image_width=16\n"
        "gab = false\n"
        "rpe = relposbias\n"
        "optimizer = sgd_momentum\n"
        "learning_rate = 0.05\n"
        "frozen = head, ape\n"
        "seed = 7\n"
        "data_seed = 9\n");
    CHECK(cfg.model.image_height == 16);
    CHECK(cfg.data.width == 16);
    CHECK_FALSE(cfg.model.use_gab);
    CHECK(cfg.model.rpe_kind == RpeKind::relposbias);
    CHECK(cfg.train.optimizer == OptimizerKind::sgd_momentum);
    CHECK(cfg.train.learning_rate == 0.05);
    CHECK(cfg.train.frozen == std::vector<std::string>{"head", "ape"});
    CHECK(cfg.model_seed == 7);
    CHECK(cfg.train.seed == 7);
    CHECK(cfg.data.seed == 9);
  }

  TEST_CASE("errors name the file and line") {
    CHECK(error_of("steps = 3\nbogus = 1\n") == "exp.cfg:2: bogus: unknown key 'bogus'");
    CHECK(error_of("steps = 3\n\nsteps = 4\n") == "exp.cfg:3: duplicate key 'steps' (first set on line 1)");
    CHECK(error_of("just words\n") == "exp.cfg:1: expected 'key = value'");
    CHECK(error_of("steps =\n") == "exp.cfg:1: missing value for 'steps'");
    CHECK(error_of("# c\nbatch_size = -2\n").rfind("exp.cfg:2: batch_size: expected a non-negative integer", 0) == 0);
    CHECK(error_of("gab = maybe\n").find("expected true or false") != std::string::npos);
    CHECK(error_of("rpe = sinusoid\n").rfind("exp.cfg:1: rpe:", 0) == 0);
  }

  TEST_CASE("cross-field errors point at the setting line") {
    CHECK(error_of("steps = 1\nimage_width = 10\n").rfind("exp.cfg:2: invalid ViT config", 0) == 0);
    CHECK(error_of("num_heads = 3\nsteps = 2\n").rfind("exp.cfg:1:", 0) == 0);
    CHECK(error_of("steps = 2\nnum_classes = 3\n").rfind("exp.cfg:2:", 0) == 0);
    CHECK(error_of("steps = 2\n\nmomentum = 1.5\n").rfind("exp.cfg:3:", 0) == 0);
    ConfigError e("f", 4, "m");
    CHECK(e.line() == 4);
  }

  TEST_CASE("single-line model config round trip") {
    ViTConfig m = ExperimentConfig::default_model();
    m.mlp_ratio = 1.5;
    m.layernorm_eps = 1e-5;
    CHECK(parse_model_config(format_model_config(m)) == m);
    CHECK_THROWS(parse_model_config("image_height=8 frobs=2"));
    CHECK_THROWS(parse_model_config("image_height"));
  }

  TEST_CASE("missing file") {
    CHECK_THROWS_WITH(load_experiment_config("/nonexistent/exp.cfg"), doctest::Contains("/nonexistent/exp.cfg"));
  }
}
