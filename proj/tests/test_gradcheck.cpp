#include <doctest.h>

#include "gabvit/cli.hpp"
#include "gabvit/config_io.hpp"
#include "gabvit/gradcheck.hpp"

#include <algorithm>
#include <map>
#include <sstream>

using namespace gabvit;

namespace {

// y = x^2 with a backward rule that is off by 50%.
Tensor broken_square(const Tensor& x) {
  Tensor out(x.shape(), x.data().square());
  if (autodiff::should_record(x)) {
    autodiff::record(out, "broken_square", [x, out] {
      if (autodiff::wants_grad(x)) autodiff::accumulate_grad(x, 3.0f * x.data() * out.grad());
    });
  }
  return out;
}

GradAudit broken_audit() {
  return {"broken_square", [](std::uint64_t, const GradTolerance& tol) {
            const std::vector<float> xs{0.5f, -1.0f, 2.0f};
            TapeScope scope;
            auto x = Tensor::from_vector({3}, xs, true);
            backward(sum(broken_square(x)));
            Eigen::ArrayXd fd(3);
            for (int i = 0; i < 3; ++i) fd[i] = 2.0 * xs[std::size_t(i)];
            return compare_gradients("broken_square", x.grad().cast<double>(), fd, tol);
          }};
}

}  // namespace

TEST_SUITE("gradcheck") {
  TEST_CASE("every engine op is audited exactly once") {
    std::map<std::string, int> seen;
    for (const auto& a : op_audits()) ++seen[a.name];
    for (auto op : kEngineOps) CHECK(seen[std::string(op)] == 1);
    CHECK(seen["gaussian_table"] == 1);
    CHECK(seen.size() == kEngineOps.size() + 1);
  }

  TEST_CASE("model audits cover each layer's bias parameters and the input") {
    const auto audits = model_audits(ExperimentConfig::default_model());
    std::vector<std::string> names;
    for (const auto& a : audits) names.push_back(a.name);
    CHECK(names.size() == 5);
    for (const auto& a : audits) {
      const auto r = a.run(1, GradTolerance{});
      INFO(r.name << " rel " << r.max_rel_error);
      CHECK(r.passed);
      CHECK(r.checked > 0);
    }
    ViTConfig off = ExperimentConfig::default_model();
    off.use_gab = false;
    CHECK(model_audits(off).size() == 1);
  }

  TEST_CASE("compare_gradients tolerance edge") {
    GradTolerance tol;
    Eigen::ArrayXd fd(2), ok(2), bad(2);
    fd << 1.0, 0.0;
    ok << 1.0 + 0.9e-3, 0.9e-5;
    bad << 1.0, 1.1e-5;
    CHECK(compare_gradients("ok", ok, fd, tol).passed);
    const auto r = compare_gradients("bad", bad, fd, tol);
    CHECK_FALSE(r.passed);
    CHECK(r.max_abs_error == doctest::Approx(1.1e-5));
    Eigen::ArrayXd inf(2);
    inf << std::numeric_limits<double>::infinity(), 0;
    CHECK_FALSE(compare_gradients("inf", inf, fd, tol).passed);
  }

  TEST_CASE("a corrupted backward rule fails the run and is named") {
    GradcheckArgs args;
    args.extra_audits.push_back(broken_audit());
    std::ostringstream out, err;
    CHECK(cmd_gradcheck(args, out, err) != 0);
    CHECK(out.str().find("broken_square checked=3") != std::string::npos);
    CHECK(out.str().find("FAIL") != std::string::npos);
    CHECK(err.str().find("gradcheck failed: broken_square") != std::string::npos);
  }

  TEST_CASE("a clean run passes") {
    GradcheckArgs args;
    std::ostringstream out, err;
    CHECK(cmd_gradcheck(args, out, err) == 0);
    CHECK(out.str().find("all 22 audits passed") != std::string::npos);
    CHECK(err.str().empty());
  }

  TEST_CASE("oversized configs are rejected") {
    ViTConfig big;
    big.image_height = big.image_width = 64;
    big.patch_size = 4;  // 256 patches
    big.embed_dim = 32;
    CHECK_THROWS_WITH_AS(run_gradcheck(big, 0), doctest::Contains("4096"), std::invalid_argument);
  }
}
