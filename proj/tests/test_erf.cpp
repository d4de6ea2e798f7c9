#include <doctest.h>

#include "gabvit/erf.hpp"

#include <algorithm>
#include <cmath>

using namespace gabvit;

namespace {

ViTConfig grid4(bool gab) {
  ViTConfig cfg;
  cfg.image_height = cfg.image_width = 16;
  cfg.patch_size = 4;
  cfg.use_gab = gab;
  return cfg;
}

double mean_feature(const Tensor64& image, const ViTModel<double>& model, std::size_t target) {
  NoGradGuard g;
  return forward(image, model).features.matrix().row(Eigen::Index(target)).mean();
}

}  // namespace

TEST_SUITE("erf") {
  TEST_CASE("central patch index") {
    CHECK(central_patch_index(1, 1) == 0);
    CHECK(central_patch_index(3, 3) == 4);
    CHECK(central_patch_index(14, 14) == 105);
    CHECK(central_patch_index(2, 4) == 6);
    CHECK_THROWS(central_patch_index(0, 3));
  }

  TEST_CASE("input gradient matches central differences at 20 pixels") {
    ViTConfig cfg = grid4(true);
    cfg.use_ape = true;
    cfg.rpe_kind = RpeKind::relposmlp;
    cfg.rpe_hidden = 16;
    ViTModel<double> model(cfg, 3);
    const auto img = noise_images(cfg, 4, 1)[0].cast<double>();
    const std::size_t target = 5;
    const auto grad = input_gradient(img, model, target);
    REQUIRE(grad.shape() == Shape{16, 16});
    for (std::size_t i = 0; i < 20; ++i) {
      const std::size_t px = (i * 37 + 11) % 256;
      const double h = 1e-5;
      auto plus = img.detach(), minus = img.detach();
      plus.mutable_data()[Eigen::Index(px)] += h;
      minus.mutable_data()[Eigen::Index(px)] -= h;
      const double fd = (mean_feature(plus, model, target) - mean_feature(minus, model, target)) / (2 * h);
      CHECK(std::abs(grad[px] - fd) <= 1e-7 + 1e-5 * std::abs(fd));
    }
  }

  TEST_CASE("channels are averaged") {
    ViTConfig cfg;
    cfg.channels = 3;
    ViTModel<double> model(cfg, 8);
    const auto img = noise_images(cfg, 1, 1)[0].cast<double>();
    TapeScope scope;
    auto x = img.detach();
    x.set_requires_grad(true);
    const auto out = forward(x, model);
    backward(mean_over_dim(reshape(select_rows(out.features, 2, 1), {cfg.embed_dim}), 0));
    const auto g = input_gradient(img, model, 2);
    for (std::size_t p = 0; p < 64; ++p) {
      const double expect = (x.grad()[Eigen::Index(3 * p)] + x.grad()[Eigen::Index(3 * p + 1)] +
                             x.grad()[Eigen::Index(3 * p + 2)]) / 3;
      CHECK(std::abs(g[p] - expect) < 1e-15);
    }
  }

  TEST_CASE("map is the rectified gradient; parameters receive no gradient") {
    ViTModel<float> model(grid4(false), 1);
    const auto img = noise_images(model.config(), 2, 1)[0];
    const auto g = input_gradient(img, model, 5);
    const auto e = erf_single(img, model, 5);
    CHECK((e.data() == g.data().max(0.0f)).all());
    CHECK((e.data() >= 0.0f).all());
    for (const auto& [name, t] : model.named_parameters()) CHECK_FALSE(t.has_grad());
    CHECK_THROWS_AS(erf_single(img, model, 16), std::out_of_range);
  }

  TEST_CASE("zero patch projection gives an all-zero map") {
    ViTModel<float> model(grid4(true), 1);
    model.patch_projection.mutable_data().setZero();
    const auto images = noise_images(model.config(), 3, 4);
    const auto erf = erf_dataset(std::span<const Tensor>(images), model, 5);
    CHECK(erf.values.cwiseAbs().maxCoeff() == 0.0);
    CHECK_FALSE(locality_report(erf).adjacency_ratio.has_value());
  }

  TEST_CASE("dataset average: single image, duplicates and a double accumulation oracle") {
    ViTModel<float> model(grid4(true), 2);
    const auto images = noise_images(model.config(), 5, 6);
    const auto one = erf_dataset(std::span<const Tensor>(images.data(), 1), model, 6);
    CHECK(one.sample_count == 1);
    CHECK((one.values - erf_single(images[0], model, 6).matrix().cast<double>()).cwiseAbs().maxCoeff() == 0.0);

    const std::vector<Tensor> dup{images[1], images[1], images[1]};
    const auto d = erf_dataset(std::span<const Tensor>(dup), model, 6);
    const auto single = erf_dataset(std::span<const Tensor>(&images[1], 1), model, 6);
    CHECK((d.values - single.values).cwiseAbs().maxCoeff() <= 1e-12 * single.values.maxCoeff());

    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(16, 16);
    for (const auto& img : images) acc += erf_single(img, model, 6).matrix().cast<double>();
    acc /= 6.0;
    const auto all = erf_dataset(std::span<const Tensor>(images), model, 6);
    CHECK((all.values - acc).cwiseAbs().maxCoeff() <= 1e-5 * acc.maxCoeff());
    CHECK(all.sample_count == 6);
    CHECK(all.target_patch == 6);
  }

  TEST_CASE("threaded equals serial; order only changes rounding") {
    ViTModel<float> model(grid4(true), 3);
    auto images = noise_images(model.config(), 6, 9);
    const std::span<const Tensor> view(images);
    const auto serial = erf_dataset(view, model, 5, ErfOptions{1});
    const auto threaded = erf_dataset(view, model, 5, ErfOptions{4});
    CHECK((serial.values - threaded.values).cwiseAbs().maxCoeff() == 0.0);
    std::reverse(images.begin(), images.end());
    const auto reversed = erf_dataset(std::span<const Tensor>(images), model, 5);
    CHECK((serial.values - reversed.values).cwiseAbs().maxCoeff() <= 1e-6 * serial.values.maxCoeff());
    CHECK_THROWS(erf_dataset(std::span<const Tensor>(), model, 5));
  }

  TEST_CASE("noise images are seeded") {
    const ViTConfig cfg = grid4(false);
    const auto a = noise_images(cfg, 7, 3), b = noise_images(cfg, 7, 3), c = noise_images(cfg, 8, 1);
    CHECK((a[2].data() == b[2].data()).all());
    CHECK_FALSE((a[0].data() == c[0].data()).all());
    CHECK(a[0].data().minCoeff() >= 0.0f);
    CHECK(a[0].data().maxCoeff() < 1.0f);
  }

  TEST_CASE("locality report on synthetic maps") {
    ErfMap erf;
    erf.config = grid4(false);
    erf.target_patch = 5;
    erf.values = Eigen::MatrixXd::Constant(16, 16, 0.25);
    auto r = locality_report(erf);
    CHECK(r.self_mass == doctest::Approx(0.25));
    REQUIRE(r.adjacency_ratio);
    CHECK(*r.adjacency_ratio == doctest::Approx(1.0));

    // Patch (1,1): adjacent are (0,1),(2,1),(1,0),(1,2); far are rows/cols 3.
    erf.values.setZero();
    erf.values.block(0, 4, 4, 4).setConstant(2.0);
    erf.values.block(12, 12, 4, 4).setConstant(1.0);
    r = locality_report(erf);
    CHECK(r.adjacent_mass == doctest::Approx(0.5));
    CHECK(r.far_mass == doctest::Approx(1.0 / 7));
    CHECK(*r.adjacency_ratio == doctest::Approx(3.5));

    erf.values.setZero();
    erf.values.block(0, 4, 4, 4).setConstant(2.0);
    CHECK_FALSE(locality_report(erf).adjacency_ratio.has_value());
  }

  TEST_CASE("grids without a far class raise LocalityError") {
    ErfMap erf;
    erf.config = ViTConfig{};  // 2x2 grid
    erf.values = Eigen::MatrixXd::Ones(8, 8);
    CHECK_THROWS_AS(locality_report(erf), LocalityError);
    erf.config.image_height = erf.config.image_width = 12;  // 3x3, centre has no far class
    erf.values = Eigen::MatrixXd::Ones(12, 12);
    erf.target_patch = 4;
    CHECK_THROWS_AS(locality_report(erf), LocalityError);
    erf.target_patch = 0;
    CHECK(locality_report(erf).adjacency_ratio.has_value());
  }

  TEST_CASE("reinit of a zero-initialized RelPosBias leaves the map unchanged") {
    ViTConfig cfg = grid4(false);
    cfg.rpe_kind = RpeKind::relposbias;
    ViTModel<float> model(cfg, 4);
    const auto images = noise_images(cfg, 1, 3);
    const auto r = reinit_experiment(model, ReinitTarget::rpe, 9, std::span<const Tensor>(images));
    CHECK((r.before.values - r.after.values).cwiseAbs().maxCoeff() == 0.0);
  }

  TEST_CASE("reinit is seeded, leaves the input model alone and rejects absent components") {
    ViTConfig cfg = grid4(true);
    cfg.use_ape = true;
    ViTModel<float> model(cfg, 4);
    const auto images = noise_images(cfg, 1, 2);
    const auto a = reinit_experiment(model, ReinitTarget::ape, 3, std::span<const Tensor>(images));
    const auto b = reinit_experiment(model, ReinitTarget::ape, 3, std::span<const Tensor>(images));
    CHECK((a.after.values - b.after.values).cwiseAbs().maxCoeff() == 0.0);
    CHECK(model.gab->amplitude(0).item() == 1.0f);
    CHECK_THROWS_AS(reinit_experiment(model, ReinitTarget::rpe, 3, std::span<const Tensor>(images)),
                    std::invalid_argument);
    CHECK(parse_reinit_target("gab") == ReinitTarget::gab);
    CHECK(to_string(ReinitTarget::rpe) == "rpe");
    CHECK_THROWS(parse_reinit_target("cls"));
  }

  TEST_CASE("redrawing a strong Gaussian bias lowers the adjacency ratio") {
    ViTModel<float> model(grid4(true), 5);
    for (std::size_t l = 0; l < 2; ++l) model.gab->set(l, 3.0f, 0.7f);
    const auto images = noise_images(model.config(), 2, 16);
    const auto r = reinit_experiment(model, ReinitTarget::gab, 1, std::span<const Tensor>(images), ErfOptions{4});
    const double before = *locality_report(r.before).adjacency_ratio;
    const double after = *locality_report(r.after).adjacency_ratio;
    MESSAGE("adjacency ratio before " << before << " after " << after);
    CHECK(after < before);
  }
}
