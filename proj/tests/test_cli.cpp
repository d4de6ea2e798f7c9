#include <doctest.h>

#include "gabvit/checkpoint.hpp"
#include "gabvit/cli.hpp"
#include "gabvit/erf.hpp"
#include "gabvit/heatmap.hpp"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <map>
#include <sstream>

using namespace gabvit;
namespace fs = std::filesystem;

namespace {

struct Run {
  int status = -1;
  std::string out;
  std::string err;
};

fs::path scratch() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "gabvit_cli_tests";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

Run run(const std::string& args) {
  const auto out = scratch() / "stdout.txt", err = scratch() / "stderr.txt";
  const std::string cmd = std::string(GABVIT_CLI_PATH) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int raw = std::system(cmd.c_str());
  return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, read_binary_file(out.string()), read_binary_file(err.string())};
}

std::map<std::string, std::string> records(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

std::string write_config(const std::string& name, const std::string& text) {
  const auto path = (scratch() / name).string();
  write_binary_file(path, text);
  return path;
}

// Untrained 16x16 checkpoint with a 4x4 patch grid.
std::string grid4_checkpoint(const std::string& name, const std::string& extra = "") {
  const auto cfg = write_config(name + ".cfg", "image_height = 16\nimage_width = 16\nsteps = 0\n" + extra);
  const auto ckpt = (scratch() / (name + ".ckpt")).string();
  REQUIRE(run("train " + cfg + " " + ckpt).status == 0);
  return ckpt;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("train writes a checkpoint and a loss curve with one row per step") {
    const auto cfg = write_config("ten.cfg", "steps = 10\nbatch_size = 4\nseed = 3\n");
    const auto ckpt = (scratch() / "ten.ckpt").string();
    const auto r = run("train " + cfg + " " + ckpt);
    REQUIRE(r.status == 0);
    const auto rec = records(r.out);
    CHECK(rec.at("steps") == "10");
    CHECK(rec.at("loss_curve") == ckpt + ".csv");
    const auto csv = read_binary_file(ckpt + ".csv");
    std::istringstream in(csv);
    std::string header;
    std::getline(in, header);
    CHECK(header == "step,loss,A_0,sigma_0,A_1,sigma_1");
    std::size_t rows = 0;
    for (std::string line; std::getline(in, line);) ++rows;
    CHECK(rows == 10);

    const auto again = (scratch() / "ten_again.ckpt").string();
    REQUIRE(run("train " + cfg + " " + again + " --csv " + again + ".curve").status == 0);
    CHECK(read_binary_file(again + ".curve") == csv);
    CHECK(read_binary_file(again) == read_binary_file(ckpt));
  }

  TEST_CASE("train reports bad configs and missing output directories") {
    const auto cfg = write_config("bad.cfg", "steps = 2\nbogus = 1\n");
    auto r = run("train " + cfg + " " + (scratch() / "x.ckpt").string());
    CHECK(r.status != 0);
    CHECK(r.err == "error: " + cfg + ":2: bogus: unknown key 'bogus'\n");

    const auto good = write_config("good.cfg", "steps = 1\n");
    const auto missing = (scratch() / "nope" / "x.ckpt").string();
    r = run("train " + good + " " + missing);
    CHECK(r.status != 0);
    CHECK(r.err.find((scratch() / "nope").string()) != std::string::npos);
    CHECK_FALSE(fs::exists(missing));
  }

  TEST_CASE("erf output is deterministic and its ratio can be recomputed from the raw grid") {
    const auto ckpt = grid4_checkpoint("erf");
    for (const char* source : {"noise:7:1", "noise:7:64"}) {
      const auto a = (scratch() / "erf_a.pgm").string(), b = (scratch() / "erf_b.pgm").string();
      const auto ra = run("erf " + ckpt + " " + source + " " + a + " --threads 3");
      const auto rb = run("erf " + ckpt + " " + source + " " + b);
      REQUIRE(ra.status == 0);
      CHECK(ra.out == rb.out);
      CHECK(read_binary_file(a) == read_binary_file(b));
      CHECK(read_binary_file(a + ".grid") == read_binary_file(b + ".grid"));

      const auto rec = records(ra.out);
      CHECK(rec.at("target_patch") == "10");
      ErfMap offline;
      offline.values = parse_raw_grid(read_binary_file(a + ".grid"));
      offline.target_patch = 10;
      offline.config.image_height = offline.config.image_width = 16;
      const auto report = locality_report(offline);
      REQUIRE(report.adjacency_ratio);
      CHECK(rec.at("adjacency_ratio") == fixed6(*report.adjacency_ratio));
    }
  }

  TEST_CASE("erf on a 2x2 grid reports locality as unavailable") {
    const auto cfg = write_config("small.cfg", "steps = 0\n");
    const auto ckpt = (scratch() / "small.ckpt").string();
    REQUIRE(run("train " + cfg + " " + ckpt).status == 0);
    const auto r = run("erf " + ckpt + " noise:1:2 " + (scratch() / "small.pgm").string());
    CHECK(r.status == 0);
    CHECK(r.out.find("locality=unavailable\n") != std::string::npos);
    CHECK(run("erf " + ckpt + " noise:1:2 " + (scratch() / "small.pgm").string() + " --target 4").status != 0);
    CHECK(run("erf " + ckpt + " noise:1 " + (scratch() / "small.pgm").string()).status != 0);
  }

  TEST_CASE("rpe-slice components") {
    const auto ckpt = grid4_checkpoint("slice", "rpe = relposbias\n");
    const auto gab = (scratch() / "gab.pgm").string();
    auto r = run("rpe-slice " + ckpt + " 1 10 " + gab + " --component gab");
    REQUIRE(r.status == 0);
    const auto g = parse_raw_grid(read_binary_file(gab + ".grid"));
    Eigen::Index row = 0, col = 0;
    CHECK(g.maxCoeff(&row, &col) == doctest::Approx(1.0));
    CHECK(row == 2);
    CHECK(col == 2);

    const auto rpe = (scratch() / "rpe.pgm").string();
    r = run("rpe-slice " + ckpt + " 0 10 " + rpe + " --component rpe");
    REQUIRE(r.status == 0);
    CHECK(records(r.out).at("constant") == "true");
    CHECK(read_binary_file(rpe + ".meta").find("constant=true") != std::string::npos);

    const auto model = load_checkpoint(ckpt);
    const auto both = bias_slice(model, 1, 5, SliceComponent::both);
    const Eigen::MatrixXd sum = bias_slice(model, 1, 5, SliceComponent::rpe) + bias_slice(model, 1, 5, SliceComponent::gab);
    CHECK((both - sum).cwiseAbs().maxCoeff() == 0.0);

    r = run("rpe-slice " + ckpt + " 2 16 " + rpe);
    CHECK(r.status != 0);
    CHECK(r.err.find("valid layers are [0, 2)") != std::string::npos);
    CHECK(r.err.find("valid patches are [0, 16)") != std::string::npos);
    CHECK(run("rpe-slice " + ckpt + " 0 0 " + rpe + " --head 2").status != 0);
    CHECK(run("rpe-slice " + ckpt + " 0 0 " + rpe + " --component cls").status != 0);
  }

  TEST_CASE("fit prints eight keys and rejects constant input") {
    Eigen::MatrixXd g(9, 9);
    for (Eigen::Index y = 0; y < 9; ++y) {
      for (Eigen::Index x = 0; x < 9; ++x) g(y, x) = std::exp(-double((x - 4) * (x - 4) + (y - 4) * (y - 4)) / 8);
    }
    const auto path = (scratch() / "bump.grid").string();
    write_binary_file(path, format_raw_grid(g));
    auto r = run("fit " + path);
    REQUIRE(r.status == 0);
    const auto rec = records(r.out);
    CHECK(rec.size() == 8);
    CHECK(rec.at("sigma_x") == "2.000000");
    CHECK(rec.at("converged") == "true");

    const auto flat = (scratch() / "flat.grid").string();
    write_binary_file(flat, format_raw_grid(Eigen::MatrixXd::Constant(4, 4, 0.5)));
    r = run("fit " + flat);
    CHECK(r.status != 0);
    CHECK(r.err.find("R² undefined for constant input") != std::string::npos);
  }

  TEST_CASE("reinit writes before/after maps reproducibly") {
    const auto ckpt = grid4_checkpoint("reinit", "rpe = none\n");
    const auto a = (scratch() / "re_a").string(), b = (scratch() / "re_b").string();
    const auto ra = run("reinit " + ckpt + " gab 4 " + a + " --images noise:0:4");
    const auto rb = run("reinit " + ckpt + " gab 4 " + b + " --images noise:0:4");
    REQUIRE(ra.status == 0);
    CHECK(ra.out == rb.out);
    CHECK(read_binary_file(a + "/comparison.txt") == ra.out);
    CHECK(read_binary_file(a + "/after.pgm") == read_binary_file(b + "/after.pgm"));
    const auto rec = records(ra.out);
    CHECK(rec.at("component") == "gab");
    CHECK(rec.count("before_adjacency_ratio") == 1);
    CHECK(rec.count("after_adjacency_ratio") == 1);

    const auto r = run("reinit " + ckpt + " rpe 4 " + a);
    CHECK(r.status != 0);
    CHECK(r.err.find("no relative positional embedding") != std::string::npos);
  }

  TEST_CASE("gradcheck exits cleanly and usage errors do not") {
    const auto r = run("gradcheck --seed 2");
    CHECK(r.status == 0);
    CHECK(r.out.find("audits passed") != std::string::npos);
    CHECK(run("").status != 0);
    CHECK(run("frobnicate").status != 0);
  }

  TEST_CASE("image directories are read in name order and shape-checked") {
    const auto dir = scratch() / "imgs";
    fs::create_directories(dir);
    ViTConfig cfg;
    std::string px(64, char(0));
    px[0] = char(255);
    write_binary_file((dir / "b.pgm").string(), "P5\n8 8\n255\n" + std::string(64, char(51)));
    write_binary_file((dir / "a.pgm").string(), "P5\n8 8\n255\n" + px);
    write_binary_file((dir / "notes.txt").string(), "ignored");
    const auto images = load_image_source(dir.string(), cfg);
    REQUIRE(images.size() == 2);
    CHECK(images[0][0] == 1.0f);
    CHECK(images[1][0] == doctest::Approx(0.2));
    cfg.image_height = 16;
    CHECK_THROWS_WITH(load_image_source(dir.string(), cfg), doctest::Contains("a.pgm"));
    CHECK_THROWS(load_image_source("noise:1:0", cfg));
    CHECK(fixed6(1.0 / 3) == "0.333333");
  }
}
