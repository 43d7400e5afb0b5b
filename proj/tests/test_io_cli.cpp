#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "geomatch/config.hpp"
#include "geomatch/io.hpp"
#include "support/ham_states.hpp"
#include "support/oracles.hpp"

using namespace geomatch;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("geomatch_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(GEOMATCH_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

}  // namespace

TEST_SUITE("io_cli") {
  TEST_CASE("pgm round trip, both encodings") {
    const fs::path dir = temp_dir("pgm");
    PgmImage img;
    img.width = img.height = 5;
    img.maxval = 255;
    std::mt19937_64 rng(3);
    for (int i = 0; i < 25; ++i) img.values.push_back(double(rng() % 256) / 255.0);
    save_pgm((dir / "a.pgm").string(), img, false);
    const PgmImage a = load_pgm((dir / "a.pgm").string());
    save_pgm((dir / "b.pgm").string(), img, true);
    const PgmImage b = load_pgm((dir / "b.pgm").string());
    for (int i = 0; i < 25; ++i) {
      CHECK(a.values[i] == doctest::Approx(img.values[i]).epsilon(1e-12));
      CHECK(b.values[i] == doctest::Approx(img.values[i]).epsilon(1e-12));
    }
  }

  TEST_CASE("pgm rejects bad magic") {
    const fs::path dir = temp_dir("badmagic");
    atomic_write((dir / "bad.pgm").string(), "P7\n2 2\n255\n0 0 0 0\n");
    CHECK_THROWS_AS(load_pgm((dir / "bad.pgm").string()), FormatError);
  }

  TEST_CASE("config: defaults, strict keys, round trip") {
    const RunConfig def = parse_config("");
    CHECK(def.kernel_v.sigma == doctest::Approx(0.15));
    CHECK(def.steps == 20);

    CHECK_THROWS_AS(parse_config("integrator.stepz 12\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("integrator.steps twelve\n"), ConfigError);

    RunConfig cfg;
    cfg.kernel_v.sigma = 0.123456789012345;
    cfg.steps = 33;
    cfg.scheme = Scheme::euler;
    cfg.sigma_attach = 0.05;
    const RunConfig back = parse_config(serialize_config(cfg));
    CHECK(back.kernel_v.sigma == cfg.kernel_v.sigma);
    CHECK(back.steps == 33);
    CHECK(back.scheme == Scheme::euler);
    CHECK(back.sigma_attach == cfg.sigma_attach);

    // '=' separated form is accepted too
    const RunConfig eq = parse_config("integrator.steps = 7\n");
    CHECK(eq.steps == 7);
  }

  TEST_CASE("momenta round trip at full precision") {
    const fs::path dir = temp_dir("momenta");
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-1, 1);
    const int n = 6;
    MomentumTriple mom = MomentumTriple::zero(n * n, 5);
    for (auto& v : mom.p_a) v = {u(rng), u(rng)};
    for (auto& v : mom.p_b) v = {u(rng), u(rng)};
    for (auto& v : mom.p_c) v = u(rng);
    save_momenta((dir / "m.txt").string(), mom, n);
    int gn = 0, nc = 0;
    const MomentumTriple back = load_momenta((dir / "m.txt").string(), &gn, &nc);
    CHECK(gn == n);
    CHECK(nc == 5);
    for (std::size_t j = 0; j < mom.p_a.size(); ++j) {
      CHECK(back.p_a[j].x == mom.p_a[j].x);
      CHECK(back.p_a[j].y == mom.p_a[j].y);
      CHECK(back.p_c[j] == mom.p_c[j]);
    }
    for (std::size_t k = 0; k < mom.p_b.size(); ++k) CHECK(back.p_b[k].x == mom.p_b[k].x);
  }

  TEST_CASE("curve file round trip") {
    const fs::path dir = temp_dir("curve");
    const PiecewiseImage img = testing::disk_image(16, {0.5, 0.5}, 0.2);
    save_curve((dir / "c.curve").string(), img.jump);
    const JumpCurve back = load_curve((dir / "c.curve").string());
    REQUIRE(back.segments.size() == img.jump.segments.size());
    for (std::size_t k = 0; k < back.segments.size(); ++k) {
      CHECK(back.segments[k].a.x == img.jump.segments[k].a.x);
      CHECK(back.segments[k].f_plus == img.jump.segments[k].f_plus);
      CHECK(back.segments[k].normal.y == img.jump.segments[k].normal.y);
    }
  }

  TEST_CASE("hamiltonian state round trip") {
    const fs::path dir = temp_dir("hamstate");
    std::mt19937_64 rng(11);
    const HamiltonianState st = testing::HamStateDraw::random(rng, 0.5).sample(8);
    save_hamiltonian_state((dir / "s.txt").string(), st);
    const HamiltonianState back = load_hamiltonian_state((dir / "s.txt").string());
    CHECK(back.n == st.n);
    CHECK(back.r == st.r);
    REQUIRE(back.Q0.size() == st.Q0.size());
    for (std::size_t k = 0; k < st.Q0.size(); ++k) CHECK(back.P0[k].x == st.P0[k].x);
    for (int i = 0; i < st.r; ++i)
      for (std::size_t f = 0; f < st.Q[i].size(); ++f) {
        CHECK(back.Q[i][f] == st.Q[i][f]);
        CHECK(back.P[i][f] == st.P[i][f]);
      }
  }

  TEST_CASE("image save/load: single piece and partition") {
    const fs::path dir = temp_dir("image");
    const PiecewiseImage single = single_piece_image(testing::blob_grid(16, {0.5, 0.5}, 0.2));
    save_image(dir.string(), "img", single);
    const PiecewiseImage back = load_image((dir / "img.pgm").string(), (dir / "img.txt").string());
    CHECK(back.pieces.size() == 1);
    CHECK(back.eval({0.5, 0.5}) == doctest::Approx(single.eval({0.5, 0.5})).epsilon(1e-2));

    const PiecewiseImage disk = testing::disk_image(16, {0.5, 0.5}, 0.2);
    save_image(dir.string(), "disk", disk);
    const PiecewiseImage disk_back =
        load_image((dir / "disk.pgm").string(), (dir / "disk.txt").string());
    CHECK(disk_back.pieces.size() == 5);
    CHECK(disk_back.jump.segments.size() == disk.jump.segments.size());
    CHECK(disk_back.eval({0.5, 0.5}) == doctest::Approx(1.0).epsilon(1e-6));
  }

  TEST_CASE("overlapping sidecar pieces raise PartitionGapError") {
    const fs::path dir = temp_dir("overlap");
    save_pgm((dir / "g.pgm").string(), pgm_from_grid(IntensityGrid::constant(8, 0.5)));
    std::ostringstream sidecar;
    sidecar << "piece g.pgm polygon 4 0 0 0.6 0 0.6 1 0 1\n";
    sidecar << "piece g.pgm polygon 4 0.4 0 1 0 1 1 0.4 1\n";
    atomic_write((dir / "bad.txt").string(), sidecar.str());
    CHECK_THROWS_AS(load_image((dir / "g.pgm").string(), (dir / "bad.txt").string()),
                    PartitionGapError);
  }

  TEST_CASE("cli: no arguments is a usage error") { CHECK(run_cli("") == 1); }

  TEST_CASE("cli: shoot with zero momenta reproduces the input bitwise") {
    const fs::path dir = temp_dir("cli_shoot");
    // small smooth image, written by the same writer the CLI uses
    save_pgm((dir / "src.pgm").string(), pgm_from_grid(testing::blob_grid(12, {0.5, 0.5}, 0.2)));
    atomic_write((dir / "src.txt").string(), "single\n");
    atomic_write((dir / "zero.mom").string(), "momenta 10 0\n");
    atomic_write((dir / "run.cfg").string(), "integrator.steps 8\n");
    const std::string args = "shoot --image " + (dir / "src.pgm").string() + " --sidecar " +
                             (dir / "src.txt").string() + " --momenta " +
                             (dir / "zero.mom").string() + " --config " +
                             (dir / "run.cfg").string() + " --out-dir " + (dir / "out").string();
    REQUIRE(run_cli(args) == 0);
    CHECK(slurp(dir / "out" / "final.pgm") == slurp(dir / "src.pgm"));
    CHECK(fs::exists(dir / "out" / "trajectory.csv"));
    CHECK(fs::exists(dir / "out" / "speeds.csv"));
  }

  TEST_CASE("cli: determinism of shoot outputs") {
    const fs::path dir = temp_dir("cli_det");
    save_pgm((dir / "src.pgm").string(), pgm_from_grid(testing::blob_grid(12, {0.45, 0.5}, 0.18)));
    atomic_write((dir / "src.txt").string(), "single\n");
    std::ostringstream mom;
    mom << "momenta 10 0\n";
    mom << "a 4 5 0.4 0.1\n";
    mom << "c 5 5 0.3\n";
    atomic_write((dir / "m.mom").string(), mom.str());
    atomic_write((dir / "run.cfg").string(), "integrator.steps 10\nrng.seed 77\n");
    const std::string base = "shoot --image " + (dir / "src.pgm").string() + " --sidecar " +
                             (dir / "src.txt").string() + " --momenta " + (dir / "m.mom").string() +
                             " --config " + (dir / "run.cfg").string() + " --out-dir ";
    REQUIRE(run_cli(base + (dir / "out1").string()) == 0);
    REQUIRE(run_cli(base + (dir / "out2").string()) == 0);
    CHECK(slurp(dir / "out1" / "trajectory.csv") == slurp(dir / "out2" / "trajectory.csv"));
    CHECK(slurp(dir / "out1" / "speeds.csv") == slurp(dir / "out2" / "speeds.csv"));
    CHECK(run_cli("report --run-dir " + (dir / "out1").string()) == 0);
  }

  TEST_CASE("cli: verify-lemma scene file") {
    const fs::path dir = temp_dir("cli_lemma");
    std::ostringstream scene;
    scene << "polygon U 4 0 0 0.5 0 0.5 1 0 1\n";
    scene << "polygon V 4 0 0 0.5 0 0.5 1 0 1\n";
    scene << "field affine 0 0 0 0 1 0\n";
    scene << "f quad 1 0 0 0 0 0\n";
    scene << "g quad 1 0 0 0 0 0\n";
    scene << "m 256\n";
    atomic_write((dir / "scene.txt").string(), scene.str());
    CHECK(run_cli("verify-lemma --scene " + (dir / "scene.txt").string() + " --out " +
                  (dir / "out.csv").string()) == 0);
    const std::string csv = slurp(dir / "out.csv");
    CHECK(csv.find("rel_err") != std::string::npos);
  }

  TEST_CASE("cli: ham-integrate runs and reports conservation") {
    const fs::path dir = temp_dir("cli_ham");
    std::mt19937_64 rng(13);
    const HamiltonianState st = testing::HamStateDraw::random(rng, 0.5).sample(10);
    save_hamiltonian_state((dir / "state.txt").string(), st);
    REQUIRE(run_cli("ham-integrate --state " + (dir / "state.txt").string() + " --T 1 --steps 20" +
                    " --out-dir " + (dir / "out").string()) == 0);
    CHECK(fs::exists(dir / "out" / "hamiltonian_energy.csv"));
    CHECK(fs::exists(dir / "out" / "final_state.txt"));
    // the emitted state is loadable
    const HamiltonianState fin = load_hamiltonian_state((dir / "out" / "final_state.txt").string());
    CHECK(fin.n == st.n);
  }

  TEST_CASE("cli: match writes all run artifacts") {
    const fs::path dir = temp_dir("cli_match");
    save_image(dir.string(), "src",
               single_piece_image(testing::blob_grid(16, {0.45, 0.5}, 0.15)));
    save_image(dir.string(), "dst",
               single_piece_image(testing::blob_grid(16, {0.52, 0.5}, 0.15)));
    atomic_write((dir / "run.cfg").string(),
                 "kernel_v.sigma 0.18\nmatch.sigma_attach 0.1\ninteg"
                 "rator.steps 6\nmatch.max_iters 4\nmatch.grid_n 12\n");
    const std::string args =
        "match --source " + (dir / "src.pgm").string() + " --source-sidecar " +
        (dir / "src.txt").string() + " --target " + (dir / "dst.pgm").string() +
        " --target-sidecar " + (dir / "dst.txt").string() + " --config " +
        (dir / "run.cfg").string() + " --out-dir " + (dir / "out").string();
    REQUIRE(run_cli(args) == 0);
    for (const char* f : {"final.pgm", "momenta.txt", "energy_history.csv", "deformed_grid.csv",
                          "speeds.csv"})
      CHECK(fs::exists(dir / "out" / f));
    // energy history is non-increasing
    std::ifstream in(dir / "out" / "energy_history.csv");
    std::string line;
    std::getline(in, line);
    double prev = 1e300;
    while (std::getline(in, line)) {
      const std::size_t c1 = line.find(',');
      const std::size_t c2 = line.find(',', c1 + 1);
      const double e = std::stod(line.substr(c1 + 1, c2 - c1 - 1));
      CHECK(e <= prev + 1e-12);
      prev = e;
    }
  }
}
