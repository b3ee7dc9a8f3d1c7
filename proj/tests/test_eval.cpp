// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "tmlga/eval.hpp"
#include "tmlga/synthdata.hpp"

using namespace tmlga;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

// Independent discretized oracle: counts 1 ms cells (by midpoint membership)
// covered by each interval.
double grid_tiou(Interval a, Interval b) {
  if (a.lo > a.hi) std::swap(a.lo, a.hi);
  const double lo = std::min(a.lo, b.lo);
  const double hi = std::max(a.hi, b.hi);
  const double step = 1e-3;
  long inter = 0, uni = 0;
  for (double t = lo + step / 2; t < hi; t += step) {
    const bool in_a = t >= a.lo && t <= a.hi;
    const bool in_b = t >= b.lo && t <= b.hi;
    if (in_a && in_b) ++inter;
    if (in_a || in_b) ++uni;
  }
  if (uni == 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

PredictionRecord rec(double ps, double pe, double gs, double ge) {
  PredictionRecord r;
  r.t_s_pred = ps;
  r.t_e_pred = pe;
  r.t_s_gt = gs;
  r.t_e_gt = ge;
  return r;
}

fs::path temp_dir(const std::string& tag) {
  fs::path dir = fs::temp_directory_path() / ("tmlga_eval_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("tiou") {
  SECTION("identical intervals") {
    REQUIRE(tiou({2, 8}, {2, 8}) == 1.0);
  }
  SECTION("disjoint intervals") {
    REQUIRE(tiou({0, 1}, {2, 3}) == 0.0);
  }
  SECTION("hand arithmetic") {
    REQUIRE(tiou({2, 8}, {4, 10}) == Approx(0.5));
  }
  SECTION("symmetry and bounds") {
    RngState rng{5, 0};
    for (int it = 0; it < 200; ++it) {
      Interval a{uniform(rng, 0, 50), 0};
      a.hi = a.lo + uniform(rng, 0, 50);
      Interval b{uniform(rng, 0, 50), 0};
      b.hi = b.lo + uniform(rng, 0, 50);
      const double ab = tiou(a, b);
      REQUIRE(ab == tiou(b, a));
      REQUIRE(ab >= 0.0);
      REQUIRE(ab <= 1.0);
      if (ab == 1.0) {
        REQUIRE(a.lo == Approx(b.lo));
        REQUIRE(a.hi == Approx(b.hi));
      }
    }
  }
  SECTION("inverted prediction is swapped by default, zero in strict mode") {
    REQUIRE(tiou({8, 2}, {4, 10}) == Approx(0.5));
    REQUIRE(tiou({8, 2}, {4, 10}, /*strict_inverted_zero=*/true) == 0.0);
  }
  SECTION("degenerate intervals") {
    REQUIRE(tiou({3, 3}, {3, 3}) == 0.0);  // zero-length union
    REQUIRE(tiou({3, 3}, {2, 4}) == 0.0);
    REQUIRE_THROWS_AS(tiou({0, 1}, {4, 2}), domain_error);
  }
  SECTION("agrees with the 1 ms grid oracle on 1000 random pairs") {
    RngState rng{17, 0};
    double worst = 0;
    for (int it = 0; it < 1000; ++it) {
      Interval a{uniform(rng, 0, 100), 0};
      a.hi = a.lo + uniform(rng, 0.01, 100 - a.lo);
      Interval b{uniform(rng, 0, 100), 0};
      b.hi = b.lo + uniform(rng, 0.01, 100 - b.lo);
      worst = std::max(worst, std::fabs(tiou(a, b) - grid_tiou(a, b)));
    }
    INFO("worst deviation " << worst);
    REQUIRE(worst <= 2e-3);
  }
}

TEST_CASE("accuracy_at and mean_tiou") {
  SECTION("exact predictions score 1 at any alpha") {
    std::vector<PredictionRecord> rs{rec(1, 5, 1, 5), rec(0, 2, 0, 2)};
    for (double a : {0.1, 0.5, 0.99, 1.0}) REQUIRE(accuracy_at(rs, a) == 1.0);
    REQUIRE(mean_tiou(rs) == 1.0);
  }
  SECTION("threshold is inclusive") {
    // tIoU exactly 0.5
    std::vector<PredictionRecord> rs{rec(2, 8, 4, 10)};
    REQUIRE(record_tiou(rs[0]) == Approx(0.5));
    REQUIRE(accuracy_at(rs, 0.5) == 1.0);
  }
  SECTION("hand count") {
    std::vector<PredictionRecord> rs{rec(0, 6, 0, 10), rec(0, 4, 0, 10)};  // tIoUs 0.6, 0.4
    REQUIRE(accuracy_at(rs, 0.5) == Approx(0.5));
  }
  SECTION("mean of extremes and hand mean") {
    std::vector<PredictionRecord> rs{rec(0, 2, 0, 2), rec(5, 6, 8, 9)};
    REQUIRE(mean_tiou(rs) == Approx(0.5));
    std::vector<PredictionRecord> rs2{rec(0, 5, 0, 10), rec(0, 2.5, 0, 10), rec(0, 7.5, 0, 10)};
    REQUIRE(mean_tiou(rs2) == Approx(0.5));
  }
  SECTION("accuracy is non-increasing in alpha") {
    RngState rng{23, 0};
    std::vector<PredictionRecord> rs;
    for (int i = 0; i < 60; ++i) {
      const double gs = uniform(rng, 0, 40), ge = gs + uniform(rng, 0.5, 20);
      const double ps = gs + uniform(rng, -5, 5), pe = ge + uniform(rng, -5, 5);
      rs.push_back(rec(ps, pe, gs, ge));
    }
    double prev = 1.1;
    for (double a = 0.05; a <= 1.0; a += 0.05) {
      const double acc = accuracy_at(rs, a);
      REQUIRE(acc <= prev);
      prev = acc;
    }
  }
  SECTION("empty record sets are rejected") {
    REQUIRE_THROWS_AS(accuracy_at({}, 0.5), config_error);
    REQUIRE_THROWS_AS(mean_tiou({}), config_error);
    REQUIRE_THROWS_AS(accuracy_at({rec(0, 1, 0, 1)}, 0.0), domain_error);
  }
}

TEST_CASE("report output") {
  std::vector<PredictionRecord> rs{rec(0, 6, 0, 10), rec(0, 4, 0, 10)};
  EvalReport rep = evaluate(rs);
  REQUIRE(rep.count == 2);
  nlohmann::json j = report_to_json(rep);
  REQUIRE(j.at("accuracy").contains("0.3"));
  REQUIRE(j.at("accuracy").contains("0.5"));
  REQUIRE(j.at("accuracy").contains("0.7"));
  REQUIRE(j.at("accuracy").at("0.5").get<double>() == Approx(0.5));
  REQUIRE(j.at("count").get<int>() == 2);
  REQUIRE(j.contains("miou"));
  const std::string table = report_table(rep);
  REQUIRE(table.find("acc@0.5") != std::string::npos);
  REQUIRE(table.find("mIoU") != std::string::npos);
}

TEST_CASE("prediction records round trip, ground truth joins from the manifest") {
  fs::path dir = temp_dir("jsonl");
  std::vector<PredictionRecord> rs;
  PredictionRecord r;
  r.video_id = "vid1";
  r.query = "person action1 object";
  r.t_s_pred = 1.25;
  r.t_e_pred = 4.5;
  r.tau_s = 3;
  r.tau_e = 9;
  rs.push_back(r);
  write_predictions(dir / "p.jsonl", rs);
  std::vector<PredictionRecord> back = read_predictions(dir / "p.jsonl");
  REQUIRE(back.size() == 1);
  REQUIRE(back[0].video_id == "vid1");
  REQUIRE(back[0].t_s_pred == 1.25);
  REQUIRE(back[0].tau_e == 9);

  DatasetManifest m;
  VideoEntry e;
  e.video_id = "vid1";
  e.feature_path = "x";
  e.l = 500;
  e.fps = 25;
  e.annotations.push_back({"person action1 object", 1.0, 5.0});
  m.entries.push_back(e);
  attach_ground_truth(back, m);
  REQUIRE(back[0].t_s_gt == 1.0);
  REQUIRE(back[0].t_e_gt == 5.0);

  SECTION("mismatched identity is rejected") {
    back[0].video_id = "other";
    REQUIRE_THROWS_AS(attach_ground_truth(back, m), config_error);
  }
  SECTION("count mismatch is rejected") {
    back.push_back(back[0]);
    REQUIRE_THROWS_AS(attach_ground_truth(back, m), config_error);
  }
}

TEST_CASE("run_ablation shape on a micro benchmark") {
  fs::path dir = temp_dir("ablate");
  SynthSpec spec;
  spec.num_videos = 8;
  spec.n = 12;
  spec.d_v = 6;
  spec.num_actions = 2;
  spec.moment_len_range = {3, 5};
  spec.emb_dim = 4;
  spec.seed = 3;
  SynthOutput train_out = generate(spec, dir, "train");
  SynthSpec test_spec = spec;
  test_spec.num_videos = 4;
  SynthOutput test_out = generate(test_spec, dir, "test");

  TrainConfig base;
  base.epochs = 1;
  base.u = 4;
  base.d = 4;
  base.min_freq = 1;
  const std::vector<std::uint64_t> seeds{1, 2};
  AblationResult res = run_ablation(train_out.manifest_path, test_out.manifest_path,
                                    train_out.embeddings_path, base, seeds);
  REQUIRE(res.configs.size() == 4);
  REQUIRE(res.configs[0].name == "NLL");
  REQUIRE(res.configs[1].name == "KL");
  REQUIRE(res.configs[2].name == "NLL+AL");
  REQUIRE(res.configs[3].name == "KL+AL");
  for (const AblationConfigResult& cr : res.configs) {
    REQUIRE(cr.runs.size() == 2);
    REQUIRE(cr.mean.count == 4);
    for (const AblationRun& run : cr.runs) {
      REQUIRE(run.report.accuracy_at.size() == 3);
    }
  }

  SECTION("parallel mode returns identical numbers") {
    AblationResult par = run_ablation(train_out.manifest_path, test_out.manifest_path,
                                      train_out.embeddings_path, base, seeds, EvalOptions{},
                                      /*parallel=*/true);
    for (std::size_t c = 0; c < 4; ++c) {
      for (std::size_t s = 0; s < seeds.size(); ++s) {
        REQUIRE(par.configs[c].runs[s].report.mean_tiou ==
                res.configs[c].runs[s].report.mean_tiou);
        for (double a : res.alphas) {
          REQUIRE(par.configs[c].runs[s].report.accuracy_at.at(a) ==
                  res.configs[c].runs[s].report.accuracy_at.at(a));
        }
      }
    }
  }
  SECTION("json and table render") {
    nlohmann::json j = ablation_to_json(res);
    REQUIRE(j.at("configs").size() == 4);
    const std::string table = ablation_table(res);
    REQUIRE(table.find("KL+AL") != std::string::npos);
  }
}
