#include "doctest.h"
#include "oracles.hpp"

#include "morphbench/error.hpp"
#include "morphbench/mad.hpp"
#include "morphbench/random.hpp"

#include <json.hpp>

#include <cmath>

using namespace morphbench;

namespace {

MadScores random_scores(Rng& rng, std::size_t n, double shift, bool coarse) {
  MadScores s;
  for (std::size_t i = 0; i < n; ++i) {
    double a = rng.normal(shift, 1.0);
    double b = rng.normal(0.0, 1.0);
    if (coarse) {
      a = std::round(a * 4) / 4;
      b = std::round(b * 4) / 4;
    }
    s.attack.push_back(a);
    s.bona_fide.push_back(b);
  }
  return s;
}

// Rates at every candidate threshold, counted directly.
std::vector<ErrorRates> scan(const MadScores& s) {
  std::vector<double> ts = s.attack;
  ts.insert(ts.end(), s.bona_fide.begin(), s.bona_fide.end());
  std::sort(ts.begin(), ts.end());
  std::vector<ErrorRates> out;
  for (double t : ts) {
    double a = 0, b = 0;
    for (double x : s.attack) a += x <= t;
    for (double x : s.bona_fide) b += x > t;
    out.push_back({a / s.attack.size(), b / s.bona_fide.size()});
  }
  return out;
}

MadScoreRow row(bool attack, double score, std::string method, std::string medium, std::string split) {
  return {attack, score, std::move(method), std::move(medium), std::move(split)};
}

}  // namespace

TEST_CASE("apcer_bpcer_at") {
  const MadScores s{{0.9, 0.8}, {0.1, 0.2}};
  auto r = apcer_bpcer_at(s, -1.0);
  CHECK(r.apcer == 0.0);
  CHECK(r.bpcer == 1.0);
  r = apcer_bpcer_at(s, 2.0);
  CHECK(r.apcer == 1.0);
  CHECK(r.bpcer == 0.0);
  r = apcer_bpcer_at(s, 0.5);
  CHECK(r.apcer == 0.0);
  CHECK(r.bpcer == 0.0);
  // Ties are bona fide.
  r = apcer_bpcer_at(s, 0.8);
  CHECK(r.apcer == 0.5);
  r = apcer_bpcer_at(s, 0.2);
  CHECK(r.bpcer == 0.0);

  CHECK_THROWS_AS(apcer_bpcer_at({{}, {0.1}}, 0.0), ValueError);
  CHECK_THROWS_AS(apcer_bpcer_at({{0.1}, {}}, 0.0), ValueError);
  CHECK_THROWS_AS(apcer_bpcer_at({{NAN}, {0.1}}, 0.0), ValueError);
}

TEST_CASE("rates are monotone in the threshold") {
  Rng rng(1);
  const auto s = random_scores(rng, 300, 1.0, true);
  ErrorRates last{0.0, 1.0};
  for (int i = -20; i <= 20; ++i) {
    const auto r = apcer_bpcer_at(s, i * 0.25);
    CHECK(r.apcer >= last.apcer);
    CHECK(r.bpcer <= last.bpcer);
    last = r;
  }
}

TEST_CASE("d_eer") {
  CHECK(d_eer({{0.9, 0.8}, {0.1, 0.2}}).eer == 0.0);
  CHECK(d_eer({{1, 1, 1}, {0, 0}}).eer == 0.0);
  CHECK(d_eer({{1, 2, 3, 4}, {4, 3, 2, 1}}).eer == 0.5);
  CHECK(d_eer({{1, 2, 3}, {1, 2, 3}}).eer == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(d_eer({{0.5, 0.5}, {0.5}}).eer == 0.5);
  CHECK(d_eer({{0.1, 0.2}, {0.8, 0.9}}).eer == 1.0);
  CHECK_THROWS_AS(d_eer({{}, {1.0}}), ValueError);

  SUBCASE("plateau reports the interval midpoint") {
    // apcer == bpcer == 0.5 on [2, 3.5).
    const auto p = d_eer({{1, 4}, {2, 3.5}});
    CHECK(p.eer == 0.5);
    CHECK(p.threshold == 2.75);
    CHECK(d_eer({{0.9, 0.8}, {0.1, 0.2}}).threshold == 0.5);
  }
  SUBCASE("two gaussians two sigma apart") {
    Rng rng(2024);
    const auto s = random_scores(rng, 100000, 2.0, false);
    const double phi = 0.5 * std::erfc(1.0 / std::sqrt(2.0));
    CHECK(std::abs(d_eer(s).eer - phi) < 0.01);
    const auto at = apcer_bpcer_at(s, d_eer(s).threshold);
    CHECK(std::abs(at.apcer - at.bpcer) < 1e-3);
  }
  SUBCASE("crossing lies on the interpolated curve") {
    Rng rng(3);
    for (int trial = 0; trial < 30; ++trial) {
      const auto s = random_scores(rng, 10 + 20 * trial, 1.0, trial % 2 == 0);
      const double eer = d_eer(s).eer;
      const auto pts = scan(s);
      // Some segment of the staircase brackets the eer value.
      bool bracketed = false;
      ErrorRates prev{0.0, 1.0};
      for (const auto& p : pts) {
        const double d0 = prev.apcer - prev.bpcer;
        const double d1 = p.apcer - p.bpcer;
        if (d0 <= 0 && d1 >= 0) {
          const double w = d1 == d0 ? 0.0 : -d0 / (d1 - d0);
          const double a = prev.apcer + w * (p.apcer - prev.apcer);
          const double b = prev.bpcer + w * (p.bpcer - prev.bpcer);
          if (std::abs(a - b) <= 1e-9 && std::abs(a - eer) <= 1e-9) bracketed = true;
        }
        prev = p;
      }
      CHECK(bracketed);
    }
  }
  SUBCASE("invariant under increasing transforms and label swap") {
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
      const auto s = random_scores(rng, 500, 0.5 + 0.1 * trial, false);
      MadScores warped = s;
      for (auto& x : warped.attack) x = std::exp(3 * x) + 7;
      for (auto& x : warped.bona_fide) x = std::exp(3 * x) + 7;
      CHECK(d_eer(warped).eer == d_eer(s).eer);
      MadScores swapped;
      for (double x : s.bona_fide) swapped.attack.push_back(-x);
      for (double x : s.attack) swapped.bona_fide.push_back(-x);
      CHECK(std::abs(d_eer(swapped).eer - d_eer(s).eer) < 1e-12);
    }
  }
}

TEST_CASE("bpcer_at_apcer") {
  CHECK(bpcer_at_apcer({{0.9, 0.8}, {0.1, 0.2}}, 0.05) == 0.0);
  CHECK(bpcer_at_apcer({{0.9, 0.8}, {0.1, 0.2}}, 0.10) == 0.0);
  CHECK_THROWS_AS(bpcer_at_apcer({{1}, {0}}, 0.0), ValueError);
  CHECK_THROWS_AS(bpcer_at_apcer({{1}, {0}}, 1.0), ValueError);

  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto s = random_scores(rng, 1000, 1.0, trial % 2 == 1);
    for (double target : {0.05, 0.10, rng.uniform(0.01, 0.99)}) {
      CHECK(bpcer_at_apcer(s, target) == oracle::bpcer_at_apcer(s.attack, s.bona_fide, target));
    }
    double last = 2.0;
    for (int k = 1; k < 100; ++k) {
      const double b = bpcer_at_apcer(s, k / 100.0);
      CHECK(b <= last);
      last = b;
    }
    CHECK(bpcer_at_apcer(s, 0.999) < 0.01);
  }
}

TEST_CASE("mad grid report") {
  SUBCASE("single intra cell") {
    MadScoreSet set{{row(true, 0.9, "gan", "digital", "gan"), row(false, 0.1, "", "digital", "gan")}};
    const auto r = mad_grid_report(set);
    REQUIRE(r.cells.size() == 1);
    CHECK(r.warnings.empty());
    CHECK(mad_report_csv(r) ==
          "train,test,digital_d_eer,digital_bpcer_at_apcer5,digital_bpcer_at_apcer10\n"
          "gan,gan,0.0000,0.0000,0.0000\n");
  }
  SUBCASE("oracle detector gives the zero diagonal") {
    MadScoreSet set;
    for (int i = 0; i < 50; ++i) {
      for (const char* m : {"gan", "landmark"}) {
        set.rows.push_back(row(true, 1.0, m, "digital", m));
        set.rows.push_back(row(false, 0.0, "", "digital", m));
      }
    }
    const auto r = mad_grid_report(set, 3);
    for (const char* m : {"gan", "landmark"}) {
      const MadCell* c = r.find(m, m, "digital");
      REQUIRE(c);
      CHECK(c->d_eer == 0.0);
      CHECK(c->bpcer_at_apcer5 == 0.0);
      CHECK(c->bpcer_at_apcer10 == 0.0);
    }
    CHECK(r.find("gan", "landmark", "digital") == nullptr);
    CHECK(r.warnings.size() == 2);
  }
  SUBCASE("empty cell is marked absent") {
    MadScoreSet set{{row(true, 0.9, "a", "digital", "a"), row(false, 0.1, "", "digital", "a"),
                     row(true, 0.9, "a", "print", "a")}};
    const auto r = mad_grid_report(set);
    CHECK(r.find("a", "a", "print") == nullptr);
    CHECK(mad_report_csv(r).find("0.0000,0.0000,0.0000,NA,NA,NA") != std::string::npos);
    const auto j = nlohmann::json::parse(mad_report_json(r));
    CHECK(j["cells"].size() == 1);
    CHECK(j["warnings"][0].get<std::string>().find("no bona fide") != std::string::npos);
  }
  SUBCASE("cells match direct evaluation regardless of jobs") {
    Rng rng(6);
    MadScoreSet set;
    const std::vector<std::string> methods{"gan", "landmark", "hybrid"};
    for (int i = 0; i < 3000; ++i) {
      const auto& tr = methods[rng.integer(0, 2)];
      const auto& te = methods[rng.integer(0, 2)];
      const std::string me = rng.uniform() < 0.5 ? "digital" : "print";
      if (rng.uniform() < 0.5) {
        set.rows.push_back(row(true, rng.normal(tr == te ? 2.0 : 0.5, 1.0), te, me, tr));
      } else {
        set.rows.push_back(row(false, rng.normal(), "", me, tr));
      }
    }
    const auto one = mad_grid_report(set, 1);
    const auto many = mad_grid_report(set, 8);
    CHECK(mad_report_json(one) == mad_report_json(many));
    CHECK(one.cells.size() == 18);
    for (const auto& c : one.cells) {
      const auto s = select_cell(set, c.train, c.test, c.medium);
      CHECK(c.d_eer == d_eer(s).eer);
      CHECK(c.bpcer_at_apcer10 == oracle::bpcer_at_apcer(s.attack, s.bona_fide, 0.10));
      CHECK(c.d_eer >= 0.0);
      CHECK(c.d_eer <= 1.0);
    }
  }
}

TEST_CASE("mad score csv") {
  MadScoreSet set{{row(true, 0.125, "gan", "digital", "gan"), row(false, -3e-7, "", "print", "landmark")}};
  const auto back = parse_mad_csv(write_mad_csv(set));
  REQUIRE(back.rows.size() == 2);
  CHECK(back.rows[0].attack);
  CHECK(back.rows[1].score == -3e-7);
  CHECK(back.rows[1].split == "landmark");
  CHECK(write_mad_csv(back) == write_mad_csv(set));

  const std::string header = "class,score,generation_method,medium,split\n";
  CHECK_THROWS_AS(parse_mad_csv(""), FormatError);
  CHECK_THROWS_AS(parse_mad_csv("class,score\n"), FormatError);
  CHECK_THROWS_AS(parse_mad_csv(header + "morph,0.5,a,b,c\n"), FormatError);
  CHECK_THROWS_AS(parse_mad_csv(header + "attack,x,a,b,c\n"), FormatError);
  CHECK_THROWS_AS(parse_mad_csv(header + "attack,inf,a,b,c\n"), FormatError);
  CHECK_THROWS_AS(parse_mad_csv(header + "attack,0.5,a,b\n"), FormatError);
  CHECK(parse_mad_csv(header + "bonafide,0.5,,,\r\n").rows.size() == 1);
}

TEST_CASE("median residual baseline") {
  CHECK(median_residual_score(Image(3, 8, 8, 0.4)) == 0.0);
  Image dot(1, 5, 5, 0.0);
  dot.channel(0)(2, 2) = 1.0;
  CHECK(median_residual_score(dot) == doctest::Approx(1.0 / 25.0));
  Rng rng(7);
  Image noisy(3, 16, 16, 0.5);
  Image smooth(3, 16, 16, 0.5);
  for (Index c = 0; c < 3; ++c)
    for (Index i = 0; i < 16; ++i)
      for (Index j = 0; j < 16; ++j) {
        noisy.channel(c)(i, j) += rng.normal(0.0, 0.1);
        smooth.channel(c)(i, j) += 0.01 * static_cast<double>(i);
      }
  CHECK(median_residual_score(noisy) > median_residual_score(smooth));
}
