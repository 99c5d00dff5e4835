#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include <json.hpp>

#include "seedgrow/metrics.hpp"
#include "seedgrow/volume_io.hpp"

using namespace seedgrow;

namespace {

Mask block(const Dims& d, int a0, int a1) {
  Mask m(d);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const int a = d.unflat(i).a;
    m[i] = a >= a0 && a < a1;
  }
  return m;
}

struct Fixture {
  std::vector<PhantomSample> samples;
  std::vector<Case> cases;
};

Fixture fixture(int lesions, int n) {
  Fixture f;
  f.samples.reserve(n);
  for (int i = 0; i < n; ++i) {
    PhantomSpec spec;
    spec.dims = {16, 16, 16};
    spec.lesion_radius_range = {2.0, 2.5};
    spec.lesion_count = lesions;
    spec.rng_seed = 600 + i;
    f.samples.push_back(generate(spec));
  }
  for (const auto& s : f.samples) {
    EntropyField e(s.truth.dims(), std::numbers::ln2);
    for (std::size_t v = 0; v < e.size(); ++v)
      if (s.truth[v]) e[v] = 0.0;
    f.cases.push_back({std::make_shared<const Volume>(s.volume), e, s.truth, &s});
  }
  return f;
}

}  // namespace

TEST_CASE("dice score") {
  const Dims d{4, 4, 4};
  const Mask a = block(d, 0, 2);
  CHECK(dice_score(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(dice_score(a, block(d, 2, 4)) == doctest::Approx(0.0).scale(1.0).epsilon(1e-6));
  // |A| = 32, |B| = 32, |A n B| = 16.
  CHECK(dice_score(a, block(d, 1, 3)) == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(std::abs(dice_score(a, block(d, 1, 3)) + dice_loss(a, block(d, 1, 3)) - 1.0) < 1e-9);
}

TEST_CASE("confusion counts and rates") {
  const Dims d{8, 8, 8};
  const Mask m = block(d, 0, 4);
  const Rates same = fpr_sensitivity(m, m);
  CHECK(same.fpr == 0.0);
  CHECK(*same.sensitivity == 1.0);
  const Rates all = fpr_sensitivity(Mask(d, 1), m);
  CHECK(all.fpr == 1.0);
  CHECK(*all.sensitivity == 1.0);

  // Prediction rows 2..5 against truth rows 0..3: 2 rows of 64 each way.
  const Confusion c = confusion(block(d, 2, 6), m);
  CHECK(c.tp == 128);
  CHECK(c.fp == 128);
  CHECK(c.fn == 128);
  CHECK(c.tn == 128);
  CHECK(c.total() == d.size());
  const Rates r = fpr_sensitivity(block(d, 2, 6), m);
  CHECK(r.fpr == doctest::Approx(0.5));
  CHECK(*r.sensitivity == doctest::Approx(0.5));

  CHECK_FALSE(fpr_sensitivity(m, Mask(d)).sensitivity.has_value());
}

TEST_CASE("negative classification boundary") {
  const GrowConfig cfg = GrowConfig::desk_preset();
  const Dims d{6, 6, 6};
  Mask m(d);
  CHECK(classify_negative(m, cfg));
  for (std::size_t i = 0; i < 27; ++i) m[i] = 1;
  CHECK(classify_negative(m, cfg));
  m[27] = 1;
  CHECK_FALSE(classify_negative(m, cfg));
  CHECK(classify_negative(m, cfg, 28));
  CHECK(GrowConfig{}.window_volume() == 343);
}

TEST_CASE("paired t-test against the four-degree closed form") {
  const std::vector<double> a{1, 2, 3, 4, 5};
  const std::vector<double> b{0, 2, 1, 4, 2};
  const TTest t = paired_t_test(a, b);
  // Differences {1,0,2,0,3}: mean 1.2, sample variance 1.7.
  const double expected_t = 1.2 / std::sqrt(1.7 / 5.0);
  CHECK(t.t == doctest::Approx(expected_t).epsilon(1e-12));
  CHECK(t.df == 4.0);
  CHECK(t.mean_difference == doctest::Approx(1.2));
  const double x = expected_t / std::sqrt(expected_t * expected_t + 4.0);
  CHECK(t.p_two_sided == doctest::Approx(1.0 - x * (3.0 - x * x) / 2.0).epsilon(1e-10));

  const std::vector<double> c{1, 2, 3};
  CHECK_THROWS_AS(paired_t_test(a, c), Error);
}

TEST_CASE("aggregate uses the population deviation") {
  const std::vector<double> v{1, 2, 3, 4};
  const Aggregate g = aggregate(v);
  CHECK(g.mean == 2.5);
  CHECK(g.std == doctest::Approx(std::sqrt(1.25)));
  CHECK(g.n == 4);
  CHECK(aggregate(std::vector<double>{}).n == 0);
}

TEST_CASE("protocol names round trip") {
  for (Protocol p : {Protocol::kInLesion, Protocol::kPerturbed, Protocol::kGlandNegative, Protocol::kNoPrompt})
    CHECK(protocol_from(to_string(p)) == p);
  CHECK_THROWS_AS(protocol_from("sideways"), Error);
}

TEST_CASE("evaluation suite") {
  const Fixture pos = fixture(1, 4);
  const Fixture neg = fixture(0, 3);
  const EnvConfig env;

  EvalOptions o;
  o.rng_seed = 5;
  const EvalReport in = eval_suite(pos.cases, nullptr, env, o);
  CHECK(in.rows.size() == 4);
  CHECK(in.dice.mean > 0.9);
  CHECK(in.true_positive == 4);
  for (const auto& r : in.rows) {
    CHECK(r.seed_offset == 0);
    CHECK(r.fpr >= 0.0);
    CHECK(r.fpr <= 1.0);
  }
  // Aggregates are recomputable from rows.
  EvalReport copy = in;
  copy.finalise();
  CHECK(copy.dice.mean == in.dice.mean);
  CHECK(eval_suite(pos.cases, nullptr, env, o).dice_values() == in.dice_values());

  o.protocol = Protocol::kPerturbed;
  const EvalReport perturbed = eval_suite(pos.cases, nullptr, env, o);
  for (const auto& r : perturbed.rows) {
    CHECK(r.seed_offset >= 1);
    CHECK(r.seed_offset <= 4);
  }
  CHECK(perturbed.dice.mean < 0.2);

  o.protocol = Protocol::kGlandNegative;
  const EvalReport negative = eval_suite(neg.cases, nullptr, env, o);
  CHECK(negative.true_negative == 3);
  CHECK(negative.sensitivity.n == 0);

  o.protocol = Protocol::kInLesion;
  o.prompts_per_case = 3;
  CHECK(eval_suite(pos.cases, nullptr, env, o).rows.size() == 12);
  const auto spread = prompt_variability(pos.cases, nullptr, env, 3, 5);
  CHECK(spread.size() == 4);
  for (double s : spread) CHECK(s >= 0.0);
}

TEST_CASE("reports") {
  const Fixture pos = fixture(1, 2);
  EvalOptions o;
  const std::vector<AblationVariant> variants{{"single-shot", nullptr, pos.cases, EnvConfig{}, o}};
  const auto rows = ablation_sweep(variants);
  REQUIRE(rows.size() == 1);
  const auto j = nlohmann::json::parse(report_json(rows));
  REQUIRE(j.is_array());
  CHECK(j[0]["name"] == "single-shot");
  CHECK(j[0]["cases"].size() == 2);
  CHECK(j[0]["dice"]["mean"].get<double>() == doctest::Approx(rows[0].report.dice.mean));
  CHECK(report_markdown(rows).find("single-shot") != std::string::npos);
  const auto dir = std::filesystem::temp_directory_path() / "seedgrow_test_reports";
  write_reports(dir, rows);
  CHECK(std::filesystem::exists(dir / "report.json"));
  CHECK(std::filesystem::exists(dir / "report.md"));
  std::filesystem::remove_all(dir);
}
