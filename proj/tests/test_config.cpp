#include <doctest.h>

#include <filesystem>

#include "seedgrow/config.hpp"
#include "seedgrow/volume_io.hpp"

using namespace seedgrow;

namespace {

std::string field_of(const std::string& text, const std::vector<std::string>& overrides = {}) {
  try {
    parse_run_config(text, overrides);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kConfig);
    return e.field();
  }
  return "<none>";
}

}  // namespace

TEST_CASE("empty document gives the defaults") {
  const RunConfig cfg = parse_run_config("");
  CHECK(cfg.env.beta == 0.8);
  CHECK(cfg.env.horizon == 10);
  CHECK(cfg.env.grow.radius == VoxelIndex{1, 1, 1});
  CHECK(cfg.env.grow.tau_sigma == 0.3);
  CHECK(cfg.env.grow.tau_e == 0.1);
  CHECK(cfg.agent.ppo.gamma == 0.99);
  CHECK(cfg.agent.ppo.clip_eps == 0.2);
  CHECK(cfg.agent.ppo.gae_lambda == 0.95);
  CHECK(cfg.agent.ppo.entropy_coef == 0.01);
  CHECK(cfg.phantom.dims == Dims{32, 32, 32});
  CHECK(parse_run_config("{}").seed == 0);
}

TEST_CASE("serialised config parses back to the same document") {
  RunConfig cfg = parse_run_config("", {"seed=17", "env.beta=0.4", "eval.negative_threshold=30"});
  const std::string text = to_json(cfg).dump();
  CHECK(to_json(parse_run_config(text)).dump() == text);
  CHECK(parse_run_config(text).eval.negative_threshold == 30u);
}

TEST_CASE("shipped default config matches the built-in defaults") {
  const auto path = std::filesystem::path(SEEDGROW_SOURCE_DIR) / "configs" / "default.cfg";
  CHECK(to_json(load_run_config(path)).dump() == to_json(RunConfig{}).dump());
}

TEST_CASE("unknown keys are rejected with their path") {
  CHECK(field_of(R"({"bogus": 1})") == "bogus");
  CHECK(field_of(R"({"env": {"grow": {"radiu": [1,1,1]}}})") == "env.grow.radiu");
  CHECK(field_of(R"({"agent": {"ppo": {"lr": 1}}})") == "agent.ppo.lr");
}

TEST_CASE("type and range errors name the field") {
  CHECK(field_of(R"({"env": {"beta": "high"}})") == "env.beta");
  CHECK(field_of(R"({"env": {"beta": -1}})") == "env.beta");
  CHECK(field_of(R"({"agent": {"ppo": {"gamma": 1.0}}})") == "ppo.gamma");
  CHECK(field_of(R"({"env": {"grow": {"radius": [1,1]}}})") == "env.grow.radius");
  CHECK(field_of(R"({"agent": {"start": "anywhere"}})") == "agent.start");
  CHECK(field_of("{not json") == "<root>");
  CHECK(field_of(R"([1, 2])") == "<root>");
}

TEST_CASE("overrides") {
  const RunConfig cfg = parse_run_config(R"({"env": {"beta": 0.2}})", {"env.beta=0.6", "agent.start=gland-centre",
                                                                      "eval.betas=[0.0,0.8]"});
  CHECK(cfg.env.beta == 0.6);
  CHECK(cfg.agent.start == StartMode::kGlandCentre);
  CHECK(cfg.eval.betas == std::vector<double>{0.0, 0.8});
  CHECK(field_of("", {"nokey"}) == "nokey");
  CHECK(field_of("", {"env.nothing=1"}) == "env.nothing");
}

TEST_CASE("splits are deterministic and survive a disk round trip") {
  const RunConfig cfg = parse_run_config("", {"dataset.test_cases=3", "dataset.negative_cases=2", "seed=5"});
  const auto test = generate_split(cfg, "test");
  REQUIRE(test.size() == 3);
  CHECK(count(test[1].mimics) > 0);  // odd cases carry a mimic at the default fraction
  CHECK(count(test[0].mimics) == 0);
  const auto again = generate_split(cfg, "test");
  for (std::size_t i = 0; i < test.size(); ++i) CHECK(test[i].volume == again[i].volume);

  const auto negative = generate_split(cfg, "negative");
  for (const auto& s : negative) CHECK(count(s.truth) == 0);
  CHECK_THROWS_AS(generate_split(cfg, "validation"), Error);

  const auto root = std::filesystem::temp_directory_path() / "seedgrow_test_config_split";
  std::filesystem::remove_all(root);
  write_split(root, "test", test);
  write_manifest(root, cfg);
  const auto back = read_split(root, "test");
  REQUIRE(back.size() == test.size());
  for (std::size_t i = 0; i < test.size(); ++i) {
    CHECK(back[i].volume == test[i].volume);
    CHECK(back[i].truth == test[i].truth);
    CHECK(back[i].gland == test[i].gland);
  }
  CHECK(std::filesystem::exists(root / "manifest.json"));
  CHECK_THROWS_AS(read_split(root, "agent"), Error);
  std::filesystem::remove_all(root);
}
