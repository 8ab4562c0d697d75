#include "doctest.h"
#include "slack/checkpoint.hpp"
#include "slack/trajectory.hpp"
#include "test_support.hpp"

using namespace slack;
using namespace slack::slameval;

TEST_CASE("trajectory text round trip is lossless") {
  Rng rng(3);
  Trajectory t;
  for (int i = 0; i < 20; ++i) {
    Pose p;
    p.timestamp = 0.1 * i + rng.uniform(0, 0.01);
    p.translation = Eigen::Vector3d(rng.uniform(-100, 100), rng.uniform(-100, 100), rng.uniform(-1, 1));
    p.rotation = Eigen::Quaterniond(rng.normal(), rng.normal(), rng.normal(), rng.normal()).normalized();
    t.poses.push_back(p);
  }
  const auto text = format_trajectory(t, {"seed=3"});
  CHECK(text.rfind("# seed=3\n", 0) == 0);
  const auto back = parse_trajectory(text);
  REQUIRE(back.size() == t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    CHECK(back[i].timestamp == t[i].timestamp);
    CHECK(back[i].translation == t[i].translation);
    CHECK(back[i].rotation.coeffs() == t[i].rotation.coeffs());
  }
  CHECK(format_trajectory(back, {"seed=3"}) == text);
}

TEST_CASE("trajectory validation") {
  CHECK_THROWS_AS(parse_trajectory("0 0 0 0 0 0 0 1\n"), Error);
  CHECK_THROWS_AS(parse_trajectory("0 0 0 0 0 0 0 1\n0 1 0 0 0 0 0 1\n"), Error);
  CHECK_THROWS_AS(parse_trajectory("0 0 0 0 0 0 0 1\n1 1 0 0 0 0 0 2\n"), Error);
  CHECK_THROWS_AS(parse_trajectory("0 0 0 0 0 0 0 1\n1 1 0 0\n"), Error);
  CHECK_NOTHROW(parse_trajectory("# c\n0 0 0 0 0 0 0 1\n\n1 1 0 0 0 0 0 1\n"));
}

TEST_CASE("format_decimal") {
  CHECK(format_decimal(0.1) == "0.1");
  CHECK(format_decimal(-2.0) == "-2");
  CHECK(std::stod(format_decimal(1.0 / 3.0)) == 1.0 / 3.0);
  CHECK(format_decimal(1e-20).find('e') == std::string::npos);
}

TEST_CASE("checkpoint serialization errors") {
  Checkpoint c;
  c.kind = "pd";
  c.config = {{"a", "1"}, {"b", "x y"}};
  c.params.add("w", nn::Tensor({2, 3}, 0.25));
  const auto bytes = serialize_checkpoint(c);
  const auto back = deserialize_checkpoint(bytes);
  CHECK(back.kind == "pd");
  CHECK(back.config == c.config);
  CHECK(back.params == c.params);
  CHECK(serialize_checkpoint(back) == bytes);
  auto code_of = [](const std::string& b) {
    try {
      deserialize_checkpoint(b);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::kOk;
  };
  CHECK(code_of(bytes.substr(0, bytes.size() - 3)) == ErrorCode::kTruncated);
  CHECK(code_of(bytes + "z") == ErrorCode::kFormat);
  CHECK(code_of("NOPE" + bytes.substr(4)) == ErrorCode::kFormat);
  CHECK(kv_get(c.config, "zz", "dflt") == "dflt");
  CHECK_THROWS_AS(kv_get(c.config, "zz"), Error);
}
