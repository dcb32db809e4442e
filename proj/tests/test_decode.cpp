#include <doctest.h>

#include <cmath>

#include "laneptq/decode.hpp"
#include "laneptq/rng.hpp"

using namespace laneptq;

namespace {

constexpr int kGrid = 16;
constexpr int kPlane = kGrid * kGrid;

HeadOutput empty_heads() {
  HeadOutput h;
  h.conf = Tensor::zeros({1, kGrid, kGrid});
  h.conf_logits = Tensor::zeros({1, kGrid, kGrid});
  h.local_off = Tensor::zeros({2, kGrid, kGrid});
  h.root_off = Tensor::zeros({2, kGrid, kGrid});
  return h;
}

void put(HeadOutput& h, int row, int col, double conf, double dx, double dy, double rx,
         double ry) {
  const int i = row * kGrid + col;
  h.conf.data()[i] = conf;
  h.local_off.data()[i] = dx;
  h.local_off.data()[kPlane + i] = dy;
  h.root_off.data()[i] = rx;
  h.root_off.data()[kPlane + i] = ry;
}

DecodeConfig default_cfg() { return DecodeConfig{}; }

}  // namespace

TEST_SUITE("decode") {

TEST_CASE("all-below-threshold grid decodes to nothing") {
  HeadOutput h = empty_heads();
  for (int i = 0; i < kPlane; ++i) h.conf.data()[i] = 0.49;
  CHECK(decode(h, default_cfg()).empty());
}

TEST_CASE("single keypoint position and the 1-point drop rule") {
  HeadOutput h = empty_heads();
  put(h, 2, 3, 0.9, 0.5, -0.25, 0.0, 0.0);
  // keypoint would land at ((3 + 0.5) * 4, (2 - 0.25) * 4) = (14, 7)
  auto lanes = decode(h, default_cfg());
  CHECK(lanes.empty());  // one point is not a lane

  // a second keypoint in the same cluster makes it decodable
  put(h, 3, 3, 0.9, 0.5, 0.0, 0.0, -1.0);
  lanes = decode(h, default_cfg());
  REQUIRE(lanes.size() == 1);
  REQUIRE(lanes[0].points.size() == 2);
  CHECK(lanes[0].points[0].y > lanes[0].points[1].y);  // bottom to top
  CHECK(lanes[0].points[1].x == doctest::Approx(14.0));
  CHECK(lanes[0].points[1].y == doctest::Approx(7.0));
}

TEST_CASE("two keypoint groups with far-apart roots form two lanes") {
  HeadOutput h = empty_heads();
  // group A: roots at (12, 60); group B: roots at (52, 60) -> 40 px apart
  put(h, 15, 3, 0.9, 0.0, 0.0, 0.0, 0.0);
  put(h, 13, 3, 0.8, 0.0, 0.0, 0.0, 2.0);
  put(h, 11, 3, 0.7, 0.0, 0.0, 0.0, 4.0);
  put(h, 15, 13, 0.9, 0.0, 0.0, 0.0, 0.0);
  put(h, 13, 13, 0.8, 0.0, 0.0, 0.0, 2.0);
  put(h, 11, 13, 0.7, 0.0, 0.0, 0.0, 4.0);
  auto lanes = decode(h, default_cfg());
  REQUIRE(lanes.size() == 2);
  CHECK(lanes[0].points.size() == 3);
  CHECK(lanes[1].points.size() == 3);
}

TEST_CASE("greedy clustering oracle: enumerated points, radius 8") {
  // three points whose predicted roots sit at x = 0, 6, 14: greedy in
  // confidence order puts {0,6} together (centroid 3, point 14 is 11 away)
  // and 14 alone, which the 2-point rule then drops.
  HeadOutput h = empty_heads();
  put(h, 15, 1, 0.9, 0.0, 0.0, -1.0, 0.0);   // root x = 4 - 4 = 0
  put(h, 13, 1, 0.8, 0.0, 0.0, 0.5, 0.0);    // root x = 4 + 2 = 6
  put(h, 11, 1, 0.7, 0.0, 0.0, 2.5, 0.0);    // root x = 4 + 10 = 14
  DecodeConfig cfg;
  cfg.cluster_radius = 8.0;
  auto lanes = decode(h, cfg);
  REQUIRE(lanes.size() == 1);
  CHECK(lanes[0].points.size() == 2);
}

TEST_CASE("one point per grid row keeps the highest confidence") {
  HeadOutput h = empty_heads();
  put(h, 15, 3, 0.6, 0.0, 0.0, 0.0, 0.0);
  put(h, 15, 4, 0.9, 0.0, 0.0, -1.0, 0.0);  // same grid row, same cluster, higher conf
  put(h, 13, 3, 0.8, 0.0, 0.0, 0.0, 2.0);
  auto lanes = decode(h, default_cfg());
  REQUIRE(lanes.size() == 1);
  REQUIRE(lanes[0].points.size() == 2);
  CHECK(lanes[0].points[0].x == doctest::Approx(16.0));  // col 4 won row 15
}

TEST_CASE("replaced-head decode: identity, zeroed confidence, shifted offsets") {
  Rng rng(31);
  HeadOutput h = empty_heads();
  for (int k = 0; k < 5; ++k)
    put(h, 15 - 2 * k, 6, 0.6 + 0.05 * k, rng.uniform(0.0, 0.9), rng.uniform(0.0, 0.9), 0.0,
        static_cast<double>(k));

  auto base = decode(h, default_cfg());
  REQUIRE(!base.empty());

  SUBCASE("identical replacement reproduces the decode") {
    auto same = decode_with_replaced_head(h, "local_off", h.local_off.detached_copy(),
                                          default_cfg());
    REQUIRE(same.size() == base.size());
    for (size_t i = 0; i < base.size(); ++i) {
      REQUIRE(same[i].points.size() == base[i].points.size());
      for (size_t j = 0; j < base[i].points.size(); ++j) {
        CHECK(same[i].points[j].x == base[i].points[j].x);
        CHECK(same[i].points[j].y == base[i].points[j].y);
      }
    }
  }

  SUBCASE("zeroed confidence head removes every lane") {
    CHECK(decode_with_replaced_head(h, "conf", Tensor::zeros({1, kGrid, kGrid}), default_cfg())
              .empty());
  }

  SUBCASE("constant x-offset shift moves every point by stride * shift") {
    Tensor shifted = h.local_off.detached_copy();
    for (int i = 0; i < kPlane; ++i) shifted.data()[i] += 0.25;
    auto moved = decode_with_replaced_head(h, "local_off", shifted, default_cfg());
    REQUIRE(moved.size() == base.size());
    for (size_t i = 0; i < base.size(); ++i) {
      REQUIRE(moved[i].points.size() == base[i].points.size());
      for (size_t j = 0; j < base[i].points.size(); ++j) {
        CHECK(moved[i].points[j].x == doctest::Approx(base[i].points[j].x + 1.0).epsilon(1e-12));
        CHECK(moved[i].points[j].y == doctest::Approx(base[i].points[j].y).epsilon(1e-12));
      }
    }
  }

  SUBCASE("unknown head id is rejected") {
    CHECK_THROWS_AS(
        decode_with_replaced_head(h, "nope", Tensor::zeros({1, kGrid, kGrid}), default_cfg()),
        std::invalid_argument);
  }
}

TEST_CASE("decode is pure and threshold raising never adds keypoints") {
  Rng rng(32);
  for (int trial = 0; trial < 20; ++trial) {
    HeadOutput h = empty_heads();
    for (int i = 0; i < kPlane; ++i) {
      h.conf.data()[i] = rng.uniform();
      h.local_off.data()[i] = rng.uniform(0.0, 1.0);
      h.local_off.data()[kPlane + i] = rng.uniform(0.0, 1.0);
      h.root_off.data()[i] = rng.uniform(-2.0, 2.0);
      h.root_off.data()[kPlane + i] = rng.uniform(-2.0, 2.0);
    }
    DecodeConfig lo, hi;
    lo.threshold = 0.4;
    hi.threshold = 0.6;
    auto count_points = [](const std::vector<Lane>& lanes) {
      size_t n = 0;
      for (const auto& l : lanes) n += l.points.size();
      return n;
    };
    auto a1 = decode(h, lo);
    auto a2 = decode(h, lo);
    CHECK(count_points(a1) == count_points(a2));  // deterministic
    CHECK(count_points(decode(h, hi)) <= count_points(a1));

    for (const auto& lane : a1) {
      for (size_t j = 1; j < lane.points.size(); ++j)
        CHECK(lane.points[j].y < lane.points[j - 1].y);  // strictly decreasing
    }
  }
}

}  // TEST_SUITE
