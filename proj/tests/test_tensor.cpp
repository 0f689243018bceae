#include "spadvae/tensor.hpp"

#include "spadvae/errors.hpp"

#include <limits>

#include <doctest.h>

using namespace spadvae;

TEST_CASE("tensor construction and indexing") {
  Tensor t({2, 3});
  CHECK(t.size() == 6);
  CHECK(t.rank() == 2);
  t.at2(1, 2) = 5.0;
  CHECK(t[5] == 5.0);

  Tensor u({2, 2, 2, 2});
  u.at4(1, 0, 1, 0) = 3.0;
  CHECK(u[(((1 * 2 + 0) * 2 + 1) * 2 + 0)] == 3.0);
}

TEST_CASE("tensor data-size mismatch is rejected") {
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), UsageError);
}

TEST_CASE("reshape preserves data and checks size") {
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor r = t.reshaped({3, 2});
  CHECK(r.dim(0) == 3);
  CHECK(r[4] == 5.0);
  CHECK_THROWS_AS(t.reshaped({4, 2}), UsageError);
}

TEST_CASE("all_finite detects NaN and Inf") {
  Tensor t({3});
  CHECK(t.all_finite());
  t[1] = std::numeric_limits<double>::quiet_NaN();
  CHECK(!t.all_finite());
  t[1] = std::numeric_limits<double>::infinity();
  CHECK(!t.all_finite());
}

TEST_CASE("shape_str formats extents") {
  Tensor t({4, 1, 8});
  CHECK(t.shape_str() == "[4,1,8]");
}
