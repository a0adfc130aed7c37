#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "st/acm.hpp"
#include "st/rng.hpp"

using namespace st;

namespace {

template <typename S>
ActivationSet<S> set_from(const std::vector<std::vector<std::vector<double>>>& classes) {
  ActivationSet<S> as;
  as.resize_classes(int(classes.size()));
  for (size_t c = 0; c < classes.size(); ++c)
    for (const auto& v : classes[c]) {
      std::vector<S> row(v.begin(), v.end());
      as.add(int(c), row.data(), int(row.size()));
    }
  return as;
}

std::vector<std::vector<std::vector<double>>> random_classes(Rng& rng, int k, int max_n, int d) {
  std::vector<std::vector<std::vector<double>>> classes(static_cast<size_t>(k));
  for (int c = 0; c < k; ++c) {
    const int n = 1 + rng.below(max_n);
    for (int i = 0; i < n; ++i) {
      std::vector<double> v(static_cast<size_t>(d));
      for (auto& x : v) x = rng.normal(double(c) * 2.0, 1.0);  // offset per class
      classes[size_t(c)].push_back(std::move(v));
    }
  }
  return classes;
}

}  // namespace

TEST_CASE("cluster center basics") {
  auto as = set_from<float>({{{1.0, 2.0}}, {{0.0, 0.0}, {0.0, 2.0}}});
  auto c0 = cluster_center(as, 0);
  CHECK(c0(0) == doctest::Approx(1.0));
  CHECK(c0(1) == doctest::Approx(2.0));
  auto c1 = cluster_center(as, 1);
  CHECK(c1(0) == doctest::Approx(0.0));
  CHECK(c1(1) == doctest::Approx(1.0));
}

TEST_CASE("cluster center matches naive accumulation on 100 random vectors") {
  Rng rng(31);
  std::vector<std::vector<double>> vecs;
  for (int i = 0; i < 100; ++i) {
    std::vector<double> v(8);
    for (auto& x : v) x = rng.uniform(-5.0, 5.0);
    vecs.push_back(v);
  }
  auto as = set_from<float>({vecs});
  auto c = cluster_center(as, 0);
  for (int j = 0; j < 8; ++j) {
    double acc = 0.0;
    for (const auto& v : vecs) acc += float(v[size_t(j)]);  // same float quantization
    CHECK(c(j) == doctest::Approx(acc / 100.0).epsilon(1e-6));
  }
}

TEST_CASE("intra distance, radius: singleton and two-point classes") {
  auto as = set_from<float>({{{3.0, 4.0}}, {{0.0, 0.0}, {0.0, 2.0}}});
  CHECK(intra_class_distance(as, 0) == doctest::Approx(0.0));
  CHECK(class_radius(as, 0) == doctest::Approx(0.0));
  CHECK(intra_class_distance(as, 1) == doctest::Approx(1.0));
  CHECK(class_radius(as, 1) == doctest::Approx(1.0));
}

TEST_CASE("inter-class distance: exhaustive four-pair case and symmetry") {
  auto as = set_from<float>({{{0.0, 0.0}, {0.0, 2.0}}, {{10.0, 0.0}, {10.0, 2.0}}});
  CHECK(inter_class_distance(as, 0, 1) == doctest::Approx(10.0));
  CHECK(inter_class_distance(as, 1, 0) == doctest::Approx(10.0));
  CHECK_THROWS_AS((void)inter_class_distance(as, 0, 0), Error);
}

TEST_CASE("duplicated point across classes gives zero inter distance") {
  auto as = set_from<float>({{{1.0, 1.0}, {5.0, 5.0}}, {{1.0, 1.0}, {9.0, 9.0}}});
  CHECK(inter_class_distance(as, 0, 1) == doctest::Approx(0.0));
}

TEST_CASE("empty or missing classes raise EmptyClass") {
  ActivationSet<float> as;
  as.resize_classes(3);
  float v[2] = {1.0f, 2.0f};
  as.add(0, v, 2);
  as.add(2, v, 2);
  CHECK_THROWS_AS((void)cluster_center(as, 1), Error);
  try {
    (void)acm(as);
    FAIL("expected EmptyClass");
  } catch (const Error& e) {
    CHECK(e.code() == Err::empty_class);
  }
}

TEST_CASE("hand ACM case: two symmetric two-point classes give exactly 5") {
  auto as = set_from<float>({{{0.0, 0.0}, {0.0, 2.0}}, {{10.0, 0.0}, {10.0, 2.0}}});
  CHECK(acm(as) == doctest::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("ACM requires at least two classes") {
  auto as = set_from<float>({{{1.0, 2.0}}});
  try {
    (void)acm(as);
    FAIL("expected TooFewClasses");
  } catch (const Error& e) {
    CHECK(e.code() == Err::too_few_classes);
  }
}

TEST_CASE("collapsed clusters raise DegenerateCluster") {
  // both classes are singletons: radius * sigma = 0 for every pair
  auto as = set_from<float>({{{0.0, 0.0}}, {{1.0, 1.0}}});
  try {
    (void)acm(as);
    FAIL("expected DegenerateCluster");
  } catch (const Error& e) {
    CHECK(e.code() == Err::degenerate_cluster);
  }
}

TEST_CASE("ACM matches the brute-force oracle on random sets") {
  Rng rng(77);
  for (int trial = 0; trial < 40; ++trial) {
    const int k = 2 + rng.below(9);
    const int d = 2 + rng.below(15);
    auto classes = random_classes(rng, k, 20, d);
    bool has_multi = true;
    for (auto& c : classes) has_multi = has_multi && c.size() >= 2;
    if (!has_multi) continue;  // avoid degenerate singletons here
    auto as = set_from<double>(classes);
    const auto ref = oracle::acm_naive(classes);
    CHECK(std::abs(acm(as) - ref.acm) <= 1e-6);
    for (int i = 0; i < k; ++i) {
      CHECK(std::abs(intra_class_distance(as, i) - ref.sigma[size_t(i)]) <= 1e-6);
      CHECK(std::abs(class_radius(as, i) - ref.radius[size_t(i)]) <= 1e-6);
    }
  }
}

TEST_CASE("sigma <= radius always; inter symmetric (random property)") {
  Rng rng(123);
  for (int trial = 0; trial < 25; ++trial) {
    const int k = 2 + rng.below(5);
    auto as = set_from<float>(random_classes(rng, k, 30, 6));
    auto stats = cluster_stats(as);
    for (int i = 0; i < k; ++i) CHECK(stats.sigma[i] <= stats.radius[i] + 1e-12);
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j) CHECK(stats.inter(i, j) == stats.inter(j, i));
  }
}

TEST_CASE("ACM scaling law: ACM(c*A) = ACM(A)/c") {
  Rng rng(9);
  auto classes = random_classes(rng, 5, 25, 8);
  auto base = set_from<double>(classes);
  const double a0 = acm(base);
  for (double c : {0.1, 2.0, 10.0}) {
    auto scaled = classes;
    for (auto& cls : scaled)
      for (auto& v : cls)
        for (auto& x : v) x *= c;
    const double ac = acm(set_from<double>(scaled));
    CHECK(std::abs(ac - a0 / c) / (a0 / c) <= 1e-6);
  }
}

TEST_CASE("ACM invariant under label permutation and rigid motion") {
  Rng rng(41);
  auto classes = random_classes(rng, 4, 20, 5);
  const double a0 = acm(set_from<double>(classes));

  // permutation
  auto perm = classes;
  std::swap(perm[0], perm[3]);
  std::swap(perm[1], perm[2]);
  CHECK(acm(set_from<double>(perm)) == doctest::Approx(a0).epsilon(1e-9));

  // translation plus a Givens rotation in dims (0,1)
  const double th = 0.83;
  auto moved = classes;
  for (auto& cls : moved)
    for (auto& v : cls) {
      const double x = v[0], y = v[1];
      v[0] = std::cos(th) * x - std::sin(th) * y + 3.5;
      v[1] = std::sin(th) * x + std::cos(th) * y - 1.25;
      for (size_t j = 2; j < v.size(); ++j) v[j] += 0.75;
    }
  CHECK(acm(set_from<double>(moved)) == doctest::Approx(a0).epsilon(1e-6));
}

TEST_CASE("activation dump round trip") {
  Rng rng(55);
  ActivationSet<float> as;
  as.resize_classes(3);
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 5 + c; ++i) {
      float v[4];
      for (auto& x : v) x = float(rng.uniform(-2.0, 2.0));
      as.add(c, v, 4);
    }
  const std::string path = "test_dump.stact";
  save_activation_dump(path, as);
  ActivationSet<float> back = load_activation_dump(path);
  REQUIRE(back.class_count() == 3);
  REQUIRE(back.dim() == 4);
  for (int c = 0; c < 3; ++c) {
    REQUIRE(back.classes[size_t(c)].rows() == as.classes[size_t(c)].rows());
    CHECK((back.classes[size_t(c)] - as.classes[size_t(c)]).cwiseAbs().maxCoeff() == 0.0f);
  }
  std::remove(path.c_str());
}
