#include <string>
#include <vector>

#include "doctest.h"
#include "siab/error.hpp"
#include "siab/log.hpp"
#include "siab/norm.hpp"
#include "support.hpp"

using namespace siab;

namespace {

Tensor from_values(Shape s, std::vector<float> v) { return Tensor(s, std::move(v)); }

NormContext context(ForwardMode mode, std::span<const DomainId> domains, Rng* rng = nullptr, double p = 0.0) {
  NormContext ctx;
  ctx.mode = mode;
  ctx.domains = domains;
  ctx.update_running = false;
  ctx.rng = rng;
  ctx.rand_p = p;
  return ctx;
}

// Randomizes every affine parameter and logit so gradient checks see
// asymmetric values.
void randomize(NormSite& site, std::uint64_t seed) {
  Rng rng(seed);
  auto fill = [&](Parameter& p, double mean) {
    for (float& v : p.value) v = static_cast<float>(rng.normal(mean, 0.3));
  };
  for (auto& b : site.individual()) {
    fill(b.gamma, 1.0);
    fill(b.beta, 0.0);
  }
  fill(site.aggregated().gamma, 1.0);
  fill(site.aggregated().beta, 0.0);
  fill(site.mix().logit, 0.0);
}

}  // namespace

TEST_SUITE("norm") {
  TEST_CASE("batch statistics: hand-evaluated cases") {
    auto [m, v] = compute_batch_stats(from_values({1, 1, 2, 2}, {1, 3, 5, 7}));
    CHECK(m[0] == doctest::Approx(4.0));
    CHECK(v[0] == doctest::Approx(5.0));
    auto [mc, vc] = compute_batch_stats(Tensor({3, 2, 2, 2}, 2.5f));
    CHECK(mc[1] == 2.5);
    CHECK(vc[1] == 0.0);
    auto [mz, vz] = compute_batch_stats(Tensor({2, 1, 3, 3}, 0.0f));
    CHECK(mz[0] == 0.0);
    CHECK(vz[0] == 0.0);
    CHECK_THROWS_AS(compute_batch_stats(Tensor({0, 1, 2, 2})), InvalidInput);
  }

  TEST_CASE("instance statistics") {
    auto [m, v] = compute_instance_stats(from_values({1, 1, 2, 2}, {2, 2, 4, 4}));
    CHECK(m[0] == doctest::Approx(3.0));
    CHECK(v[0] == doctest::Approx(1.0));

    const Tensor one = test::random_tensor({1, 3, 4, 5}, 3);
    auto inst = compute_instance_stats(one);
    auto batch = compute_batch_stats(one);
    for (int c = 0; c < 3; ++c) {
      CHECK(inst.first[c] == doctest::Approx(batch.first[c]).epsilon(1e-12));
      CHECK(inst.second[c] == doctest::Approx(batch.second[c]).epsilon(1e-12));
    }
    CHECK(compute_instance_stats(Tensor({2, 1, 3, 3}, 7.0f)).second[1] == 0.0);
    CHECK_THROWS_AS(compute_instance_stats(Tensor({1, 1, 0, 3})), InvalidInput);
  }

  TEST_CASE("individual normalization examples") {
    NormSite site(1, 2, 0.5);
    const Tensor out = normalize_individual(site, Tensor({2, 1, 3, 3}, 4.0f), DomainId{1}, true);
    for (float v : out.values()) CHECK(v == 0.0f);

    const Tensor x = from_values({1, 1, 2, 2}, {1, 3, 5, 7});
    const Tensor z = normalize_individual(site, x, DomainId{2}, true);
    const float expected[] = {-1.3416f, -0.4472f, 0.4472f, 1.3416f};
    for (int i = 0; i < 4; ++i) CHECK(z.data()[i] == doctest::Approx(expected[i]).epsilon(1e-3));

    site.individual()[1].gamma.value = {2.0f};
    site.individual()[1].beta.value = {1.0f};
    const Tensor a = normalize_individual(site, x, DomainId{2}, true);
    for (int i = 0; i < 4; ++i) CHECK(a.data()[i] == doctest::Approx(2.0f * z.data()[i] + 1.0f).epsilon(1e-6));

    CHECK_THROWS_AS(normalize_individual(site, x, DomainId{3}, true), InvalidInput);
    CHECK_THROWS_AS(normalize_individual(site, x, DomainId{0}, true), InvalidInput);
  }

  TEST_CASE("training mode updates running statistics, evaluation uses them") {
    NormSite site(1, 1, 0.5);
    const Tensor x = from_values({1, 1, 2, 2}, {1, 3, 5, 7});
    normalize_individual(site, x, DomainId{1}, true);
    CHECK(site.individual()[0].running_mean[0] == doctest::Approx(0.4));
    CHECK(site.individual()[0].running_var[0] == doctest::Approx(0.9 + 0.1 * 5.0));
    const float before = site.individual()[0].running_mean[0];
    const Tensor e = normalize_individual(site, x, DomainId{1}, false);
    CHECK(site.individual()[0].running_mean[0] == before);
    const double inv = 1.0 / std::sqrt(site.individual()[0].running_var[0] + 1e-5);
    CHECK(e.data()[0] == doctest::Approx((1.0 - before) * inv).epsilon(1e-6));
  }

  TEST_CASE("pre-affine output has zero mean and unit variance per channel") {
    for (int trial = 0; trial < 100; ++trial) {
      Rng rng(1000 + trial);
      const Shape s{rng.uniform_int(1, 4), rng.uniform_int(1, 5), rng.uniform_int(1, 6), rng.uniform_int(2, 6)};
      const Tensor x = test::random_tensor(s, 5000 + trial, rng.uniform(0.1, 10.0), rng.uniform(-5.0, 5.0));
      NormSite site(s.c, 2, 0.5);
      const Tensor y = normalize_individual(site, x, DomainId{1}, true);
      auto [m, v] = compute_batch_stats(y);
      for (int c = 0; c < s.c; ++c) {
        CHECK(std::abs(m[c]) < 1e-5);
        CHECK(std::abs(v[c] - 1.0) < 1e-3);
      }
    }
  }

  TEST_CASE("aggregated normalization reduces to batch or instance normalization") {
    const Tensor x = test::random_tensor({3, 4, 5, 5}, 11, 2.0, 1.0);
    NormSite batch_site(4, 1, 0.5), inst_site(4, 1, 0.5);
    for (float& l : batch_site.mix().logit.value) l = 40.0f;
    for (float& l : inst_site.mix().logit.value) l = -40.0f;
    const Tensor agg_b = normalize_aggregated(batch_site, x, true);
    const Tensor agg_i = normalize_aggregated(inst_site, x, true);

    auto [bm, bv] = compute_batch_stats(x);
    auto [im, iv] = compute_instance_stats(x);
    const Shape s = x.shape();
    double worst_b = 0.0, worst_i = 0.0;
    for (int n = 0; n < s.n; ++n) {
      for (int c = 0; c < s.c; ++c) {
        for (std::size_t i = 0; i < s.plane(); ++i) {
          const double v = x.plane(n, c)[i];
          const double zb = (v - bm[c]) / std::sqrt(bv[c] + 1e-5);
          const double zi = (v - im[n * s.c + c]) / std::sqrt(iv[n * s.c + c] + 1e-5);
          worst_b = std::max(worst_b, std::abs(zb - agg_b.plane(n, c)[i]));
          worst_i = std::max(worst_i, std::abs(zi - agg_i.plane(n, c)[i]));
        }
      }
    }
    CHECK(worst_b < 1e-6);
    CHECK(worst_i < 1e-6);
  }

  TEST_CASE("aggregated normalization at alpha = 0.5, hand evaluation") {
    NormSite site(1, 1, 0.5);
    const Tensor x = from_values({2, 1, 1, 2}, {0, 2, 4, 6});
    const Tensor y = normalize_aggregated(site, x, true);
    // batch: mean 3, var 5; instances: (1, 1) and (5, 1).
    const double means[] = {0.5 * 3 + 0.5 * 1, 0.5 * 3 + 0.5 * 5};
    const double var = 0.5 * 5 + 0.5 * 1;
    const float xs[] = {0, 2, 4, 6};
    for (int i = 0; i < 4; ++i) {
      CHECK(y.data()[i] == doctest::Approx((xs[i] - means[i / 2]) / std::sqrt(var + 1e-5)).epsilon(1e-6));
    }
    CHECK_THROWS_AS(normalize_aggregated(site, Tensor({1, 2, 2, 2}), true), InvalidInput);
  }

  TEST_CASE("random forward: p = 0 equals individual, p = 1 swaps affine parameters") {
    const Tensor x = test::random_tensor({2, 3, 4, 4}, 21);
    NormSite site(3, 2, 0.5);
    randomize(site, 5);
    Rng rng(9);
    const Tensor rf = normalize_random(site, x, DomainId{1}, 0.0, rng);
    const Tensor in = normalize_individual(site, x, DomainId{1}, true);
    CHECK(max_abs_diff(rf, in) == 0.0);

    const Tensor swapped = normalize_random(site, x, DomainId{1}, 1.0, rng);
    auto [m, v] = compute_batch_stats(x);
    const auto& g2 = site.individual()[1].gamma.value;
    const auto& b2 = site.individual()[1].beta.value;
    double worst = 0.0;
    for (int n = 0; n < 2; ++n) {
      for (int c = 0; c < 3; ++c) {
        for (std::size_t i = 0; i < 16; ++i) {
          const double expect = g2[c] * (x.plane(n, c)[i] - m[c]) / std::sqrt(v[c] + 1e-5) + b2[c];
          worst = std::max(worst, std::abs(expect - swapped.plane(n, c)[i]));
        }
      }
    }
    CHECK(worst < 1e-5);
  }

  TEST_CASE("random forward validation and determinism") {
    const Tensor x = test::random_tensor({2, 2, 3, 3}, 31);
    NormSite site(2, 3, 0.5);
    randomize(site, 3);
    Rng rng(1);
    CHECK_THROWS_AS(normalize_random(site, x, DomainId{1}, 1.5, rng), InvalidInput);
    CHECK_THROWS_AS(normalize_random(site, x, DomainId{1}, -0.1, rng), InvalidInput);

    Rng a(77), b(77);
    for (int i = 0; i < 10; ++i) {
      CHECK(max_abs_diff(normalize_random(site, x, DomainId{2}, 0.5, a), normalize_random(site, x, DomainId{2}, 0.5, b)) == 0.0);
    }

    NormSite single(2, 1, 0.5);
    std::vector<std::string> warnings;
    ScopedWarningSink sink([&](std::string_view m) { warnings.emplace_back(m); });
    const Tensor out = normalize_random(single, x, DomainId{1}, 1.0, rng);
    CHECK(warnings.size() == 1);
    CHECK(max_abs_diff(out, normalize_individual(single, x, DomainId{1}, true)) == 0.0);
  }

  TEST_CASE("random forward stops gradients to every affine parameter") {
    const Tensor x = test::random_tensor({4, 3, 4, 4}, 41);
    const std::vector<DomainId> domains{{1}, {2}, {1}, {3}};
    for (double p : {0.0, 0.5, 1.0}) {
      NormSite site(3, 3, 0.5);
      randomize(site, 8);
      Rng rng(12);
      NormCache cache;
      const Tensor y = site.forward(x, context(ForwardMode::Random, domains, &rng, p), &cache);
      const Tensor dx = site.backward(test::random_weights(y.shape(), 3), cache);
      bool any_x = false;
      for (float g : dx.values()) any_x = any_x || g != 0.0f;
      CHECK(any_x);
      auto all_zero = [](const Parameter& prm) {
        for (float g : prm.grad) {
          if (g != 0.0f) return false;
        }
        return true;
      };
      for (auto& b : site.individual()) {
        CHECK(all_zero(b.gamma));
        CHECK(all_zero(b.beta));
      }
      CHECK(all_zero(site.aggregated().gamma));
      CHECK(all_zero(site.aggregated().beta));
    }
  }

  TEST_CASE("identical branches make IF independent of the domain id") {
    const Tensor x = test::random_tensor({3, 2, 4, 4}, 51);
    NormSite site(2, 3, 0.5);
    const Tensor a = normalize_individual(site, x, DomainId{1}, true);
    const Tensor b = normalize_individual(site, x, DomainId{3}, true);
    CHECK(max_abs_diff(a, b) == 0.0);
  }

  TEST_CASE("running statistics update rule") {
    BranchParams b(1);
    b.running_mean = {3.0f};
    b.running_var = {2.0f};
    update_running_stats(b, std::vector<double>{10.0}, std::vector<double>{1.0}, 1.0f);
    CHECK(b.running_mean[0] == 3.0f);
    update_running_stats(b, std::vector<double>{10.0}, std::vector<double>{1.0}, 0.0f);
    CHECK(b.running_mean[0] == 10.0f);
    CHECK(b.running_var[0] == 1.0f);
    b.running_mean = {0.0f};
    update_running_stats(b, std::vector<double>{10.0}, std::vector<double>{1.0}, 0.9f);
    CHECK(b.running_mean[0] == doctest::Approx(1.0));
    CHECK_THROWS_AS(update_running_stats(b, std::vector<double>{0.0}, std::vector<double>{-1.0}, 0.9f), InvalidInput);
    CHECK_THROWS_AS(update_running_stats(b, std::vector<double>{0.0}, std::vector<double>{1.0}, 1.5f), InvalidInput);
  }

  TEST_CASE("mixing coefficient stays inside (0, 1)") {
    MixCoefficient mix(4, 0.999);
    for (int c = 0; c < 4; ++c) CHECK(mix.value(c) == doctest::Approx(0.999).epsilon(1e-6));
    mix.logit.value = {-30.0f, -1.0f, 1.0f, 30.0f};
    for (int c = 0; c < 4; ++c) {
      CHECK(mix.value(c) > 0.0);
      CHECK(mix.value(c) < 1.0);
    }
    CHECK_THROWS_AS(MixCoefficient(2, 1.0), InvalidInput);
    CHECK_THROWS_AS(MixCoefficient(2, 0.0), InvalidInput);
  }

  TEST_CASE("stripped site keeps only the aggregated path") {
    NormSite site(2, 2, 0.5);
    site.strip();
    const Tensor x = test::random_tensor({2, 2, 3, 3}, 61);
    CHECK_NOTHROW(normalize_aggregated(site, x, false));
    CHECK_THROWS_AS(normalize_individual(site, x, DomainId{1}, true), InvalidInput);
  }
}

TEST_SUITE("gradients") {
  TEST_CASE("individual forward gradient matches finite differences") {
    Tensor x = test::random_tensor({4, 3, 3, 3}, 71, 1.5, 0.5);
    const std::vector<DomainId> domains{{1}, {2}, {2}, {1}};
    NormSite site(3, 2, 0.5);
    randomize(site, 4);
    const Tensor w = test::random_weights(x.shape(), 72);
    const auto ctx = context(ForwardMode::Individual, domains);
    auto loss = [&] { return test::dot(site.forward(x, ctx), w); };

    NormCache cache;
    site.forward(x, ctx, &cache);
    const Tensor dx = site.backward(w, cache);
    auto xs = test::to_vector(x);
    test::check_gradient(xs, test::to_vector(dx), [&] {
      std::copy(xs.begin(), xs.end(), x.values().begin());
      return loss();
    }, 1e-2, 2e-2);
    std::copy(xs.begin(), xs.end(), x.values().begin());
    for (auto& b : site.individual()) {
      test::check_gradient(b.gamma.value, b.gamma.grad, loss, 1e-2, 1e-2);
      test::check_gradient(b.beta.value, b.beta.grad, loss, 1e-2, 1e-2);
    }
  }

  TEST_CASE("aggregated forward gradient matches finite differences") {
    Tensor x = test::random_tensor({3, 2, 4, 3}, 81, 1.2, -0.3);
    NormSite site(2, 2, 0.5);
    randomize(site, 6);
    const Tensor w = test::random_weights(x.shape(), 82);
    const auto ctx = context(ForwardMode::Aggregated, {});
    auto loss = [&] { return test::dot(site.forward(x, ctx), w); };

    NormCache cache;
    site.forward(x, ctx, &cache);
    const Tensor dx = site.backward(w, cache);
    auto xs = test::to_vector(x);
    test::check_gradient(xs, test::to_vector(dx), [&] {
      std::copy(xs.begin(), xs.end(), x.values().begin());
      return loss();
    }, 1e-2, 2e-2);
    std::copy(xs.begin(), xs.end(), x.values().begin());
    test::check_gradient(site.aggregated().gamma.value, site.aggregated().gamma.grad, loss, 1e-2, 1e-2);
    test::check_gradient(site.aggregated().beta.value, site.aggregated().beta.grad, loss, 1e-2, 1e-2);
    test::check_gradient(site.mix().logit.value, site.mix().logit.grad, loss, 1e-2, 1e-2);
  }

  TEST_CASE("random forward input gradient matches finite differences") {
    Tensor x = test::random_tensor({4, 2, 3, 3}, 91);
    const std::vector<DomainId> domains{{1}, {2}, {3}, {1}};
    NormSite site(2, 3, 0.5);
    randomize(site, 7);
    const Tensor w = test::random_weights(x.shape(), 92);
    auto loss = [&] {
      Rng rng(5);  // same substitution draw every evaluation
      return test::dot(site.forward(x, context(ForwardMode::Random, domains, &rng, 0.7)), w);
    };
    Rng rng(5);
    NormCache cache;
    site.forward(x, context(ForwardMode::Random, domains, &rng, 0.7), &cache);
    const Tensor dx = site.backward(w, cache);
    auto xs = test::to_vector(x);
    test::check_gradient(xs, test::to_vector(dx), [&] {
      std::copy(xs.begin(), xs.end(), x.values().begin());
      return loss();
    }, 1e-2, 2e-2);
  }

  TEST_CASE("plain batch norm gradient matches finite differences") {
    Tensor x = test::random_tensor({3, 2, 3, 3}, 101);
    BatchNorm2d bn(2);
    bn.branch().gamma.value = {1.3f, 0.7f};
    bn.branch().beta.value = {0.2f, -0.4f};
    const Tensor w = test::random_weights(x.shape(), 102);
    NormContext ctx;
    ctx.update_running = false;
    auto loss = [&] { return test::dot(bn.forward(x, ctx), w); };
    NormCache cache;
    bn.forward(x, ctx, &cache);
    const Tensor dx = bn.backward(w, cache);
    auto xs = test::to_vector(x);
    test::check_gradient(xs, test::to_vector(dx), [&] {
      std::copy(xs.begin(), xs.end(), x.values().begin());
      return loss();
    }, 1e-2, 2e-2);
    std::copy(xs.begin(), xs.end(), x.values().begin());
    test::check_gradient(bn.branch().gamma.value, bn.branch().gamma.grad, loss, 1e-2, 1e-2);
  }
}
