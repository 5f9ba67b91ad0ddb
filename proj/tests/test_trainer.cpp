#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "doctest.h"
#include "siab/error.hpp"
#include "siab/log.hpp"
#include "siab/losses.hpp"
#include "siab/trainer.hpp"
#include "support.hpp"

using namespace siab;

namespace {

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.widths = {4, 8};
  cfg.iterations = 3;
  cfg.eval_every = 0;
  cfg.seed = 11;
  return cfg;
}

DatasetRegistry tiny_registry(int k = 3) {
  SyntheticDomainSpec spec;
  spec.image_size = 16;
  spec.seed = 5;
  return split_labeled_unlabeled(make_synthetic_registry(spec, k, 6), 0.5, 1);
}

std::map<std::string, std::vector<float>> snapshot(SegmentationNet& net) {
  std::map<std::string, std::vector<float>> out;
  net.visit({[&](const std::string& n, Parameter& p) { out[n] = p.value; },
             [&](const std::string& n, std::vector<float>& b) { out[n + "#"] = b; }});
  return out;
}

Tensor probs(Shape s, std::vector<float> v) { return Tensor(s, std::move(v)); }

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("pseudo-label ensemble: hand example") {
    // Two pixels, two classes. Pixel 0: IF (0.9, 0.1), AF (0.5, 0.5) ->
    // 0.7 for class 0. Pixel 1: IF (0.2, 0.8), AF (0.4, 0.6) -> 0.7 class 1.
    const Tensor p_if = probs({1, 2, 1, 2}, {0.9f, 0.2f, 0.1f, 0.8f});
    const Tensor p_af = probs({1, 2, 1, 2}, {0.5f, 0.4f, 0.5f, 0.6f});
    const auto r = ensemble_pseudo_labels(p_if, p_af, 0.5, 0.7);
    CHECK(r.labels == std::vector<int>{0, 1});
    CHECK(r.confidence[0] == doctest::Approx(0.7));
    CHECK(r.mask[0] + r.mask[1] >= 1);
    const auto strict = ensemble_pseudo_labels(p_if, p_af, 0.5, 0.71);
    CHECK(strict.mask_rate() == 0.0);
    CHECK(ensemble_pseudo_labels(p_if, p_af, 1.0, 0.85).mask == std::vector<std::uint8_t>{1, 0});
    CHECK_THROWS_AS(ensemble_pseudo_labels(p_if, Tensor({1, 2, 2, 1}), 0.5, 0.5), InvalidInput);
  }

  TEST_CASE("pseudo-label ensemble: confident-looking pixel still masked at 0.95") {
    const Tensor p_if = probs({1, 2, 1, 1}, {0.9f, 0.1f});
    const Tensor p_af = probs({1, 2, 1, 1}, {0.7f, 0.3f});
    const auto r = ensemble_pseudo_labels(p_if, p_af, 0.5, 0.95);
    CHECK(r.labels[0] == 0);
    CHECK(r.confidence[0] == doctest::Approx(0.8));
    CHECK(r.mask[0] == 0);
  }

  TEST_CASE("pseudo-label ties go to the lowest class") {
    const auto r = threshold_pseudo_labels(probs({1, 3, 1, 1}, {0.4f, 0.4f, 0.2f}), 0.0);
    CHECK(r.labels[0] == 0);
  }

  TEST_CASE("mask rate is nonincreasing in tau") {
    const DatasetRegistry reg = tiny_registry();
    TrainConfig cfg = tiny_config();
    TrainState state = init_train_state(cfg, 1, 2, 3);
    Rng rng(1);
    const auto [lb, ub] = sample_batches(reg, cfg, rng);
    double previous = 1.0;
    for (double tau : {0.0, 0.3, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99, 1.0, 1.01}) {
      cfg.tau = tau;
      const double rate = pseudo_label(state.pair.teacher, ub.weak, ub.domains, cfg).mask_rate();
      CHECK(rate <= previous);
      previous = rate;
    }
    CHECK(previous == 0.0);
  }

  TEST_CASE("batches carry the configured sizes and aligned views") {
    const DatasetRegistry reg = tiny_registry();
    TrainConfig cfg = tiny_config();
    cfg.labeled_per_domain = 2;
    cfg.unlabeled_per_domain = 3;
    Rng rng(2);
    const auto [lb, ub] = sample_batches(reg, cfg, rng);
    CHECK(lb.images.shape() == Shape{6, 1, 16, 16});
    CHECK(lb.labels.size() == 6 * 256);
    CHECK(ub.weak.shape() == Shape{9, 1, 16, 16});
    CHECK(ub.strong.shape() == ub.weak.shape());
    CHECK(ub.styled.shape() == ub.weak.shape());
    for (std::size_t i = 0; i < ub.domains.size(); ++i) {
      CHECK(ub.domains[i].value == static_cast<int>(i / 3) + 1);
      CHECK(ub.style_domains[i].value != ub.domains[i].value);
    }
  }

  TEST_CASE("loss weights switch streams off") {
    const DatasetRegistry reg = tiny_registry();
    TrainConfig cfg = tiny_config();
    cfg.tau = 0.0;
    TrainState state = init_train_state(cfg, 1, 2, 3);
    Rng rng(3);
    const auto [lb, ub] = sample_batches(reg, cfg, rng);
    const auto pseudo = pseudo_label(state.pair.teacher, ub.weak, ub.domains, cfg);

    Rng r1(4);
    const auto all = unsupervised_loss(state.pair.student, ub, pseudo, cfg, r1);
    CHECK(all.styled > 0.0);
    CHECK(all.random > 0.0);
    CHECK(all.total == doctest::Approx(all.strong + cfg.lambda_h * all.styled + cfg.lambda_r * all.random));

    TrainConfig off = cfg;
    off.lambda_h = 0.0;
    off.lambda_r = 0.0;
    Rng r2(4);
    const auto some = unsupervised_loss(state.pair.student, ub, pseudo, off, r2);
    CHECK(some.styled == 0.0);
    CHECK(some.random == 0.0);
    CHECK(some.total == doctest::Approx(all.strong));

    off.lambda_af = 0.0;
    const auto sup = supervised_loss(state.pair.student, lb, off);
    CHECK(sup.aggregated == 0.0);
    CHECK(sup.total == sup.individual);
  }

  TEST_CASE("empty labeled batch warns and contributes nothing") {
    TrainConfig cfg = tiny_config();
    TrainState state = init_train_state(cfg, 1, 2, 3);
    std::vector<std::string> warnings;
    ScopedWarningSink sink([&](std::string_view m) { warnings.emplace_back(m); });
    CHECK(supervised_loss(state.pair.student, LabeledBatch{}, cfg, 1.0).total == 0.0);
    CHECK(warnings.size() == 1);
  }

  TEST_CASE("non-finite losses name their component") {
    TrainConfig cfg = tiny_config();
    TrainState state = init_train_state(cfg, 1, 2, 3);
    LabeledBatch lb;
    lb.images = Tensor({3, 1, 16, 16}, std::nanf(""));
    lb.labels.assign(3 * 256, 0);
    lb.domains = {DomainId{1}, DomainId{2}, DomainId{3}};
    try {
      supervised_loss(state.pair.student, lb, cfg);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("L_IF") != std::string::npos);
    }
  }

  TEST_CASE("EMA: closed form, endpoints, buffers, mismatch") {
    TrainConfig cfg = tiny_config();
    ModelPair pair = make_model_pair(cfg, 1, 2, 3);
    Rng rng(6);
    pair.student.visit({[&](const std::string&, Parameter& p) {
                          for (float& v : p.value) v = static_cast<float>(rng.normal(0.0, 1.0));
                        },
                        [&](const std::string&, std::vector<float>& b) {
                          for (float& v : b) v = static_cast<float>(rng.uniform(0.5, 2.0));
                        }});
    auto t0 = snapshot(pair.teacher);
    auto s = snapshot(pair.student);
    for (int i = 0; i < 10; ++i) ema_update(pair, 0.9);
    const double mn = std::pow(0.9, 10);
    pair.teacher.visit({[&](const std::string& n, Parameter& p) {
                          for (std::size_t i = 0; i < p.size(); ++i) {
                            CHECK(p.value[i] == doctest::Approx(mn * t0[n][i] + (1 - mn) * s[n][i]).epsilon(1e-5));
                          }
                        },
                        [&](const std::string& n, std::vector<float>& b) { CHECK(b == s[n + "#"]); }});
    ema_update(pair, 0.0);
    CHECK(snapshot(pair.teacher) == snapshot(pair.student));
    CHECK_THROWS_AS(ema_update(pair, 1.5), InvalidInput);

    TrainConfig plain = cfg;
    plain.use_siab = false;
    plain.lambda_r = 0.0;
    ModelPair mixed{make_model_pair(cfg, 1, 2, 3).student, make_model_pair(plain, 1, 2, 3).teacher};
    CHECK_THROWS_AS(ema_update(mixed, 0.5), InvalidInput);
  }

  TEST_CASE("train step: report keys, total, teacher untouched by gradients") {
    const DatasetRegistry reg = tiny_registry();
    TrainConfig cfg = tiny_config();
    cfg.tau = 0.5;
    cfg.lambda_u = 0.7;
    TrainState state = init_train_state(cfg, 1, 2, 3);
    Rng rng(7);
    const auto [lb, ub] = sample_batches(reg, cfg, rng);
    Rng step(8);
    const StepReport r = train_step(state, lb, ub, cfg, step);
    for (const char* key : {"L_IF", "L_AF", "L_x", "L_s", "L_h", "L_r", "L_u", "total", "mask_rate"}) {
      CHECK(r.count(key) == 1);
    }
    CHECK(r.size() == 9);
    CHECK(r.at("total") == doctest::Approx(r.at("L_x") + 0.7 * r.at("L_u")));
    CHECK(r.at("L_x") == doctest::Approx(r.at("L_IF") + cfg.lambda_af * r.at("L_AF")));
    CHECK(state.iteration == 1);
    state.pair.teacher.visit({[](const std::string&, Parameter& p) {
                                for (float g : p.grad) CHECK(g == 0.0f);
                              },
                              [](const std::string&, std::vector<float>&) {}});
  }

  TEST_CASE("zero learning rate leaves both networks unchanged") {
    const DatasetRegistry reg = tiny_registry();
    TrainConfig cfg = tiny_config();
    cfg.lr = 0.0;
    TrainState state = init_train_state(cfg, 1, 2, 3);
    const auto before = snapshot(state.pair.student);
    Rng rng(9);
    const auto [lb, ub] = sample_batches(reg, cfg, rng);
    Rng step(10);
    train_step(state, lb, ub, cfg, step);
    auto after = snapshot(state.pair.student);
    auto teacher = snapshot(state.pair.teacher);
    for (auto& [name, values] : before) {
      if (name.ends_with("#")) continue;  // running statistics do move
      CHECK(after[name] == values);
      CHECK(teacher[name] == values);
    }
  }

  TEST_CASE("single-domain converted net starts out equivalent to the plain one") {
    const DatasetRegistry reg = tiny_registry(2);
    ScopedWarningSink quiet([](std::string_view) {});
    const DatasetRegistry one = leave_one_out(reg, DomainId{2}).train;
    TrainConfig conv = tiny_config();
    conv.lambda_af = 0.0;
    conv.lambda_h = 0.0;
    conv.lambda_r = 0.0;
    conv.sab_stats = SabStats::BatchOnly;
    conv.tau = 0.6;
    TrainConfig plain = conv;
    plain.use_siab = false;
    plain.sab_stats = SabStats::Mixed;

    TrainState a = init_train_state(conv, 1, 2, 1);
    TrainState b = init_train_state(plain, 1, 2, 1);
    Rng rng(12);
    const auto [lb, ub] = sample_batches(one, conv, rng);
    Rng s1(13), s2(13);
    const StepReport ra = train_step(a, lb, ub, conv, s1);
    const StepReport rb = train_step(b, lb, ub, plain, s2);
    CHECK(ra.at("L_IF") == doctest::Approx(rb.at("L_IF")).epsilon(1e-6));
    CHECK(ra.at("L_s") == doctest::Approx(rb.at("L_s")).epsilon(1e-6));
    CHECK(ra.at("mask_rate") == rb.at("mask_rate"));
  }

  TEST_CASE("training is deterministic and resumes exactly") {
    const DatasetRegistry reg = tiny_registry();
    TrainConfig cfg = tiny_config();
    cfg.iterations = 4;
    const TrainResult full = train_loop(reg, {}, cfg);
    TrainResult again = train_loop(reg, {}, cfg);
    TrainResult copy = full;
    CHECK(snapshot(copy.state.pair.student) == snapshot(again.state.pair.student));
    REQUIRE(full.history.size() == 4);
    CHECK(full.history[3].losses == again.history[3].losses);

    TrainConfig half = cfg;
    half.iterations = 2;
    TrainResult first = train_loop(reg, {}, half);
    TrainResult resumed = train_loop(reg, {}, cfg, {}, std::move(first.state));
    CHECK(resumed.history.size() == 2);
    CHECK(resumed.history.back().iteration == 4);
    CHECK(snapshot(resumed.state.pair.student) == snapshot(copy.state.pair.student));
    CHECK(snapshot(resumed.state.pair.teacher) == snapshot(copy.state.pair.teacher));
    CHECK(resumed.history.back().losses == full.history.back().losses);
  }

  TEST_CASE("zero iterations returns the initial networks") {
    const DatasetRegistry reg = tiny_registry();
    TrainConfig cfg = tiny_config();
    cfg.iterations = 0;
    TrainResult r = train_loop(reg, {}, cfg);
    CHECK(r.history.empty());
    TrainState init = init_train_state(cfg, 1, 2, 3);
    CHECK(snapshot(r.state.pair.student) == snapshot(init.pair.student));
  }

  TEST_CASE("evaluation records follow eval_every and the final iteration") {
    const DatasetRegistry reg = tiny_registry();
    SyntheticDomainSpec spec;
    spec.image_size = 16;
    const auto test_set = leave_one_out(make_synthetic_registry(spec, 2, 3), DomainId{2}).test;
    TrainConfig cfg = tiny_config();
    cfg.iterations = 5;
    cfg.eval_every = 2;
    std::vector<long> evaluated;
    TrainHooks hooks;
    hooks.on_record = [&](const HistoryRecord& r) {
      if (r.unseen_dice) evaluated.push_back(r.iteration);
    };
    ScopedWarningSink quiet([](std::string_view) {});
    train_loop(reg, test_set, cfg, hooks);
    CHECK(evaluated == std::vector<long>{2, 4, 5});
  }
}
