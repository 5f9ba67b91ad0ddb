#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "doctest.h"
#include "siab/checkpoint.hpp"
#include "siab/error.hpp"
#include "siab/model.hpp"
#include "support.hpp"

using namespace siab;
namespace fs = std::filesystem;

namespace {

Architecture small_arch() {
  Architecture a;
  a.in_channels = 1;
  a.n_classes = 3;
  a.widths = {4, 6, 8};
  return a;
}

std::map<std::string, Parameter*> parameters(SegmentationNet& net) {
  std::map<std::string, Parameter*> out;
  net.visit({[&](const std::string& n, Parameter& p) { out[n] = &p; }, [](const std::string&, std::vector<float>&) {}});
  return out;
}

std::vector<DomainId> domains_of(std::initializer_list<int> ids) {
  std::vector<DomainId> out;
  for (int i : ids) out.push_back(DomainId{i});
  return out;
}

fs::path temp_path(const std::string& name) { return fs::temp_directory_path() / ("siab_test_" + name); }

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("output shape matches the input and class count") {
    SegmentationNet net(small_arch(), 1);
    const Tensor y = net.forward(test::random_tensor({2, 1, 8, 12}, 2), RoutingContext::aggregated());
    CHECK(y.shape() == Shape{2, 3, 8, 12});
    CHECK_THROWS_AS(net.forward(Tensor({1, 2, 8, 8}), RoutingContext::aggregated()), InvalidInput);
    CHECK_THROWS_AS(net.forward(Tensor({1, 1, 6, 8}), RoutingContext::aggregated()), InvalidInput);
  }

  TEST_CASE("converted site parameter count for C = 8, K = 3") {
    NormSite site(8, 3, 0.5);
    std::size_t learnable = 0, buffers = 0;
    site.visit("s", {[&](const std::string&, Parameter& p) { learnable += p.size(); },
                     [&](const std::string&, std::vector<float>& b) { buffers += b.size(); }});
    CHECK(learnable == 72);
    CHECK(buffers == 4 * 2 * 8);
  }

  TEST_CASE("conversion preserves every non-normalization parameter and rejects a second pass") {
    SegmentationNet plain(small_arch(), 5);
    SegmentationNet conv = convert_model(plain, 3, 0.5);
    auto before = parameters(plain);
    auto after = parameters(conv);
    for (auto& [name, p] : before) {
      if (name.find("norm") != std::string::npos) continue;
      REQUIRE(after.count(name) == 1);
      CHECK(after[name]->value == p->value);
    }
    CHECK(conv.n_domains() == 3);
    for (auto& [name, slot] : conv.norm_slots()) CHECK(slot->site().n_domains() == 3);
    CHECK_THROWS_AS(convert_model(conv, 3, 0.5), InvalidInput);
  }

  TEST_CASE("single-branch conversion reproduces the plain network") {
    SegmentationNet plain(small_arch(), 7);
    SegmentationNet conv = convert_model(plain, 1, 0.5);
    for (int i = 0; i < 5; ++i) {
      const Tensor x = test::random_tensor({3, 1, 8, 8}, 100 + i);
      const auto ids = domains_of({1, 1, 1});
      const Tensor a = plain.forward(x, RoutingContext::individual(ids));
      const Tensor b = conv.forward(x, RoutingContext::individual(ids));
      CHECK(max_abs_diff(a, b) < 1e-6);
    }
  }

  TEST_CASE("IF and AF agree when alpha saturates at 1") {
    SegmentationNet net = convert_model(SegmentationNet(small_arch(), 9), 2, 0.5);
    for (auto& [name, slot] : net.norm_slots()) {
      for (float& l : slot->site().mix().logit.value) l = 40.0f;
    }
    const Tensor x = test::random_tensor({2, 1, 8, 8}, 10);
    const Tensor a = net.forward(x, RoutingContext::individual(domains_of({2, 2})));
    const Tensor b = net.forward(x, RoutingContext::aggregated());
    CHECK(max_abs_diff(a, b) < 1e-5);
  }

  TEST_CASE("RF: p = 0 equals IF, equal seeds give equal outputs") {
    SegmentationNet net = convert_model(SegmentationNet(small_arch(), 11), 3, 0.5);
    const Tensor x = test::random_tensor({3, 1, 8, 8}, 12);
    const auto ids = domains_of({1, 2, 3});
    Rng r0(1);
    const Tensor rf0 = net.forward(x, RoutingContext::random(ids, 0.0, r0).frozen_stats());
    const Tensor in = net.forward(x, RoutingContext::individual(ids).frozen_stats());
    CHECK(max_abs_diff(rf0, in) == 0.0);
    Rng a(3), b(3);
    CHECK(max_abs_diff(net.forward(x, RoutingContext::random(ids, 0.8, a).frozen_stats()),
                       net.forward(x, RoutingContext::random(ids, 0.8, b).frozen_stats())) == 0.0);
  }

  TEST_CASE("routing validation") {
    SegmentationNet net = convert_model(SegmentationNet(small_arch(), 13), 2, 0.5);
    const Tensor x = test::random_tensor({2, 1, 8, 8}, 14);
    CHECK_THROWS_AS(net.forward(x, RoutingContext::individual(domains_of({1}))), InvalidInput);
    CHECK_THROWS_AS(net.forward(x, RoutingContext::individual(domains_of({1, 3}))), InvalidInput);
    RoutingContext no_rng = RoutingContext::individual(domains_of({1, 2}));
    no_rng.mode = ForwardMode::Random;
    no_rng.rand_p = 0.5;
    CHECK_THROWS_AS(net.forward(x, no_rng), InvalidInput);
  }

  TEST_CASE("stripping keeps AF predictions and drops K * 2C per site") {
    SegmentationNet net = convert_model(SegmentationNet(small_arch(), 15), 3, 0.5);
    // Make branches and running statistics distinct from their initial values.
    Rng rng(1);
    net.visit({[&](const std::string&, Parameter& p) {
                 for (float& v : p.value) v += static_cast<float>(rng.normal(0.0, 0.1));
               },
               [&](const std::string&, std::vector<float>& b) {
                 for (float& v : b) v = std::abs(v + static_cast<float>(rng.normal(0.0, 0.1)));
               }});
    SegmentationNet stripped = strip_individual_branches(net);
    const Tensor x = test::random_tensor({2, 1, 8, 8}, 16);
    RoutingContext eval = RoutingContext::aggregated();
    eval.evaluation();
    CHECK(max_abs_diff(net.forward(x, eval), stripped.forward(x, eval)) == 0.0);
    CHECK_THROWS_AS(stripped.forward(x, RoutingContext::individual(domains_of({1, 1}))), InvalidInput);

    std::size_t per_site = 0, mixing = 0;
    for (auto& [name, slot] : net.norm_slots()) {
      per_site += 3 * 2 * slot->channels();
      mixing += slot->channels();
    }
    CHECK(net.count_parameters().learnable - stripped.count_parameters().learnable == per_site);
    const auto counts = describe_parameters(net);
    CHECK(counts.inference <= counts.plain + mixing);
    CHECK(counts.training == net.count_parameters().learnable);
    const auto from_stripped = describe_parameters(stripped);
    CHECK(from_stripped.training == counts.training);
    CHECK(from_stripped.inference == counts.inference);
    CHECK(from_stripped.plain == counts.plain);
    CHECK_THROWS_AS(strip_individual_branches(SegmentationNet(small_arch(), 1)), InvalidInput);
  }

  TEST_CASE("checkpoint round trip is exact") {
    SegmentationNet net = convert_model(SegmentationNet(small_arch(), 17), 3, 0.5);
    Rng rng(2);
    net.visit({[&](const std::string&, Parameter& p) {
                 for (float& v : p.value) v += static_cast<float>(rng.normal(0.0, 0.1));
               },
               [](const std::string&, std::vector<float>&) {}});
    const auto path = temp_path("roundtrip.ckpt");
    save_checkpoint(net, path, {{"note", "test"}});
    auto loaded = load_checkpoint(path, 3);
    CHECK(loaded.net.n_domains() == 3);
    CHECK(loaded.metadata["note"] == "test");
    const Tensor x = test::random_tensor({3, 1, 8, 8}, 18);
    const auto ids = domains_of({1, 2, 3});
    CHECK(max_abs_diff(net.forward(x, RoutingContext::individual(ids).evaluation()),
                       loaded.net.forward(x, RoutingContext::individual(ids).evaluation())) == 0.0);
    CHECK(max_abs_diff(net.forward(x, RoutingContext::aggregated().evaluation()),
                       loaded.net.forward(x, RoutingContext::aggregated().evaluation())) == 0.0);
    CHECK(read_archive(path).header["n_domains"] == 3);
    CHECK_THROWS_AS(load_checkpoint(path, 2), LoadError);
    fs::remove(path);
  }

  TEST_CASE("stripped and plain checkpoints round trip") {
    const Tensor x = test::random_tensor({2, 1, 8, 8}, 19);
    SegmentationNet plain(small_arch(), 21);
    const auto p1 = temp_path("plain.ckpt");
    save_checkpoint(plain, p1);
    CHECK(max_abs_diff(plain.forward(x, RoutingContext::aggregated().evaluation()),
                       load_checkpoint(p1).net.forward(x, RoutingContext::aggregated().evaluation())) == 0.0);
    SegmentationNet stripped = strip_individual_branches(convert_model(plain, 2, 0.3));
    const auto p2 = temp_path("stripped.ckpt");
    save_checkpoint(stripped, p2);
    auto back = load_checkpoint(p2);
    CHECK(back.net.stripped());
    CHECK(max_abs_diff(stripped.forward(x, RoutingContext::aggregated().evaluation()),
                       back.net.forward(x, RoutingContext::aggregated().evaluation())) == 0.0);
    fs::remove(p1);
    fs::remove(p2);
  }

  TEST_CASE("corrupt or mismatched checkpoints fail with the key named") {
    const auto path = temp_path("bad.ckpt");
    { std::ofstream(path, std::ios::binary) << "NOTACKPT"; }
    CHECK_THROWS_AS(load_checkpoint(path), LoadError);

    SegmentationNet net = convert_model(SegmentationNet(small_arch(), 23), 2, 0.5);
    save_checkpoint(net, path);
    Archive archive = read_archive(path);
    archive.arrays.back().values.push_back(0.0f);
    const std::string bad_name = archive.arrays.back().name;
    write_archive(path, archive);
    try {
      load_checkpoint(path);
      FAIL("expected LoadError");
    } catch (const LoadError& e) {
      CHECK(std::string(e.what()).find(bad_name) != std::string::npos);
    }

    archive = read_archive(path);
    const std::string dropped = archive.arrays.front().name;
    archive.arrays.erase(archive.arrays.begin());
    write_archive(path, archive);
    try {
      load_checkpoint(path);
      FAIL("expected LoadError");
    } catch (const LoadError& e) {
      CHECK(std::string(e.what()).find(dropped) != std::string::npos);
    }
    fs::remove(path);
  }
}

TEST_SUITE("gradients") {
  TEST_CASE("network parameter gradients match finite differences at most points") {
    Architecture a;
    a.in_channels = 1;
    a.n_classes = 2;
    a.widths = {3, 4};
    for (ForwardMode mode : {ForwardMode::Individual, ForwardMode::Aggregated}) {
      CAPTURE(to_string(mode));
      SegmentationNet net = convert_model(SegmentationNet(a, 31), 2, 0.5);
      const Tensor x = test::random_tensor({4, 1, 6, 6}, 32);
      const auto ids = domains_of({1, 2, 1, 2});
      RoutingContext ctx = mode == ForwardMode::Individual ? RoutingContext::individual(ids) : RoutingContext::aggregated();
      ctx.frozen_stats();
      ForwardCache cache;
      const Tensor y = net.forward(x, ctx, &cache);
      const Tensor w = test::random_weights(y.shape(), 33);
      net.zero_grad();
      net.backward(cache, w);
      auto loss = [&] { return test::dot(net.forward(x, ctx), w); };
      auto params = parameters(net);
      for (const char* name : {"encoder.0.conv1.weight", "encoder.1.conv2.weight", "up.0.weight", "up.0.bias",
                               "decoder.0.conv1.weight", "head.weight", "head.bias"}) {
        CAPTURE(name);
        REQUIRE(params.count(name) == 1);
        CHECK(test::gradient_agreement(params[name]->value, params[name]->grad, loss, 3e-4, 2e-2, 20) >= 0.85);
      }
    }
  }
}
