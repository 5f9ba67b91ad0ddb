#include "siab/model.hpp"

#include <string>

#include "siab/error.hpp"

namespace siab {

void Architecture::validate() const {
  if (in_channels < 1) throw InvalidInput("architecture: in_channels must be >= 1");
  if (n_classes < 2) throw InvalidInput("architecture: n_classes must be >= 2");
  if (widths.size() < 2) throw InvalidInput("architecture: need at least two stages");
  for (int w : widths) {
    if (w < 1) throw InvalidInput("architecture: stage widths must be positive");
  }
}

void to_json(nlohmann::json& j, const Architecture& a) {
  j = nlohmann::json{{"in_channels", a.in_channels}, {"n_classes", a.n_classes}, {"widths", a.widths}};
}

void from_json(const nlohmann::json& j, Architecture& a) {
  j.at("in_channels").get_to(a.in_channels);
  j.at("n_classes").get_to(a.n_classes);
  j.at("widths").get_to(a.widths);
}

RoutingContext RoutingContext::individual(std::vector<DomainId> domains) {
  RoutingContext ctx;
  ctx.mode = ForwardMode::Individual;
  ctx.domains = std::move(domains);
  return ctx;
}

RoutingContext RoutingContext::aggregated() {
  RoutingContext ctx;
  ctx.mode = ForwardMode::Aggregated;
  return ctx;
}

RoutingContext RoutingContext::random(std::vector<DomainId> domains, double p, Rng& rng) {
  RoutingContext ctx;
  ctx.mode = ForwardMode::Random;
  ctx.domains = std::move(domains);
  ctx.rand_p = p;
  ctx.rng = &rng;
  return ctx;
}

RoutingContext& RoutingContext::evaluation() {
  batch_stats = false;
  update_running = false;
  return *this;
}

RoutingContext& RoutingContext::frozen_stats() {
  batch_stats = true;
  update_running = false;
  return *this;
}

int NormSlot::channels() const {
  return std::visit([](const auto& n) { return n.channels(); }, impl_);
}

Tensor NormSlot::forward(const Tensor& x, const NormContext& ctx, NormCache* cache) {
  return std::visit([&](auto& n) { return n.forward(x, ctx, cache); }, impl_);
}

Tensor NormSlot::backward(const Tensor& dy, const NormCache& cache) {
  return std::visit([&](auto& n) { return n.backward(dy, cache); }, impl_);
}

void NormSlot::visit(const std::string& prefix, const ParamVisitor& visitor) {
  std::visit([&](auto& n) { n.visit(prefix, visitor); }, impl_);
}

ConvBlock::ConvBlock(int in_channels, int out_channels)
    : conv1(in_channels, out_channels, 3, false),
      norm1(out_channels),
      conv2(out_channels, out_channels, 3, false),
      norm2(out_channels) {}

void ConvBlock::visit(const std::string& prefix, const ParamVisitor& visitor) {
  conv1.visit(prefix + ".conv1", visitor);
  norm1.visit(prefix + ".norm1", visitor);
  conv2.visit(prefix + ".conv2", visitor);
  norm2.visit(prefix + ".norm2", visitor);
}

SegmentationNet::SegmentationNet(Architecture arch, std::uint64_t init_seed)
    : arch_(std::move(arch)), head_(1, 1, 1, true) {
  arch_.validate();
  const auto& w = arch_.widths;
  const int stages = static_cast<int>(w.size());
  Rng rng(init_seed);
  for (int i = 0; i < stages; ++i) {
    encoder_.emplace_back(i == 0 ? arch_.in_channels : w[i - 1], w[i]);
  }
  for (int i = 0; i + 1 < stages; ++i) {
    up_.emplace_back(w[i + 1], w[i]);
    decoder_.emplace_back(2 * w[i], w[i]);
  }
  head_ = Conv2d(w[0], arch_.n_classes, 1, true);
  for (auto& b : encoder_) {
    b.conv1.init_kaiming(rng);
    b.conv2.init_kaiming(rng);
  }
  for (std::size_t i = 0; i < up_.size(); ++i) {
    up_[i].init(rng);
    decoder_[i].conv1.init_kaiming(rng);
    decoder_[i].conv2.init_kaiming(rng);
  }
  head_.init_kaiming(rng, 1.0);
}

namespace {

NormContext site_context(const RoutingContext& ctx) {
  NormContext n;
  n.mode = ctx.mode;
  n.domains = ctx.domains;
  n.batch_stats = ctx.batch_stats;
  n.update_running = ctx.update_running;
  n.rand_p = ctx.rand_p;
  n.rng = ctx.rng;
  return n;
}

void add_inplace(Tensor& a, const Tensor& b) {
  float* pa = a.data();
  const float* pb = b.data();
  for (std::size_t i = 0; i < a.size(); ++i) pa[i] += pb[i];
}

}  // namespace

Tensor SegmentationNet::block_forward(ConvBlock& block, const Tensor& x, const NormContext& ctx,
                                      BlockCache* cache) {
  Tensor h = block.conv1.forward(x);
  h = block.norm1.forward(h, ctx, cache != nullptr ? &cache->norm1 : nullptr);
  relu_inplace(h);
  Tensor h2 = block.conv2.forward(h);
  h2 = block.norm2.forward(h2, ctx, cache != nullptr ? &cache->norm2 : nullptr);
  relu_inplace(h2);
  if (cache != nullptr) {
    cache->input = x;
    cache->act1 = std::move(h);
    cache->act2 = h2;
  }
  return h2;
}

Tensor SegmentationNet::block_backward(ConvBlock& block, const BlockCache& cache, Tensor d,
                                       bool need_dx) {
  relu_backward_inplace(cache.act2, d);
  d = block.norm2.backward(d, cache.norm2);
  Tensor d_act1;
  block.conv2.backward(cache.act1, d, &d_act1);
  relu_backward_inplace(cache.act1, d_act1);
  d_act1 = block.norm1.backward(d_act1, cache.norm1);
  Tensor dx;
  block.conv1.backward(cache.input, d_act1, need_dx ? &dx : nullptr);
  return dx;
}

Tensor SegmentationNet::forward(const Tensor& x, const RoutingContext& ctx, ForwardCache* cache) {
  const Shape s = x.shape();
  if (s.c != arch_.in_channels) {
    throw InvalidInput("forward: expected " + std::to_string(arch_.in_channels) +
                       " input channels, got " + std::to_string(s.c));
  }
  const int stages = static_cast<int>(arch_.widths.size());
  const int factor = 1 << (stages - 1);
  if (s.n < 1 || s.h % factor != 0 || s.w % factor != 0) {
    throw InvalidInput("forward: spatial size " + s.str() + " must be divisible by " +
                       std::to_string(factor));
  }
  if (converted() && ctx.mode != ForwardMode::Aggregated &&
      static_cast<int>(ctx.domains.size()) != s.n) {
    throw InvalidInput(std::string("forward: ") + to_string(ctx.mode) +
                       " routing needs one domain id per sample");
  }
  if (ctx.mode == ForwardMode::Random && ctx.rng == nullptr) {
    throw InvalidInput("forward: RF routing needs a random source");
  }
  const NormContext nctx = site_context(ctx);
  if (cache != nullptr) {
    *cache = ForwardCache{};
    cache->encoder.resize(stages);
    cache->decoder.resize(stages - 1);
    cache->pool_argmax.resize(stages - 1);
    cache->pool_input.resize(stages - 1);
    cache->up_input.resize(stages - 1);
  }

  std::vector<Tensor> skips(stages);
  skips[0] = block_forward(encoder_[0], x, nctx, cache ? &cache->encoder[0] : nullptr);
  for (int i = 1; i < stages; ++i) {
    Tensor pooled;
    std::vector<std::int32_t> argmax;
    kernels::maxpool2x2_forward(skips[i - 1], pooled, argmax);
    if (cache != nullptr) {
      cache->pool_argmax[i - 1] = std::move(argmax);
      cache->pool_input[i - 1] = skips[i - 1].shape();
    }
    skips[i] = block_forward(encoder_[i], pooled, nctx, cache ? &cache->encoder[i] : nullptr);
  }
  Tensor h = std::move(skips[stages - 1]);
  for (int i = stages - 2; i >= 0; --i) {
    Tensor up = up_[i].forward(h);
    if (cache != nullptr) cache->up_input[i] = std::move(h);
    h = block_forward(decoder_[i], concat_channels(up, skips[i]), nctx,
                      cache ? &cache->decoder[i] : nullptr);
  }
  Tensor logits = head_.forward(h);
  if (cache != nullptr) cache->head_input = std::move(h);
  return logits;
}

void SegmentationNet::backward(const ForwardCache& cache, const Tensor& dlogits) {
  const int stages = static_cast<int>(arch_.widths.size());
  if (static_cast<int>(cache.encoder.size()) != stages) {
    throw InvalidInput("backward: cache was not recorded by a differentiable forward");
  }
  Tensor dh;
  head_.backward(cache.head_input, dlogits, &dh);
  std::vector<Tensor> dskip(stages);
  for (int i = 0; i + 1 < stages; ++i) {
    Tensor dcat = block_backward(decoder_[i], cache.decoder[i], std::move(dh), true);
    Tensor dup;
    split_channels(dcat, arch_.widths[i], dup, dskip[i]);
    up_[i].backward(cache.up_input[i], dup, &dh);
  }
  for (int i = stages - 1; i >= 1; --i) {
    if (i < stages - 1) add_inplace(dh, dskip[i]);
    Tensor dpooled = block_backward(encoder_[i], cache.encoder[i], std::move(dh), true);
    dh = Tensor(cache.pool_input[i - 1]);
    kernels::maxpool2x2_backward(dpooled, cache.pool_argmax[i - 1], dh);
  }
  add_inplace(dh, dskip[0]);
  block_backward(encoder_[0], cache.encoder[0], std::move(dh), false);
}

void SegmentationNet::visit(const ParamVisitor& visitor) {
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    encoder_[i].visit("encoder." + std::to_string(i), visitor);
  }
  for (std::size_t i = 0; i < up_.size(); ++i) {
    up_[i].visit("up." + std::to_string(i), visitor);
    decoder_[i].visit("decoder." + std::to_string(i), visitor);
  }
  head_.visit("head", visitor);
}

void SegmentationNet::zero_grad() {
  visit({.on_parameter = [](const std::string&, Parameter& p) { p.zero_grad(); }, .on_buffer = {}});
}

ParameterCount SegmentationNet::count_parameters() {
  ParameterCount count;
  visit({.on_parameter = [&](const std::string&, Parameter& p) { count.learnable += p.size(); },
         .on_buffer = [&](const std::string&, std::vector<float>& b) { count.buffers += b.size(); }});
  return count;
}

std::vector<std::pair<std::string, NormSlot*>> SegmentationNet::norm_slots() {
  std::vector<std::pair<std::string, NormSlot*>> slots;
  auto add = [&](const std::string& prefix, ConvBlock& b) {
    slots.emplace_back(prefix + ".norm1", &b.norm1);
    slots.emplace_back(prefix + ".norm2", &b.norm2);
  };
  for (std::size_t i = 0; i < encoder_.size(); ++i) add("encoder." + std::to_string(i), encoder_[i]);
  for (std::size_t i = 0; i < decoder_.size(); ++i) add("decoder." + std::to_string(i), decoder_[i]);
  return slots;
}

SegmentationNet convert_model(SegmentationNet net, int n_domains, double alpha_init,
                              MixMode mix_mode) {
  if (n_domains < 1) throw InvalidInput("convert_model: n_domains must be >= 1");
  if (net.converted()) throw InvalidInput("convert_model: network is already converted");
  auto slots = net.norm_slots();
  if (slots.empty()) throw InvalidInput("convert_model: network has no normalization sites");
  for (auto& [name, slot] : slots) {
    const BatchNorm2d& bn = slot->plain();
    NormSite site(bn.channels(), n_domains, alpha_init, bn.epsilon());
    for (auto& branch : site.individual()) branch = bn.branch();
    site.aggregated() = bn.branch();
    site.mix().mode = mix_mode;
    slot->replace(std::move(site));
  }
  net.n_domains_ = n_domains;
  return net;
}

SegmentationNet strip_individual_branches(SegmentationNet net) {
  if (!net.converted()) throw InvalidInput("strip_individual_branches: network is not converted");
  for (auto& [name, slot] : net.norm_slots()) slot->site().strip();
  net.stripped_ = true;
  return net;
}

TrainVsInferenceCount describe_parameters(const SegmentationNet& net) {
  TrainVsInferenceCount out;
  SegmentationNet plain(net.architecture(), 0);
  out.plain = plain.count_parameters().learnable;
  SegmentationNet copy = net;
  out.training = copy.count_parameters().learnable;
  if (copy.stripped()) {
    // Individual branches are gone; each held a gamma and beta per channel.
    out.inference = out.training;
    for (auto& [name, slot] : copy.norm_slots()) {
      out.training += static_cast<std::size_t>(2 * slot->site().channels() * copy.n_domains());
    }
  } else {
    out.inference = copy.converted() ? strip_individual_branches(copy).count_parameters().learnable : out.training;
  }
  return out;
}

}  // namespace siab
