#include "siab/trainer.hpp"

#include <cmath>

#include "siab/error.hpp"
#include "siab/log.hpp"
#include "siab/losses.hpp"
#include "siab/metrics.hpp"

namespace siab {
namespace {

void check_finite(double value, const char* component) {
  if (!std::isfinite(value)) {
    throw NumericError(std::string("non-finite loss component ") + component);
  }
}

// grad += scale * other
void add_scaled(Tensor& grad, const Tensor& other, double scale) {
  auto g = grad.values();
  auto o = other.values();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += static_cast<float>(scale * o[i]);
}

void scale_in_place(Tensor& t, double scale) {
  for (float& v : t.values()) v = static_cast<float>(v * scale);
}

MixMode mix_mode_for(SabStats s) {
  switch (s) {
    case SabStats::Mixed: return MixMode::Learned;
    case SabStats::BatchOnly: return MixMode::BatchOnly;
    case SabStats::InstanceOnly: return MixMode::InstanceOnly;
  }
  return MixMode::Learned;
}

AdamWOptions optimizer_options(const TrainConfig& cfg) {
  AdamWOptions o;
  o.lr = cfg.lr;
  o.weight_decay = cfg.weight_decay;
  o.mixing_lr_multiplier = cfg.alpha_lr_multiplier;
  return o;
}

// Forward with a cache when gradients are wanted.
Tensor run(SegmentationNet& net, const Tensor& x, const RoutingContext& ctx, bool want_grad,
           ForwardCache& cache) {
  return net.forward(x, ctx, want_grad ? &cache : nullptr);
}

}  // namespace

Tensor stack_images(const std::vector<const Image*>& images) {
  if (images.empty()) return Tensor();
  const Image& first = *images.front();
  Tensor out({static_cast<int>(images.size()), first.channels, first.height, first.width});
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Image& im = *images[i];
    if (im.channels != first.channels || im.height != first.height || im.width != first.width) {
      throw InvalidInput("stack_images: image " + std::to_string(i) + " differs in shape");
    }
    std::copy(im.pixels.begin(), im.pixels.end(), out.sample(static_cast<int>(i)).begin());
  }
  return out;
}

std::vector<int> stack_labels(const std::vector<const Mask*>& masks) {
  std::vector<int> out;
  for (const Mask* m : masks) out.insert(out.end(), m->labels.begin(), m->labels.end());
  return out;
}

double PseudoLabelBatch::mask_rate() const {
  if (mask.empty()) return 0.0;
  std::size_t kept = 0;
  for (auto m : mask) kept += m;
  return static_cast<double>(kept) / mask.size();
}

PseudoLabelBatch threshold_pseudo_labels(const Tensor& probs, double tau) {
  return ensemble_pseudo_labels(probs, probs, 1.0, tau);
}

PseudoLabelBatch ensemble_pseudo_labels(const Tensor& p_if, const Tensor& p_af, double t, double tau) {
  if (!(p_if.shape() == p_af.shape())) {
    throw InvalidInput("pseudo-label ensemble: shapes " + p_if.shape().str() + " and " + p_af.shape().str() + " differ");
  }
  const Shape s = p_if.shape();
  PseudoLabelBatch out;
  const std::size_t pixels = static_cast<std::size_t>(s.n) * s.plane();
  out.labels.resize(pixels);
  out.confidence.resize(pixels);
  out.mask.resize(pixels);
  for (int n = 0; n < s.n; ++n) {
    for (std::size_t i = 0; i < s.plane(); ++i) {
      int best = 0;
      double best_p = -1.0;
      for (int c = 0; c < s.c; ++c) {
        const std::size_t idx = (static_cast<std::size_t>(n) * s.c + c) * s.plane() + i;
        const double p = t == 1.0 ? p_if.data()[idx] : t * p_if.data()[idx] + (1.0 - t) * p_af.data()[idx];
        if (p > best_p) {
          best_p = p;
          best = c;
        }
      }
      const std::size_t o = static_cast<std::size_t>(n) * s.plane() + i;
      out.labels[o] = best;
      out.confidence[o] = static_cast<float>(best_p);
      out.mask[o] = best_p >= tau ? 1 : 0;
    }
  }
  return out;
}

Architecture architecture_for(const TrainConfig& cfg, int in_channels, int n_classes) {
  Architecture arch;
  arch.in_channels = in_channels;
  arch.n_classes = n_classes;
  arch.widths = cfg.widths;
  arch.validate();
  return arch;
}

ModelPair make_model_pair(const TrainConfig& cfg, int in_channels, int n_classes, int n_domains) {
  // The initialization stream does not depend on use_siab, so converted and
  // plain runs with one seed start from identical convolution weights.
  SegmentationNet net(architecture_for(cfg, in_channels, n_classes), derive_seed(cfg.seed, 0x1417));
  if (cfg.use_siab) net = convert_model(std::move(net), n_domains, cfg.alpha_init, mix_mode_for(cfg.sab_stats));
  SegmentationNet teacher = net;
  return {std::move(net), std::move(teacher)};
}

PseudoLabelBatch pseudo_label(SegmentationNet& teacher, const Tensor& weak,
                              const std::vector<DomainId>& domains, const TrainConfig& cfg) {
  if (!teacher.converted()) {
    RoutingContext ctx = RoutingContext::individual(domains);
    ctx.frozen_stats();
    return threshold_pseudo_labels(softmax(teacher.forward(weak, ctx)), cfg.tau);
  }
  const double t = cfg.t_ensemble;
  Tensor p_if, p_af;
  if (t > 0.0) {
    RoutingContext ctx = RoutingContext::individual(domains);
    ctx.frozen_stats();
    p_if = softmax(teacher.forward(weak, ctx));
  }
  if (t < 1.0) {
    RoutingContext ctx = RoutingContext::aggregated();
    ctx.frozen_stats();
    p_af = softmax(teacher.forward(weak, ctx));
  }
  if (t == 1.0) return threshold_pseudo_labels(p_if, cfg.tau);
  if (t == 0.0) return threshold_pseudo_labels(p_af, cfg.tau);
  return ensemble_pseudo_labels(p_if, p_af, t, cfg.tau);
}

SupervisedLoss supervised_loss(SegmentationNet& student, const LabeledBatch& batch, const TrainConfig& cfg,
                               double grad_scale) {
  SupervisedLoss out;
  if (batch.images.empty()) {
    warn("supervised_loss: empty labeled batch, loss is 0");
    return out;
  }
  const bool want_grad = grad_scale != 0.0;
  auto branch = [&](const RoutingContext& ctx, double weight, const char* name) {
    ForwardCache cache;
    const Tensor logits = run(student, batch.images, ctx, want_grad, cache);
    auto ce = cross_entropy(logits, batch.labels);
    const auto dc = soft_dice(logits, batch.labels);
    const double value = ce.value + dc.value;
    check_finite(value, name);
    if (want_grad && weight != 0.0) {
      add_scaled(ce.grad, dc.grad, 1.0);
      scale_in_place(ce.grad, grad_scale * weight);
      student.backward(cache, ce.grad);
    }
    return value;
  };
  out.individual = branch(RoutingContext::individual(batch.domains), 1.0, "L_IF");
  if (student.converted() && cfg.lambda_af > 0.0) {
    out.aggregated = branch(RoutingContext::aggregated(), cfg.lambda_af, "L_AF");
  }
  out.total = out.individual + cfg.lambda_af * out.aggregated;
  return out;
}

UnsupervisedLoss unsupervised_loss(SegmentationNet& student, const UnlabeledBatch& batch,
                                   const PseudoLabelBatch& pseudo, const TrainConfig& cfg, Rng& rng,
                                   double grad_scale) {
  UnsupervisedLoss out;
  const bool want_grad = grad_scale != 0.0;
  auto stream = [&](const Tensor& x, const RoutingContext& ctx, double weight, const char* name) {
    ForwardCache cache;
    const Tensor logits = run(student, x, ctx, want_grad, cache);
    auto loss = masked_cross_entropy(logits, pseudo.labels, pseudo.mask, cfg.masked_mean);
    check_finite(loss.value, name);
    if (want_grad && weight != 0.0 && loss.value != 0.0) {
      scale_in_place(loss.grad, grad_scale * weight);
      student.backward(cache, loss.grad);
    }
    return loss.value;
  };
  const RoutingContext shared =
      student.converted() ? RoutingContext::aggregated() : RoutingContext::individual(batch.domains);
  out.strong = stream(batch.strong, shared, 1.0, "L_s");
  if (cfg.lambda_h > 0.0) out.styled = stream(batch.styled, shared, cfg.lambda_h, "L_h");
  if (cfg.lambda_r > 0.0) {
    if (!student.converted()) throw InvalidInput("random-forward stream needs a converted network");
    // A single source domain has nothing to substitute.
    const double p = student.n_domains() >= 2 ? cfg.p_rand : 0.0;
    out.random = stream(batch.weak, RoutingContext::random(batch.domains, p, rng), cfg.lambda_r, "L_r");
  }
  out.total = out.strong + cfg.lambda_h * out.styled + cfg.lambda_r * out.random;
  return out;
}

void ema_update(ModelPair& pair, double momentum) {
  if (!(momentum >= 0.0 && momentum <= 1.0)) throw InvalidInput("EMA momentum must lie in [0, 1]");
  std::map<std::string, Parameter*> params;
  std::map<std::string, std::vector<float>*> buffers;
  pair.student.visit({[&](const std::string& name, Parameter& p) { params[name] = &p; },
                      [&](const std::string& name, std::vector<float>& b) { buffers[name] = &b; }});
  std::size_t seen_params = 0, seen_buffers = 0;
  pair.teacher.visit(
      {[&](const std::string& name, Parameter& p) {
         const auto it = params.find(name);
         if (it == params.end() || it->second->size() != p.size()) {
           throw InvalidInput("EMA update: student and teacher differ at '" + name + "'");
         }
         ++seen_params;
         const auto& s = it->second->value;
         for (std::size_t i = 0; i < p.size(); ++i) {
           p.value[i] = static_cast<float>(momentum * p.value[i] + (1.0 - momentum) * s[i]);
         }
       },
       [&](const std::string& name, std::vector<float>& b) {
         const auto it = buffers.find(name);
         if (it == buffers.end() || it->second->size() != b.size()) {
           throw InvalidInput("EMA update: student and teacher differ at '" + name + "'");
         }
         ++seen_buffers;
         b = *it->second;
       }});
  if (seen_params != params.size() || seen_buffers != buffers.size()) {
    throw InvalidInput("EMA update: student has entries the teacher lacks");
  }
}

TrainState init_train_state(const TrainConfig& cfg, int in_channels, int n_classes, int n_domains) {
  return {make_model_pair(cfg, in_channels, n_classes, n_domains), AdamW(optimizer_options(cfg)), 0};
}

StepReport train_step(TrainState& state, const LabeledBatch& labeled, const UnlabeledBatch& unlabeled,
                      const TrainConfig& cfg, Rng& rng) {
  auto& [student, teacher] = state.pair;
  student.zero_grad();
  const PseudoLabelBatch pseudo = pseudo_label(teacher, unlabeled.weak, unlabeled.domains, cfg);
  const SupervisedLoss sup = supervised_loss(student, labeled, cfg, 1.0);
  const UnsupervisedLoss uns = unsupervised_loss(student, unlabeled, pseudo, cfg, rng, cfg.lambda_u);
  const double total = sup.total + cfg.lambda_u * uns.total;
  check_finite(total, "total");

  state.optimizer.step(student);
  ema_update(state.pair, cfg.ema_momentum);
  ++state.iteration;

  return {{"L_IF", sup.individual}, {"L_AF", sup.aggregated}, {"L_x", sup.total},
          {"L_s", uns.strong},      {"L_h", uns.styled},      {"L_r", uns.random},
          {"L_u", uns.total},       {"total", total},         {"mask_rate", pseudo.mask_rate()}};
}

std::pair<LabeledBatch, UnlabeledBatch> sample_batches(const DatasetRegistry& registry, const TrainConfig& cfg,
                                                       Rng& rng) {
  const int k = registry.n_domains();
  auto pick = [&](const std::vector<DomainSample>& pool) -> const DomainSample& {
    return pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(pool.size()) - 1))];
  };

  std::vector<Image> l_images;
  std::vector<Mask> l_masks;
  LabeledBatch lb;
  for (int d = 1; d <= k; ++d) {
    const auto& pool = registry.domain(DomainId{d}).labeled;
    if (pool.empty()) throw InvalidInput("domain " + registry.domain(DomainId{d}).name + " has no labeled samples");
    for (int j = 0; j < cfg.labeled_per_domain; ++j) {
      const DomainSample& s = pick(pool);
      const WeakDraw w = draw_weak(rng);
      l_images.push_back(apply_weak(s.image, w));
      l_masks.push_back(apply_weak(*s.mask, w));
      lb.domains.push_back(DomainId{d});
    }
  }

  std::vector<Image> weak, strong, styled;
  UnlabeledBatch ub;
  for (int d = 1; d <= k; ++d) {
    const auto& dom = registry.domain(DomainId{d});
    const auto& pool = dom.unlabeled.empty() ? dom.labeled : dom.unlabeled;
    for (int j = 0; j < cfg.unlabeled_per_domain; ++j) {
      const DomainSample& s = pick(pool);
      Image w = apply_weak(s.image, draw_weak(rng));
      strong.push_back(strong_augment(w, cfg.strong, rng));
      if (k >= 2) {
        const StyleReference ref = sample_style_reference(DomainId{d}, registry, rng);
        styled.push_back(histogram_match(w, *ref.image));
        ub.style_domains.push_back(ref.domain);
      } else {
        styled.push_back(w);
        ub.style_domains.push_back(DomainId{d});
      }
      weak.push_back(std::move(w));
      ub.domains.push_back(DomainId{d});
    }
  }

  auto ptrs = [](const auto& v) {
    std::vector<const std::decay_t<decltype(v[0])>*> out;
    for (const auto& x : v) out.push_back(&x);
    return out;
  };
  lb.images = stack_images(ptrs(l_images));
  lb.labels = stack_labels(ptrs(l_masks));
  ub.weak = stack_images(ptrs(weak));
  ub.strong = stack_images(ptrs(strong));
  ub.styled = stack_images(ptrs(styled));
  return {std::move(lb), std::move(ub)};
}

nlohmann::json HistoryRecord::to_json() const {
  nlohmann::json j{{"iteration", iteration}};
  j["losses"] = losses;
  j["unseen_dice"] = unseen_dice ? nlohmann::json(*unseen_dice) : nlohmann::json(nullptr);
  return j;
}

double unseen_dice(SegmentationNet& net, const std::vector<DomainSample>& test, int n_classes, int batch) {
  return evaluate(net, test, n_classes, batch).mean_dice;
}

TrainResult train_loop(const DatasetRegistry& train, const std::vector<DomainSample>& test, const TrainConfig& cfg,
                       const TrainHooks& hooks, std::optional<TrainState> resume) {
  cfg.validate();
  const int k = train.n_domains();
  if (k < 1) throw InvalidInput("training registry has no domains");
  const auto first = train.samples(DomainId{1});
  if (first.empty()) throw InvalidInput("training registry domain 1 is empty");
  const int in_channels = first.front()->image.channels;
  const int n_classes = train.n_classes();

  TrainResult result{resume ? std::move(*resume) : init_train_state(cfg, in_channels, n_classes, k), {}};
  TrainState& state = result.state;
  if (state.pair.student.converted() && state.pair.student.n_domains() != k) {
    throw InvalidInput("resumed model has " + std::to_string(state.pair.student.n_domains()) +
                       " domains, registry has " + std::to_string(k));
  }
  if (k == 1 && cfg.use_siab && cfg.lambda_r > 0.0 && cfg.p_rand > 0.0) {
    warn("single source domain: random-forward perturbation disabled");
  }
  if (k == 1 && cfg.lambda_h > 0.0) warn("single source domain: style stream falls back to the weak view");

  while (state.iteration < cfg.iterations) {
    Rng rng(derive_seed(cfg.seed, 0x5eed0000ULL + static_cast<std::uint64_t>(state.iteration)));
    Rng data_rng = rng.fork(1);
    Rng step_rng = rng.fork(2);
    const auto [labeled, unlabeled] = sample_batches(train, cfg, data_rng);
    HistoryRecord record{0, train_step(state, labeled, unlabeled, cfg, step_rng), std::nullopt};
    record.iteration = state.iteration;
    const bool eval_now = !test.empty() && ((cfg.eval_every > 0 && state.iteration % cfg.eval_every == 0) ||
                                            state.iteration == cfg.iterations);
    if (eval_now) record.unseen_dice = unseen_dice(state.pair.teacher, test, n_classes, cfg.eval_batch);
    if (hooks.on_record) hooks.on_record(record);
    result.history.push_back(std::move(record));
    if (hooks.after_step) hooks.after_step(state);
  }
  return result;
}

}  // namespace siab
