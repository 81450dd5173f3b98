#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "unitrans/config.hpp"
#include "unitrans/data_pipeline.hpp"
#include "unitrans/guiding_network.hpp"
#include "unitrans/losses.hpp"
#include "unitrans/optim.hpp"
#include "unitrans/translation_nets.hpp"

namespace unitrans {

// Everything that evolves during training. Networks are single precision.
struct TrainState {
  TrainConfig cfg;
  GuidingNetwork<float> E;
  StyleQueue<float> queue;  // negatives plus the momentum key copy of E
  Generator<float> G;
  Discriminator<float> D;
  Adam<float> opt_e;
  RMSprop<float> opt_g, opt_d;
  GuidingNetwork<float> ema_E;
  Generator<float> ema_G;
  bool ema_started = false;
  std::int64_t iteration = 0;
  Rng rng;

  static TrainState create(const TrainConfig& cfg) {
    validate(cfg);
    TrainState st;
    st.cfg = cfg;
    st.rng.seed(cfg.seed);
    st.E = GuidingNetwork<float>({cfg.num_domains, cfg.channels_e, cfg.style_dim, cfg.resolution}, st.rng);
    st.G = Generator<float>({cfg.channels_g, cfg.style_dim, cfg.resolution}, st.rng);
    st.D = Discriminator<float>({cfg.channels_d, cfg.num_domains, cfg.resolution}, st.rng);
    st.queue = StyleQueue<float>({static_cast<std::size_t>(cfg.queue_size), cfg.momentum, cfg.temperature}, st.E);
    st.opt_e = Adam<float>(st.E.params(), {cfg.lr, cfg.adam_beta1, cfg.adam_beta2, 1e-8, cfg.weight_decay});
    st.opt_g = RMSprop<float>(st.G.params(), {cfg.lr, cfg.rmsprop_alpha, 1e-8, cfg.weight_decay});
    st.opt_d = RMSprop<float>(st.D.params(), {cfg.lr, cfg.rmsprop_alpha, 1e-8, cfg.weight_decay});
    st.ema_E = st.E;
    st.ema_G = st.G;
    return st;
  }

  Phase phase() const { return iteration < cfg.guiding_iters ? Phase::guiding : Phase::joint; }
  bool finished() const { return iteration >= cfg.total_iters(); }

  // Networks used for inference: EMA shadows once the joint phase has begun.
  const GuidingNetwork<float>& inference_guiding() const { return ema_started ? ema_E : E; }
  const Generator<float>& inference_generator() const { return ema_started ? ema_G : G; }
};

// One training batch; label -1 marks a sample without ground truth.
struct TrainBatch {
  ImageBatch images;
  std::vector<int> labels;
};

inline TrainBatch concat_batches(const TrainBatch& a, const TrainBatch& b) {
  if (a.images.size() == 0) return b;
  if (b.images.size() == 0) return a;
  if (a.images.rank() != 4 || b.images.rank() != 4 || a.images.dim(1) != b.images.dim(1) ||
      a.images.dim(2) != b.images.dim(2))
    throw ShapeError("cannot concatenate batches " + shape_str(a.images.shape()) + " and " + shape_str(b.images.shape()));
  Shape s = a.images.shape();
  s[0] += b.images.dim(0);
  TrainBatch out{ImageBatch(s), a.labels};
  std::copy(a.images.data(), a.images.data() + a.images.size(), out.images.data());
  std::copy(b.images.data(), b.images.data() + b.images.size(), out.images.data() + a.images.size());
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  return out;
}

// Loss values of one iteration; NaN marks terms that were not computed.
struct StepLog {
  static constexpr double none = std::numeric_limits<double>::quiet_NaN();
  std::int64_t iteration = 0;
  Phase phase = Phase::guiding;
  double lambda_mi = none, lambda_style_e = none;
  double d_adv = none, r1 = none, g_adv = none, style_g = none, rec = none;
  double mi = none, style_e = none, ce = none;
  double loss_d = none, loss_g = none, loss_e = none;
  double e_grad_norm = 0.0;  // norm of the gradient applied to E (0 when E was not updated)
  bool d_stepped = false, g_stepped = false, e_stepped = false;
};

inline const char* step_log_header() {
  return "iteration\tphase\tloss_d\tloss_g\tloss_e\td_adv\tr1\tg_adv\tstyle_g\trec\tmi\tstyle_e\tce";
}

inline std::string step_log_row(const StepLog& l) {
  std::ostringstream out;
  out.precision(6);
  out << l.iteration << '\t' << (l.phase == Phase::guiding ? "guiding" : "joint");
  for (double v : {l.loss_d, l.loss_g, l.loss_e, l.d_adv, l.r1, l.g_adv, l.style_g, l.rec, l.mi, l.style_e, l.ce}) {
    out << '\t';
    if (std::isnan(v)) out << "nan";
    else out << v;
  }
  return out.str();
}

// Uniformly random permutation without fixed points (n >= 2).
inline std::vector<int> random_derangement(int n, Rng& rng) {
  if (n < 2) throw std::invalid_argument("a derangement needs at least two elements");
  std::vector<int> p(n);
  for (;;) {
    std::iota(p.begin(), p.end(), 0);
    std::shuffle(p.begin(), p.end(), rng);
    bool ok = true;
    for (int i = 0; i < n && ok; ++i) ok = p[i] != i;
    if (ok) return p;
  }
}

template <typename T>
Var<T> gather_rows(const Var<T>& x, const std::vector<int>& rows) {
  const auto stride = x.size() / x.dim(0);
  auto idx = std::make_shared<std::vector<std::int64_t>>();
  idx->reserve(rows.size() * stride);
  for (int r : rows)
    for (std::int64_t j = 0; j < stride; ++j) idx->push_back(r * stride + j);
  Shape s = x.shape();
  s[0] = static_cast<std::int64_t>(rows.size());
  return gather(x, IndexList(idx), s);
}

namespace detail {

inline double value_of(const Var<float>& v) { return v.defined() ? static_cast<double>(v.item()) : StepLog::none; }

inline double grad_norm(const std::vector<Var<float>>& grads) {
  double s = 0;
  for (const auto& g : grads)
    for (float v : g.value().values()) s += static_cast<double>(v) * v;
  return std::sqrt(s);
}

inline void check_labels(const std::vector<int>& labels, int K) {
  for (int y : labels)
    if (y >= K) throw DataError("label " + std::to_string(y) + " is outside [0, " + std::to_string(K) + ")");
}

// Guiding-network terms for a batch and its augmented view: mutual
// information, style contrast against the queue, and cross-entropy on the
// labeled rows. Also returns the momentum keys to enqueue.
struct GuidingTerms {
  GuidingNetwork<float>::Output out;
  Var<float> mi, style_e, ce;
  Tensor<float> keys;
};

inline GuidingTerms guiding_terms(TrainState& st, const Var<float>& x, const Var<float>& x_aug,
                                  const std::vector<int>& labels) {
  GuidingTerms t;
  t.out = st.E.forward(x, Mode::train);
  auto out_aug = st.E.forward(x_aug, Mode::train);
  t.mi = mutual_information_loss(t.out.posterior, out_aug.posterior).loss;
  {
    NoGrad guard;
    t.keys = l2_normalize_rows(st.queue.key_encoder().forward(x_aug, Mode::train).style).value();
  }
  t.style_e = style_contrastive_loss(l2_normalize_rows(t.out.style), t.keys, st.queue.negatives(),
                                     st.queue.temperature());
  std::vector<int> rows, ys;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] >= 0) rows.push_back(static_cast<int>(i)), ys.push_back(labels[i]);
  if (!rows.empty()) t.ce = cross_entropy(gather_rows(t.out.logits, rows), ys);
  return t;
}

inline void finish_e_update(TrainState& st, const Var<float>& objective, const Tensor<float>& keys, StepLog& log) {
  const auto& params = st.E.params().params();
  // An objective that does not reach E leaves it untouched (no decay-only step).
  if (objective.requires_grad()) {
    auto grads = grad(objective, params);
    log.e_grad_norm = grad_norm(grads);
    st.opt_e.step(st.E.params(), grads);
    log.e_stepped = true;
  }
  st.queue.momentum_update(st.E);
  st.queue.push(keys);
}

}  // namespace detail

// One update of E alone (G and D are not touched).
inline StepLog guiding_step(TrainState& st, const TrainBatch& batch) {
  check_image_batch(batch.images);
  detail::check_labels(batch.labels, st.cfg.num_domains);
  StepLog log;
  log.iteration = st.iteration;
  log.phase = Phase::guiding;
  log.lambda_mi = st.cfg.weights.mi(Phase::guiding);
  log.lambda_style_e = st.cfg.weights.style_e(Phase::guiding);

  auto x = Var<float>::constant(nhwc_to_nchw<float>(batch.images));
  auto x_aug = Var<float>::constant(nhwc_to_nchw<float>(augment_batch(batch.images, st.rng)));
  auto terms = detail::guiding_terms(st, x, x_aug, batch.labels);
  LossParts<float> parts;
  parts.mi = terms.mi;
  parts.style_e = terms.style_e;
  parts.ce = terms.ce;
  auto obj = aggregate(Phase::guiding, parts, st.cfg.weights);
  log.mi = detail::value_of(terms.mi);
  log.style_e = detail::value_of(terms.style_e);
  log.ce = detail::value_of(terms.ce);
  log.loss_e = detail::value_of(obj.e);
  detail::finish_e_update(st, obj.e, terms.keys, log);
  ++st.iteration;
  return log;
}

// EMA of parameters and buffers: shadow <- decay * shadow + (1 - decay) * live.
template <typename T>
void ema_update(ParamStore<T>& shadow, const ParamStore<T>& live, double decay) {
  blend_into(shadow, live, decay, true);
}

// One joint iteration: D, then G, then E (skipped in sequential mode), each
// with fresh forward passes, followed by the EMA update.
inline StepLog joint_step(TrainState& st, const TrainBatch& batch) {
  check_image_batch(batch.images);
  const auto B = batch.images.dim(0);
  if (static_cast<std::size_t>(B) != batch.labels.size()) throw ShapeError("batch labels do not match images");
  detail::check_labels(batch.labels, st.cfg.num_domains);
  const auto& w = st.cfg.weights;
  const auto form = st.cfg.adversarial_form();
  StepLog log;
  log.iteration = st.iteration;
  log.phase = Phase::joint;
  log.lambda_mi = w.mi(Phase::joint);
  log.lambda_style_e = w.style_e(Phase::joint);

  const auto perm = random_derangement(static_cast<int>(B), st.rng);
  const Tensor<float> x_t = nhwc_to_nchw<float>(batch.images);
  const auto x = Var<float>::constant(x_t);

  // Reference styles and domains from the live guiding network; true labels
  // take precedence for labeled references.
  Tensor<float> s_x, s_ref, x_ref;
  std::vector<int> y_ref(B);
  {
    NoGrad guard;
    auto enc = st.E.encode(x);
    s_x = enc.style.value();
    s_ref = gather_rows(enc.style, perm).value();
    x_ref = gather_rows(x, perm).value();
    const auto pseudo = pseudo_labels(enc.posterior.value());
    for (std::int64_t i = 0; i < B; ++i) {
      const int j = perm[i];
      y_ref[i] = batch.labels[j] >= 0 ? batch.labels[j] : pseudo[j];
    }
  }
  const auto s_ref_v = Var<float>::constant(s_ref);
  const auto negatives = st.queue.negatives();
  const float tau = st.queue.temperature();

  // Discriminator.
  {
    Tensor<float> fake;
    {
      NoGrad guard;
      fake = st.G.forward(x, s_ref_v).value();
    }
    auto x_leaf = Var<float>::leaf(x_ref, true);
    auto real_logits = select_head(st.D.forward(x_leaf), y_ref);
    auto fake_logits = select_head(st.D.forward(Var<float>::constant(fake)), y_ref);
    LossParts<float> parts;
    parts.d_adv = d_adversarial(form, real_logits, fake_logits);
    if (w.r1_gamma > 0) parts.r1 = r1_from_logits(real_logits, x_leaf, static_cast<float>(w.r1_gamma));
    auto obj = aggregate(Phase::joint, parts, w, {.form_g = false, .form_e = false});
    log.d_adv = detail::value_of(parts.d_adv);
    log.r1 = detail::value_of(parts.r1);
    log.loss_d = detail::value_of(obj.d);
    st.opt_d.step(st.D.params(), grad(obj.d, st.D.params().params()));
    log.d_stepped = true;
  }

  // Translation terms for a given pair of (reference, source) styles.
  auto translation_parts = [&](const Var<float>& content, const Var<float>& s_tilde, const Var<float>& s_src) {
    LossParts<float> parts;
    auto fake = st.G.decode(content, s_tilde);
    auto rec = st.G.decode(content, s_src);
    parts.g_adv = g_adversarial(form, select_head(st.D.forward(fake), y_ref));
    auto s_prime = l2_normalize_rows(st.E.encode(fake).style);
    Tensor<float> positive;
    {
      NoGrad guard;
      positive = l2_normalize_rows(s_tilde).value();
    }
    parts.style_g = style_contrastive_g(s_prime, positive, negatives, tau);
    parts.rec = reconstruction_loss(x, rec);
    return parts;
  };

  // Generator.
  {
    auto parts = translation_parts(st.G.encode_content(x), s_ref_v, Var<float>::constant(s_x));
    auto obj = aggregate(Phase::joint, parts, w, {.form_d = false, .form_e = false});
    log.g_adv = detail::value_of(parts.g_adv);
    log.style_g = detail::value_of(parts.style_g);
    log.rec = detail::value_of(parts.rec);
    log.loss_g = detail::value_of(obj.g);
    st.opt_g.step(st.G.params(), grad(obj.g, st.G.params().params()));
    log.g_stepped = true;
  }

  // Guiding network, receiving L_G through its style codes when enabled.
  if (st.cfg.train_mode() == TrainMode::joint) {
    const bool feedback = st.cfg.e_feedback;
    auto x_aug = Var<float>::constant(nhwc_to_nchw<float>(augment_batch(batch.images, st.rng)));
    auto terms = detail::guiding_terms(st, x, x_aug, batch.labels);
    LossParts<float> parts;
    if (feedback) {
      Var<float> content;
      {
        NoGrad guard;
        content = Var<float>::constant(st.G.encode_content(x).value());
      }
      parts = translation_parts(content, gather_rows(terms.out.style, perm), terms.out.style);
    }
    parts.mi = terms.mi;
    parts.style_e = terms.style_e;
    parts.ce = terms.ce;
    auto obj = aggregate(Phase::joint, parts, w, {.e_feedback = feedback, .form_d = false, .form_g = false});
    log.mi = detail::value_of(terms.mi);
    log.style_e = detail::value_of(terms.style_e);
    log.ce = detail::value_of(terms.ce);
    log.loss_e = detail::value_of(obj.e);
    detail::finish_e_update(st, obj.e, terms.keys, log);
  }

  if (!st.ema_started) {
    st.ema_E = st.E;
    st.ema_G = st.G;
    st.ema_started = true;
  }
  ema_update(st.ema_E.params(), st.E.params(), st.cfg.ema_decay);
  ema_update(st.ema_G.params(), st.G.params(), st.cfg.ema_decay);
  ++st.iteration;
  return log;
}

// Dispatches on the schedule: guiding steps before the boundary, joint after.
inline StepLog train_step(TrainState& st, const TrainBatch& batch) {
  return st.phase() == Phase::guiding ? guiding_step(st, batch) : joint_step(st, batch);
}

// Labeled samples carry their ground truth into the cross-entropy term and
// the discriminator head selection; the rest are treated as unlabeled.
inline StepLog semi_supervised_step(TrainState& st, const TrainBatch& labeled, const TrainBatch& unlabeled) {
  for (int y : labeled.labels)
    if (y < 0) throw DataError("labeled batch contains a sample without a label");
  TrainBatch merged = concat_batches(labeled, unlabeled);
  return train_step(st, merged);
}

// Draws training batches from a dataset split. Labeled samples fill a share of
// each batch proportional to the labeled ratio (at least one when present).
class BatchSampler {
 public:
  BatchSampler(const ImageDataset& ds, SemiSupervisedSplit split, int batch_size, double labeled_ratio)
      : ds_(&ds), split_(std::move(split)), batch_(batch_size) {
    if (split_.labeled.empty() && split_.unlabeled.empty()) throw DataError("training set is empty");
    n_labeled_ = 0;
    if (!split_.labeled.empty()) {
      n_labeled_ = static_cast<int>(std::lround(labeled_ratio * batch_size));
      n_labeled_ = std::clamp(n_labeled_, 1, batch_size);
      if (split_.unlabeled.empty()) n_labeled_ = batch_size;
    }
  }

  // Returns (labeled part, unlabeled part).
  std::pair<TrainBatch, TrainBatch> next(Rng& rng) const {
    auto draw = [&](const std::vector<std::size_t>& pool, int n, bool keep_labels) {
      TrainBatch b;
      if (n == 0) return b;
      std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
      std::vector<std::size_t> idx(n);
      for (auto& i : idx) i = pool[pick(rng)];
      b.images = ds_->batch(idx);
      b.labels = keep_labels ? ds_->labels(idx) : std::vector<int>(n, -1);
      return b;
    };
    auto labeled = draw(split_.labeled, n_labeled_, true);
    auto unlabeled = draw(split_.unlabeled, batch_ - n_labeled_, false);
    return {std::move(labeled), std::move(unlabeled)};
  }

  int labeled_per_batch() const { return n_labeled_; }

 private:
  const ImageDataset* ds_;
  SemiSupervisedSplit split_;
  int batch_;
  int n_labeled_ = 0;
};

// Runs until the schedule ends or the callback returns false.
inline void run_training(TrainState& st, const BatchSampler& sampler,
                         const std::function<bool(const TrainState&, const StepLog&)>& on_step = {}) {
  while (!st.finished()) {
    auto [labeled, unlabeled] = sampler.next(st.rng);
    auto log = semi_supervised_step(st, labeled, unlabeled);
    if (on_step && !on_step(st, log)) break;
  }
}

// Evaluation-mode posteriors and raw styles for every record.
struct DatasetEncoding {
  Tensor<float> posterior;  // [N, K]
  Tensor<float> style;      // [N, style_dim]
  std::vector<int> predicted;
};

inline DatasetEncoding encode_dataset(const GuidingNetwork<float>& E, const ImageDataset& ds, int batch_size = 32) {
  NoGrad guard;
  const auto N = static_cast<std::int64_t>(ds.size());
  const auto K = E.config().num_domains, D = E.config().style_dim;
  DatasetEncoding enc{Tensor<float>({N, K}), Tensor<float>({N, D}), {}};
  for (std::int64_t start = 0; start < N; start += batch_size) {
    std::vector<std::size_t> idx;
    for (auto i = start; i < std::min<std::int64_t>(N, start + batch_size); ++i) idx.push_back(static_cast<std::size_t>(i));
    auto out = E.encode(ds.batch(idx));
    std::copy(out.posterior.value().data(), out.posterior.value().data() + out.posterior.size(), enc.posterior.data() + start * K);
    std::copy(out.style.value().data(), out.style.value().data() + out.style.size(), enc.style.data() + start * D);
  }
  enc.predicted = pseudo_labels(enc.posterior);
  return enc;
}

}  // namespace unitrans
