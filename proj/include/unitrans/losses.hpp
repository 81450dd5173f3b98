#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "unitrans/guiding_network.hpp"
#include "unitrans/translation_nets.hpp"

namespace unitrans {

enum class Phase { guiding, joint };

struct LossWeights {
  double rec = 0.1;
  double style_g = 0.01;
  double style_e_guiding = 1.0;
  double style_e_joint = 0.1;
  double mi_guiding = 5.0;
  double mi_joint = 0.5;
  double r1_gamma = 10.0;
  double ce = 1.0;  // semi-supervised cross-entropy on labeled samples

  double style_e(Phase p) const { return p == Phase::guiding ? style_e_guiding : style_e_joint; }
  double mi(Phase p) const { return p == Phase::guiding ? mi_guiding : mi_joint; }
};

enum class AdversarialForm { hinge, log };

template <typename T>
Var<T> softplus(const Var<T>& x) {
  return add(relu(x), log(add_scalar(exp(neg(abs(x))), T(1))));
}

// mean(max(0, 1 - real)) + mean(max(0, 1 + fake))
template <typename T>
Var<T> d_adv_hinge(const Var<T>& real_logit, const Var<T>& fake_logit) {
  return add(mean_all(relu(add_scalar(neg(real_logit), T(1)))), mean_all(relu(add_scalar(fake_logit, T(1)))));
}

template <typename T>
Var<T> g_adv_hinge(const Var<T>& fake_logit) {
  return neg(mean_all(fake_logit));
}

// Saturating log form: D minimizes -log s(real) - log(1 - s(fake)); G minimizes log(1 - s(fake)).
template <typename T>
Var<T> d_adv_log(const Var<T>& real_logit, const Var<T>& fake_logit) {
  return add(mean_all(softplus(neg(real_logit))), mean_all(softplus(fake_logit)));
}

template <typename T>
Var<T> g_adv_log(const Var<T>& fake_logit) {
  return neg(mean_all(softplus(fake_logit)));
}

template <typename T>
Var<T> d_adversarial(AdversarialForm form, const Var<T>& real, const Var<T>& fake) {
  return form == AdversarialForm::hinge ? d_adv_hinge(real, fake) : d_adv_log(real, fake);
}

template <typename T>
Var<T> g_adversarial(AdversarialForm form, const Var<T>& fake) {
  return form == AdversarialForm::hinge ? g_adv_hinge(fake) : g_adv_log(fake);
}

// (gamma / 2) * mean_b ||d head_b / d x_b||^2 where `head_logits` [B] was
// computed from the leaf `x`. The result stays differentiable in the
// discriminator parameters.
template <typename T>
Var<T> r1_from_logits(const Var<T>& head_logits, const Var<T>& x, T gamma) {
  if (!grad_enabled())
    throw std::logic_error("r1_penalty needs gradient recording; it cannot run under NoGrad");
  if (!x.requires_grad()) throw std::logic_error("r1_penalty: input images must be a gradient-carrying leaf");
  auto gx = grad(sum_all(head_logits), {x}, true)[0];
  return mul_scalar(sum_all(square(gx)), gamma / (T(2) * static_cast<T>(x.dim(0))));
}

// R1 penalty for an arbitrary per-sample head function x -> [B].
template <typename T, typename Head>
Var<T> r1_penalty(Head&& head, const Tensor<T>& real_x, T gamma) {
  if (!grad_enabled())
    throw std::logic_error("r1_penalty needs gradient recording; it cannot run under NoGrad");
  auto x = Var<T>::leaf(real_x, true);
  return r1_from_logits(head(x), x, gamma);
}

// R1 penalty of the multi-task discriminator at labels y (NCHW real batch).
template <typename T>
Var<T> r1_penalty(const Discriminator<T>& d, const Tensor<T>& real_x, const std::vector<int>& y, T gamma) {
  return r1_penalty<T>([&](const Var<T>& x) { return select_head(d.forward(x), y); }, real_x, gamma);
}

// Contrastive loss of translated-image styles s' against the (detached)
// reference styles, sharing the negatives of the guiding objective.
template <typename T>
Var<T> style_contrastive_g(const Var<T>& s_prime, const Tensor<T>& s_tilde, const Tensor<T>& negatives, T temperature) {
  return contrastive_loss(s_prime, s_tilde, negatives, temperature);
}

// Mean absolute difference over all elements.
template <typename T>
Var<T> reconstruction_loss(const Var<T>& x, const Var<T>& x_rec) {
  if (x.shape() != x_rec.shape())
    throw ShapeError("reconstruction_loss: " + shape_str(x.shape()) + " vs " + shape_str(x_rec.shape()));
  return mean_all(abs(sub(x, x_rec)));
}

// Component losses of one training batch; undefined entries were not computed.
template <typename T>
struct LossParts {
  Var<T> d_adv, r1;                // discriminator
  Var<T> g_adv, style_g, rec;      // generator (and E's feedback path)
  Var<T> mi;                       // -I(P)
  Var<T> style_e, ce;              // guiding network
};

template <typename T>
struct Objectives {
  Var<T> d, g, e;
};

struct AggregateOptions {
  // Whether E receives the translation loss L_G. Disabled in the sequential
  // schedule and by the ablation switch.
  bool e_feedback = true;
  // Which objectives to form; each training sub-step builds only its own.
  bool form_d = true;
  bool form_g = true;
  bool form_e = true;
};

namespace detail {

template <typename T>
void accumulate_term(Var<T>& total, const Var<T>& term, double weight, const char* name) {
  if (weight == 0.0) return;
  if (!term.defined()) throw std::invalid_argument(std::string("aggregate: missing loss component ") + name);
  auto scaled = weight == 1.0 ? term : mul_scalar(term, static_cast<T>(weight));
  total = total.defined() ? add(total, scaled) : scaled;
}

}  // namespace detail

// L_D = adversarial D loss (+ R1 when present);
// L_G = L_adv + w_style_g * L_style^G + w_rec * L_rec;
// L_E = [L_G] + w_mi * (-I) + w_style_e * L_style^E (+ w_ce * CE).
// In the guiding phase only L_E is formed and it never contains L_G.
template <typename T>
Objectives<T> aggregate(Phase phase, const LossParts<T>& parts, const LossWeights& w, AggregateOptions opt = {}) {
  Objectives<T> out;
  if (phase == Phase::joint && opt.form_d) {
    detail::accumulate_term(out.d, parts.d_adv, 1.0, "d_adv");
    if (parts.r1.defined()) out.d = add(out.d, parts.r1);
  }
  if (phase == Phase::joint && (opt.form_g || (opt.form_e && opt.e_feedback))) {
    detail::accumulate_term(out.g, parts.g_adv, 1.0, "g_adv");
    detail::accumulate_term(out.g, parts.style_g, w.style_g, "style_g");
    detail::accumulate_term(out.g, parts.rec, w.rec, "rec");
    if (opt.form_e && opt.e_feedback) out.e = out.g;
  }
  if (!opt.form_e) return out;
  detail::accumulate_term(out.e, parts.mi, w.mi(phase), "mi");
  detail::accumulate_term(out.e, parts.style_e, w.style_e(phase), "style_e");
  if (parts.ce.defined()) detail::accumulate_term(out.e, parts.ce, w.ce, "ce");
  if (!out.e.defined()) out.e = scalar_var<T>(T(0));
  return out;
}

}  // namespace unitrans
