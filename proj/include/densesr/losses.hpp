#pragma once

#include <cmath>
#include <type_traits>

#include "densesr/common.hpp"
#include "densesr/models.hpp"
#include "densesr/ops.hpp"
#include "densesr/tape.hpp"

namespace densesr {

inline constexpr double kProbClampMargin = 1e-7;

// Adversarial weight schedule: alpha(n) = alpha0 / decay^n, evaluated at
// each epoch boundary.
struct AlphaSchedule {
  double alpha0 = 0.95;
  double decay = 1.05;

  double at(int epoch) const {
    if (epoch < 0) fail_config("alpha schedule epoch must be >= 0, got ", epoch);
    return alpha0 / std::pow(decay, static_cast<double>(epoch));
  }
};

struct LossWeights {
  double beta1 = 0.0;          // feature-matching share of the perceptual term
  bool non_saturating = false;  // default is the paper-form adversarial loss
};

template <typename S>
struct LossReport {
  S total = S(0);
  S adversarial = S(0);
  S content = S(0);
  S feature_matching = S(0);
  double alpha_used = 0.0;
};

template <typename S>
struct GeneratorLoss {
  Var<S> total;
  LossReport<S> report;
};

namespace detail {

// Clamps probabilities into [margin, 1-margin], logging if the guard fired.
template <typename S>
Var<S> guard_probability(const Var<S>& p, const char* label) {
  const S* v = p.value.data();
  for (std::size_t i = 0; i < p.value.size(); ++i) {
    if (v[i] <= S(kProbClampMargin) || v[i] >= S(1.0 - kProbClampMargin)) {
      log_warn(label, " hit the probability clamp at value ", v[i]);
      break;
    }
  }
  return clamp(p, kProbClampMargin, 1.0 - kProbClampMargin);
}

}  // namespace detail

// Composite generator objective:
//   total = alpha * adv + (1 - alpha) * ((1 - beta1) * content + beta1 * fm)
// where adv is mean log(1 - D(G(z))) (paper form) or -mean log D(G(z))
// (non-saturating), content is the mean L1 image distance, and fm is the
// mean L1 distance between extractor features. With beta1 = 0 the
// extractor is never invoked.
template <typename S>
GeneratorLoss<S> generator_loss(const Var<S>& d_on_fake, const Var<S>& gen_hr,
                                const Var<S>& target_hr,
                                FeatureExtractor<std::type_identity_t<S>>* features,
                                const LossWeights& weights, double alpha) {
  if (weights.beta1 < 0.0 || weights.beta1 > 1.0) {
    fail_config("beta1 must lie in [0,1], got ", weights.beta1);
  }
  if (gen_hr.shape() != target_hr.shape()) {
    fail_config("generator/target shape mismatch: ", gen_hr.shape().str(), " vs ",
                target_hr.shape().str());
  }

  Var<S> p = detail::guard_probability(d_on_fake, "generator_loss");
  Var<S> adv = weights.non_saturating
                   ? affine(mean_all(log(p)), -1.0, 0.0)
                   : mean_all(log(affine(p, -1.0, 1.0)));
  Var<S> content = l1_distance(gen_hr, target_hr);

  Var<S> total = add(affine(adv, alpha, 0.0),
                     affine(content, (1.0 - alpha) * (1.0 - weights.beta1), 0.0));
  LossReport<S> report;
  if (weights.beta1 > 0.0) {
    if (features == nullptr) {
      fail_config("beta1 = ", weights.beta1, " needs a feature extractor");
    }
    Var<S> fm = l1_distance(features->forward(gen_hr), features->forward(target_hr));
    total = add(total, affine(fm, (1.0 - alpha) * weights.beta1, 0.0));
    report.feature_matching = fm.value.item();
  }
  report.total = total.value.item();
  report.adversarial = adv.value.item();
  report.content = content.value.item();
  report.alpha_used = alpha;
  return {total, report};
}

// Binary cross entropy for the discriminator:
//   -mean log D(x) - mean log(1 - D(G(z))).
template <typename S>
Var<S> discriminator_loss(const Var<S>& d_on_real, const Var<S>& d_on_fake) {
  Var<S> pr = detail::guard_probability(d_on_real, "discriminator_loss(real)");
  Var<S> pf = detail::guard_probability(d_on_fake, "discriminator_loss(fake)");
  Var<S> real_term = affine(mean_all(log(pr)), -1.0, 0.0);
  Var<S> fake_term = affine(mean_all(log(affine(pf, -1.0, 1.0))), -1.0, 0.0);
  return add(real_term, fake_term);
}

}  // namespace densesr
