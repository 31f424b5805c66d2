#pragma once

#include <cmath>
#include <limits>

#include <Eigen/Core>

#include "fgrpo/error.hpp"

namespace fgrpo {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Derived>
VectorX<typename Derived::Scalar> log_softmax(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  const Scalar m = logits.maxCoeff();
  VectorX<Scalar> shifted = logits.array() - m;
  const Scalar lse = std::log(shifted.array().exp().sum());
  return shifted.array() - lse;
}

template <typename Derived>
VectorX<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& logits) {
  return log_softmax(logits).array().exp();
}

//! KL(softmax(z) || softmax(z_ref)).
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar kl_softmax(const Eigen::MatrixBase<DerivedA>& z, const Eigen::MatrixBase<DerivedB>& z_ref) {
  const auto lp = log_softmax(z);
  const auto lq = log_softmax(z_ref);
  const auto kl = (lp.array().exp() * (lp - lq).array()).sum();
  return kl > 0 ? kl : typename DerivedA::Scalar(0);
}

//! d KL(softmax(z) || softmax(z_ref)) / dz, i.e. p * (log p - log q - KL).
template <typename DerivedA, typename DerivedB>
VectorX<typename DerivedA::Scalar> kl_softmax_grad(const Eigen::MatrixBase<DerivedA>& z,
                                                   const Eigen::MatrixBase<DerivedB>& z_ref) {
  const auto lp = log_softmax(z);
  const auto lq = log_softmax(z_ref);
  const VectorX<typename DerivedA::Scalar> p = lp.array().exp();
  const VectorX<typename DerivedA::Scalar> diff = lp - lq;
  const auto kl = p.dot(diff);
  return p.array() * (diff.array() - kl);
}

template <typename Scalar>
struct AdvantageSet {
  VectorX<Scalar> rewards;
  Scalar mean = 0;
  Scalar std = 0;
  Scalar eps = 0;
  VectorX<Scalar> advantages;
};

/*!
 * Group-relative normalization (r - mean) / (std + eps). The population standard
 * deviation is used unless sample_std is set. Groups whose rewards are all equal get
 * exactly zero advantages.
 */
template <typename Derived>
AdvantageSet<typename Derived::Scalar> normalize_advantages(const Eigen::MatrixBase<Derived>& rewards,
                                                            typename Derived::Scalar eps,
                                                            bool sample_std = false) {
  using Scalar = typename Derived::Scalar;
  const auto n = rewards.size();
  if (n < 2) throw Error(ErrorCode::GroupTooSmall, "need at least 2 rewards, got " + std::to_string(n));
  if (!(eps > 0)) throw Error(ErrorCode::InvalidArgument, "eps must be positive");

  AdvantageSet<Scalar> out;
  out.rewards = rewards;
  out.eps = eps;
  out.mean = rewards.mean();
  if (rewards.maxCoeff() == rewards.minCoeff()) {
    out.mean = rewards(0);
    out.advantages = VectorX<Scalar>::Zero(n);
    return out;
  }
  const VectorX<Scalar> centered = rewards.array() - out.mean;
  const Scalar denom = sample_std ? Scalar(n - 1) : Scalar(n);
  out.std = std::sqrt(centered.squaredNorm() / denom);
  out.advantages = centered / (out.std + eps);
  return out;
}

template <typename Scalar>
struct SurrogateTerm {
  Scalar value;
  bool clipped;  // the clipped branch is strictly the minimum, so the term has zero gradient
};

//! min(ratio * adv, clip(ratio, 1 - eps_clip, 1 + eps_clip) * adv).
template <typename Scalar>
SurrogateTerm<Scalar> clipped_surrogate(Scalar ratio, Scalar advantage, Scalar eps_clip) {
  const Scalar lo = Scalar(1) - eps_clip;
  const Scalar hi = Scalar(1) + eps_clip;
  const Scalar clamped = ratio < lo ? lo : (ratio > hi ? hi : ratio);
  const Scalar unclipped_value = ratio * advantage;
  const Scalar clipped_value = clamped * advantage;
  if (clipped_value < unclipped_value) return {clipped_value, true};
  return {unclipped_value, false};
}

}  // namespace fgrpo
