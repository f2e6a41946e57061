#pragma once

#include "priormf/model.hpp"
#include "priormf/ratings.hpp"
#include "priormf/types.hpp"

#include <cmath>
#include <cstddef>
#include <span>

namespace priormf {

template <class Scalar = double>
struct BlockEval {
  Scalar value = 0;
  RowVectorX<Scalar> gradient;
};

/// Guard for the KL loss: predictions below epsilon are clamped before the
/// log/ratio, and each clamp is counted.
struct DomainGuard {
  double epsilon = 1e-12;
  std::size_t clamps = 0;
};

namespace detail {

template <class Scalar>
Scalar sgn(Scalar x) {
  return x > Scalar(0) ? Scalar(1) : (x < Scalar(0) ? Scalar(-1) : Scalar(0));
}

// The user and item blocks are mirror images; `rows` is H (resp. W), `gram`
// is S_h (resp. S_w), `row_sum` is s_h (resp. s_w) and `total` is m (resp. n).
// entry.other indexes `rows`.

template <bool WithGrad, class Scalar>
BlockEval<Scalar> sl_block(const Eigen::Ref<const RowVectorX<Scalar>>& row,
                           std::span<const RatingEntry> rated,
                           const Eigen::Ref<const MatrixX<Scalar>>& rows,
                           const Eigen::Ref<const MatrixX<Scalar>>& gram,
                           const Eigen::Ref<const RowVectorX<Scalar>>& row_sum, Index total,
                           Scalar alpha, Scalar lambda, Scalar prior_value) {
  BlockEval<Scalar> out;
  if constexpr (WithGrad) out.gradient = RowVectorX<Scalar>::Zero(row.size());
  Scalar known = 0;
  for (const RatingEntry& e : rated) {
    const auto other = rows.row(e.other);
    const Scalar pred = row.dot(other);
    const Scalar res = static_cast<Scalar>(e.value) - pred;
    const Scalar prior_res = prior_value - pred;
    known += res * res - alpha * prior_res * prior_res;
    if constexpr (WithGrad) {
      out.gradient.noalias() +=
          Scalar(-2) *
          (static_cast<Scalar>(e.value) - (Scalar(1) - alpha) * pred - alpha * prior_value) *
          other;
    }
  }
  const RowVectorX<Scalar> row_gram = row * gram;
  const Scalar quad = row_gram.dot(row);
  const Scalar all_pairs = alpha * (static_cast<Scalar>(total) * prior_value * prior_value -
                                    Scalar(2) * prior_value * row.dot(row_sum) + quad);
  out.value = known + all_pairs + lambda * row.template lpNorm<1>();
  if constexpr (WithGrad) {
    out.gradient.noalias() += Scalar(2) * alpha * (row_gram - prior_value * row_sum);
    out.gradient += lambda * row.unaryExpr([](Scalar x) { return sgn(x); });
  }
  return out;
}

template <bool WithGrad, class Scalar>
BlockEval<Scalar> al_block(const Eigen::Ref<const RowVectorX<Scalar>>& row,
                           std::span<const RatingEntry> rated,
                           const Eigen::Ref<const MatrixX<Scalar>>& rows,
                           const Eigen::Ref<const RowVectorX<Scalar>>& row_sum, Scalar alpha,
                           Scalar lambda) {
  if ((row.array() < Scalar(0)).any()) {
    throw std::invalid_argument("absolute loss requires non-negative factors");
  }
  BlockEval<Scalar> out;
  if constexpr (WithGrad) out.gradient = RowVectorX<Scalar>::Zero(row.size());
  for (const RatingEntry& e : rated) {
    const auto other = rows.row(e.other);
    const Scalar pred = row.dot(other);
    out.value += std::abs(static_cast<Scalar>(e.value) - pred) - alpha * pred;
    if constexpr (WithGrad) {
      out.gradient.noalias() += (sgn(pred - static_cast<Scalar>(e.value)) - alpha) * other;
    }
  }
  out.value += alpha * row.dot(row_sum) + lambda * row.sum();
  if constexpr (WithGrad) {
    out.gradient += alpha * row_sum;
    // L1 one-sided derivative on the non-negative orthant
    out.gradient.array() += lambda;
  }
  return out;
}

template <bool WithGrad, class Scalar>
BlockEval<Scalar> gkl_block(const Eigen::Ref<const RowVectorX<Scalar>>& row,
                            std::span<const RatingEntry> rated,
                            const Eigen::Ref<const MatrixX<Scalar>>& rows,
                            const Eigen::Ref<const RowVectorX<Scalar>>& row_sum, Scalar alpha,
                            Scalar lambda, DomainGuard* guard) {
  if ((row.array() < Scalar(0)).any()) {
    throw std::invalid_argument("KL loss requires non-negative factors");
  }
  BlockEval<Scalar> out;
  if constexpr (WithGrad) out.gradient = RowVectorX<Scalar>::Zero(row.size());
  const Scalar eps = guard ? static_cast<Scalar>(guard->epsilon) : Scalar(1e-12);
  for (const RatingEntry& e : rated) {
    const auto other = rows.row(e.other);
    Scalar pred = row.dot(other);
    if (pred < eps) {
      pred = eps;
      if (guard) ++guard->clamps;
    }
    const Scalar r = static_cast<Scalar>(e.value);
    out.value += r * std::log(r / pred) - r + (Scalar(1) - alpha) * pred;
    if constexpr (WithGrad) {
      out.gradient.noalias() += (-r / pred + (Scalar(1) - alpha)) * other;
    }
  }
  out.value += alpha * row.dot(row_sum) + lambda * row.sum();
  if constexpr (WithGrad) {
    out.gradient += alpha * row_sum;
    out.gradient.array() += lambda;
  }
  return out;
}

}  // namespace detail

// --- squared loss ----------------------------------------------------------

/// Block objective and gradient for one user row. rated lists the user's
/// known ratings; item_rows is the full H. O(|rated| k + k^2).
template <class Scalar>
BlockEval<Scalar> sl_user_block(const Eigen::Ref<const RowVectorX<Scalar>>& w,
                                std::span<const RatingEntry> rated,
                                const Eigen::Ref<const MatrixX<Scalar>>& item_rows,
                                const Eigen::Ref<const MatrixX<Scalar>>& S_h,
                                const Eigen::Ref<const RowVectorX<Scalar>>& s_h, Index m_items,
                                Scalar alpha, Scalar lambda, Scalar prior_value = 0) {
  return detail::sl_block<true>(w, rated, item_rows, S_h, s_h, m_items, alpha, lambda,
                                prior_value);
}

template <class Scalar>
BlockEval<Scalar> sl_item_block(const Eigen::Ref<const RowVectorX<Scalar>>& h,
                                std::span<const RatingEntry> rated,
                                const Eigen::Ref<const MatrixX<Scalar>>& user_rows,
                                const Eigen::Ref<const MatrixX<Scalar>>& S_w,
                                const Eigen::Ref<const RowVectorX<Scalar>>& s_w, Index n_users,
                                Scalar alpha, Scalar lambda, Scalar prior_value = 0) {
  return detail::sl_block<true>(h, rated, user_rows, S_w, s_w, n_users, alpha, lambda,
                                prior_value);
}

// --- absolute loss ----------------------------------------------------------

/// O(|rated| k). Requires w >= 0; the model keeps H non-negative.
template <class Scalar>
BlockEval<Scalar> al_user_block(const Eigen::Ref<const RowVectorX<Scalar>>& w,
                                std::span<const RatingEntry> rated,
                                const Eigen::Ref<const MatrixX<Scalar>>& item_rows,
                                const Eigen::Ref<const RowVectorX<Scalar>>& s_h, Scalar alpha,
                                Scalar lambda) {
  return detail::al_block<true>(w, rated, item_rows, s_h, alpha, lambda);
}

template <class Scalar>
BlockEval<Scalar> al_item_block(const Eigen::Ref<const RowVectorX<Scalar>>& h,
                                std::span<const RatingEntry> rated,
                                const Eigen::Ref<const MatrixX<Scalar>>& user_rows,
                                const Eigen::Ref<const RowVectorX<Scalar>>& s_w, Scalar alpha,
                                Scalar lambda) {
  return detail::al_block<true>(h, rated, user_rows, s_w, alpha, lambda);
}

// --- generalized KL divergence ----------------------------------------------

template <class Scalar>
BlockEval<Scalar> gkl_user_block(const Eigen::Ref<const RowVectorX<Scalar>>& w,
                                 std::span<const RatingEntry> rated,
                                 const Eigen::Ref<const MatrixX<Scalar>>& item_rows,
                                 const Eigen::Ref<const RowVectorX<Scalar>>& s_h, Scalar alpha,
                                 Scalar lambda, DomainGuard* guard = nullptr) {
  return detail::gkl_block<true>(w, rated, item_rows, s_h, alpha, lambda, guard);
}

template <class Scalar>
BlockEval<Scalar> gkl_item_block(const Eigen::Ref<const RowVectorX<Scalar>>& h,
                                 std::span<const RatingEntry> rated,
                                 const Eigen::Ref<const MatrixX<Scalar>>& user_rows,
                                 const Eigen::Ref<const RowVectorX<Scalar>>& s_w, Scalar alpha,
                                 Scalar lambda, DomainGuard* guard = nullptr) {
  return detail::gkl_block<true>(h, rated, user_rows, s_w, alpha, lambda, guard);
}

// --- loss-dispatching views used by the optimizer ---------------------------

template <bool WithGrad, class Scalar>
BlockEval<Scalar> eval_block(const LossSpec& spec, Scalar alpha, Side side,
                             const Eigen::Ref<const RowVectorX<Scalar>>& row,
                             std::span<const RatingEntry> rated, const FactorModel<Scalar>& model,
                             const CacheSet<Scalar>& caches, DomainGuard* guard = nullptr) {
  const bool user = side == Side::user;
  const Eigen::Ref<const MatrixX<Scalar>> rows = user ? model.H() : model.W();
  const Eigen::Ref<const MatrixX<Scalar>> gram = user ? caches.S_h : caches.S_w;
  const Eigen::Ref<const RowVectorX<Scalar>> row_sum = user ? caches.s_h : caches.s_w;
  const Index total = user ? model.m_items() : model.n_users();
  switch (spec.kind) {
    case Loss::squared:
      return detail::sl_block<WithGrad>(row, rated, rows, gram, row_sum, total,
                                        alpha, static_cast<Scalar>(spec.l1),
                                        static_cast<Scalar>(spec.prior_value));
    case Loss::absolute:
      return detail::al_block<WithGrad>(row, rated, rows, row_sum, alpha,
                                        static_cast<Scalar>(spec.l1));
    case Loss::generalized_kl:
      return detail::gkl_block<WithGrad>(row, rated, rows, row_sum, alpha,
                                         static_cast<Scalar>(spec.l1), guard);
  }
  throw std::invalid_argument("unknown loss kind");
}

/// Full objective including the prior term over all unknown pairs and the L1
/// terms, computed through the caches: O(|R| k + n k^2) for the squared loss,
/// O(|R| k + (n + m) k) otherwise.
template <class Scalar>
Scalar total_objective(const FactorModel<Scalar>& model, const CacheSet<Scalar>& caches,
                       const RatingStore& store, const LossSpec& spec,
                       DomainGuard* guard = nullptr) {
  const Index n = model.n_users();
  const Index m = model.m_items();
  const Scalar alpha =
      static_cast<Scalar>(effective_alpha(spec, n, m, store.count()));
  const Scalar lambda = static_cast<Scalar>(spec.l1);
  const auto W = model.W();
  const auto H = model.H();
  const Scalar eps = guard ? static_cast<Scalar>(guard->epsilon) : Scalar(1e-12);

  Scalar known = 0;
  for (Index i = 0; i < n; ++i) {
    const auto w = W.row(i);
    for (const RatingEntry& e : store.ratings_of_user(i)) {
      Scalar pred = w.dot(H.row(e.other));
      const Scalar r = static_cast<Scalar>(e.value);
      switch (spec.kind) {
        case Loss::squared: {
          const Scalar res = r - pred;
          const Scalar prior_res = static_cast<Scalar>(spec.prior_value) - pred;
          known += res * res - alpha * prior_res * prior_res;
          break;
        }
        case Loss::absolute:
          known += std::abs(r - pred) - alpha * pred;
          break;
        case Loss::generalized_kl: {
          if (pred < eps) {
            pred = eps;
            if (guard) ++guard->clamps;
          }
          known += r * std::log(r / pred) - r + (Scalar(1) - alpha) * pred;
          break;
        }
      }
    }
  }

  Scalar all_pairs = 0;
  if (spec.kind == Loss::squared) {
    const Scalar r0 = static_cast<Scalar>(spec.prior_value);
    const Scalar quad = (W * caches.S_h).cwiseProduct(W).sum();
    all_pairs = alpha * (static_cast<Scalar>(n) * static_cast<Scalar>(m) * r0 * r0 -
                         Scalar(2) * r0 * caches.s_w.dot(caches.s_h) + quad);
  } else {
    all_pairs = alpha * caches.s_w.dot(caches.s_h);
  }
  const Scalar l1_term =
      lambda == Scalar(0)
          ? Scalar(0)
          : lambda * (W.cwiseAbs().sum() + H.cwiseAbs().sum());
  return known + all_pairs + l1_term;
}

}  // namespace priormf
