#pragma once

#include "priormf/rng.hpp"
#include "priormf/types.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <utility>

namespace priormf {

enum class Loss : std::uint8_t { squared = 0, absolute = 1, generalized_kl = 2 };

/// How the prior weight was given: as the unknown/known influence ratio rho,
/// or directly as the per-pair coefficient alpha.
enum class PriorForm : std::uint8_t { ratio = 0, absolute = 1 };

struct LossSpec {
  Loss kind = Loss::squared;
  PriorForm prior_form = PriorForm::ratio;
  double prior_weight = 0.0;  // rho or alpha depending on prior_form
  double prior_value = 0.0;   // target for unknown ratings; 0 for AL/GKL
  double l1 = 0.0;
  bool non_negative = false;

  /// Validates and normalizes: the absolute and KL losses require
  /// non-negative factors and a zero prior value.
  static LossSpec make(Loss kind, PriorForm form, double weight, double prior_value = 0.0,
                       double l1 = 0.0) {
    if (weight < 0.0) throw std::invalid_argument("prior weight must be >= 0");
    if (form == PriorForm::absolute && weight >= 1.0) {
      throw std::invalid_argument("alpha must lie in [0, 1)");
    }
    if (prior_value < 0.0) throw std::invalid_argument("prior value must be >= 0");
    if (l1 < 0.0) throw std::invalid_argument("l1 coefficient must be >= 0");
    LossSpec spec{kind, form, weight, prior_value, l1, kind != Loss::squared};
    if (spec.kind != Loss::squared && prior_value != 0.0) {
      throw std::invalid_argument("absolute and KL losses support prior value 0 only");
    }
    return spec;
  }
};

/// alpha = rho * |R| / (nm - |R|), clamped to [0, 1 - 1e-9].
inline double rho_to_alpha(double rho, Index n, Index m, std::size_t known,
                           bool* clamped = nullptr) {
  // the mapping runs once per objective evaluation, so warn only once
  static std::atomic<bool> warned_no_unknown{false}, warned_clamp{false};
  if (clamped) *clamped = false;
  const double total = static_cast<double>(n) * static_cast<double>(m);
  const double unknown = total - static_cast<double>(known);
  if (unknown <= 0.0) {
    if (!warned_no_unknown.exchange(true)) {
      std::cerr << "warning: no unknown ratings (n*m == |R|); prior weight set to 0\n";
    }
    if (clamped) *clamped = true;
    return 0.0;
  }
  double alpha = rho * static_cast<double>(known) / unknown;
  const double limit = 1.0 - 1e-9;
  if (alpha > limit) {
    if (!warned_clamp.exchange(true)) {
      std::cerr << "warning: alpha " << alpha << " clamped to " << limit << "\n";
    }
    if (clamped) *clamped = true;
    alpha = limit;
  }
  return alpha;
}

/// The per-pair weight actually used by the losses for the current data size.
inline double effective_alpha(const LossSpec& spec, Index n, Index m, std::size_t known) {
  if (spec.prior_form == PriorForm::absolute) return spec.prior_weight;
  return rho_to_alpha(spec.prior_weight, n, m, known);
}

/// User rows W (n x k) and item rows H (m x k). Both matrices keep spare
/// capacity rows so appending a row is amortized O(k).
template <class Scalar = double>
class FactorModel {
 public:
  FactorModel() = default;
  FactorModel(Index n, Index m, Index k) : k_(k), n_(n), m_(m), W_(n, k), H_(m, k) {}

  Index k() const { return k_; }
  Index n_users() const { return n_; }
  Index m_items() const { return m_; }

  auto W() const { return W_.topRows(n_); }
  auto H() const { return H_.topRows(m_); }
  auto W() { return W_.topRows(n_); }
  auto H() { return H_.topRows(m_); }

  auto user_row(Index i) const { return W_.row(i); }
  auto item_row(Index j) const { return H_.row(j); }
  auto user_row(Index i) { return W_.row(i); }
  auto item_row(Index j) { return H_.row(j); }

  Index append_user_row(const RowVectorX<Scalar>& row) {
    reserve_rows(W_, n_ + 1);
    W_.row(n_) = row;
    return n_++;
  }
  Index append_item_row(const RowVectorX<Scalar>& row) {
    reserve_rows(H_, m_ + 1);
    H_.row(m_) = row;
    return m_++;
  }

  bool same_values(const FactorModel& other) const {
    return k_ == other.k_ && n_ == other.n_ && m_ == other.m_ &&
           W().cwiseEqual(other.W()).all() && H().cwiseEqual(other.H()).all();
  }

 private:
  void reserve_rows(MatrixX<Scalar>& M, Index needed) {
    if (M.rows() >= needed) return;
    const Index cap = std::max<Index>(needed, std::max<Index>(2 * M.rows(), 8));
    M.conservativeResize(cap, k_);
  }

  Index k_ = 0;
  Index n_ = 0;  // active user rows
  Index m_ = 0;  // active item rows
  MatrixX<Scalar> W_, H_;
};

/// Sufficient statistics over the factor rows: Gram matrices S_w = sum_i
/// w_i^T w_i, S_h = sum_j h_j^T h_j and row sums s_w, s_h. Maintained by
/// deltas; rebuilt from scratch every `rebuild_period` row updates to keep
/// float drift bounded.
template <class Scalar = double>
struct CacheSet {
  MatrixX<Scalar> S_w, S_h;
  RowVectorX<Scalar> s_w, s_h;
  std::size_t updates_since_rebuild = 0;
  std::size_t rebuild_period = 10000;

  void rebuild(const FactorModel<Scalar>& model) {
    const auto W = model.W();
    const auto H = model.H();
    S_w.noalias() = W.transpose() * W;
    S_h.noalias() = H.transpose() * H;
    s_w = W.colwise().sum();
    s_h = H.colwise().sum();
    updates_since_rebuild = 0;
  }
};

enum class Side { user, item };

/// Draw i.i.d. entries uniform on (0, 1/sqrt(k)] and compute the caches.
/// Positive entries are valid for all three losses and keep the initial
/// inner products O(1).
template <class Scalar = double>
std::pair<FactorModel<Scalar>, CacheSet<Scalar>> init_model(Index n, Index m, Index k,
                                                            const LossSpec& /*spec*/,
                                                            std::uint64_t seed) {
  if (n < 1 || m < 1 || k < 1) throw std::invalid_argument("n, m, k must be >= 1");
  FactorModel<Scalar> model(n, m, k);
  Rng rng(seed);
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(k));
  auto W = model.W();
  for (Index i = 0; i < n; ++i) {
    for (Index c = 0; c < k; ++c) W(i, c) = (Scalar(1) - static_cast<Scalar>(rng.unit())) * scale;
  }
  auto H = model.H();
  for (Index j = 0; j < m; ++j) {
    for (Index c = 0; c < k; ++c) H(j, c) = (Scalar(1) - static_cast<Scalar>(rng.unit())) * scale;
  }
  CacheSet<Scalar> caches;
  caches.rebuild(model);
  return {std::move(model), std::move(caches)};
}

/// Replace one factor row and maintain the caches by delta: O(k^2) for the
/// Gram matrix, O(k) for the row sum.
template <class Scalar>
void apply_row_update(FactorModel<Scalar>& model, CacheSet<Scalar>& caches, const LossSpec& spec,
                      Side side, Index row, const Eigen::Ref<const RowVectorX<Scalar>>& new_row) {
  if (new_row.size() != model.k()) throw std::invalid_argument("row length must equal k");
  if (spec.non_negative && (new_row.array() < Scalar(0)).any()) {
    throw std::invalid_argument("negative entries rejected under non-negative loss");
  }
  auto old_row = side == Side::user ? model.user_row(row) : model.item_row(row);
  MatrixX<Scalar>& S = side == Side::user ? caches.S_w : caches.S_h;
  RowVectorX<Scalar>& s = side == Side::user ? caches.s_w : caches.s_h;
  S.noalias() += new_row.transpose() * new_row - old_row.transpose() * old_row;
  s += new_row - old_row;
  old_row = new_row;
  if (++caches.updates_since_rebuild >= caches.rebuild_period) caches.rebuild(model);
}

/// Append a cold-start row: one uniformly random coordinate set to 1, the
/// rest 0. Returns the new dense index.
template <class Scalar>
Index grow_model(FactorModel<Scalar>& model, CacheSet<Scalar>& caches, Side side, Rng& rng) {
  const Index k = model.k();
  RowVectorX<Scalar> row = RowVectorX<Scalar>::Zero(k);
  const Index hot = static_cast<Index>(rng.below(static_cast<std::uint64_t>(k)));
  row(hot) = Scalar(1);
  const Index idx =
      side == Side::user ? model.append_user_row(row) : model.append_item_row(row);
  MatrixX<Scalar>& S = side == Side::user ? caches.S_w : caches.S_h;
  RowVectorX<Scalar>& s = side == Side::user ? caches.s_w : caches.s_h;
  S(hot, hot) += Scalar(1);
  s(hot) += Scalar(1);
  if (++caches.updates_since_rebuild >= caches.rebuild_period) caches.rebuild(model);
  return idx;
}

}  // namespace priormf
