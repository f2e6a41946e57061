#pragma once

#include "priormf/losses.hpp"
#include "priormf/model.hpp"
#include "priormf/ratings.hpp"
#include "priormf/rng.hpp"

#include <chrono>
#include <cstdint>
#include <functional>
#include <numeric>
#include <utility>
#include <vector>

namespace priormf {

struct LineSearchConfig {
  double initial_step = 1.0;
  double shrink = 0.5;
  double armijo_c = 1e-4;
  int max_halvings = 30;
};

struct ConvergenceConfig {
  double rel_tol = 1e-4;
  int max_epochs = 100;
};

template <class Scalar = double>
struct LineSearchResult {
  RowVectorX<Scalar> row;
  Scalar value_before = 0;
  Scalar value_after = 0;
  Scalar step = 0;
  bool accepted = false;
};

/// Backtracking Armijo step on one block. The candidate row - t * gradient is
/// projected onto the non-negative orthant when required, and accepted once
/// the block value drops by at least armijo_c * t * |gradient|^2. Returns the
/// original row (step 0) when no trial step qualifies, so the block value
/// never increases.
template <class Scalar, class ValueFn>
LineSearchResult<Scalar> line_search_step(const Eigen::Ref<const RowVectorX<Scalar>>& row,
                                          const BlockEval<Scalar>& at_row, ValueFn&& value_fn,
                                          const LineSearchConfig& config, bool non_negative) {
  if (!at_row.gradient.allFinite()) {
    throw NumericalError("non-finite block gradient in line search");
  }
  LineSearchResult<Scalar> out;
  out.value_before = at_row.value;
  const Scalar g2 = at_row.gradient.squaredNorm();
  if (g2 == Scalar(0)) {
    out.row = row;
    out.value_after = at_row.value;
    out.accepted = true;
    return out;
  }
  Scalar t = static_cast<Scalar>(config.initial_step);
  RowVectorX<Scalar> candidate(row.size());
  for (int h = 0; h <= config.max_halvings; ++h) {
    candidate = row - t * at_row.gradient;
    if (non_negative) candidate = candidate.cwiseMax(Scalar(0));
    const Scalar v = value_fn(candidate);
    if (v <= at_row.value - static_cast<Scalar>(config.armijo_c) * t * g2) {
      out.row = std::move(candidate);
      out.value_after = v;
      out.step = t;
      out.accepted = true;
      return out;
    }
    t *= static_cast<Scalar>(config.shrink);
  }
  out.row = row;
  out.value_after = at_row.value;
  return out;
}

/// Convenience: line-search one model row in place and maintain the caches.
template <class Scalar>
LineSearchResult<Scalar> descend_row(FactorModel<Scalar>& model, CacheSet<Scalar>& caches,
                                     const RatingStore& store, const LossSpec& spec, Scalar alpha,
                                     Side side, Index index, const LineSearchConfig& ls,
                                     DomainGuard* guard = nullptr) {
  const auto rated = side == Side::user ? store.ratings_of_user(index)
                                        : store.ratings_of_item(index);
  const RowVectorX<Scalar> row =
      side == Side::user ? RowVectorX<Scalar>(model.user_row(index))
                         : RowVectorX<Scalar>(model.item_row(index));
  const BlockEval<Scalar> at_row =
      eval_block<true, Scalar>(spec, alpha, side, row, rated, model, caches, guard);
  auto value_fn = [&](const RowVectorX<Scalar>& cand) {
    return eval_block<false, Scalar>(spec, alpha, side, cand, rated, model, caches, guard).value;
  };
  LineSearchResult<Scalar> res =
      line_search_step<Scalar>(row, at_row, value_fn, ls, spec.non_negative);
  if (res.accepted && res.step > Scalar(0)) {
    apply_row_update<Scalar>(model, caches, spec, side, index, res.row);
  }
  return res;
}

template <class Scalar = double>
struct StepInfo {
  Side side;
  Index index;
  Scalar value_before;
  Scalar value_after;
  Scalar step;
};

template <class Scalar = double>
using StepObserver = std::function<void(const StepInfo<Scalar>&)>;

/// One pass of randomized block coordinate descent: every user and item row
/// is visited exactly once, in a fresh uniform permutation of the combined
/// pool. Returns the objective after the epoch.
template <class Scalar>
Scalar rbcd_epoch(FactorModel<Scalar>& model, CacheSet<Scalar>& caches, const RatingStore& store,
                  const LossSpec& spec, const LineSearchConfig& ls, Rng& rng,
                  const StepObserver<Scalar>& observer = {}, DomainGuard* guard = nullptr) {
  const Index n = model.n_users();
  const Index m = model.m_items();
  const Scalar alpha = static_cast<Scalar>(effective_alpha(spec, n, m, store.count()));
  std::vector<Index> pool(static_cast<std::size_t>(n + m));
  std::iota(pool.begin(), pool.end(), Index(0));
  shuffle(pool, rng);
  for (Index id : pool) {
    const Side side = id < n ? Side::user : Side::item;
    const Index index = id < n ? id : id - n;
    LineSearchResult<Scalar> res =
        descend_row(model, caches, store, spec, alpha, side, index, ls, guard);
    if (observer) observer({side, index, res.value_before, res.value_after, res.step});
  }
  return total_objective(model, caches, store, spec, guard);
}

struct EpochRecord {
  int epoch = 0;
  double objective = 0.0;
  double seconds = 0.0;
};

using TrainingTrace = std::vector<EpochRecord>;

template <class Scalar = double>
struct FactorizeResult {
  FactorModel<Scalar> model;
  CacheSet<Scalar> caches;
  TrainingTrace trace;
};

/// Static factorization: random init, then RBCD epochs until the relative
/// objective decrease over one epoch falls below rel_tol or max_epochs is
/// reached. Epoch 0 of the trace records the initial objective.
template <class Scalar = double>
FactorizeResult<Scalar> factorize(const RatingStore& store, const LossSpec& spec, Index k,
                                  std::uint64_t seed, const LineSearchConfig& ls = {},
                                  const ConvergenceConfig& conv = {},
                                  const StepObserver<Scalar>& observer = {},
                                  DomainGuard* guard = nullptr) {
  if (store.count() == 0) throw DataError("cannot factorize an empty rating store");
  FactorizeResult<Scalar> out;
  auto [model, caches] =
      init_model<Scalar>(store.n_users(), store.m_items(), k, spec, derive_seed(seed, 0x1217));
  out.model = std::move(model);
  out.caches = std::move(caches);
  Rng epoch_rng(derive_seed(seed, 0x3e0c));
  double prev = static_cast<double>(total_objective(out.model, out.caches, store, spec, guard));
  out.trace.push_back({0, prev, 0.0});
  const auto t0 = std::chrono::steady_clock::now();
  for (int epoch = 1; epoch <= conv.max_epochs; ++epoch) {
    const double objective = static_cast<double>(
        rbcd_epoch(out.model, out.caches, store, spec, ls, epoch_rng, observer, guard));
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.trace.push_back({epoch, objective, seconds});
    const double rel = (prev - objective) / std::max(std::abs(prev), 1e-12);
    prev = objective;
    if (rel < conv.rel_tol) break;
  }
  return out;
}

}  // namespace priormf
