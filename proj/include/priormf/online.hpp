#pragma once

#include "priormf/optimizer.hpp"

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace priormf {

struct UpdateConfig {
  int max_rounds = 10;
  double rel_tol = 1e-3;
  LineSearchConfig ls;
  /// When set, the prior weight is frozen at this alpha instead of being
  /// refreshed from rho as n, m, |R| grow.
  std::optional<double> fixed_alpha;
};

struct UpdateReport {
  std::uint64_t seq = 0;
  std::string user, item;
  double rating = 0.0;
  int rounds = 0;
  bool new_user = false;
  bool new_item = false;
  double user_block_value = 0.0;
  double item_block_value = 0.0;
  std::int64_t micros = 0;
};

/// Incorporate one rating into an existing factorization: create missing
/// rows (one random coordinate set to 1), append the rating to both indexes,
/// then alternate line-searched steps on w_i and h_j until the combined
/// improvement of a round stalls or max_rounds is reached. Only rows i and j
/// change; the cost is independent of n, m and |R|.
inline UpdateReport update_with_rating(FactorModel<double>& model, CacheSet<double>& caches,
                                       RatingStore& store, const LossSpec& spec,
                                       const RatingTriple& triple, const UpdateConfig& config,
                                       Rng& rng, DomainGuard* guard = nullptr) {
  const auto t0 = std::chrono::steady_clock::now();
  UpdateReport report;
  report.user = triple.user;
  report.item = triple.item;
  report.rating = triple.value;

  report.new_user = !store.user_index(triple.user).has_value();
  if (report.new_user) grow_model(model, caches, Side::user, rng);
  report.new_item = !store.item_index(triple.item).has_value();
  if (report.new_item) grow_model(model, caches, Side::item, rng);

  const RatingStore::AddResult added = store.add(triple);  // duplicate pair = revision
  if (store.n_users() != model.n_users() || store.m_items() != model.m_items()) {
    throw NumericalError("store and model row counts diverged during update");
  }
  const Index i = added.user;
  const Index j = added.item;
  const double alpha =
      config.fixed_alpha ? *config.fixed_alpha
                         : effective_alpha(spec, model.n_users(), model.m_items(), store.count());

  for (int round = 1; round <= config.max_rounds; ++round) {
    const LineSearchResult<double> user_step =
        descend_row(model, caches, store, spec, alpha, Side::user, i, config.ls, guard);
    const LineSearchResult<double> item_step =
        descend_row(model, caches, store, spec, alpha, Side::item, j, config.ls, guard);
    report.rounds = round;
    report.user_block_value = user_step.value_after;
    report.item_block_value = item_step.value_after;
    const double improvement = (user_step.value_before - user_step.value_after) +
                               (item_step.value_before - item_step.value_after);
    const double scale =
        1.0 + std::abs(user_step.value_after) + std::abs(item_step.value_after);
    if (improvement < config.rel_tol * scale) break;
  }
  report.micros = std::chrono::duration_cast<std::chrono::microseconds>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
  return report;
}

/// Called before each update with the not-yet-updated model (evaluate, then
/// update).
using EventHook = std::function<void(std::uint64_t seq, const RatingTriple&,
                                     const FactorModel<double>&, const CacheSet<double>&,
                                     const RatingStore&)>;

/// Feed a time-ordered stream of ratings through update_with_rating,
/// invoking the hook before every update.
inline std::vector<UpdateReport> replay_stream(FactorModel<double>& model,
                                               CacheSet<double>& caches, RatingStore& store,
                                               const LossSpec& spec,
                                               const std::vector<RatingTriple>& triples,
                                               const UpdateConfig& config, Rng& rng,
                                               const EventHook& hook = {},
                                               DomainGuard* guard = nullptr) {
  std::vector<UpdateReport> reports;
  reports.reserve(triples.size());
  std::uint64_t seq = 0;
  for (const RatingTriple& t : triples) {
    if (hook) hook(seq, t, model, caches, store);
    UpdateReport rep = update_with_rating(model, caches, store, spec, t, config, rng, guard);
    rep.seq = seq;
    reports.push_back(std::move(rep));
    ++seq;
  }
  return reports;
}

}  // namespace priormf
