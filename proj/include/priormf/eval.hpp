#pragma once

#include "priormf/online.hpp"
#include "priormf/optimizer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <deque>
#include <mutex>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

namespace priormf {

/// Candidate list for one user's ranking evaluation. scores and relevance are
/// parallel to candidates; relevance 0 marks an unrated candidate.
struct RankingContext {
  std::vector<Index> candidates;
  std::vector<double> scores;
  std::vector<double> relevance;
};

/// NDCG with gain 2^rel - 1 and discount 1/log2(rank + 1) over the
/// score-descending order, score ties broken by ascending item index.
/// Returns nothing when no candidate has positive relevance (the event is
/// skipped and counted by the caller).
inline std::optional<double> ndcg(const RankingContext& ctx,
                                  std::optional<int> truncation = std::nullopt) {
  const std::size_t n = ctx.candidates.size();
  bool any_positive = false;
  for (double rel : ctx.relevance) any_positive = any_positive || rel > 0.0;
  if (n == 0 || !any_positive) return std::nullopt;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (ctx.scores[a] != ctx.scores[b]) return ctx.scores[a] > ctx.scores[b];
    return ctx.candidates[a] < ctx.candidates[b];
  });
  const std::size_t cutoff =
      truncation ? std::min(n, static_cast<std::size_t>(std::max(*truncation, 0))) : n;

  double dcg = 0.0;
  for (std::size_t p = 0; p < cutoff; ++p) {
    dcg += (std::pow(2.0, ctx.relevance[order[p]]) - 1.0) /
           std::log2(static_cast<double>(p) + 2.0);
  }
  std::vector<double> ideal = ctx.relevance;
  std::sort(ideal.begin(), ideal.end(), std::greater<double>());
  double idcg = 0.0;
  for (std::size_t p = 0; p < cutoff; ++p) {
    idcg += (std::pow(2.0, ideal[p]) - 1.0) / std::log2(static_cast<double>(p) + 2.0);
  }
  return dcg / idcg;
}

/// AUC of the positive-relevance candidates against the zero-relevance ones;
/// ties count one half. Computed by midranks, exact for these sizes.
inline std::optional<double> auc_static(const RankingContext& ctx) {
  std::vector<std::pair<double, bool>> scored;
  scored.reserve(ctx.candidates.size());
  std::size_t positives = 0;
  for (std::size_t c = 0; c < ctx.candidates.size(); ++c) {
    const bool pos = ctx.relevance[c] > 0.0;
    positives += pos;
    scored.emplace_back(ctx.scores[c], pos);
  }
  const std::size_t negatives = scored.size() - positives;
  if (positives == 0 || negatives == 0) return std::nullopt;
  std::sort(scored.begin(), scored.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  double rank_sum = 0.0;
  std::size_t i = 0;
  while (i < scored.size()) {
    std::size_t j = i;
    while (j < scored.size() && scored[j].first == scored[i].first) ++j;
    const double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (std::size_t t = i; t < j; ++t) {
      if (scored[t].second) rank_sum += midrank;
    }
    i = j;
  }
  const double p = static_cast<double>(positives);
  return (rank_sum - 0.5 * p * (p + 1.0)) / (p * static_cast<double>(negatives));
}

/// Fraction of the user's unrated items that score below item `item`, ties
/// counting one half. Nothing when the candidate set is empty.
inline std::optional<double> auc_event(const FactorModel<double>& model, Index user, Index item,
                                       const RatingStore& store) {
  const auto H = model.H();
  const auto w = model.user_row(user);
  const double target = w.dot(model.item_row(item));
  std::size_t below = 0, ties = 0, total = 0;
  for (Index q = 0; q < model.m_items(); ++q) {
    if (q == item || store.has_pair(user, q)) continue;
    ++total;
    const double s = w.dot(H.row(q));
    if (s < target) {
      ++below;
    } else if (s == target) {
      ++ties;
    }
  }
  if (total == 0) return std::nullopt;
  return (static_cast<double>(below) + 0.5 * static_cast<double>(ties)) /
         static_cast<double>(total);
}

/// Event AUC for a raw stream triple. Rows the model has not seen score 0:
/// an unseen user ties every candidate (AUC one half), an unseen item is
/// ranked at score 0. When `sample` is positive and the candidate set is
/// larger, the AUC is computed on a random subset drawn from `rng`.
inline std::optional<double> event_auc_external(const FactorModel<double>& model,
                                                const RatingStore& store, const RatingTriple& t,
                                                Rng& rng, std::size_t sample = 0) {
  const auto ui = store.user_index(t.user);
  const auto ji = store.item_index(t.item);
  const Index m = model.m_items();
  if (!ui) {
    const Index candidates = m - Index(ji.has_value() ? 1 : 0);
    if (candidates <= 0) return std::nullopt;
    return 0.5;
  }
  const auto w = model.user_row(*ui);
  const double target = ji ? w.dot(model.item_row(*ji)) : 0.0;
  std::vector<Index> cands;
  cands.reserve(static_cast<std::size_t>(m));
  for (Index q = 0; q < m; ++q) {
    if (ji && q == *ji) continue;
    if (store.has_pair(*ui, q)) continue;
    cands.push_back(q);
  }
  if (cands.empty()) return std::nullopt;
  if (sample > 0 && cands.size() > sample) {
    shuffle(cands, rng);
    cands.resize(sample);
  }
  const auto H = model.H();
  std::size_t below = 0, ties = 0;
  for (Index q : cands) {
    const double s = w.dot(H.row(q));
    if (s < target) {
      ++below;
    } else if (s == target) {
      ++ties;
    }
  }
  return (static_cast<double>(below) + 0.5 * static_cast<double>(ties)) /
         static_cast<double>(cands.size());
}

// --- static protocol ---------------------------------------------------------

struct ProtocolConfig {
  Index k = 50;
  LineSearchConfig ls;
  ConvergenceConfig conv;
  std::optional<int> ndcg_k;  // truncation; full list when unset
};

struct HoldoutUserMetrics {
  std::string user;
  std::optional<double> ndcg_full, ndcg_ri, auc;
};

/// Score one trained model against held-out user halves. Candidates for the
/// full NDCG and the AUC are every catalog item the user did not rate in
/// training; held-out items missing from the training catalog participate
/// with score 0 under stable virtual indices.
inline std::vector<HoldoutUserMetrics> evaluate_holdouts(const FactorModel<double>& model,
                                                         const RatingStore& train,
                                                         const std::vector<UserHoldout>& holdouts,
                                                         std::optional<int> ndcg_k) {
  const Index m = model.m_items();
  const auto H = model.H();
  std::vector<HoldoutUserMetrics> out;
  out.reserve(holdouts.size());
  for (const UserHoldout& hu : holdouts) {
    const auto ui = train.user_index(hu.user);
    if (!ui) continue;  // split construction keeps at least one train rating per test user
    const auto w = model.user_row(*ui);

    std::unordered_map<Index, double> held_dense;
    std::vector<const RatingTriple*> held_virtual;
    for (const RatingTriple& rt : hu.ratings) {
      if (auto ji = train.item_index(rt.item)) {
        held_dense[*ji] = rt.value;
      } else {
        held_virtual.push_back(&rt);
      }
    }
    std::sort(held_virtual.begin(), held_virtual.end(),
              [](const RatingTriple* a, const RatingTriple* b) { return a->item < b->item; });

    RankingContext full;
    RankingContext rated_only;
    full.candidates.reserve(static_cast<std::size_t>(m));
    for (Index q = 0; q < m; ++q) {
      if (train.has_pair(*ui, q)) continue;
      const double score = w.dot(H.row(q));
      const auto it = held_dense.find(q);
      const double rel = it == held_dense.end() ? 0.0 : it->second;
      full.candidates.push_back(q);
      full.scores.push_back(score);
      full.relevance.push_back(rel);
      if (it != held_dense.end()) {
        rated_only.candidates.push_back(q);
        rated_only.scores.push_back(score);
        rated_only.relevance.push_back(rel);
      }
    }
    Index next_virtual = m;
    for (const RatingTriple* rt : held_virtual) {
      full.candidates.push_back(next_virtual);
      full.scores.push_back(0.0);
      full.relevance.push_back(rt->value);
      rated_only.candidates.push_back(next_virtual);
      rated_only.scores.push_back(0.0);
      rated_only.relevance.push_back(rt->value);
      ++next_virtual;
    }

    HoldoutUserMetrics um;
    um.user = hu.user;
    um.ndcg_full = ndcg(full, ndcg_k);
    um.ndcg_ri = ndcg(rated_only, ndcg_k);
    um.auc = auc_static(full);
    out.push_back(std::move(um));
  }
  return out;
}

struct StaticUserRow {
  std::uint64_t seed = 0;
  std::string user;
  std::optional<double> ndcg_full, ndcg_ri, auc;
};

struct StaticSeedStats {
  std::uint64_t seed = 0;
  double ndcg = 0.0, ndcg_ri = 0.0, auc = 0.0;
  std::size_t users = 0;
  std::size_t skipped_ndcg = 0, skipped_ri = 0, skipped_auc = 0;
};

struct StaticResult {
  std::vector<StaticUserRow> rows;
  std::vector<StaticSeedStats> per_seed;
  double ndcg_mean = 0.0, ndcg_std = 0.0;
  double ndcg_ri_mean = 0.0, ndcg_ri_std = 0.0;
  double auc_mean = 0.0, auc_std = 0.0;
};

namespace detail {

inline std::pair<double, double> mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  if (xs.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(xs.size() - 1))};
}

}  // namespace detail

/// Factorize the split's training set once per seed, evaluate the held-out
/// halves, and aggregate mean +- stdev over seeds.
inline StaticResult run_static(const StaticSplit& split, const LossSpec& spec,
                               const ProtocolConfig& cfg, const std::vector<std::uint64_t>& seeds) {
  StaticResult out;
  std::vector<double> ndcgs, ris, aucs;
  for (std::uint64_t seed : seeds) {
    auto fr = factorize(split.train, spec, cfg.k, seed, cfg.ls, cfg.conv);
    const auto metrics = evaluate_holdouts(fr.model, split.train, split.test, cfg.ndcg_k);
    StaticSeedStats st;
    st.seed = seed;
    st.users = metrics.size();
    double sn = 0, sr = 0, sa = 0;
    std::size_t cn = 0, cr = 0, ca = 0;
    for (const auto& um : metrics) {
      out.rows.push_back({seed, um.user, um.ndcg_full, um.ndcg_ri, um.auc});
      if (um.ndcg_full) {
        sn += *um.ndcg_full;
        ++cn;
      } else {
        ++st.skipped_ndcg;
      }
      if (um.ndcg_ri) {
        sr += *um.ndcg_ri;
        ++cr;
      } else {
        ++st.skipped_ri;
      }
      if (um.auc) {
        sa += *um.auc;
        ++ca;
      } else {
        ++st.skipped_auc;
      }
    }
    st.ndcg = cn ? sn / static_cast<double>(cn) : 0.0;
    st.ndcg_ri = cr ? sr / static_cast<double>(cr) : 0.0;
    st.auc = ca ? sa / static_cast<double>(ca) : 0.0;
    ndcgs.push_back(st.ndcg);
    ris.push_back(st.ndcg_ri);
    aucs.push_back(st.auc);
    out.per_seed.push_back(st);
  }
  std::tie(out.ndcg_mean, out.ndcg_std) = detail::mean_std(ndcgs);
  std::tie(out.ndcg_ri_mean, out.ndcg_ri_std) = detail::mean_std(ris);
  std::tie(out.auc_mean, out.auc_std) = detail::mean_std(aucs);
  return out;
}

// --- dynamic protocol --------------------------------------------------------

struct EventRow {
  std::uint64_t seq = 0;
  std::string user, item;
  double rating = 0.0;
  std::optional<double> auc;
  bool cold_user = false;      // at most two ratings seen before this event
  std::size_t seen_before = 0; // ratings of this user seen before this event
};

struct DynamicConfig {
  Index k = 50;
  std::uint64_t seed = 1;
  LineSearchConfig ls;
  ConvergenceConfig conv;
  UpdateConfig update;
  bool freeze_alpha = false;   // keep alpha at its initial-training value
  std::size_t auc_sample = 0;  // candidate subsample per event; 0 = full set
};

struct DynamicResult {
  std::vector<EventRow> events;
  std::vector<UpdateReport> updates;
  TrainingTrace trace;
  double mean_auc = 0.0;
  std::size_t evaluated = 0;
  std::size_t skipped = 0;
  std::uint64_t stream_seed = 0;
};

namespace detail {

constexpr std::uint64_t kStreamTag = 0x57a3;

inline std::unordered_map<std::string, std::size_t> arrival_counts(const RatingStore& store) {
  std::unordered_map<std::string, std::size_t> seen;
  seen.reserve(static_cast<std::size_t>(store.n_users()));
  for (Index i = 0; i < store.n_users(); ++i) {
    seen[store.user_id(i)] = store.ratings_of_user(i).size();
  }
  return seen;
}

inline void finalize_auc_stats(DynamicResult& out) {
  double sum = 0.0;
  for (const EventRow& e : out.events) {
    if (e.auc) {
      sum += *e.auc;
      ++out.evaluated;
    } else {
      ++out.skipped;
    }
  }
  out.mean_auc = out.evaluated ? sum / static_cast<double>(out.evaluated) : 0.0;
}

inline UpdateConfig resolve_update_config(const DynamicConfig& cfg, const LossSpec& spec,
                                          const RatingStore& store) {
  UpdateConfig u = cfg.update;
  if (cfg.freeze_alpha && !u.fixed_alpha) {
    u.fixed_alpha = effective_alpha(spec, store.n_users(), store.m_items(), store.count());
  }
  return u;
}

}  // namespace detail

/// Factorize everything before the test block, then replay the test block:
/// each event is evaluated with event AUC first and only then applied to the
/// model.
inline DynamicResult run_dynamic(const TemporalBlocks& blocks, const LossSpec& spec,
                                 const DynamicConfig& cfg) {
  std::vector<RatingTriple> initial = blocks.training;
  initial.insert(initial.end(), blocks.validation.begin(), blocks.validation.end());
  RatingStore store = build_store(initial);
  auto fr = factorize(store, spec, cfg.k, cfg.seed, cfg.ls, cfg.conv);

  DynamicResult out;
  out.trace = std::move(fr.trace);
  out.stream_seed = derive_seed(cfg.seed, detail::kStreamTag);
  Rng stream_rng(out.stream_seed);
  const UpdateConfig update_cfg = detail::resolve_update_config(cfg, spec, store);
  auto seen = detail::arrival_counts(store);

  EventHook hook = [&](std::uint64_t seq, const RatingTriple& t, const FactorModel<double>& model,
                       const CacheSet<double>&, const RatingStore& st) {
    auto it = seen.find(t.user);
    const std::size_t before = it == seen.end() ? 0 : it->second;
    EventRow row;
    row.seq = seq;
    row.user = t.user;
    row.item = t.item;
    row.rating = t.value;
    row.seen_before = before;
    row.cold_user = before <= 2;
    row.auc = event_auc_external(model, st, t, stream_rng, cfg.auc_sample);
    out.events.push_back(std::move(row));
    seen[t.user] = before + 1;
  };
  out.updates =
      replay_stream(fr.model, fr.caches, store, spec, blocks.test, update_cfg, stream_rng, hook);
  detail::finalize_auc_stats(out);
  return out;
}

// --- delayed updates ---------------------------------------------------------

struct DelayOutcome {
  std::size_t delay = 0;
  double mean_auc = 0.0;
  double cold_mean_auc = 0.0;
  std::size_t evaluated = 0;
  std::size_t cold_evaluated = 0;
  std::size_t skipped = 0;
  std::vector<EventRow> events;
};

/// Replay the test block with the model lagging d ratings behind: event i is
/// evaluated while only events up to i - d have been applied. The initial
/// factorization is shared across delays (it depends only on the seed).
inline std::vector<DelayOutcome> run_delayed(const TemporalBlocks& blocks, const LossSpec& spec,
                                             const DynamicConfig& cfg,
                                             const std::vector<std::size_t>& delays) {
  std::vector<RatingTriple> initial = blocks.training;
  initial.insert(initial.end(), blocks.validation.begin(), blocks.validation.end());
  const RatingStore base_store = build_store(initial);
  const auto base = factorize(base_store, spec, cfg.k, cfg.seed, cfg.ls, cfg.conv);
  const UpdateConfig update_cfg = detail::resolve_update_config(cfg, spec, base_store);

  std::vector<DelayOutcome> outcomes;
  outcomes.reserve(delays.size());
  for (std::size_t d : delays) {
    FactorModel<double> model = base.model;
    CacheSet<double> caches = base.caches;
    RatingStore store = base_store;
    Rng stream_rng(derive_seed(cfg.seed, detail::kStreamTag));
    auto seen = detail::arrival_counts(store);

    DelayOutcome res;
    res.delay = d;
    std::deque<RatingTriple> pending;
    std::uint64_t seq = 0;
    for (const RatingTriple& t : blocks.test) {
      auto it = seen.find(t.user);
      const std::size_t before = it == seen.end() ? 0 : it->second;
      EventRow row;
      row.seq = seq;
      row.user = t.user;
      row.item = t.item;
      row.rating = t.value;
      row.seen_before = before;
      row.cold_user = before <= 2;
      row.auc = event_auc_external(model, store, t, stream_rng, cfg.auc_sample);
      res.events.push_back(std::move(row));
      seen[t.user] = before + 1;
      pending.push_back(t);
      if (pending.size() > d) {
        update_with_rating(model, caches, store, spec, pending.front(), update_cfg, stream_rng);
        pending.pop_front();
      }
      ++seq;
    }
    double sum = 0.0, cold_sum = 0.0;
    for (const EventRow& e : res.events) {
      if (!e.auc) {
        ++res.skipped;
        continue;
      }
      sum += *e.auc;
      ++res.evaluated;
      if (e.cold_user) {
        cold_sum += *e.auc;
        ++res.cold_evaluated;
      }
    }
    res.mean_auc = res.evaluated ? sum / static_cast<double>(res.evaluated) : 0.0;
    res.cold_mean_auc =
        res.cold_evaluated ? cold_sum / static_cast<double>(res.cold_evaluated) : 0.0;
    outcomes.push_back(std::move(res));
  }
  return outcomes;
}

// --- parameter sweep ---------------------------------------------------------

struct ParamGrid {
  std::vector<Index> ks{5, 10, 20, 50, 100, 200};
  std::vector<double> lambdas{0.0, 0.01, 0.1, 1.0, 10.0};
  std::vector<double> rhos{0.3, 0.7, 1.0, 2.0};
};

inline ParamGrid default_grid(bool with_prior) {
  ParamGrid grid;
  if (!with_prior) grid.rhos = {0.0};
  return grid;
}

struct GridEntry {
  Index k = 0;
  double lambda = 0.0;
  double rho = 0.0;
  double metric = 0.0;
};

struct SweepResult {
  std::vector<GridEntry> entries;
  std::size_t best_index = 0;
};

namespace detail {

inline std::vector<GridEntry> expand_grid(const ParamGrid& grid) {
  std::vector<GridEntry> entries;
  entries.reserve(grid.ks.size() * grid.lambdas.size() * grid.rhos.size());
  for (Index k : grid.ks) {
    for (double lambda : grid.lambdas) {
      for (double rho : grid.rhos) entries.push_back({k, lambda, rho, 0.0});
    }
  }
  if (entries.empty()) throw std::invalid_argument("empty parameter grid");
  return entries;
}

template <class Fn>
void parallel_for(std::size_t count, int jobs, Fn&& fn) {
  if (jobs <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count || failed.load()) return;
      try {
        fn(i);
      } catch (...) {
        std::scoped_lock lock(error_mutex);
        if (!error) error = std::current_exception();
        failed.store(true);
        return;
      }
    }
  };
  std::vector<std::thread> threads;
  const std::size_t want = std::min<std::size_t>(static_cast<std::size_t>(jobs), count);
  threads.reserve(want);
  for (std::size_t t = 0; t < want; ++t) threads.emplace_back(worker);
  for (auto& th : threads) th.join();
  if (error) std::rethrow_exception(error);
}

inline std::size_t argmax_entry(const std::vector<GridEntry>& entries) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < entries.size(); ++i) {
    if (entries[i].metric > entries[best].metric) best = i;
  }
  return best;
}

}  // namespace detail

/// Grid search on the validation folds: each point is scored by the mean
/// full NDCG over the three folds. Points run independently, so --jobs
/// parallelism does not change the result.
inline SweepResult sweep_static(const StaticSplit& split, Loss kind, const ParamGrid& grid,
                                const ProtocolConfig& base, std::uint64_t seed, int jobs = 1) {
  SweepResult out;
  out.entries = detail::expand_grid(grid);
  detail::parallel_for(out.entries.size(), jobs, [&](std::size_t idx) {
    GridEntry& e = out.entries[idx];
    const LossSpec spec = LossSpec::make(kind, PriorForm::ratio, e.rho, 0.0, e.lambda);
    double sum = 0.0;
    for (std::size_t f = 0; f < split.validation_folds.size(); ++f) {
      const HoldoutSplit& fold = split.validation_folds[f];
      auto fr = factorize(fold.train, spec, e.k, derive_seed(seed, idx * 8 + f), base.ls,
                          base.conv);
      const auto metrics = evaluate_holdouts(fr.model, fold.train, fold.test, base.ndcg_k);
      double s = 0.0;
      std::size_t c = 0;
      for (const auto& um : metrics) {
        if (um.ndcg_full) {
          s += *um.ndcg_full;
          ++c;
        }
      }
      sum += c ? s / static_cast<double>(c) : 0.0;
    }
    e.metric = sum / static_cast<double>(split.validation_folds.size());
  });
  out.best_index = detail::argmax_entry(out.entries);
  return out;
}

/// Grid search for the dynamic protocol: factorize on the training block and
/// score each point by the mean event AUC over the validation block.
inline SweepResult sweep_dynamic(const TemporalBlocks& blocks, Loss kind, const ParamGrid& grid,
                                 const ProtocolConfig& base, std::uint64_t seed, int jobs = 1) {
  SweepResult out;
  out.entries = detail::expand_grid(grid);
  const RatingStore train_store = build_store(blocks.training);
  detail::parallel_for(out.entries.size(), jobs, [&](std::size_t idx) {
    GridEntry& e = out.entries[idx];
    const LossSpec spec = LossSpec::make(kind, PriorForm::ratio, e.rho, 0.0, e.lambda);
    RatingStore store = train_store;
    auto fr = factorize(store, spec, e.k, derive_seed(seed, idx * 8 + 7), base.ls, base.conv);
    Rng stream_rng(derive_seed(seed, idx * 8 + 5));
    UpdateConfig update_cfg;
    update_cfg.ls = base.ls;
    double sum = 0.0;
    std::size_t count = 0;
    EventHook hook = [&](std::uint64_t, const RatingTriple& t, const FactorModel<double>& model,
                         const CacheSet<double>&, const RatingStore& st) {
      if (auto auc = event_auc_external(model, st, t, stream_rng)) {
        sum += *auc;
        ++count;
      }
    };
    replay_stream(fr.model, fr.caches, store, spec, blocks.validation, update_cfg, stream_rng,
                  hook);
    e.metric = count ? sum / static_cast<double>(count) : 0.0;
  });
  out.best_index = detail::argmax_entry(out.entries);
  return out;
}

}  // namespace priormf
