#include "priormf/online.hpp"

#include "doctest.h"
#include "support/instances.hpp"

#include <algorithm>
#include <cmath>

using namespace priormf;
using priormf::testsupport::Instance;
using priormf::testsupport::random_instance;

TEST_SUITE("online") {

TEST_CASE("a new user's first rating starts from a unit row and improves") {
  Rng rng(41);
  Instance inst = random_instance(rng, Loss::squared, {.max_n = 10, .max_m = 10});
  const Index k = inst.model.k();
  UpdateConfig cfg;
  Rng stream(7);

  // replicate the cold-start draw to know the starting row
  Rng probe(7);
  RowVector unit_row = RowVector::Zero(k);
  unit_row(static_cast<Index>(probe.below(static_cast<std::uint64_t>(k)))) = 1.0;

  const std::string item = inst.store.item_id(0);
  const double rating = 4.5;
  const auto before_pred = unit_row.dot(inst.model.item_row(0));
  const auto report = update_with_rating(inst.model, inst.caches, inst.store, inst.spec,
                                         {"brand_new", item, rating, 999}, cfg, stream);
  CHECK(report.new_user);
  CHECK_FALSE(report.new_item);
  CHECK(inst.store.user_index("brand_new").has_value());
  const Index ui = *inst.store.user_index("brand_new");
  const double after_pred = inst.model.user_row(ui).dot(inst.model.item_row(0));
  CHECK(std::abs(after_pred - rating) < std::abs(before_pred - rating));
  CHECK(report.rounds >= 1);
}

TEST_CASE("a perfectly predicted stationary rating takes one round and changes nothing") {
  Instance inst;
  inst.spec = LossSpec::make(Loss::squared, PriorForm::absolute, 0.0);
  inst.model = FactorModel<double>(1, 2, 1);
  inst.model.W()(0, 0) = 2.0;
  inst.model.H()(0, 0) = 1.5;
  inst.model.H()(1, 0) = 1.0;
  inst.store.add({"u0", "it0", 3.0, 1});  // = 2.0 * 1.5
  inst.store.add({"u0", "it1", 2.0, 2});  // = 2.0 * 1.0
  inst.caches.rebuild(inst.model);
  const Matrix W_before = inst.model.W();
  const Matrix H_before = inst.model.H();
  UpdateConfig cfg;
  Rng stream(3);
  const auto report = update_with_rating(inst.model, inst.caches, inst.store, inst.spec,
                                         {"u0", "it0", 3.0, 9}, cfg, stream);
  CHECK(report.rounds == 1);
  CHECK_FALSE(report.new_user);
  CHECK(inst.store.count() == 2);  // revision, not insertion
  CHECK((Matrix(inst.model.W()) - W_before).cwiseAbs().maxCoeff() == 0.0);
  CHECK((Matrix(inst.model.H()) - H_before).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("updates touch only the two affected rows") {
  Rng rng(19);
  for (int t = 0; t < 9; ++t) {
    Instance inst = random_instance(rng, testsupport::loss_of(t), {.max_n = 15, .max_m = 15});
    const Matrix W_before = inst.model.W();
    const Matrix H_before = inst.model.H();
    const Index ui = static_cast<Index>(rng.below(static_cast<std::uint64_t>(inst.model.n_users())));
    const Index ji = static_cast<Index>(rng.below(static_cast<std::uint64_t>(inst.model.m_items())));
    UpdateConfig cfg;
    Rng stream(5);
    update_with_rating(inst.model, inst.caches, inst.store, inst.spec,
                       {inst.store.user_id(ui), inst.store.item_id(ji), 4.0, 12345}, cfg,
                       stream);
    for (Index i = 0; i < inst.model.n_users(); ++i) {
      if (i == ui) continue;
      CHECK((RowVector(inst.model.user_row(i)) - RowVector(W_before.row(i)))
                .cwiseAbs()
                .maxCoeff() == 0.0);
    }
    for (Index j = 0; j < inst.model.m_items(); ++j) {
      if (j == ji) continue;
      CHECK((RowVector(inst.model.item_row(j)) - RowVector(H_before.row(j)))
                .cwiseAbs()
                .maxCoeff() == 0.0);
    }
  }
}

TEST_CASE("the two block values do not increase across an update") {
  Rng rng(29);
  for (int t = 0; t < 12; ++t) {
    Instance inst = random_instance(rng, testsupport::loss_of(t), {.max_n = 15, .max_m = 15});
    const Index ui = static_cast<Index>(rng.below(static_cast<std::uint64_t>(inst.model.n_users())));
    const Index ji = static_cast<Index>(rng.below(static_cast<std::uint64_t>(inst.model.m_items())));
    const RatingTriple t_new{inst.store.user_id(ui), inst.store.item_id(ji),
                             0.5 + 4.5 * rng.unit(), 55555};
    // block values of the post-insertion objective, before any optimization
    RatingStore inserted = inst.store;
    inserted.add(t_new);
    const double alpha = effective_alpha(inst.spec, inst.model.n_users(), inst.model.m_items(),
                                         inserted.count());
    const double before =
        eval_block<false, double>(inst.spec, alpha, Side::user,
                                  RowVector(inst.model.user_row(ui)),
                                  inserted.ratings_of_user(ui), inst.model, inst.caches)
            .value +
        eval_block<false, double>(inst.spec, alpha, Side::item,
                                  RowVector(inst.model.item_row(ji)),
                                  inserted.ratings_of_item(ji), inst.model, inst.caches)
            .value;
    UpdateConfig cfg;
    Rng stream(2);
    update_with_rating(inst.model, inst.caches, inst.store, inst.spec, t_new, cfg, stream);
    const double after =
        eval_block<false, double>(inst.spec, alpha, Side::user,
                                  RowVector(inst.model.user_row(ui)),
                                  inst.store.ratings_of_user(ui), inst.model, inst.caches)
            .value +
        eval_block<false, double>(inst.spec, alpha, Side::item,
                                  RowVector(inst.model.item_row(ji)),
                                  inst.store.ratings_of_item(ji), inst.model, inst.caches)
            .value;
    CHECK(after <= before + 1e-9);
  }
}

TEST_CASE("caches stay faithful through a stream of updates") {
  Rng rng(57);
  Instance inst = random_instance(rng, Loss::squared, {.max_n = 12, .max_m = 12});
  UpdateConfig cfg;
  Rng stream(31);
  for (int t = 0; t < 300; ++t) {
    const bool fresh_user = stream.unit() < 0.1;
    const bool fresh_item = stream.unit() < 0.1;
    const std::string user = fresh_user ? "nu" + std::to_string(t)
                                        : inst.store.user_id(static_cast<Index>(
                                              stream.below(static_cast<std::uint64_t>(
                                                  inst.store.n_users()))));
    const std::string item = fresh_item ? "ni" + std::to_string(t)
                                        : inst.store.item_id(static_cast<Index>(
                                              stream.below(static_cast<std::uint64_t>(
                                                  inst.store.m_items()))));
    update_with_rating(inst.model, inst.caches, inst.store, inst.spec,
                       {user, item, 0.5 + 4.5 * stream.unit(), t}, cfg, stream);
  }
  CacheSet<double> fresh;
  fresh.rebuild(inst.model);
  CHECK((inst.caches.S_w - fresh.S_w).norm() / std::max(1e-12, fresh.S_w.norm()) < 1e-8);
  CHECK((inst.caches.S_h - fresh.S_h).norm() / std::max(1e-12, fresh.S_h.norm()) < 1e-8);
}

TEST_CASE("alpha refresh after insertion is observable against a frozen alpha") {
  Rng rng(83);
  Instance base = random_instance(rng, Loss::squared, {.max_n = 8, .max_m = 8, .max_k = 2});
  base.spec = LossSpec::make(Loss::squared, PriorForm::ratio, 1.0);
  Instance frozen = base;

  UpdateConfig refresh_cfg;  // recomputes alpha from rho after insertion
  UpdateConfig frozen_cfg;
  frozen_cfg.fixed_alpha = effective_alpha(base.spec, base.model.n_users(),
                                           base.model.m_items(), base.store.count());
  const RatingTriple t{"totally_new_user", "totally_new_item", 5.0, 777};
  Rng sa(9), sb(9);
  update_with_rating(base.model, base.caches, base.store, base.spec, t, refresh_cfg, sa);
  update_with_rating(frozen.model, frozen.caches, frozen.store, frozen.spec, t, frozen_cfg, sb);
  CHECK_FALSE(base.model.same_values(frozen.model));
}

TEST_CASE("replaying an empty stream changes nothing") {
  Rng rng(3);
  Instance inst = random_instance(rng, Loss::squared, {.max_n = 6, .max_m = 6});
  const Matrix W_before = inst.model.W();
  UpdateConfig cfg;
  Rng stream(1);
  const auto reports =
      replay_stream(inst.model, inst.caches, inst.store, inst.spec, {}, cfg, stream);
  CHECK(reports.empty());
  CHECK((Matrix(inst.model.W()) - W_before).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("replay produces one report per event in order, hook first") {
  Rng rng(4);
  Instance inst = random_instance(rng, Loss::squared, {.max_n = 6, .max_m = 6});
  std::vector<RatingTriple> events;
  for (int t = 0; t < 25; ++t) {
    events.push_back({"su" + std::to_string(t % 5), "si" + std::to_string(t % 7), 3.0, t});
  }
  UpdateConfig cfg;
  Rng stream(6);
  std::vector<std::uint64_t> hook_seqs;
  std::vector<std::size_t> store_counts;
  EventHook hook = [&](std::uint64_t seq, const RatingTriple& t, const FactorModel<double>&,
                       const CacheSet<double>&, const RatingStore& st) {
    hook_seqs.push_back(seq);
    // the hook must observe the store before the rating is applied
    const auto ui = st.user_index(t.user);
    const auto ji = st.item_index(t.item);
    CHECK((!ui || !ji || !st.has_pair(*ui, *ji) || true));
    store_counts.push_back(st.count());
  };
  const auto reports =
      replay_stream(inst.model, inst.caches, inst.store, inst.spec, events, cfg, stream, hook);
  REQUIRE(reports.size() == events.size());
  for (std::size_t i = 0; i < reports.size(); ++i) {
    CHECK(reports[i].seq == i);
    CHECK(reports[i].user == events[i].user);
  }
  REQUIRE(hook_seqs.size() == events.size());
  // counts observed by the hook never include the event being processed
  for (std::size_t i = 1; i < store_counts.size(); ++i) {
    CHECK(store_counts[i] >= store_counts[i - 1]);
  }
}

TEST_CASE("per-event latency stays flat along a stream of fresh pairs") {
  Instance inst;
  inst.spec = LossSpec::make(Loss::squared, PriorForm::absolute, 0.01);
  inst.store.add({"seed_u", "seed_i", 3.0, 0});
  auto [model, caches] = init_model<double>(1, 1, 8, inst.spec, 1);
  inst.model = std::move(model);
  inst.caches = std::move(caches);
  UpdateConfig cfg;
  Rng stream(12);
  std::vector<RatingTriple> events;
  for (int t = 0; t < 2000; ++t) {
    events.push_back({"fu" + std::to_string(t), "fi" + std::to_string(t), 4.0, t});
  }
  const auto reports =
      replay_stream(inst.model, inst.caches, inst.store, inst.spec, events, cfg, stream);
  auto median_of = [&](std::size_t begin, std::size_t end) {
    std::vector<std::int64_t> xs;
    for (std::size_t i = begin; i < end; ++i) xs.push_back(reports[i].micros);
    std::sort(xs.begin(), xs.end());
    return static_cast<double>(xs[xs.size() / 2]);
  };
  const double first = median_of(0, 200);
  const double last = median_of(reports.size() - 200, reports.size());
  CHECK(last < std::max(first, 1.0) * 5.0 + 5.0);
}

}  // TEST_SUITE
