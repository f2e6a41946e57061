// Command line surface for the prior-aware factorization library: ingestion,
// static training, online replay, delayed replay, parameter sweeps and the
// numerical self-check.

#include "priormf/eval.hpp"
#include "priormf/io.hpp"
#include "priormf/oracle.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

namespace {

using namespace priormf;
using nlohmann::json;

struct CommonOptions {
  std::string data;
  std::string format = "auto";
  std::string loss = "sl";
  Index k = 50;
  double rho = 1.0;
  double alpha = -1.0;  // <0 means "rho form"
  double prior_value = 0.0;
  double lambda = 0.0;
  std::uint64_t seed = 1;
  LineSearchConfig ls;
  ConvergenceConfig conv;
  std::string out = "out";
};

void add_common(CLI::App* cmd, CommonOptions& opt, bool with_data = true) {
  if (with_data) {
    cmd->add_option("--data", opt.data, "Ratings file")->required();
    cmd->add_option("--format", opt.format, "movielens-dat | csv | tsv (default: by extension)");
  }
  cmd->add_option("--loss", opt.loss, "sl | al | gkl")
      ->check(CLI::IsMember({"sl", "al", "gkl"}));
  cmd->add_option("--k", opt.k, "Latent dimension")->check(CLI::PositiveNumber);
  auto* rho = cmd->add_option("--rho", opt.rho, "Unknown/known influence ratio (default 1)");
  auto* alpha = cmd->add_option("--alpha", opt.alpha, "Per-pair prior weight in [0,1)");
  rho->excludes(alpha);
  alpha->excludes(rho);
  cmd->add_option("--r0", opt.prior_value, "Prior value for unknown ratings (sl only)");
  cmd->add_option("--lambda", opt.lambda, "L1 regularization coefficient");
  cmd->add_option("--seed", opt.seed, "Master seed; all sub-seeds derive from it");
  cmd->add_option("--ls-step", opt.ls.initial_step, "Line search initial step");
  cmd->add_option("--ls-shrink", opt.ls.shrink, "Line search shrink factor");
  cmd->add_option("--ls-c", opt.ls.armijo_c, "Armijo sufficient-decrease constant");
  cmd->add_option("--ls-max-halvings", opt.ls.max_halvings, "Line search trial budget");
  cmd->add_option("--rel-tol", opt.conv.rel_tol, "Relative objective tolerance per epoch");
  cmd->add_option("--max-epochs", opt.conv.max_epochs, "Epoch budget");
  cmd->add_option("--out", opt.out, "Output directory");
}

RatingsFormat resolve_format(const CommonOptions& opt) {
  if (opt.format == "movielens-dat") return RatingsFormat::movielens_dat;
  if (opt.format == "csv") return RatingsFormat::csv;
  if (opt.format == "tsv") return RatingsFormat::tsv;
  if (opt.format == "auto") {
    const auto ext = std::filesystem::path(opt.data).extension().string();
    if (ext == ".dat") return RatingsFormat::movielens_dat;
    if (ext == ".tsv") return RatingsFormat::tsv;
    return RatingsFormat::csv;
  }
  throw CLI::ValidationError("--format", "unknown format: " + opt.format);
}

LossSpec resolve_spec(const CommonOptions& opt) {
  const Loss kind = opt.loss == "sl"   ? Loss::squared
                    : opt.loss == "al" ? Loss::absolute
                                       : Loss::generalized_kl;
  if (opt.alpha >= 0.0) {
    return LossSpec::make(kind, PriorForm::absolute, opt.alpha, opt.prior_value, opt.lambda);
  }
  return LossSpec::make(kind, PriorForm::ratio, opt.rho, opt.prior_value, opt.lambda);
}

std::vector<RatingTriple> load_triples(const CommonOptions& opt) {
  const auto report = parse_ratings_file(opt.data, resolve_format(opt));
  if (report.malformed > 0) {
    std::cerr << "note: " << report.malformed << " malformed lines skipped\n";
  }
  if (report.triples.empty()) throw DataError(opt.data + ": no usable ratings");
  return report.triples;
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << content;
}

std::filesystem::path ensure_out(const CommonOptions& opt) {
  std::filesystem::path dir(opt.out);
  std::filesystem::create_directories(dir);
  return dir;
}

int cmd_factorize(const CommonOptions& opt) {
  const auto triples = load_triples(opt);
  const RatingStore store = build_store(triples);
  const LossSpec spec = resolve_spec(opt);
  const auto fr = factorize(store, spec, opt.k, opt.seed, opt.ls, opt.conv);
  const auto dir = ensure_out(opt);
  std::mt19937_64 stream_engine(derive_seed(opt.seed, 0x57a3));
  save_checkpoint((dir / "checkpoint.bin").string(), fr.model, spec, stream_engine);
  write_file(dir / "trace.csv", trace_csv(fr.trace));
  std::cout << "factorized " << store.count() << " ratings (" << store.n_users() << " users, "
            << store.m_items() << " items) in " << fr.trace.size() - 1 << " epochs; objective "
            << fr.trace.back().objective << "\n";
  return 0;
}

int cmd_eval_static(const CommonOptions& opt, Index test_users, int runs,
                    std::optional<int> ndcg_k) {
  const auto triples = load_triples(opt);
  const RatingStore store = build_store(triples);
  Index eligible = 0;
  for (Index i = 0; i < store.n_users(); ++i) {
    eligible += store.ratings_of_user(i).size() >= 2;
  }
  if (test_users > eligible) {
    std::cerr << "note: only " << eligible << " users have >= 2 ratings; using all of them\n";
    test_users = eligible;
  }
  const StaticSplit split = static_split(store, test_users, opt.seed);
  const LossSpec spec = resolve_spec(opt);
  ProtocolConfig cfg{opt.k, opt.ls, opt.conv, ndcg_k};
  std::vector<std::uint64_t> seeds;
  for (int r = 0; r < runs; ++r) seeds.push_back(derive_seed(opt.seed, 0x9000 + r));
  const StaticResult result = run_static(split, spec, cfg, seeds);
  const auto dir = ensure_out(opt);
  write_file(dir / "static_users.csv", static_users_csv(result));
  write_file(dir / "static_seeds.csv", static_seeds_csv(result));
  write_file(dir / "static_summary.csv", static_summary_csv(result));
  std::cout << "NDCG " << result.ndcg_mean << " +- " << result.ndcg_std << "\nNDCG-RI "
            << result.ndcg_ri_mean << " +- " << result.ndcg_ri_std << "\nAUC "
            << result.auc_mean << " +- " << result.auc_std << "\n";
  return 0;
}

TemporalBlocks blocks_from(const CommonOptions& opt, const std::vector<std::size_t>& sizes) {
  if (sizes.size() != 3) {
    throw CLI::ValidationError("--blocks", "expected train,validation,test sizes");
  }
  return temporal_blocks(load_triples(opt), sizes[0], sizes[1], sizes[2]);
}

DynamicConfig dynamic_config(const CommonOptions& opt, int max_rounds, double update_tol,
                             bool freeze_alpha, std::size_t auc_sample) {
  DynamicConfig cfg;
  cfg.k = opt.k;
  cfg.seed = opt.seed;
  cfg.ls = opt.ls;
  cfg.conv = opt.conv;
  cfg.update.max_rounds = max_rounds;
  cfg.update.rel_tol = update_tol;
  cfg.update.ls = opt.ls;
  cfg.freeze_alpha = freeze_alpha;
  cfg.auc_sample = auc_sample;
  return cfg;
}

int cmd_eval_dynamic(const CommonOptions& opt, const std::vector<std::size_t>& sizes,
                     const DynamicConfig& cfg) {
  const TemporalBlocks blocks = blocks_from(opt, sizes);
  const LossSpec spec = resolve_spec(opt);
  const DynamicResult result = run_dynamic(blocks, spec, cfg);
  const auto dir = ensure_out(opt);
  write_file(dir / "trace.csv", trace_csv(result.trace));
  write_file(dir / "events.csv", events_csv(result.events));
  write_file(dir / "running_mean.csv", running_mean_csv(result.events));
  write_file(dir / "updates.csv", updates_csv(result.updates));
  std::cout << "mean event AUC " << result.mean_auc << " over " << result.evaluated
            << " events (" << result.skipped << " skipped)\n";
  return 0;
}

int cmd_delay(const CommonOptions& opt, const std::vector<std::size_t>& sizes,
              const DynamicConfig& cfg, const std::vector<std::size_t>& delays,
              bool write_events) {
  const TemporalBlocks blocks = blocks_from(opt, sizes);
  const LossSpec spec = resolve_spec(opt);
  const auto outcomes = run_delayed(blocks, spec, cfg, delays);
  const auto dir = ensure_out(opt);
  write_file(dir / "delay_auc.csv", delay_csv(outcomes));
  if (write_events) {
    for (const auto& o : outcomes) {
      write_file(dir / ("delay_events_" + std::to_string(o.delay) + ".csv"),
                 events_csv(o.events));
    }
  }
  for (const auto& o : outcomes) {
    std::cout << "d=" << o.delay << " mean AUC " << o.mean_auc << " cold " << o.cold_mean_auc
              << "\n";
  }
  return 0;
}

int cmd_sweep(const CommonOptions& opt, const std::string& protocol,
              const std::vector<std::size_t>& sizes, Index test_users, bool with_prior,
              std::vector<Index> grid_k, std::vector<double> grid_lambda,
              std::vector<double> grid_rho, int jobs) {
  ParamGrid grid = default_grid(with_prior);
  if (!grid_k.empty()) grid.ks = grid_k;
  if (!grid_lambda.empty()) grid.lambdas = grid_lambda;
  if (!grid_rho.empty()) grid.rhos = grid_rho;
  const Loss kind = resolve_spec(opt).kind;
  ProtocolConfig base{opt.k, opt.ls, opt.conv, std::nullopt};

  SweepResult result;
  if (protocol == "static") {
    const auto triples = load_triples(opt);
    const RatingStore store = build_store(triples);
    const StaticSplit split = static_split(store, test_users, opt.seed);
    result = sweep_static(split, kind, grid, base, opt.seed, jobs);
  } else {
    const TemporalBlocks blocks = blocks_from(opt, sizes);
    result = sweep_dynamic(blocks, kind, grid, base, opt.seed, jobs);
  }
  const auto dir = ensure_out(opt);
  write_file(dir / "grid.csv", grid_csv(result));
  const GridEntry& best = result.entries[result.best_index];
  json best_json = {{"k", best.k},
                    {"lambda", best.lambda},
                    {"rho", best.rho},
                    {"metric", best.metric},
                    {"protocol", protocol},
                    {"selection", protocol == "static" ? "ndcg" : "auc"}};
  write_file(dir / "best.json", best_json.dump(2) + "\n");
  std::cout << "best: k=" << best.k << " lambda=" << best.lambda << " rho=" << best.rho
            << " metric=" << best.metric << "\n";
  return 0;
}

// Numerical self-check: oracle equivalence, gradient checks, cache fidelity
// and metric agreement on random instances. --corrupt-cache flips one cache
// entry first and must make the run fail.
int cmd_verify(const std::string& loss, int instances, std::uint64_t seed, bool corrupt_cache) {
  using testsupport_rng = Rng;
  testsupport_rng rng(seed);
  std::vector<Loss> kinds;
  if (loss == "all" || loss == "sl") kinds.push_back(Loss::squared);
  if (loss == "all" || loss == "al") kinds.push_back(Loss::absolute);
  if (loss == "all" || loss == "gkl") kinds.push_back(Loss::generalized_kl);
  if (kinds.empty()) throw CLI::ValidationError("--loss", "unknown loss: " + loss);

  double worst_objective = 0.0, worst_gradient = 0.0, worst_fd = 0.0, worst_cache = 0.0,
         worst_metric = 0.0;
  const auto rel = [](double a, double b) {
    return std::abs(a - b) / std::max(1.0, std::abs(b));
  };

  for (int t = 0; t < instances; ++t) {
    const Loss kind = kinds[static_cast<std::size_t>(t) % kinds.size()];
    const double tol = kind == Loss::generalized_kl ? 1e-7 : 1e-9;

    // random instance (same shape limits as the dense oracle guard)
    const Index n = 2 + static_cast<Index>(rng.below(29));
    const Index m = 2 + static_cast<Index>(rng.below(29));
    const Index k = 1 + static_cast<Index>(rng.below(5));
    const double alpha = 0.9 * rng.unit();
    const double lambda = rng.unit() < 0.5 ? 0.1 : 0.0;
    const LossSpec spec = LossSpec::make(kind, PriorForm::absolute, alpha, 0.0, lambda);
    RatingStore store;
    for (Index i = 0; i < n; ++i) {
      for (Index j = 0; j < m; ++j) {
        if (rng.unit() < 0.3) {
          store.add({"u" + std::to_string(i), "it" + std::to_string(j), 0.5 + 4.5 * rng.unit(),
                     static_cast<std::int64_t>(rng.below(1000))});
        }
      }
    }
    if (store.count() == 0) store.add({"u0", "it0", 3.0, 1});
    auto [model, caches] =
        init_model<double>(store.n_users(), store.m_items(), k, spec, rng.raw());
    if (corrupt_cache) caches.S_h(0, 0) += 1e-3;

    // cache fidelity
    CacheSet<double> fresh;
    fresh.rebuild(model);
    worst_cache = std::max(worst_cache, (caches.S_h - fresh.S_h).norm() /
                                            std::max(1e-12, fresh.S_h.norm()));

    // objective and block equivalence against the dense oracle
    const auto dense = dense_objective_and_grad(model, store, spec);
    const double fast = total_objective(model, caches, store, spec);
    worst_objective = std::max(worst_objective, rel(fast, dense.objective));

    const double a = effective_alpha(spec, model.n_users(), model.m_items(), store.count());
    for (Index i = 0; i < model.n_users(); ++i) {
      const RowVector w = model.user_row(i);
      const auto block = eval_block<true, double>(spec, a, Side::user, w,
                                                  store.ratings_of_user(i), model, caches);
      worst_gradient = std::max(
          worst_gradient, (block.gradient - RowVector(dense.grad_W.row(i))).norm() /
                              std::max(1.0, RowVector(dense.grad_W.row(i)).norm()));
      // central finite differences on the block value; absolute-loss rows are
      // checked only away from the |.| kinks
      bool near_kink = false;
      if (kind == Loss::absolute) {
        for (const auto& e : store.ratings_of_user(i)) {
          near_kink = near_kink ||
                      std::abs(e.value - w.dot(model.item_row(e.other))) < 1e-4;
        }
      }
      if (!near_kink) {
        RowVector fd(k);
        for (Index c = 0; c < k; ++c) {
          const double h = 1e-6 * std::max(1.0, std::abs(w(c)));
          RowVector wp = w, wm = w;
          wp(c) += h;
          wm(c) -= h;
          fd(c) = (eval_block<false, double>(spec, a, Side::user, wp, store.ratings_of_user(i),
                                             model, caches)
                       .value -
                   eval_block<false, double>(spec, a, Side::user, wm, store.ratings_of_user(i),
                                             model, caches)
                       .value) /
                  (2.0 * h);
        }
        worst_fd =
            std::max(worst_fd, (fd - block.gradient).norm() /
                                   std::max(1e-6, block.gradient.norm()));
      }
    }
    if (worst_objective > tol) {
      throw NumericalError("objective mismatch " + std::to_string(worst_objective));
    }

    // a quick metric agreement probe
    RankingContext ctx;
    const std::size_t cands = 2 + rng.below(18);
    for (std::size_t c = 0; c < cands; ++c) {
      ctx.candidates.push_back(static_cast<Index>(c));
      ctx.scores.push_back(static_cast<double>(rng.below(5)));
      ctx.relevance.push_back(rng.unit() < 0.4 ? static_cast<double>(1 + rng.below(5)) : 0.0);
    }
    const auto bm = brute_metrics(ctx);
    if (bm.ndcg) worst_metric = std::max(worst_metric, std::abs(*bm.ndcg - *ndcg(ctx)));
    if (bm.auc) worst_metric = std::max(worst_metric, std::abs(*bm.auc - *auc_static(ctx)));
  }

  std::cout << "instances checked:        " << instances << "\n"
            << "max objective rel error:  " << worst_objective << "\n"
            << "max gradient rel error:   " << worst_gradient << "\n"
            << "max fin-diff rel error:   " << worst_fd << "\n"
            << "max cache drift:          " << worst_cache << "\n"
            << "max metric disagreement:  " << worst_metric << "\n";
  if (worst_gradient > 1e-9 || worst_fd > 1e-5 || worst_cache > 1e-8 || worst_metric > 0.0) {
    throw NumericalError("verification failed");
  }
  std::cout << "all checks passed\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse matrix factorization with a prior on unknown ratings"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Read options from an INI file");

  CommonOptions fact_opt;
  auto* fact = app.add_subcommand("factorize", "Train a static factorization");
  add_common(fact, fact_opt);

  CommonOptions st_opt;
  Index test_users = 1000;
  int runs = 10;
  int ndcg_k = 0;
  auto* st = app.add_subcommand("eval-static", "Held-out ranking evaluation");
  add_common(st, st_opt);
  st->add_option("--test-users", test_users, "Users whose later half is held out");
  st->add_option("--runs", runs, "Independent factorization runs to average");
  st->add_option("--ndcg-k", ndcg_k, "NDCG truncation; 0 = full list");

  CommonOptions dyn_opt;
  std::vector<std::size_t> block_sizes{500000, 100000, 100000};
  int max_rounds = 10;
  double update_tol = 1e-3;
  bool freeze_alpha = false;
  std::size_t auc_sample = 0;
  auto* dyn = app.add_subcommand("eval-dynamic", "Per-event AUC over a replayed test block");
  add_common(dyn, dyn_opt);
  dyn->add_option("--blocks", block_sizes, "train,validation,test block sizes")
      ->delimiter(',');
  dyn->add_option("--update-rounds", max_rounds, "Alternating round budget per update");
  dyn->add_option("--update-tol", update_tol, "Relative improvement tolerance per round");
  dyn->add_flag("--freeze-alpha", freeze_alpha, "Keep alpha at its initial-training value");
  dyn->add_option("--auc-sample", auc_sample, "Candidate subsample per event; 0 = full");

  CommonOptions del_opt;
  std::vector<std::size_t> del_blocks{500000, 100000, 100000};
  std::vector<std::size_t> delays{0, 5, 10, 1000};
  int del_rounds = 10;
  double del_tol = 1e-3;
  bool del_freeze = false;
  std::size_t del_sample = 0;
  bool write_events = false;
  auto* del = app.add_subcommand("delay", "Replay with the model d ratings behind");
  add_common(del, del_opt);
  del->add_option("--blocks", del_blocks, "train,validation,test block sizes")->delimiter(',');
  del->add_option("--delays", delays, "Delays d to evaluate")->delimiter(',');
  del->add_option("--update-rounds", del_rounds, "Alternating round budget per update");
  del->add_option("--update-tol", del_tol, "Relative improvement tolerance per round");
  del->add_flag("--freeze-alpha", del_freeze, "Keep alpha at its initial-training value");
  del->add_option("--auc-sample", del_sample, "Candidate subsample per event; 0 = full");
  del->add_flag("--write-events", write_events, "Also write per-event CSVs per delay");

  CommonOptions sw_opt;
  std::string protocol = "static";
  std::vector<std::size_t> sw_blocks{500000, 100000, 100000};
  Index sw_test_users = 1000;
  bool no_prior = false;
  std::vector<Index> grid_k;
  std::vector<double> grid_lambda, grid_rho;
  int jobs = 1;
  auto* sw = app.add_subcommand("sweep", "Grid search on the validation data");
  add_common(sw, sw_opt);
  sw->add_option("--protocol", protocol, "static | dynamic")
      ->check(CLI::IsMember({"static", "dynamic"}));
  sw->add_option("--blocks", sw_blocks, "Dynamic protocol block sizes")->delimiter(',');
  sw->add_option("--test-users", sw_test_users, "Static protocol held-out users");
  sw->add_flag("--no-prior", no_prior, "Sweep without the prior (rho = 0)");
  sw->add_option("--grid-k", grid_k, "Latent dimensions to try")->delimiter(',');
  sw->add_option("--grid-lambda", grid_lambda, "L1 coefficients to try")->delimiter(',');
  sw->add_option("--grid-rho", grid_rho, "Influence ratios to try")->delimiter(',');
  sw->add_option("--jobs", jobs, "Parallel workers across grid points");

  std::string verify_loss = "all";
  int verify_instances = 60;
  std::uint64_t verify_seed = 1;
  bool corrupt_cache = false;
  auto* ver = app.add_subcommand("verify", "Oracle equivalence and gradient checks");
  ver->add_option("--loss", verify_loss, "sl | al | gkl | all");
  ver->add_option("--instances", verify_instances, "Random instances to generate");
  ver->add_option("--seed", verify_seed, "Seed for the random instances");
  ver->add_flag("--corrupt-cache", corrupt_cache,
                "Perturb a cache entry first (the run must then fail)");

  try {
    app.parse(argc, argv);
    if (fact->parsed()) return cmd_factorize(fact_opt);
    if (st->parsed()) {
      return cmd_eval_static(st_opt, test_users, runs,
                             ndcg_k > 0 ? std::optional<int>(ndcg_k) : std::nullopt);
    }
    if (dyn->parsed()) {
      return cmd_eval_dynamic(dyn_opt, block_sizes,
                              dynamic_config(dyn_opt, max_rounds, update_tol, freeze_alpha,
                                             auc_sample));
    }
    if (del->parsed()) {
      return cmd_delay(del_opt, del_blocks,
                       dynamic_config(del_opt, del_rounds, del_tol, del_freeze, del_sample),
                       delays, write_events);
    }
    if (sw->parsed()) {
      return cmd_sweep(sw_opt, protocol, sw_blocks, sw_test_users, !no_prior, grid_k,
                       grid_lambda, grid_rho, jobs);
    }
    if (ver->parsed()) return cmd_verify(verify_loss, verify_instances, verify_seed, corrupt_cache);
    return 1;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid configuration: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
