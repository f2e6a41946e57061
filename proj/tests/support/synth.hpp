#pragma once

#include "priormf/ratings.hpp"
#include "priormf/rng.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace priormf::testsupport {

/// Synthetic explicit-feedback ratings with the structure the protocols
/// need: low-rank taste, popularity skew, users who choose what they rate
/// (ratings are missing not at random), 1-5 star values and per-user arrival
/// times so that new users and items keep appearing over the stream.
struct SynthConfig {
  Index n_users = 1500;
  Index n_items = 2200;
  std::size_t target_ratings = 100000;
  Index k_true = 8;
  double selection_strength = 1.5;  // how strongly users pick items they like
  double popularity_sigma = 1.0;
  double rating_noise = 0.4;
  std::uint64_t seed = 1;
  std::size_t min_per_user = 3;
  std::size_t burst_ratings = 4;  // ratings given back-to-back right after signup
};

namespace detail {

inline double normal(Rng& rng) {
  // Box-Muller; u1 kept away from 0
  const double u1 = std::max(rng.unit(), 1e-12);
  const double u2 = rng.unit();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

}  // namespace detail

inline std::vector<RatingTriple> synth_ratings(const SynthConfig& cfg) {
  Rng rng(cfg.seed);
  const Index n = cfg.n_users, m = cfg.n_items, k = cfg.k_true;
  const double inv_sqrt_k = 1.0 / std::sqrt(static_cast<double>(k));

  std::vector<double> user_taste(static_cast<std::size_t>(n * k));
  for (double& x : user_taste) x = detail::normal(rng);
  std::vector<double> item_taste(static_cast<std::size_t>(m * k));
  for (double& x : item_taste) x = detail::normal(rng);
  std::vector<double> popularity(static_cast<std::size_t>(m));
  for (double& p : popularity) p = std::exp(cfg.popularity_sigma * detail::normal(rng));

  // per-user activity, rescaled to the requested rating count
  std::vector<double> activity(static_cast<std::size_t>(n));
  double activity_sum = 0.0;
  for (double& a : activity) {
    a = std::exp(0.8 * detail::normal(rng));
    activity_sum += a;
  }
  // Users join the system over time; whoever joins close to the end of the
  // observation window has had time for only a few ratings, which is what
  // produces genuinely cold users late in the stream.
  constexpr double kFullWindow = 0.35;
  std::vector<double> entry(static_cast<std::size_t>(n));
  std::vector<double> window(static_cast<std::size_t>(n));
  std::vector<std::size_t> per_user(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const std::size_t s = static_cast<std::size_t>(i);
    entry[s] = rng.unit();
    window[s] = std::min(kFullWindow, 1.0 - entry[s]);
    const double tenure = window[s] / kFullWindow;
    const double share = activity[s] / activity_sum * static_cast<double>(cfg.target_ratings) /
                         (1.0 - kFullWindow / 2.0);
    per_user[s] = std::max<std::size_t>(
        cfg.min_per_user,
        std::min<std::size_t>(static_cast<std::size_t>(m / 2),
                              static_cast<std::size_t>(std::llround(share * tenure))));
  }

  auto affinity = [&](Index i, Index j) {
    double dot = 0.0;
    for (Index c = 0; c < k; ++c) {
      dot += user_taste[static_cast<std::size_t>(i * k + c)] *
             item_taste[static_cast<std::size_t>(j * k + c)];
    }
    return dot * inv_sqrt_k;
  };

  std::vector<RatingTriple> triples;
  triples.reserve(cfg.target_ratings + static_cast<std::size_t>(n));
  std::vector<double> cumulative(static_cast<std::size_t>(m));
  std::vector<char> taken(static_cast<std::size_t>(m));
  for (Index i = 0; i < n; ++i) {
    // users rate what they chose to consume: weight by popularity and taste
    double acc = 0.0;
    for (Index j = 0; j < m; ++j) {
      const double a = std::clamp(affinity(i, j), -8.0, 8.0);
      acc += popularity[static_cast<std::size_t>(j)] * std::exp(cfg.selection_strength * a);
      cumulative[static_cast<std::size_t>(j)] = acc;
    }
    std::fill(taken.begin(), taken.end(), 0);
    const std::size_t s = static_cast<std::size_t>(i);
    const std::size_t want = per_user[s];
    std::size_t got = 0;
    std::size_t attempts = 0;
    while (got < want && attempts < want * 40 + 200) {
      ++attempts;
      const double u = rng.unit() * acc;
      const auto it = std::lower_bound(cumulative.begin(), cumulative.end(), u);
      Index j = static_cast<Index>(it - cumulative.begin());
      if (j >= m) j = m - 1;
      if (taken[static_cast<std::size_t>(j)]) continue;
      taken[static_cast<std::size_t>(j)] = 1;
      const double score = affinity(i, j) + cfg.rating_noise * detail::normal(rng);
      const double stars = std::clamp(std::round(3.0 + 1.4 * score), 1.0, 5.0);
      // the first few ratings arrive as one quick onboarding burst, the rest
      // spread over the user's tenure
      const double when = got < cfg.burst_ratings
                              ? entry[s] + 1e-5 * static_cast<double>(got + 1)
                              : entry[s] + window[s] * rng.unit();
      RatingTriple t;
      t.user = "u" + std::to_string(i);
      t.item = "it" + std::to_string(j);
      t.value = stars;
      t.timestamp = static_cast<std::int64_t>(when * 10000000.0);
      triples.push_back(std::move(t));
      ++got;
    }
  }
  return triples;
}

}  // namespace priormf::testsupport
