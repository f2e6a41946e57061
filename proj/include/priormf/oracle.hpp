#pragma once

#include "priormf/eval.hpp"
#include "priormf/losses.hpp"
#include "priormf/model.hpp"
#include "priormf/ratings.hpp"

#include <cmath>
#include <optional>
#include <vector>

namespace priormf {

/// Literal O(nmk) evaluation of the objective and its gradients, summing over
/// every (user, item) pair from the definitions. Deliberately naive; used as
/// the ground truth by the equivalence tests and the verify command.
struct DenseEval {
  double objective = 0.0;
  Matrix grad_W, grad_H;
};

inline DenseEval dense_objective_and_grad(const FactorModel<double>& model,
                                          const RatingStore& store, const LossSpec& spec) {
  const Index n = model.n_users();
  const Index m = model.m_items();
  if (n * m > 10000) {
    throw std::invalid_argument("dense oracle limited to n*m <= 10,000 pairs");
  }
  const double alpha = effective_alpha(spec, n, m, store.count());
  const double r0 = spec.prior_value;
  const auto W = model.W();
  const auto H = model.H();

  DenseEval out;
  out.grad_W = Matrix::Zero(n, model.k());
  out.grad_H = Matrix::Zero(m, model.k());
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < m; ++j) {
      const double pred = W.row(i).dot(H.row(j));
      const std::optional<double> rated = store.rating(i, j);
      double term = 0.0;
      double dpred = 0.0;  // d(term)/d(pred)
      switch (spec.kind) {
        case Loss::squared: {
          if (rated) {
            term = (*rated - pred) * (*rated - pred);
            dpred = -2.0 * (*rated - pred);
          } else {
            term = alpha * (r0 - pred) * (r0 - pred);
            dpred = -2.0 * alpha * (r0 - pred);
          }
          break;
        }
        case Loss::absolute: {
          // true absolute value, no non-negativity shortcut
          if (rated) {
            term = std::abs(*rated - pred);
            dpred = detail::sgn(pred - *rated);
          } else {
            term = alpha * std::abs(pred);
            dpred = alpha * detail::sgn(pred);
          }
          break;
        }
        case Loss::generalized_kl: {
          if (rated) {
            term = *rated * std::log(*rated / pred) - *rated + pred;
            dpred = 1.0 - *rated / pred;
          } else {
            term = alpha * pred;  // limit value of the divergence at r = 0
            dpred = alpha;
          }
          break;
        }
      }
      out.objective += term;
      out.grad_W.row(i) += dpred * H.row(j);
      out.grad_H.row(j) += dpred * W.row(i);
    }
  }
  if (spec.l1 > 0.0) {
    out.objective += spec.l1 * (W.cwiseAbs().sum() + H.cwiseAbs().sum());
    if (spec.non_negative) {
      out.grad_W.array() += spec.l1;
      out.grad_H.array() += spec.l1;
    } else {
      out.grad_W += spec.l1 * W.unaryExpr([](double x) { return detail::sgn(x); });
      out.grad_H += spec.l1 * H.unaryExpr([](double x) { return detail::sgn(x); });
    }
  }
  return out;
}

struct BruteMetrics {
  std::optional<double> ndcg;
  std::optional<double> auc;
};

/// Metrics straight from the definitions by full enumeration: ranks are
/// found by pairwise counting and the AUC by comparing every positive /
/// negative pair. Limited to small candidate sets.
inline BruteMetrics brute_metrics(const RankingContext& ctx,
                                  std::optional<int> truncation = std::nullopt) {
  const std::size_t n = ctx.candidates.size();
  if (n > 50) throw std::invalid_argument("brute metrics limited to 50 candidates");
  BruteMetrics out;

  // rank of c = 1 + number of candidates strictly better under
  // (higher score, then lower item index)
  std::vector<std::size_t> rank(n, 1);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      if (b == a) continue;
      const bool better = ctx.scores[b] > ctx.scores[a] ||
                          (ctx.scores[b] == ctx.scores[a] && ctx.candidates[b] < ctx.candidates[a]);
      if (better) ++rank[a];
    }
  }
  bool any_positive = false;
  for (double rel : ctx.relevance) any_positive = any_positive || rel > 0.0;
  if (any_positive) {
    const std::size_t cutoff = truncation ? static_cast<std::size_t>(*truncation) : n;
    // gather (rank, gain) and sum in rank order
    std::vector<std::pair<std::size_t, double>> terms;
    for (std::size_t c = 0; c < n; ++c) {
      if (rank[c] <= cutoff) {
        terms.emplace_back(rank[c], std::pow(2.0, ctx.relevance[c]) - 1.0);
      }
    }
    std::sort(terms.begin(), terms.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    double dcg = 0.0;
    for (const auto& [r, gain] : terms) dcg += gain / std::log2(static_cast<double>(r) + 1.0);

    // ideal ordering: repeatedly extract the largest remaining relevance
    std::vector<double> rel = ctx.relevance;
    double idcg = 0.0;
    for (std::size_t pos = 1; pos <= std::min(cutoff, n); ++pos) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < rel.size(); ++c) {
        if (rel[c] > rel[best]) best = c;
      }
      idcg += (std::pow(2.0, rel[best]) - 1.0) / std::log2(static_cast<double>(pos) + 1.0);
      rel.erase(rel.begin() + static_cast<std::ptrdiff_t>(best));
      if (rel.empty()) break;
    }
    out.ndcg = dcg / idcg;
  }

  double wins = 0.0;
  std::size_t pairs = 0;
  for (std::size_t p = 0; p < n; ++p) {
    if (ctx.relevance[p] <= 0.0) continue;
    for (std::size_t q = 0; q < n; ++q) {
      if (ctx.relevance[q] > 0.0) continue;
      ++pairs;
      if (ctx.scores[p] > ctx.scores[q]) {
        wins += 1.0;
      } else if (ctx.scores[p] == ctx.scores[q]) {
        wins += 0.5;
      }
    }
  }
  if (pairs > 0) out.auc = wins / static_cast<double>(pairs);
  return out;
}

}  // namespace priormf
