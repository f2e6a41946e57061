#pragma once

#include "priormf/rng.hpp"
#include "priormf/types.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace priormf {

/// One observed rating. External ids are opaque strings so that both integer
/// MovieLens ids and alphanumeric Amazon ids work unchanged.
struct RatingTriple {
  std::string user;
  std::string item;
  double value = 0.0;
  std::int64_t timestamp = 0;
};

/// Entry of a per-user (per-item) rating list. `other` is the dense index of
/// the item (user) on the opposite side.
struct RatingEntry {
  Index other = 0;
  double value = 0.0;
  std::int64_t timestamp = 0;
};

enum class RatingsFormat { movielens_dat, csv, tsv };

struct ParseReport {
  std::vector<RatingTriple> triples;
  std::size_t lines = 0;
  std::size_t malformed = 0;
  std::vector<std::size_t> malformed_lines;  // first kMaxReported only
  static constexpr std::size_t kMaxReported = 64;
};

/// Dual-indexed sparse rating set: every rating is reachable from its user's
/// list and from its item's list; each (user, item) pair is stored once.
/// Single-writer, multi-reader: mutation must be serialized by the caller.
class RatingStore {
 public:
  struct AddResult {
    bool new_user = false;
    bool new_item = false;
    bool overwrote = false;
    Index user = 0;
    Index item = 0;
  };

  Index n_users() const { return static_cast<Index>(by_user_.size()); }
  Index m_items() const { return static_cast<Index>(by_item_.size()); }
  std::size_t count() const { return count_; }

  std::span<const RatingEntry> ratings_of_user(Index i) const {
    return {by_user_[static_cast<std::size_t>(i)]};
  }
  std::span<const RatingEntry> ratings_of_item(Index j) const {
    return {by_item_[static_cast<std::size_t>(j)]};
  }

  std::optional<Index> user_index(std::string_view id) const {
    auto it = user_index_.find(std::string(id));
    return it == user_index_.end() ? std::nullopt : std::optional<Index>(it->second);
  }
  std::optional<Index> item_index(std::string_view id) const {
    auto it = item_index_.find(std::string(id));
    return it == item_index_.end() ? std::nullopt : std::optional<Index>(it->second);
  }
  const std::string& user_id(Index i) const { return user_ids_[static_cast<std::size_t>(i)]; }
  const std::string& item_id(Index j) const { return item_ids_[static_cast<std::size_t>(j)]; }

  bool has_pair(Index user, Index item) const {
    return pair_pos_.find(pair_key(user, item)) != pair_pos_.end();
  }
  std::optional<double> rating(Index user, Index item) const {
    auto it = pair_pos_.find(pair_key(user, item));
    if (it == pair_pos_.end()) return std::nullopt;
    return by_user_[static_cast<std::size_t>(user)][it->second.first].value;
  }

  /// Insert or overwrite; O(1) amortized on both indexes.
  AddResult add(const RatingTriple& t) { return upsert(t, /*keep_latest=*/false); }

  /// Insert, resolving duplicate pairs to the latest timestamp.
  AddResult add_keep_latest(const RatingTriple& t) { return upsert(t, /*keep_latest=*/true); }

  /// All ratings with external ids, grouped by user in dense-index order.
  std::vector<RatingTriple> to_triples() const {
    std::vector<RatingTriple> out;
    out.reserve(count_);
    for (Index i = 0; i < n_users(); ++i) {
      for (const RatingEntry& e : by_user_[static_cast<std::size_t>(i)]) {
        out.push_back({user_id(i), item_id(e.other), e.value, e.timestamp});
      }
    }
    return out;
  }

 private:
  static std::uint64_t pair_key(Index user, Index item) {
    return (static_cast<std::uint64_t>(user) << 32) | static_cast<std::uint64_t>(item);
  }

  AddResult upsert(const RatingTriple& t, bool keep_latest) {
    AddResult res;
    res.user = intern(user_index_, user_ids_, by_user_, t.user, res.new_user);
    res.item = intern(item_index_, item_ids_, by_item_, t.item, res.new_item);
    const std::uint64_t key = pair_key(res.user, res.item);
    auto it = pair_pos_.find(key);
    if (it != pair_pos_.end()) {
      auto& ue = by_user_[static_cast<std::size_t>(res.user)][it->second.first];
      if (!keep_latest || t.timestamp >= ue.timestamp) {
        auto& ie = by_item_[static_cast<std::size_t>(res.item)][it->second.second];
        ue.value = ie.value = t.value;
        ue.timestamp = ie.timestamp = t.timestamp;
      }
      res.overwrote = true;
      return res;
    }
    auto& ulist = by_user_[static_cast<std::size_t>(res.user)];
    auto& ilist = by_item_[static_cast<std::size_t>(res.item)];
    pair_pos_.emplace(key, std::make_pair(ulist.size(), ilist.size()));
    ulist.push_back({res.item, t.value, t.timestamp});
    ilist.push_back({res.user, t.value, t.timestamp});
    ++count_;
    return res;
  }

  static Index intern(std::unordered_map<std::string, Index>& index,
                      std::vector<std::string>& ids,
                      std::vector<std::vector<RatingEntry>>& lists,
                      const std::string& id, bool& fresh) {
    auto [it, inserted] = index.try_emplace(id, static_cast<Index>(ids.size()));
    if (inserted) {
      ids.push_back(id);
      lists.emplace_back();
    }
    fresh = inserted;
    return it->second;
  }

  std::vector<std::vector<RatingEntry>> by_user_;
  std::vector<std::vector<RatingEntry>> by_item_;
  std::unordered_map<std::string, Index> user_index_, item_index_;
  std::vector<std::string> user_ids_, item_ids_;
  std::unordered_map<std::uint64_t, std::pair<std::size_t, std::size_t>> pair_pos_;
  std::size_t count_ = 0;
};

inline RatingStore build_store(const std::vector<RatingTriple>& triples) {
  RatingStore store;
  for (const RatingTriple& t : triples) store.add_keep_latest(t);
  return store;
}

namespace detail {

inline std::string_view strip(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline bool split_fields(std::string_view line, std::string_view sep,
                         std::array<std::string_view, 4>& out) {
  std::size_t field = 0;
  std::size_t pos = 0;
  while (field < 4) {
    const std::size_t next = line.find(sep, pos);
    if (next == std::string_view::npos) {
      if (field != 3) return false;
      out[field++] = strip(line.substr(pos));
      return true;
    }
    if (field == 3) return false;  // too many fields
    out[field++] = strip(line.substr(pos, next - pos));
    pos = next + sep.size();
  }
  return false;
}

inline bool parse_double(std::string_view s, double& out) {
  const char* end = s.data() + s.size();
  auto res = std::from_chars(s.data(), end, out);
  return res.ec == std::errc() && res.ptr == end && std::isfinite(out);
}

inline bool parse_int64(std::string_view s, std::int64_t& out) {
  const char* end = s.data() + s.size();
  auto res = std::from_chars(s.data(), end, out);
  return res.ec == std::errc() && res.ptr == end;
}

inline bool parse_line(std::string_view line, std::string_view sep, RatingTriple& t) {
  std::array<std::string_view, 4> f;
  if (!split_fields(line, sep, f)) return false;
  if (f[0].empty() || f[1].empty()) return false;
  if (!parse_double(f[2], t.value) || t.value <= 0.0) return false;
  if (!parse_int64(f[3], t.timestamp)) return false;
  t.user.assign(f[0]);
  t.item.assign(f[1]);
  return true;
}

}  // namespace detail

/// Parse a ratings file. Malformed lines are counted and reported; the parse
/// aborts when more than one line and more than 1% of all lines are malformed.
/// A leading csv header line is skipped.
inline ParseReport parse_ratings_file(const std::string& path, RatingsFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open ratings file: " + path);

  const std::string_view sep = format == RatingsFormat::movielens_dat ? "::"
                               : format == RatingsFormat::tsv         ? "\t"
                                                                      : ",";
  ParseReport report;
  std::string line;
  std::size_t line_no = 0;
  bool first_content_line = true;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view sv = detail::strip(line);
    if (sv.empty()) continue;
    ++report.lines;
    RatingTriple t;
    if (detail::parse_line(sv, sep, t)) {
      report.triples.push_back(std::move(t));
    } else if (first_content_line && format == RatingsFormat::csv) {
      // header tolerated
    } else {
      ++report.malformed;
      if (report.malformed_lines.size() < ParseReport::kMaxReported) {
        report.malformed_lines.push_back(line_no);
      }
    }
    first_content_line = false;
  }
  if (report.malformed > 1 &&
      static_cast<double>(report.malformed) > 0.01 * static_cast<double>(report.lines)) {
    std::ostringstream msg;
    msg << path << ": " << report.malformed << " of " << report.lines
        << " lines malformed; first bad lines:";
    for (std::size_t n : report.malformed_lines) msg << ' ' << n;
    throw DataError(msg.str());
  }
  return report;
}

/// Held-out (later-in-time) ratings of one test user, with external ids.
struct UserHoldout {
  std::string user;
  std::vector<RatingTriple> ratings;
};

struct HoldoutSplit {
  RatingStore train;
  std::vector<UserHoldout> test;
};

/// Train/test split plus the three train/validation folds used for tuning.
struct StaticSplit {
  RatingStore train;
  std::vector<UserHoldout> test;
  std::vector<HoldoutSplit> validation_folds;
};

namespace detail {

inline HoldoutSplit split_once(const RatingStore& store, Index n_test_users, std::uint64_t seed) {
  std::vector<Index> eligible;
  for (Index i = 0; i < store.n_users(); ++i) {
    if (store.ratings_of_user(i).size() >= 2) eligible.push_back(i);
  }
  if (n_test_users > static_cast<Index>(eligible.size())) {
    std::ostringstream msg;
    msg << "requested " << n_test_users << " test users but only " << eligible.size()
        << " users have at least 2 ratings";
    throw DataError(msg.str());
  }
  Rng rng(seed);
  shuffle(eligible, rng);
  eligible.resize(static_cast<std::size_t>(n_test_users));
  std::vector<bool> selected(static_cast<std::size_t>(store.n_users()), false);
  for (Index i : eligible) selected[static_cast<std::size_t>(i)] = true;

  HoldoutSplit out;
  std::vector<RatingTriple> train_triples;
  train_triples.reserve(store.count());
  std::vector<RatingEntry> sorted;
  for (Index i = 0; i < store.n_users(); ++i) {
    const auto list = store.ratings_of_user(i);
    if (!selected[static_cast<std::size_t>(i)]) {
      for (const RatingEntry& e : list) {
        train_triples.push_back({store.user_id(i), store.item_id(e.other), e.value, e.timestamp});
      }
      continue;
    }
    sorted.assign(list.begin(), list.end());
    // stable: timestamp ties keep input order
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const RatingEntry& a, const RatingEntry& b) { return a.timestamp < b.timestamp; });
    const std::size_t keep = (sorted.size() + 1) / 2;  // first half rounded up stays in train
    UserHoldout hold{store.user_id(i), {}};
    for (std::size_t p = 0; p < sorted.size(); ++p) {
      RatingTriple t{store.user_id(i), store.item_id(sorted[p].other), sorted[p].value,
                     sorted[p].timestamp};
      if (p < keep) {
        train_triples.push_back(std::move(t));
      } else {
        hold.ratings.push_back(std::move(t));
      }
    }
    out.test.push_back(std::move(hold));
  }
  out.train = build_store(train_triples);
  return out;
}

}  // namespace detail

/// Per selected user, the temporally first half of the ratings stays in
/// train and the rest is held out. Validation folds re-apply the procedure
/// to the train store with seeds seed+1, seed+2, seed+3.
inline StaticSplit static_split(const RatingStore& store, Index n_test_users, std::uint64_t seed) {
  StaticSplit split;
  HoldoutSplit main = detail::split_once(store, n_test_users, seed);
  split.train = std::move(main.train);
  split.test = std::move(main.test);
  for (std::uint64_t f = 1; f <= 3; ++f) {
    split.validation_folds.push_back(detail::split_once(split.train, n_test_users, seed + f));
  }
  return split;
}

/// Time-ordered blocks for the dynamic protocol. The blocks are anchored at
/// the end of the timeline: test takes the newest ratings, validation the
/// ones before, and any surplus oldest ratings are folded into training.
struct TemporalBlocks {
  std::vector<RatingTriple> training;
  std::vector<RatingTriple> validation;
  std::vector<RatingTriple> test;
};

inline TemporalBlocks temporal_blocks(std::vector<RatingTriple> triples,
                                      std::size_t train_size, std::size_t validation_size,
                                      std::size_t test_size) {
  if (train_size + validation_size + test_size > triples.size()) {
    std::ostringstream msg;
    msg << "block sizes " << train_size << "+" << validation_size << "+" << test_size
        << " exceed " << triples.size() << " ratings";
    throw DataError(msg.str());
  }
  std::stable_sort(triples.begin(), triples.end(),
                   [](const RatingTriple& a, const RatingTriple& b) { return a.timestamp < b.timestamp; });
  TemporalBlocks blocks;
  const std::size_t test_begin = triples.size() - test_size;
  const std::size_t val_begin = test_begin - validation_size;
  blocks.training.assign(triples.begin(), triples.begin() + static_cast<std::ptrdiff_t>(val_begin));
  blocks.validation.assign(triples.begin() + static_cast<std::ptrdiff_t>(val_begin),
                           triples.begin() + static_cast<std::ptrdiff_t>(test_begin));
  blocks.test.assign(triples.begin() + static_cast<std::ptrdiff_t>(test_begin), triples.end());
  return blocks;
}

}  // namespace priormf
