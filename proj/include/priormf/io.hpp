#pragma once

#include "priormf/eval.hpp"
#include "priormf/model.hpp"
#include "priormf/optimizer.hpp"

#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace priormf {

// --- deterministic number formatting -----------------------------------------

namespace detail {

/// Shortest round-trip decimal form; identical bytes for identical doubles.
inline std::string format_double(double x) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

}  // namespace detail

/// Minimal CSV assembly with stable formatting (no locale, shortest
/// round-trip doubles).
class CsvBuilder {
 public:
  explicit CsvBuilder(std::string header) { buf_.append(header).push_back('\n'); }

  CsvBuilder& field(const std::string& s) {
    sep();
    buf_.append(s);
    return *this;
  }
  CsvBuilder& field(double x) { return field(detail::format_double(x)); }
  CsvBuilder& field(std::int64_t x) { return field(std::to_string(x)); }
  CsvBuilder& field(std::uint64_t x) { return field(std::to_string(x)); }
  CsvBuilder& field(int x) { return field(std::to_string(x)); }
  CsvBuilder& field(bool b) { return field(std::string(b ? "1" : "0")); }
  CsvBuilder& field(const std::optional<double>& x) {
    if (x) return field(*x);
    sep();
    return *this;
  }

  CsvBuilder& endrow() {
    buf_.push_back('\n');
    first_ = true;
    return *this;
  }

  const std::string& str() const { return buf_; }

 private:
  void sep() {
    if (!first_) buf_.push_back(',');
    first_ = false;
  }
  std::string buf_;
  bool first_ = true;
};

// --- CSV renderings of the result structs ------------------------------------

inline std::string trace_csv(const TrainingTrace& trace) {
  CsvBuilder csv("epoch,objective,seconds");
  for (const EpochRecord& r : trace) {
    csv.field(r.epoch).field(r.objective).field(r.seconds).endrow();
  }
  return csv.str();
}

inline std::string static_users_csv(const StaticResult& result) {
  CsvBuilder csv("seed,user,ndcg,ndcg_ri,auc");
  for (const StaticUserRow& r : result.rows) {
    csv.field(r.seed).field(r.user).field(r.ndcg_full).field(r.ndcg_ri).field(r.auc).endrow();
  }
  return csv.str();
}

inline std::string static_summary_csv(const StaticResult& result) {
  CsvBuilder csv("metric,mean,stdev");
  csv.field(std::string("ndcg")).field(result.ndcg_mean).field(result.ndcg_std).endrow();
  csv.field(std::string("ndcg_ri")).field(result.ndcg_ri_mean).field(result.ndcg_ri_std).endrow();
  csv.field(std::string("auc")).field(result.auc_mean).field(result.auc_std).endrow();
  return csv.str();
}

inline std::string static_seeds_csv(const StaticResult& result) {
  CsvBuilder csv("seed,ndcg,ndcg_ri,auc,users,skipped_ndcg,skipped_ndcg_ri,skipped_auc");
  for (const StaticSeedStats& s : result.per_seed) {
    csv.field(s.seed)
        .field(s.ndcg)
        .field(s.ndcg_ri)
        .field(s.auc)
        .field(s.users)
        .field(s.skipped_ndcg)
        .field(s.skipped_ri)
        .field(s.skipped_auc)
        .endrow();
  }
  return csv.str();
}

inline std::string events_csv(const std::vector<EventRow>& events) {
  CsvBuilder csv("seq,user,item,rating,auc,cold_user,seen_before");
  for (const EventRow& e : events) {
    csv.field(e.seq)
        .field(e.user)
        .field(e.item)
        .field(e.rating)
        .field(e.auc)
        .field(e.cold_user)
        .field(e.seen_before)
        .endrow();
  }
  return csv.str();
}

inline std::string running_mean_csv(const std::vector<EventRow>& events) {
  CsvBuilder csv("seq,evaluated,mean_auc");
  double sum = 0.0;
  std::size_t count = 0;
  for (const EventRow& e : events) {
    if (e.auc) {
      sum += *e.auc;
      ++count;
    }
    csv.field(e.seq).field(count);
    if (count) {
      csv.field(sum / static_cast<double>(count));
    } else {
      csv.field(std::optional<double>{});
    }
    csv.endrow();
  }
  return csv.str();
}

/// Timing column `micros` is excluded from the reproducibility contract.
inline std::string updates_csv(const std::vector<UpdateReport>& reports) {
  CsvBuilder csv("seq,user,item,rating,rounds,new_user,new_item,micros");
  for (const UpdateReport& r : reports) {
    csv.field(r.seq)
        .field(r.user)
        .field(r.item)
        .field(r.rating)
        .field(r.rounds)
        .field(r.new_user)
        .field(r.new_item)
        .field(r.micros)
        .endrow();
  }
  return csv.str();
}

inline std::string delay_csv(const std::vector<DelayOutcome>& outcomes) {
  CsvBuilder csv("delay,mean_auc,cold_mean_auc,evaluated,cold_evaluated,skipped");
  for (const DelayOutcome& o : outcomes) {
    csv.field(o.delay)
        .field(o.mean_auc)
        .field(o.cold_mean_auc)
        .field(o.evaluated)
        .field(o.cold_evaluated)
        .field(o.skipped)
        .endrow();
  }
  return csv.str();
}

inline std::string grid_csv(const SweepResult& sweep) {
  CsvBuilder csv("k,lambda,rho,metric,best");
  for (std::size_t i = 0; i < sweep.entries.size(); ++i) {
    const GridEntry& e = sweep.entries[i];
    csv.field(static_cast<std::int64_t>(e.k))
        .field(e.lambda)
        .field(e.rho)
        .field(e.metric)
        .field(i == sweep.best_index)
        .endrow();
  }
  return csv.str();
}

// --- model checkpoint ---------------------------------------------------------

// Binary little-endian layout (documented in the README):
//   magic "PRIORMF1"            8 bytes
//   loss kind, prior form, non_negative, pad   4 x u8
//   prior_weight, prior_value, l1             3 x f64
//   k, n, m                                   3 x i64
//   W row-major n*k f64, H row-major m*k f64
//   rng state: u64 length + decimal text of the mt19937_64 stream
struct Checkpoint {
  FactorModel<double> model;
  LossSpec spec;
  std::mt19937_64 rng;
};

namespace detail {

template <class T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
void read_pod(std::istream& in, T& v) {
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const FactorModel<double>& model,
                            const LossSpec& spec, const std::mt19937_64& rng) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  out.write("PRIORMF1", 8);
  const std::uint8_t kind = static_cast<std::uint8_t>(spec.kind);
  const std::uint8_t form = static_cast<std::uint8_t>(spec.prior_form);
  const std::uint8_t nn = spec.non_negative ? 1 : 0;
  const std::uint8_t pad = 0;
  detail::write_pod(out, kind);
  detail::write_pod(out, form);
  detail::write_pod(out, nn);
  detail::write_pod(out, pad);
  detail::write_pod(out, spec.prior_weight);
  detail::write_pod(out, spec.prior_value);
  detail::write_pod(out, spec.l1);
  const std::int64_t k = model.k(), n = model.n_users(), m = model.m_items();
  detail::write_pod(out, k);
  detail::write_pod(out, n);
  detail::write_pod(out, m);
  const Matrix W = model.W();
  const Matrix H = model.H();
  out.write(reinterpret_cast<const char*>(W.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(n * k)));
  out.write(reinterpret_cast<const char*>(H.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m * k)));
  std::ostringstream rng_text;
  rng_text << rng;
  const std::string state = rng_text.str();
  const std::uint64_t len = state.size();
  detail::write_pod(out, len);
  out.write(state.data(), static_cast<std::streamsize>(state.size()));
  if (!out) throw DataError("short write while saving checkpoint: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "PRIORMF1", 8) != 0) {
    throw DataError("not a checkpoint file: " + path);
  }
  std::uint8_t kind = 0, form = 0, nn = 0, pad = 0;
  detail::read_pod(in, kind);
  detail::read_pod(in, form);
  detail::read_pod(in, nn);
  detail::read_pod(in, pad);
  Checkpoint cp;
  cp.spec.kind = static_cast<Loss>(kind);
  cp.spec.prior_form = static_cast<PriorForm>(form);
  cp.spec.non_negative = nn != 0;
  detail::read_pod(in, cp.spec.prior_weight);
  detail::read_pod(in, cp.spec.prior_value);
  detail::read_pod(in, cp.spec.l1);
  std::int64_t k = 0, n = 0, m = 0;
  detail::read_pod(in, k);
  detail::read_pod(in, n);
  detail::read_pod(in, m);
  if (!in || k < 1 || n < 0 || m < 0) throw DataError("corrupt checkpoint header: " + path);
  cp.model = FactorModel<double>(n, m, k);
  in.read(reinterpret_cast<char*>(cp.model.W().data()),
          static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(n * k)));
  in.read(reinterpret_cast<char*>(cp.model.H().data()),
          static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m * k)));
  std::uint64_t len = 0;
  detail::read_pod(in, len);
  if (!in || len > (1 << 20)) throw DataError("corrupt checkpoint rng state: " + path);
  std::string state(len, '\0');
  in.read(state.data(), static_cast<std::streamsize>(len));
  if (!in) throw DataError("truncated checkpoint: " + path);
  std::istringstream rng_text(state);
  rng_text >> cp.rng;
  return cp;
}

}  // namespace priormf
