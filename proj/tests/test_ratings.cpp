#include "priormf/ratings.hpp"

#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

using namespace priormf;

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
  const auto path = std::filesystem::temp_directory_path() / name;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << content;
  return path.string();
}

}  // namespace

TEST_SUITE("ratings") {

TEST_CASE("movielens dat line maps fields directly") {
  const auto path = write_temp("pm_ml.dat", "1::1193::5::978300760\n");
  const auto report = parse_ratings_file(path, RatingsFormat::movielens_dat);
  REQUIRE(report.triples.size() == 1);
  CHECK(report.triples[0].user == "1");
  CHECK(report.triples[0].item == "1193");
  CHECK(report.triples[0].value == 5.0);
  CHECK(report.triples[0].timestamp == 978300760);
  CHECK(report.malformed == 0);
}

TEST_CASE("empty file parses to nothing") {
  const auto path = write_temp("pm_empty.csv", "");
  const auto report = parse_ratings_file(path, RatingsFormat::csv);
  CHECK(report.triples.empty());
  CHECK(report.malformed == 0);
}

TEST_CASE("single malformed line in ten is reported with its number") {
  std::string content;
  for (int i = 1; i <= 10; ++i) {
    if (i == 4) {
      content += "u4,broken_line\n";
    } else {
      content += "u" + std::to_string(i) + ",it" + std::to_string(i) + ",3,100\n";
    }
  }
  const auto path = write_temp("pm_tenlines.csv", content);
  const auto report = parse_ratings_file(path, RatingsFormat::csv);
  CHECK(report.triples.size() == 9);
  CHECK(report.malformed == 1);
  REQUIRE(report.malformed_lines.size() == 1);
  CHECK(report.malformed_lines[0] == 4);
}

TEST_CASE("too many malformed lines is fatal") {
  std::string content;
  for (int i = 1; i <= 300; ++i) {
    content += (i % 50 == 0) ? "garbage\n"
                             : "u" + std::to_string(i) + ",it1,4,100\n";
  }
  const auto path = write_temp("pm_bad.csv", content);
  CHECK_THROWS_AS(parse_ratings_file(path, RatingsFormat::csv), DataError);
}

TEST_CASE("non-positive ratings are rejected as malformed") {
  const auto path = write_temp("pm_nonpos.tsv", "u1\tit1\t0\t5\nu2\tit2\t-1\t6\nu3\tit3\t2\t7\n");
  const auto report = parse_ratings_file(path, RatingsFormat::tsv);
  CHECK(report.triples.size() == 1);
  CHECK(report.malformed == 2);
}

TEST_CASE("csv header line is tolerated") {
  const auto path = write_temp("pm_header.csv", "user,item,rating,timestamp\nu1,it1,4,9\n");
  const auto report = parse_ratings_file(path, RatingsFormat::csv);
  CHECK(report.triples.size() == 1);
  CHECK(report.malformed == 0);
}

TEST_CASE("missing file is fatal") {
  CHECK_THROWS_AS(parse_ratings_file("/nonexistent/nowhere.csv", RatingsFormat::csv), DataError);
}

TEST_CASE("build_store keeps the dual index consistent") {
  RatingStore store = build_store({{"u1", "i1", 4, 1}, {"u1", "i2", 3, 2}});
  CHECK(store.count() == 2);
  CHECK(store.n_users() == 1);
  CHECK(store.m_items() == 2);
  CHECK(store.ratings_of_user(0).size() == 2);
  CHECK(store.ratings_of_item(0).size() == 1);
  CHECK(store.ratings_of_item(1).size() == 1);
}

TEST_CASE("duplicate pairs keep the latest timestamp") {
  RatingStore store = build_store({{"u1", "i1", 4, 1}, {"u1", "i1", 2, 9}});
  CHECK(store.count() == 1);
  CHECK(store.rating(0, 0) == 2.0);

  // out-of-order arrival: the later timestamp still wins
  RatingStore reversed = build_store({{"u1", "i1", 2, 9}, {"u1", "i1", 4, 1}});
  CHECK(reversed.rating(0, 0) == 2.0);
}

TEST_CASE("dual index holds the same multiset of ratings") {
  Rng rng(11);
  std::vector<RatingTriple> triples;
  for (int t = 0; t < 600; ++t) {
    triples.push_back({"u" + std::to_string(rng.below(40)), "it" + std::to_string(rng.below(25)),
                       1.0 + static_cast<double>(rng.below(5)),
                       static_cast<std::int64_t>(rng.below(1000))});
  }
  const RatingStore store = build_store(triples);
  std::multiset<std::tuple<Index, Index, double>> from_users, from_items;
  std::size_t user_total = 0, item_total = 0;
  for (Index i = 0; i < store.n_users(); ++i) {
    for (const auto& e : store.ratings_of_user(i)) from_users.insert({i, e.other, e.value});
    user_total += store.ratings_of_user(i).size();
  }
  for (Index j = 0; j < store.m_items(); ++j) {
    for (const auto& e : store.ratings_of_item(j)) from_items.insert({e.other, j, e.value});
    item_total += store.ratings_of_item(j).size();
  }
  CHECK(from_users == from_items);
  CHECK(user_total == store.count());
  CHECK(item_total == store.count());
}

TEST_CASE("static split halves a user's ratings by time") {
  RatingStore store = build_store({{"a", "i1", 1, 1},
                                   {"a", "i2", 2, 2},
                                   {"a", "i3", 3, 3},
                                   {"a", "i4", 4, 4},
                                   {"b", "i1", 5, 1},
                                   {"b", "i2", 5, 2}});
  const StaticSplit split = static_split(store, 2, 7);
  REQUIRE(split.test.size() == 2);
  for (const UserHoldout& h : split.test) {
    if (h.user == "a") {
      REQUIRE(h.ratings.size() == 2);
      CHECK(h.ratings[0].timestamp == 3);
      CHECK(h.ratings[1].timestamp == 4);
    } else {
      CHECK(h.ratings.size() == 1);  // odd counts leave the extra rating in train
    }
  }
  CHECK(split.validation_folds.size() == 3);
}

TEST_CASE("static split selects exactly the requested number of test users") {
  std::vector<RatingTriple> triples;
  for (int u = 0; u < 40; ++u) {
    for (int r = 0; r < 4; ++r) {
      triples.push_back({"u" + std::to_string(u), "it" + std::to_string((u * 7 + r * 3) % 30),
                         3.0, r});
    }
  }
  const RatingStore store = build_store(triples);
  const StaticSplit split = static_split(store, 25, 3);
  CHECK(split.test.size() == 25);
  for (const auto& h : split.test) CHECK(!h.ratings.empty());
}

TEST_CASE("static split is deterministic in the seed") {
  Rng rng(5);
  std::vector<RatingTriple> triples;
  for (int t = 0; t < 200; ++t) {
    triples.push_back({"u" + std::to_string(rng.below(30)), "it" + std::to_string(rng.below(40)),
                       1.0 + static_cast<double>(rng.below(5)),
                       static_cast<std::int64_t>(rng.below(500))});
  }
  const RatingStore store = build_store(triples);
  const StaticSplit a = static_split(store, 10, 42);
  const StaticSplit b = static_split(store, 10, 42);
  REQUIRE(a.test.size() == b.test.size());
  for (std::size_t i = 0; i < a.test.size(); ++i) {
    CHECK(a.test[i].user == b.test[i].user);
    CHECK(a.test[i].ratings.size() == b.test[i].ratings.size());
  }
  const StaticSplit c = static_split(store, 10, 43);
  bool identical = true;
  for (std::size_t i = 0; i < a.test.size() && i < c.test.size(); ++i) {
    identical = identical && a.test[i].user == c.test[i].user;
  }
  CHECK_FALSE(identical);
}

TEST_CASE("static split with too few eligible users is fatal") {
  RatingStore store = build_store({{"a", "i1", 1, 1}, {"a", "i2", 1, 2}, {"b", "i1", 1, 1}});
  CHECK_THROWS_AS(static_split(store, 2, 1), DataError);  // only "a" has two ratings
}

TEST_CASE("temporal blocks are time prefixes") {
  std::vector<RatingTriple> triples = {{"a", "i1", 1, 10},
                                       {"b", "i2", 2, 20},
                                       {"c", "i3", 3, 30},
                                       {"d", "i4", 4, 40}};
  const TemporalBlocks blocks = temporal_blocks(triples, 2, 1, 1);
  REQUIRE(blocks.training.size() == 2);
  CHECK(blocks.training[1].timestamp == 20);
  CHECK(blocks.validation[0].timestamp == 30);
  CHECK(blocks.test[0].timestamp == 40);
}

TEST_CASE("temporal blocks sort shuffled input and keep a permutation") {
  Rng rng(3);
  std::vector<RatingTriple> triples;
  for (int t = 0; t < 120; ++t) {
    triples.push_back({"u" + std::to_string(t % 11), "it" + std::to_string(t % 13), 2.0,
                       static_cast<std::int64_t>(rng.below(50))});
  }
  std::vector<RatingTriple> expected = triples;
  std::stable_sort(expected.begin(), expected.end(),
                   [](const RatingTriple& a, const RatingTriple& b) {
                     return a.timestamp < b.timestamp;
                   });
  const TemporalBlocks blocks = temporal_blocks(triples, 50, 30, 40);
  std::vector<RatingTriple> concat = blocks.training;
  concat.insert(concat.end(), blocks.validation.begin(), blocks.validation.end());
  concat.insert(concat.end(), blocks.test.begin(), blocks.test.end());
  REQUIRE(concat.size() == expected.size());
  for (std::size_t i = 0; i < concat.size(); ++i) {
    CHECK(concat[i].timestamp == expected[i].timestamp);
    CHECK(concat[i].user == expected[i].user);
    CHECK(concat[i].item == expected[i].item);
  }
}

TEST_CASE("temporal blocks fold surplus oldest ratings into training") {
  std::vector<RatingTriple> triples;
  for (int t = 0; t < 10; ++t) {
    triples.push_back({"u", "it" + std::to_string(t), 1.0, t});
  }
  const TemporalBlocks blocks = temporal_blocks(triples, 2, 3, 4);
  CHECK(blocks.training.size() == 3);  // 2 requested + 1 surplus
  CHECK(blocks.validation.size() == 3);
  CHECK(blocks.test.size() == 4);
  CHECK(blocks.test.back().timestamp == 9);
}

TEST_CASE("temporal blocks reject oversized configurations") {
  std::vector<RatingTriple> triples = {{"a", "i", 1, 1}};
  CHECK_THROWS_AS(temporal_blocks(triples, 1, 1, 1), DataError);
}

TEST_CASE("add_rating reports fresh users and items") {
  RatingStore store = build_store({{"u1", "i1", 3, 1}});
  const auto res = store.add({"u9", "i1", 4, 2});
  CHECK(res.new_user);
  CHECK_FALSE(res.new_item);
  CHECK(store.n_users() == 2);

  const auto dup = store.add({"u1", "i1", 1, 3});
  CHECK(dup.overwrote);
  CHECK(store.count() == 2);
  CHECK(store.rating(0, 0) == 1.0);
}

TEST_CASE("a thousand adds count distinct pairs only") {
  Rng rng(9);
  RatingStore store;
  std::set<std::pair<std::uint64_t, std::uint64_t>> distinct;
  for (int t = 0; t < 1000; ++t) {
    const auto u = rng.below(60);
    const auto i = rng.below(30);
    distinct.insert({u, i});
    store.add({"u" + std::to_string(u), "it" + std::to_string(i), 2.0,
               static_cast<std::int64_t>(t)});
  }
  CHECK(store.count() == distinct.size());
}

}  // TEST_SUITE
