#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "spillover/csv.hpp"
#include "spillover/dataset_io.hpp"
#include "spillover/domain.hpp"
#include "spillover/error.hpp"
#include "spillover/rng.hpp"
#include "toy.hpp"

namespace spill {
namespace {

using testing::make_toy;
using testing::ToySpec;

TEST(Distance, IdenticalPointsAreZero) { EXPECT_EQ(distance_km({37.5, -122.1}, {37.5, -122.1}), 0.0); }

TEST(Distance, AntipodalOnEquatorIsHalfCircumference) {
  EXPECT_NEAR(distance_km({0, 0}, {0, 180}), std::numbers::pi * 6371.0, 1e-6);
  EXPECT_NEAR(distance_km({0, 0}, {0, 180}), 20015.1, 0.05);
}

TEST(Distance, Symmetric) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> lat(-90, 90), lon(-180, 180);
  for (int i = 0; i < 1000; ++i) {
    LatLon a{lat(rng), lon(rng)}, b{lat(rng), lon(rng)};
    EXPECT_EQ(distance_km(a, b), distance_km(b, a));
  }
}

TEST(Date, ParsesAndFormats) {
  const auto d = Date::parse("2021-03-08");
  EXPECT_EQ(d.str(), "2021-03-08");
  EXPECT_EQ(d.weekday(), 0);
  EXPECT_EQ(Date::parse("2021-03-10").monday(), d);
  EXPECT_THROW(Date::parse("2021-13-01"), ValidationError);
  EXPECT_THROW(Date::parse("March 8"), ValidationError);
}

TEST(SizeClass, ThresholdIsStrict) {
  County c{"a", "a", 106000};
  EXPECT_EQ(c.size_class(), SizeClass::kSmall);
  c.population = 106001;
  EXPECT_EQ(c.size_class(), SizeClass::kLarge);
}

TEST(Condition, OrderedPair) {
  EXPECT_EQ(condition_of(Tier::kPurple, Tier::kPurple), Condition::kPP);
  EXPECT_EQ(condition_of(Tier::kPurple, Tier::kRed), Condition::kPR);
  EXPECT_EQ(condition_of(Tier::kRed, Tier::kPurple), Condition::kRP);
  EXPECT_EQ(condition_of(Tier::kRed, Tier::kRed), Condition::kRR);
  EXPECT_EQ(parse_condition("RP"), Condition::kRP);
}

TEST(DenseIndex, CountsTriplesAndResolvesZeros) {
  ToySpec spec;
  spec.counties = 1;
  spec.adjacent = {};
  spec.cbgs = 2;
  spec.pois = 3;
  spec.visits = [](int, int cbg, int poi) { return cbg == 1 && poi == 2 ? 1 : 0; };
  const auto data = make_toy(spec);
  int total = 0, ones = 0, zeros = 0;
  for (const auto& t : dense_index(data)) {
    ++total;
    (t.visits == 1 ? ones : zeros) += 1;
  }
  EXPECT_EQ(total, 6);
  EXPECT_EQ(ones, 1);
  EXPECT_EQ(zeros, 5);
}

TEST(DenseIndex, EmptyEdgeStoreIsAllZero) {
  ToySpec spec;
  spec.cbgs = 2;
  spec.pois = 2;
  spec.weeks = 2;
  const auto data = make_toy(spec);
  std::size_t total = 0;
  for (const auto& t : dense_index(data)) {
    EXPECT_EQ(t.visits, 0);
    ++total;
  }
  EXPECT_EQ(total, data.dense_size());
}

TEST(DenseIndex, SparseDenseConsistency) {
  ToySpec spec;
  spec.counties = 3;
  spec.adjacent = {{0, 1}, {1, 2}};
  spec.cbgs = 3;
  spec.pois = 4;
  spec.weeks = 3;
  spec.visits = [](int w, int i, int j) { return (w * 7 + i * 5 + j * 3) % 4; };
  const auto data = make_toy(spec);
  std::int64_t sum = 0;
  std::size_t count = 0;
  DenseTriple previous{-1, 0, 0, 0};
  for (const auto& t : dense_index(data)) {
    sum += t.visits;
    ++count;
    EXPECT_EQ(t.visits, spec.visits(t.week, t.cbg, t.poi));
    EXPECT_TRUE(std::tie(previous.week, previous.cbg, previous.poi) < std::tie(t.week, t.cbg, t.poi));
    previous = t;
  }
  EXPECT_EQ(count, 3u * 9 * 12);
  EXPECT_EQ(sum, data.total_visits());
}

TEST(Dataset, RejectsBrokenReferences) {
  ToySpec spec;
  auto data = make_toy(spec);
  data.edges.push_back({0, 0, 99, 1});
  EXPECT_THROW(data.finalize(), ValidationError);
}

TEST(Dataset, LargeCountyNeedsHealthEquity) {
  ToySpec spec;
  auto data = make_toy(spec);
  data.metrics[0].health_equity.reset();
  EXPECT_THROW(data.finalize(), ValidationError);
}

TEST(Dataset, RoundTripsThroughCsv) {
  ToySpec spec;
  spec.counties = 3;
  spec.adjacent = {{0, 1}, {0, 2}};
  spec.cbgs = 2;
  spec.pois = 2;
  spec.weeks = 2;
  spec.groups = {"a", "b"};
  spec.tiers = {Tier::kPurple, Tier::kRed, Tier::kPurple};
  spec.visits = [](int w, int i, int j) { return (w + i + j) % 3; };
  const auto data = make_toy(spec);
  const auto dir = std::filesystem::temp_directory_path() / "spillover_roundtrip";
  std::filesystem::remove_all(dir);
  save_dataset(data, dir);
  const auto loaded = load_dataset(dir);
  EXPECT_EQ(loaded.counties.size(), data.counties.size());
  EXPECT_EQ(loaded.edges.size(), data.edges.size());
  EXPECT_EQ(loaded.total_visits(), data.total_visits());
  EXPECT_TRUE(loaded.adjacency.adjacent(0, 2));
  EXPECT_FALSE(loaded.adjacency.adjacent(1, 2));
  // A second save is byte-identical.
  const auto again = std::filesystem::temp_directory_path() / "spillover_roundtrip2";
  std::filesystem::remove_all(again);
  save_dataset(loaded, again);
  for (const char* name : kDatasetFiles) EXPECT_EQ(read_file(dir / name), read_file(again / name)) << name;
}

TEST(Csv, QuotesOnlyWhenNeeded) {
  EXPECT_EQ(csv_escape("plain"), "plain");
  EXPECT_EQ(csv_escape("a,b"), "\"a,b\"");
  EXPECT_EQ(csv_escape("say \"hi\""), "\"say \"\"hi\"\"\"");
  EXPECT_THROW(parse_double("1.5x", "value"), ValidationError);
  EXPECT_EQ(parse_int("42", "value"), 42);
}

// Published known-answer vectors for Philox4x32-10.
TEST(Philox, KnownAnswers) {
  using C = Philox4x32::Counter;
  EXPECT_EQ(Philox4x32::generate(C{0, 0, 0, 0}, {0, 0}), (C{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8}));
  EXPECT_EQ(Philox4x32::generate(C{0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff}),
            (C{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd}));
  EXPECT_EQ(Philox4x32::generate(C{0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0}),
            (C{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1}));
}

TEST(CounterRng, StreamsAreReproducibleAndSeparated) {
  CounterRng a(5, RngPurpose::kVisits, 17), b(5, RngPurpose::kVisits, 17), c(5, RngPurpose::kBootstrap, 17);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a(), y = b(), z = c();
    EXPECT_EQ(x, y);
    differs |= x != z;
  }
  EXPECT_TRUE(differs);
}

TEST(CounterRng, DistributionMoments) {
  CounterRng rng(11, RngPurpose::kWorld);
  constexpr int n = 200000;
  double su = 0, sn = 0, sn2 = 0, sp = 0;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    su += u;
    const double z = rng.normal();
    sn += z;
    sn2 += z * z;
    sp += static_cast<double>(rng.poisson(3.5));
  }
  EXPECT_NEAR(su / n, 0.5, 4 * std::sqrt(1.0 / 12 / n));
  EXPECT_NEAR(sn / n, 0.0, 4 / std::sqrt(n));
  EXPECT_NEAR(sn2 / n, 1.0, 4 * std::sqrt(2.0 / n));
  EXPECT_NEAR(sp / n, 3.5, 4 * std::sqrt(3.5 / n));
}

TEST(CounterRng, BelowIsInRange) {
  CounterRng rng(2, RngPurpose::kPartition);
  std::vector<int> hits(7, 0);
  for (int i = 0; i < 7000; ++i) ++hits[rng.below(7)];
  for (int h : hits) EXPECT_GT(h, 800);
}

}  // namespace
}  // namespace spill
