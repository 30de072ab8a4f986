#include <gtest/gtest.h>

#include <filesystem>

#include "driftlab/world.hpp"
#include "driftlab/world_io.hpp"

using namespace driftlab;

namespace {

WorldConfig small_world() {
  WorldConfig c;
  c.train_speakers = 3;
  c.pool_speakers = 4;
  c.eval_speakers = 3;
  c.utterances_per_speaker = 4;
  c.enroll_per_speaker = 1;
  c.frames = 7;
  c.content_dim = 3;
  c.embed_dim = 5;
  c.signal_dim = 4;
  c.generator_hidden = 6;
  return c;
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("driftlab_test_world_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST(World, SameConfigGivesIdenticalWorld) {
  const Dataset a = generate_world(small_world());
  const Dataset b = generate_world(small_world());
  EXPECT_EQ(a.fingerprint, b.fingerprint);
  ASSERT_EQ(a.utterances.size(), b.utterances.size());
  for (std::size_t i = 0; i < a.utterances.size(); ++i) EXPECT_EQ(a.utterances[i].signal, b.utterances[i].signal);
}

TEST(World, SeedChangesEverything) {
  WorldConfig c = small_world();
  const Dataset a = generate_world(c);
  c.master_seed += 1;
  const Dataset b = generate_world(c);
  EXPECT_NE(a.fingerprint, b.fingerprint);
  EXPECT_NE(a.utterances[0].xvector, b.utterances[0].xvector);
}

TEST(World, ShapesAndInvariants) {
  const WorldConfig c = small_world();
  const Dataset ds = generate_world(c);
  ASSERT_EQ(ds.utterances.size(), static_cast<std::size_t>(c.total_speakers() * c.utterances_per_speaker));
  for (const Utterance& u : ds.utterances) {
    EXPECT_EQ(u.f0.rows(), 1u);
    EXPECT_EQ(u.f0.cols(), 7u);
    EXPECT_EQ(u.features.rows(), 3u);
    EXPECT_EQ(u.signal.rows(), 4u);
    EXPECT_NEAR(kernels::norm(u.xvector), 1.0, 1e-12);
    for (double f : u.f0.values()) EXPECT_GT(f, 0.0);
    EXPECT_TRUE(u.signal.all_finite());
    EXPECT_TRUE(u.features.all_finite());
  }
  for (const Speaker& s : ds.speakers) EXPECT_NEAR(kernels::norm(s.identity), 1.0, 1e-12);
}

TEST(World, PartitionsFollowSpeakerGroups) {
  const WorldConfig c = small_world();
  const Dataset ds = generate_world(c);
  EXPECT_EQ(ds.in(Partition::train).size(), 9u);
  EXPECT_EQ(ds.in(Partition::heldout).size(), 3u);
  EXPECT_EQ(ds.in(Partition::pool).size(), 16u);
  EXPECT_EQ(ds.in(Partition::enroll).size(), 3u);
  EXPECT_EQ(ds.in(Partition::trial).size(), 9u);
  EXPECT_EQ(ds.evaluation().size(), 12u);
  EXPECT_EQ(ds.at({8, 2}).partition, Partition::trial);
  EXPECT_THROW(ds.at({99, 0}), std::out_of_range);
}

TEST(World, UtteranceStreamsAreIndependentOfSpeakerCount) {
  // Adding eval speakers must not perturb the existing ones.
  WorldConfig c = small_world();
  const Dataset a = generate_world(c);
  c.eval_speakers = 5;
  const Dataset b = generate_world(c);
  EXPECT_EQ(a.at({0, 1}).features, b.at({0, 1}).features);
  EXPECT_EQ(a.at({0, 1}).signal, b.at({0, 1}).signal);
}

TEST(World, ZeroLeakageRemovesTheSpeakerTermFromFeatures) {
  WorldConfig c = small_world();
  c.leakage = 0.0;
  c.content_offset = 0.0;
  const Dataset ds = generate_world(c);
  // With no offset and no leak, feature rows are pure unit-variance noise around 0.
  double sum = 0.0;
  std::size_t n = 0;
  for (const Utterance& u : ds.utterances)
    for (double v : u.features.values()) sum += v, ++n;
  EXPECT_LT(std::abs(sum / static_cast<double>(n)), 0.1);
}

TEST(World, InvalidConfigIsRejected) {
  WorldConfig c = small_world();
  c.enroll_per_speaker = c.utterances_per_speaker;
  EXPECT_THROW(generate_world(c), ConfigError);
  c = small_world();
  c.eval_speakers = 1;
  EXPECT_THROW(generate_world(c), ConfigError);
  c = small_world();
  c.leakage = -1;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(World, PoolIsOneUnitVectorPerPoolSpeaker) {
  const Dataset ds = generate_world(small_world());
  const auto pool = build_pool(ds);
  ASSERT_EQ(pool.size(), 4u);
  for (const Tensor& p : pool) EXPECT_NEAR(kernels::norm(p), 1.0, 1e-12);
}

TEST(WorldIo, RoundTripIsExact) {
  const Dataset ds = generate_world(small_world());
  const auto dir = scratch("roundtrip");
  save_world(ds, dir);
  const Dataset back = load_world(dir);
  EXPECT_EQ(back.fingerprint, ds.fingerprint);
  for (std::size_t i = 0; i < ds.utterances.size(); ++i) {
    EXPECT_EQ(back.utterances[i].signal, ds.utterances[i].signal);
    EXPECT_EQ(back.utterances[i].f0, ds.utterances[i].f0);
    EXPECT_EQ(back.utterances[i].partition, ds.utterances[i].partition);
  }
  std::filesystem::remove_all(dir);
}

TEST(WorldIo, TamperedFileFailsTheFingerprint) {
  const Dataset ds = generate_world(small_world());
  const auto dir = scratch("tamper");
  save_world(ds, dir);
  std::string text = io::read_text(dir / "xvectors.csv");
  const auto pos = text.find('\n') + 1;
  const auto comma = text.find(',', text.find(',', pos) + 1) + 1;
  text[comma] = text[comma] == '1' ? '2' : '1';
  io::write_text(dir / "xvectors.csv", text);
  EXPECT_THROW(load_world(dir), ProvenanceError);
  std::filesystem::remove_all(dir);
}

TEST(WorldIo, UnknownConfigKeyIsAConfigError) {
  WorldConfig c;
  EXPECT_THROW(from_json(nlohmann::json{{"leakge", 0.1}}, c), ConfigError);
  from_json(nlohmann::json{{"leakage", 0.25}}, c);
  EXPECT_EQ(c.leakage, 0.25);
}

TEST(Io, DoubleFormattingRoundTrips) {
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    const double v = rng.normal() * std::pow(10.0, rng.uniform(-30, 30));
    EXPECT_EQ(io::parse_double(io::format_double(v)), v);
  }
  EXPECT_THROW(io::parse_double("1.5x"), std::runtime_error);
}

TEST(Rng, DerivedSeedsDifferAndRepeat) {
  EXPECT_EQ(derive_seed(7, {1, 2, 3}), derive_seed(7, {1, 2, 3}));
  EXPECT_NE(derive_seed(7, {1, 2, 3}), derive_seed(7, {1, 3, 2}));
  EXPECT_NE(derive_seed(7, {1}), derive_seed(8, {1}));
}

TEST(Rng, BelowStaysInRangeAndCoversIt) {
  Rng rng(3);
  std::vector<int> seen(7, 0);
  for (int i = 0; i < 7000; ++i) {
    const auto v = rng.below(7);
    ASSERT_LT(v, 7u);
    ++seen[v];
  }
  for (int c : seen) EXPECT_GT(c, 800);
}

TEST(Rng, NormalHasUnitMoments) {
  Rng rng(4);
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}
