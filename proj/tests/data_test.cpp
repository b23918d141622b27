#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "dmg/data.hpp"
#include "dmg/ops.hpp"
#include "dmg/optim.hpp"
#include "testutil.hpp"

using namespace dmg;
namespace fs = std::filesystem;

static SyntheticSpec blobs_spec() {
  SyntheticSpec spec;
  spec.family = SyntheticSpec::Family::specific_blobs;
  spec.p = 3;
  spec.q = 0;
  spec.n_classes = 4;
  spec.n_per_domain = 100;
  spec.shared_dims = 8;
  spec.specific_dims = 4;
  spec.noise_sigma = 1.0;
  spec.seed = 7;
  return spec;
}

static fs::path temp_dir(const std::string& tag) {
  fs::path dir = fs::temp_directory_path() / ("dmg_data_test_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// ---------------------------------------------------------------------------
// specific-blobs
// ---------------------------------------------------------------------------

TEST(SpecificBlobs, DimensionalBookkeeping) {
  DomainSuite suite = gen_specific_blobs(blobs_spec());
  ASSERT_EQ(suite.sources.size(), 3u);
  EXPECT_EQ(suite.targets.size(), 0u);
  EXPECT_EQ(suite.feature_dim, 8u + 3u * 4u);
  for (const auto& d : suite.sources) {
    EXPECT_EQ(d.x.rows(), 100u);
    EXPECT_EQ(d.x.cols(), 20u);
  }
}

TEST(SpecificBlobs, NoiselessOracleIsPerfect) {
  SyntheticSpec spec = blobs_spec();
  spec.noise_sigma = 0.0;
  DomainSuite suite = gen_specific_blobs(spec);
  for (const auto& d : suite.sources)
    EXPECT_EQ(bayes_oracle_accuracy(suite, d.domain_id), 1.0);
}

TEST(SpecificBlobs, RegenerationIsBitIdentical) {
  DomainSuite a = gen_specific_blobs(blobs_spec());
  DomainSuite b = gen_specific_blobs(blobs_spec());
  for (std::size_t j = 0; j < a.sources.size(); ++j) {
    EXPECT_TRUE(dmgtest::bit_equal(a.sources[j].x, b.sources[j].x));
    EXPECT_EQ(a.sources[j].y, b.sources[j].y);
    EXPECT_EQ(a.sources[j].split, b.sources[j].split);
  }
}

TEST(SpecificBlobs, HugeNoiseDropsOracleTowardChance) {
  SyntheticSpec spec = blobs_spec();
  spec.noise_sigma = 200.0;
  spec.n_per_domain = 2000;
  DomainSuite suite = gen_specific_blobs(spec);
  double acc = bayes_oracle_accuracy(suite, "s0");
  EXPECT_LT(acc, 1.0 / 4.0 + 0.12);  // approaches 1/C
}

// The constructed specificity property: a linear probe on domain d's private
// block separates d's classes but carries nothing about other domains.
TEST(SpecificBlobs, SpecificBlockIsPredictiveOnlyInDomain) {
  SyntheticSpec spec = blobs_spec();
  spec.n_per_domain = 1200;
  spec.noise_sigma = 0.6;
  DomainSuite suite = gen_specific_blobs(spec);

  const int d = 0;
  const std::size_t block = static_cast<std::size_t>(spec.shared_dims);  // domain 0's block
  const std::size_t bw = static_cast<std::size_t>(spec.specific_dims);
  auto block_of = [&](const DomainDataset& ds) {
    Tensor sub({ds.n_rows(), bw});
    for (std::size_t i = 0; i < ds.n_rows(); ++i)
      for (std::size_t t = 0; t < bw; ++t) sub(i, t) = ds.x(i, block + t);
    return sub;
  };

  // one-layer softmax probe trained on domain 0's block
  Tensor xd = block_of(suite.sources[d]);
  const std::vector<int>& yd = suite.sources[d].y;
  Rng rng(3);
  Tensor w = dmgtest::random_tensor(rng, {bw, 4}, -0.01, 0.01);
  Tensor b({4});
  AdamState ws(w.shape), bs(b.shape);
  for (int step = 0; step < 400; ++step) {
    Tensor logits = dense_forward(xd, w, b);
    XentResult r = softmax_xent(logits, yd);
    DenseGrads g = dense_backward(r.grad_logits, xd, w);
    adam_step(w, g.grad_w, ws, 0.05, AdamConfig{}, "w");
    adam_step(b, g.grad_b, bs, 0.05, AdamConfig{}, "b");
  }
  auto probe_acc = [&](const DomainDataset& ds) {
    Tensor probs = softmax_rows(dense_forward(block_of(ds), w, b));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ds.n_rows(); ++i) {
      int best = 0;
      for (int c = 1; c < 4; ++c)
        if (probs(i, c) > probs(i, best)) best = c;
      correct += best == ds.y[i] ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(ds.n_rows());
  };

  EXPECT_GT(probe_acc(suite.sources[0]), 0.45);  // well above chance 0.25
  EXPECT_NEAR(probe_acc(suite.sources[1]), 0.25, 0.02);
  EXPECT_NEAR(probe_acc(suite.sources[2]), 0.25, 0.02);
}

// ---------------------------------------------------------------------------
// rotated-moons
// ---------------------------------------------------------------------------

static SyntheticSpec moons_spec(std::vector<double> angles) {
  SyntheticSpec spec;
  spec.family = SyntheticSpec::Family::rotated_moons;
  spec.p = static_cast<int>(angles.size()) - 1;
  spec.q = 1;
  spec.n_classes = 2;
  spec.n_per_domain = 200;
  spec.noise_sigma = 0.1;
  spec.angles_deg = std::move(angles);
  spec.seed = 21;
  return spec;
}

TEST(RotatedMoons, SameAngleSameSeedSameCloud) {
  DomainSuite a = gen_rotated_moons(moons_spec({0, 30, 60}));
  DomainSuite b = gen_rotated_moons(moons_spec({0, 45, 90}));
  // domain 0 has angle 0 in both suites and identical pre-rotation draws
  EXPECT_TRUE(dmgtest::bit_equal(a.sources[0].x, b.sources[0].x));
}

TEST(RotatedMoons, FullTurnEqualsNoTurn) {
  DomainSuite a = gen_rotated_moons(moons_spec({0, 30, 60}));
  DomainSuite b = gen_rotated_moons(moons_spec({360, 30, 60}));
  const Tensor& xa = a.sources[0].x;
  const Tensor& xb = b.sources[0].x;
  for (std::size_t i = 0; i < xa.size(); ++i) EXPECT_NEAR(xa[i], xb[i], 1e-9);
}

TEST(RotatedMoons, RotationPreservesRadius) {
  DomainSuite a = gen_rotated_moons(moons_spec({0, 30, 60}));
  DomainSuite b = gen_rotated_moons(moons_spec({125, 30, 60}));
  auto mean_radius = [](const DomainDataset& ds) {
    double acc = 0.0;
    for (std::size_t i = 0; i < ds.n_rows(); ++i)
      acc += std::hypot(ds.x(i, 0), ds.x(i, 1));
    return acc / static_cast<double>(ds.n_rows());
  };
  EXPECT_NEAR(mean_radius(a.sources[0]), mean_radius(b.sources[0]), 1e-9);
}

TEST(RotatedMoons, RejectsBadSpecs) {
  SyntheticSpec spec = moons_spec({0, 30, 60});
  spec.n_classes = 3;
  EXPECT_THROW(gen_rotated_moons(spec), std::invalid_argument);
  EXPECT_THROW(gen_rotated_moons(moons_spec({0, 30, 30})), std::invalid_argument);
  SyntheticSpec missing = moons_spec({0, 30});
  missing.p = 2;  // needs 3 angles for p+q=3
  EXPECT_THROW(gen_rotated_moons(missing), std::invalid_argument);
}

TEST(RotatedMoons, OracleBeatsChanceAtModerateNoise) {
  SyntheticSpec spec = moons_spec({0, 30, 60});
  spec.n_per_domain = 500;
  DomainSuite suite = gen_rotated_moons(spec);
  EXPECT_GT(bayes_oracle_accuracy(suite, "s0"), 0.9);
  SyntheticSpec clean = spec;
  clean.noise_sigma = 0.0;
  clean.seed = 22;
  EXPECT_EQ(bayes_oracle_accuracy(gen_rotated_moons(clean), "s0"), 1.0);
}

// ---------------------------------------------------------------------------
// split_dataset
// ---------------------------------------------------------------------------

static DomainDataset tiny_dataset(std::size_t n) {
  DomainDataset ds;
  ds.domain_id = "x";
  ds.x = Tensor({n, 1});
  ds.y.assign(n, 0);
  ds.split.assign(n, Split::train);
  return ds;
}

TEST(SplitDataset, ExactCounts) {
  DomainDataset ds = tiny_dataset(100);
  Rng rng(1);
  split_dataset(ds, {0.8, 0.1, 0.1}, rng);
  EXPECT_EQ(ds.rows_of(Split::train).size(), 80u);
  EXPECT_EQ(ds.rows_of(Split::val).size(), 10u);
  EXPECT_EQ(ds.rows_of(Split::test).size(), 10u);
}

TEST(SplitDataset, AllTrain) {
  DomainDataset ds = tiny_dataset(17);
  Rng rng(1);
  split_dataset(ds, {1.0, 0.0, 0.0}, rng);
  EXPECT_EQ(ds.rows_of(Split::train).size(), 17u);
}

TEST(SplitDataset, SeedsChangePermutationNotCounts) {
  DomainDataset a = tiny_dataset(50), b = tiny_dataset(50);
  Rng r1(1), r2(2);
  split_dataset(a, {0.8, 0.1, 0.1}, r1);
  split_dataset(b, {0.8, 0.1, 0.1}, r2);
  EXPECT_EQ(a.rows_of(Split::train).size(), b.rows_of(Split::train).size());
  EXPECT_NE(a.split, b.split);
}

TEST(SplitDataset, DisjointAndExhaustive) {
  DomainDataset ds = tiny_dataset(73);
  Rng rng(9);
  split_dataset(ds, {0.72, 0.08, 0.2}, rng);
  EXPECT_EQ(ds.rows_of(Split::train).size() + ds.rows_of(Split::val).size() +
                ds.rows_of(Split::test).size(),
            73u);
}

TEST(SplitDataset, BadFractionsThrow) {
  DomainDataset ds = tiny_dataset(10);
  Rng rng(1);
  EXPECT_THROW(split_dataset(ds, {0.5, 0.1, 0.1}, rng), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// load_delimited
// ---------------------------------------------------------------------------

static std::string write_file(const fs::path& dir, const std::string& name,
                              const std::string& content) {
  fs::path p = dir / name;
  std::ofstream out(p, std::ios::binary);
  out << content;
  return p.string();
}

TEST(LoadDelimited, ParsesRowsAndLabels) {
  fs::path dir = temp_dir("csv");
  std::string p = write_file(dir, "ok.csv", "1.0,2.0,0\n3.0,4.0,1\n");
  DomainDataset ds = load_delimited(p, "d");
  EXPECT_EQ(ds.x.rows(), 2u);
  EXPECT_EQ(ds.x.cols(), 2u);
  EXPECT_EQ(ds.x(1, 0), 3.0);
  EXPECT_EQ(ds.y[0], 0);
  EXPECT_EQ(ds.y[1], 1);
}

TEST(LoadDelimited, EmptyFileFails) {
  fs::path dir = temp_dir("csv_empty");
  std::string p = write_file(dir, "empty.csv", "");
  try {
    load_delimited(p, "d");
    FAIL() << "expected throw";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("no rows"), std::string::npos);
  }
}

TEST(LoadDelimited, RaggedRowNamesLine) {
  fs::path dir = temp_dir("csv_ragged");
  std::string p = write_file(dir, "ragged.csv", "1.0,2.0,0\n1.0,2.0,3.0,1\n");
  try {
    load_delimited(p, "d");
    FAIL() << "expected throw";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
}

TEST(LoadDelimited, NonNumericCellNamesLine) {
  fs::path dir = temp_dir("csv_nan");
  std::string p = write_file(dir, "bad.csv", "1.0,2.0,0\nx,2.0,1\n");
  try {
    load_delimited(p, "d");
    FAIL() << "expected throw";
  } catch (const std::runtime_error& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("line 2"), std::string::npos);
    EXPECT_NE(msg.find("'x'"), std::string::npos);
  }
}

TEST(LoadDelimited, MissingFileFails) {
  EXPECT_THROW(load_delimited("/nonexistent/nope.csv", "d"), std::runtime_error);
}

// ---------------------------------------------------------------------------
// save/load round trip
// ---------------------------------------------------------------------------

TEST(SuiteIo, RoundTripPreservesDataAndSplits) {
  SyntheticSpec spec = blobs_spec();
  spec.q = 1;
  DomainSuite suite = gen_specific_blobs(spec);
  fs::path dir = temp_dir("roundtrip");
  save_suite(suite, dir.string());
  DomainSuite loaded = load_suite(dir.string());

  ASSERT_EQ(loaded.sources.size(), suite.sources.size());
  ASSERT_EQ(loaded.targets.size(), suite.targets.size());
  for (std::size_t j = 0; j < suite.sources.size(); ++j) {
    EXPECT_TRUE(dmgtest::bit_equal(loaded.sources[j].x, suite.sources[j].x));
    EXPECT_EQ(loaded.sources[j].y, suite.sources[j].y);
    EXPECT_EQ(loaded.sources[j].split, suite.sources[j].split);
  }
  EXPECT_EQ(suite_fingerprint(loaded), suite_fingerprint(suite));
  // oracle still works after a round trip (params regenerated from the spec)
  EXPECT_NEAR(bayes_oracle_accuracy(loaded, "s0"), bayes_oracle_accuracy(suite, "s0"), 1e-15);
}

TEST(SuiteIo, RewriteIsByteIdentical) {
  DomainSuite suite = gen_specific_blobs(blobs_spec());
  fs::path d1 = temp_dir("bytes1"), d2 = temp_dir("bytes2");
  save_suite(suite, d1.string());
  save_suite(suite, d2.string());
  for (const char* f : {"manifest.json", "s0.csv", "s1.csv", "s2.csv"}) {
    std::ifstream a(d1 / f, std::ios::binary), b(d2 / f, std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    EXPECT_EQ(sa, sb) << f;
  }
}

TEST(SuiteIo, OracleRefusesLoadedCsvSuites) {
  fs::path dir = temp_dir("csvsuite");
  write_file(dir, "a.csv", "1.0,0\n2.0,1\n3.0,0\n4.0,1\n");
  write_file(dir, "manifest.json",
             R"({"schema_version":1,"kind":"csv","n_classes":2,"feature_dim":1,
                 "domains":[{"id":"a","role":"source","file":"a.csv"}]})");
  DomainSuite suite = load_suite(dir.string());
  EXPECT_EQ(suite.sources.size(), 1u);
  EXPECT_THROW(bayes_oracle_accuracy(suite, "a"), std::invalid_argument);
}

TEST(SuiteIo, FingerprintSeparatesDifferentSuites) {
  SyntheticSpec a = blobs_spec();
  SyntheticSpec b = blobs_spec();
  b.seed = 8;
  EXPECT_NE(suite_fingerprint(gen_specific_blobs(a)), suite_fingerprint(gen_specific_blobs(b)));
}
