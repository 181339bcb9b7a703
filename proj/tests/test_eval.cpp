#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "vdg/eval.hpp"

using namespace vdg;
namespace fs = std::filesystem;

namespace {

FeatureSet make_features(std::vector<std::vector<float>> rows,
                         std::vector<int> labels, bool normalized = false) {
  FeatureSet fs;
  fs.dim = static_cast<int>(rows[0].size());
  fs.labels = std::move(labels);
  for (auto& r : rows) fs.rows.insert(fs.rows.end(), r.begin(), r.end());
  fs.normalized = normalized;
  return fs;
}

// Gram-Schmidt on a seeded random matrix gives an orthogonal rotation
std::vector<double> random_rotation(int d, uint64_t seed) {
  RngStream rng(seed);
  std::vector<double> q(static_cast<size_t>(d) * d);
  for (int i = 0; i < d; ++i) {
    std::vector<double> v(static_cast<size_t>(d));
    for (auto& x : v) x = rng.normal();
    for (int j = 0; j < i; ++j) {
      double dot = 0;
      for (int k = 0; k < d; ++k) dot += v[static_cast<size_t>(k)] * q[static_cast<size_t>(j) * d + k];
      for (int k = 0; k < d; ++k) v[static_cast<size_t>(k)] -= dot * q[static_cast<size_t>(j) * d + k];
    }
    double norm = 0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    for (int k = 0; k < d; ++k) q[static_cast<size_t>(i) * d + k] = v[static_cast<size_t>(k)] / norm;
  }
  return q;
}

FeatureSet rotate(const FeatureSet& in, const std::vector<double>& q) {
  FeatureSet out = in;
  int d = in.dim;
  for (int i = 0; i < in.count(); ++i)
    for (int a = 0; a < d; ++a) {
      double acc = 0;
      for (int b = 0; b < d; ++b)
        acc += q[static_cast<size_t>(a) * d + b] * in.rows[static_cast<size_t>(i) * d + b];
      out.rows[static_cast<size_t>(i) * d + a] = static_cast<float>(acc);
    }
  return out;
}

Dataset small_synth(int per_class, uint64_t seed, int classes = 4, int size = 16) {
  SynthConfig s;
  s.classes = classes;
  s.per_class = per_class;
  s.size = size;
  s.seed = seed;
  return make_synthetic_dataset(s);
}

DualEncoder<float> small_encoder(uint64_t seed) {
  EncoderConfig ec;
  ec.stage_widths = {8, 16};
  ec.blocks_per_stage = {1, 1};
  ec.input_size = 16;
  return DualEncoder<float>::make(ec, seed);
}

}  // namespace

TEST_CASE("extract_features normalizes rows and is deterministic") {
  auto enc = small_encoder(31);
  auto data = small_synth(8, 11);
  auto fs1 = extract_features(enc, Path::dense, data, true);
  REQUIRE(fs1.count() == 32);
  REQUIRE(fs1.dim == 16);
  for (int i = 0; i < fs1.count(); ++i) {
    double n = 0;
    for (int j = 0; j < fs1.dim; ++j)
      n += static_cast<double>(fs1.row(i)[j]) * fs1.row(i)[j];
    CHECK_THAT(std::sqrt(n), Catch::Matchers::WithinAbs(1.0, 1e-5));
  }
  auto fs2 = extract_features(enc, Path::dense, data, true);
  CHECK(fs1.rows == fs2.rows);

  Dataset empty;
  CHECK_THROWS_AS(extract_features(enc, Path::dense, empty, true), ContractError);
}

TEST_CASE("dense and gated features differ once gates are active") {
  auto enc = small_encoder(32);
  RngStream rng(7);
  for (auto& blk : enc.blocks) {
    for (auto& v : blk.gate.w2.value()) v = static_cast<float>(rng.uniform(-0.5, 0.5));
    for (auto& v : blk.gate.bn.beta.value()) v = 0.2f;
  }
  auto data = small_synth(8, 12);
  auto fd = extract_features(enc, Path::dense, data, false);
  auto fg = extract_features(enc, Path::gated, data, false);
  CHECK(fd.rows != fg.rows);
}

TEST_CASE("knn self-classification and simple margins") {
  auto a = make_features({{1, 0}, {0, 1}, {1, 1}}, {0, 1, 2});
  CHECK(knn_top1(a, a) == 1.0);

  auto train = make_features({{0, 0}, {10, 10}}, {0, 1});
  auto test = make_features({{1, 1}, {9, 9}}, {0, 1});
  CHECK(knn_top1(train, test) == 1.0);
  auto test_swapped = make_features({{9, 9}}, {0});
  CHECK(knn_top1(train, test_swapped) == 0.0);
}

TEST_CASE("knn matches the exhaustive pairwise oracle") {
  RngStream rng(41);
  int n_train = 50, n_test = 20, d = 7;
  for (bool normalized : {false, true}) {
    FeatureSet train, test;
    train.dim = test.dim = d;
    train.normalized = test.normalized = normalized;
    auto fill = [&](FeatureSet& fs, int n) {
      fs.rows.resize(static_cast<size_t>(n) * d);
      fs.labels.resize(static_cast<size_t>(n));
      for (auto& v : fs.rows) v = static_cast<float>(rng.uniform(-1, 1));
      for (auto& l : fs.labels) l = static_cast<int>(rng.below(5));
      if (normalized)
        for (int i = 0; i < n; ++i) {
          float* r = fs.rows.data() + static_cast<size_t>(i) * d;
          double norm = 0;
          for (int j = 0; j < d; ++j) norm += static_cast<double>(r[j]) * r[j];
          for (int j = 0; j < d; ++j) r[j] = static_cast<float>(r[j] / std::sqrt(norm));
        }
    };
    fill(train, n_train);
    fill(test, n_test);

    int correct = 0;
    for (int i = 0; i < n_test; ++i) {
      int best = 0;
      double best_d = 1e300;
      for (int j = 0; j < n_train; ++j) {
        double dist = 0;
        for (int c = 0; c < d; ++c) {
          double e = test.row(i)[c] - train.row(j)[c];
          dist += e * e;
        }
        if (dist < best_d - 1e-12) {
          best_d = dist;
          best = j;
        }
      }
      if (train.labels[static_cast<size_t>(best)] == test.labels[static_cast<size_t>(i)]) ++correct;
    }
    double oracle = static_cast<double>(correct) / n_test;
    CHECK(knn_top1(train, test) == oracle);
  }
}

TEST_CASE("knn is invariant to a joint orthogonal rotation") {
  RngStream rng(43);
  int d = 8;
  FeatureSet train, test;
  train.dim = test.dim = d;
  auto fill = [&](FeatureSet& fs, int n) {
    fs.rows.resize(static_cast<size_t>(n) * d);
    fs.labels.resize(static_cast<size_t>(n));
    for (auto& v : fs.rows) v = static_cast<float>(rng.uniform(-1, 1));
    for (auto& l : fs.labels) l = static_cast<int>(rng.below(3));
  };
  fill(train, 40);
  fill(test, 15);
  double base = knn_top1(train, test);
  auto q = random_rotation(d, 77);
  double rotated = knn_top1(rotate(train, q), rotate(test, q));
  CHECK(base == rotated);
}

TEST_CASE("knn contract errors") {
  auto a = make_features({{1, 0}}, {0});
  auto b = make_features({{1, 0, 0}}, {0});
  CHECK_THROWS_AS(knn_top1(a, b), ContractError);
  FeatureSet empty;
  empty.dim = 2;
  CHECK_THROWS_AS(knn_top1(empty, a), ContractError);
  auto c = make_features({{1, 0}}, {0}, true);
  CHECK_THROWS_AS(knn_top1(a, c), ContractError);
}

TEST_CASE("linear probe separates what is separable") {
  ProbeSchedule sched = ProbeSchedule::toy();
  sched.repeats = 1;
  sched.batch_size = 16;
  SECTION("linearly separable two-class points") {
    FeatureSet train, test;
    train.dim = test.dim = 2;
    RngStream rng(51);
    for (int i = 0; i < 64; ++i) {
      int label = i % 2;
      float cx = label == 0 ? -1.0f : 1.0f;
      train.rows.push_back(cx + static_cast<float>(rng.uniform(-0.3, 0.3)));
      train.rows.push_back(static_cast<float>(rng.uniform(-0.5, 0.5)));
      train.labels.push_back(label);
    }
    for (int i = 0; i < 32; ++i) {
      int label = i % 2;
      float cx = label == 0 ? -1.0f : 1.0f;
      test.rows.push_back(cx + static_cast<float>(rng.uniform(-0.3, 0.3)));
      test.rows.push_back(static_cast<float>(rng.uniform(-0.5, 0.5)));
      test.labels.push_back(label);
    }
    CHECK(linear_probe(train, test, sched) == 1.0);
  }
  SECTION("shuffled labels sit at chance") {
    FeatureSet train, test;
    train.dim = test.dim = 8;
    RngStream rng(52);
    for (int i = 0; i < 400; ++i) {
      for (int j = 0; j < 8; ++j)
        train.rows.push_back(static_cast<float>(rng.uniform(-1, 1)));
      train.labels.push_back(static_cast<int>(rng.below(10)));
    }
    for (int i = 0; i < 400; ++i) {
      for (int j = 0; j < 8; ++j)
        test.rows.push_back(static_cast<float>(rng.uniform(-1, 1)));
      test.labels.push_back(static_cast<int>(rng.below(10)));
    }
    sched.repeats = 3;
    double acc = linear_probe(train, test, sched);
    CHECK(std::abs(acc - 0.1) < 0.05);
  }
  SECTION("single-class training set is a contract error") {
    auto train = make_features({{1, 0}, {0, 1}}, {0, 0});
    auto test = make_features({{1, 0}}, {0});
    CHECK_THROWS_AS(linear_probe(train, test, sched), ContractError);
  }
}

TEST_CASE("policy export on a zero-initialized gate marks everything off") {
  auto enc = small_encoder(61);  // w2 zero-init -> every score 0 -> masks off
  auto probe = small_synth(30, 21);
  auto hist = export_policy(enc, probe);
  REQUIRE(hist.blocks.size() == enc.blocks.size());
  for (const auto& blk : hist.blocks) {
    CHECK(blk.off == blk.width);
    CHECK(blk.always_on == 0);
    CHECK(blk.data_dependent == 0);
    CHECK(blk.always_on + blk.data_dependent + blk.off == blk.width);
    CHECK(blk.active_fraction == 0.0);
  }
  CHECK(hist.overall_active_fraction == 0.0);
  // only the fixed gate cost remains
  CHECK(hist.inference_flops_ratio < 0.001);

  Dataset empty;
  CHECK_THROWS_AS(export_policy(enc, empty), ContractError);
}

TEST_CASE("policy categories partition and respond to thresholds") {
  auto enc = small_encoder(62);
  RngStream rng(8);
  for (auto& blk : enc.blocks) {
    for (auto& v : blk.gate.w2.value()) v = static_cast<float>(rng.uniform(-0.6, 0.6));
    for (auto& v : blk.gate.bn.beta.value()) v = 0.25f;
  }
  auto probe = small_synth(40, 22);
  auto strict = export_policy(enc, probe, 0.99, 0.01);
  auto loose = export_policy(enc, probe, 0.6, 0.4);
  for (size_t l = 0; l < strict.blocks.size(); ++l) {
    const auto& s = strict.blocks[l];
    const auto& lo = loose.blocks[l];
    CHECK(s.always_on + s.data_dependent + s.off == s.width);
    CHECK(lo.always_on + lo.data_dependent + lo.off == lo.width);
    // widening both thresholds can only move channels out of data_dependent
    CHECK(lo.data_dependent <= s.data_dependent);
    CHECK(lo.always_on >= s.always_on);
    CHECK(lo.off >= s.off);
  }
}

TEST_CASE("feature set file round trip") {
  auto fs1 = make_features({{1.5f, -2.25f, 3.125f}, {0.0f, 0.5f, -0.75f}}, {3, 1}, true);
  auto dir = fs::temp_directory_path() / "vdg_test_featureio";
  fs::create_directories(dir);
  auto path = dir / "features.bin";
  write_featureset(path, fs1);
  auto fs2 = read_featureset(path);
  CHECK(fs2.dim == 3);
  CHECK(fs2.normalized);
  CHECK(fs2.rows == fs1.rows);
  CHECK(fs2.labels == fs1.labels);
  fs::remove_all(dir);
}
