#include <catch2/catch_amalgamated.hpp>

#include "vdg/budget.hpp"
#include "vdg/gradcheck.hpp"
#include "vdg/rng.hpp"

using namespace vdg;

namespace {

FlopsModel toy_model() {
  // three gated blocks of a [16,32,64] encoder at 32x32 input
  FlopsModel m;
  BlockFlops b1;
  b1.conv1 = conv_macs(3, 16, 16, 32, 32);
  b1.conv2 = conv_macs(3, 16, 16, 32, 32);
  b1.gate = gate_macs(16, 4, 16);
  b1.channels = 16;
  BlockFlops b2;
  b2.conv1 = conv_macs(3, 16, 32, 16, 16);
  b2.conv2 = conv_macs(3, 32, 32, 16, 16);
  b2.gate = gate_macs(16, 4, 32);
  b2.channels = 32;
  BlockFlops b3;
  b3.conv1 = conv_macs(3, 32, 64, 8, 8);
  b3.conv2 = conv_macs(3, 64, 64, 8, 8);
  b3.gate = gate_macs(32, 4, 64);
  b3.channels = 64;
  m.blocks = {b1, b2, b3};
  return m;
}

std::vector<GateMask<float>> random_masks(const FlopsModel& m, int batch,
                                          RngStream& rng, double p_on) {
  std::vector<GateMask<float>> out;
  for (const auto& blk : m.blocks) {
    std::vector<float> v(static_cast<size_t>(batch) * blk.channels);
    for (auto& x : v) x = rng.uniform01() < p_on ? 1.0f : 0.0f;
    GateMask<float> g;
    g.mask = Tensor::from({batch, blk.channels}, std::move(v));
    out.push_back(std::move(g));
  }
  return out;
}

std::vector<GateMask<float>> constant_masks(const FlopsModel& m, int batch, float v) {
  std::vector<GateMask<float>> out;
  for (const auto& blk : m.blocks) {
    GateMask<float> g;
    g.mask = Tensor::filled({batch, blk.channels}, v);
    out.push_back(std::move(g));
  }
  return out;
}

// independent oracle: walk every sample and every channel, count MACs
// directly, then average over the batch
double brute_force_ratio(const std::vector<GateMask<float>>& masks,
                         const FlopsModel& m, int batch) {
  unsigned long long total = 0;
  for (int i = 0; i < batch; ++i) {
    for (size_t l = 0; l < m.blocks.size(); ++l) {
      const auto& blk = m.blocks[l];
      unsigned long long conv1_per_out = blk.conv1 / static_cast<unsigned long long>(blk.channels);
      unsigned long long conv2_per_in = blk.conv2 / static_cast<unsigned long long>(blk.channels);
      for (int c = 0; c < blk.channels; ++c) {
        if (masks[l].mask.value()[static_cast<size_t>(i) * blk.channels + c] > 0.5f)
          total += conv1_per_out + conv2_per_in;
      }
      total += blk.gate;
    }
  }
  return static_cast<double>(total) /
         (static_cast<double>(batch) * static_cast<double>(m.total_original()));
}

}  // namespace

TEST_CASE("static MAC counts") {
  CHECK(conv_macs(3, 16, 32, 8, 8) == 294912ull);
  CHECK(conv_macs(1, 1, 1, 1, 1) == 1ull);
  CHECK(gate_macs(16, 4, 32) == 192ull);
  CHECK_THROWS_AS(conv_macs(0, 1, 1, 1, 1), ConfigError);
}

TEST_CASE("all-on and all-off mask ratios") {
  auto m = toy_model();
  double overhead = m.gate_overhead();
  SECTION("all ones sits just above one") {
    auto masks = constant_masks(m, 8, 1.0f);
    auto r = flops_ratio(masks, m);
    CHECK_THAT(r.item(), Catch::Matchers::WithinAbs(1.0 + overhead, 1e-6));
    CHECK(r.item() > 1.0f);
  }
  SECTION("all zeros leaves only the fixed gate cost") {
    auto masks = constant_masks(m, 8, 0.0f);
    auto r = flops_ratio(masks, m);
    CHECK_THAT(r.item(), Catch::Matchers::WithinAbs(overhead, 1e-9));
    CHECK(r.item() < 0.001f);
  }
}

TEST_CASE("flops_ratio equals the per-sample channel counter exactly") {
  auto m = toy_model();
  RngStream rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    double p = rng.uniform(0.05, 0.95);
    int batch = 1 + static_cast<int>(rng.below(16));
    auto masks = random_masks(m, batch, rng, p);
    auto exact = flops_ratio_exact(masks, m);
    double oracle = brute_force_ratio(masks, m, batch);
    // both sides are integer MAC counts over the same denominator
    REQUIRE(exact.value() == oracle);
    auto differentiable = flops_ratio(masks, m);
    CHECK_THAT(differentiable.item(), Catch::Matchers::WithinAbs(oracle, 1e-6));
  }
}

TEST_CASE("budget loss closed forms") {
  BudgetConfig cfg;
  cfg.t_d = 0.5f;
  cfg.lambda = 5.0f;
  CHECK(budget_loss(Tensor::scalar(0.5f), cfg).item() == 0.0f);
  CHECK_THAT(budget_loss(Tensor::scalar(1.0f), cfg).item(),
             Catch::Matchers::WithinAbs(1.25, 1e-6));
  cfg.t_d = 0.3f;
  CHECK_THAT(budget_loss(Tensor::scalar(0.6f), cfg).item(),
             Catch::Matchers::WithinAbs(0.45, 1e-6));
  BudgetConfig bad;
  bad.t_d = 0.0f;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("flops_ratio is monotone in every mask entry") {
  auto m = toy_model();
  RngStream rng(24);
  auto masks = random_masks(m, 4, rng, 0.5);
  double base = flops_ratio(masks, m).item();
  for (size_t l = 0; l < masks.size(); ++l) {
    auto& mv = masks[l].mask.value();
    for (size_t i = 0; i < mv.size(); i += 17) {
      float old = mv[i];
      mv[i] = 1.0f;
      double up = flops_ratio(masks, m).item();
      CHECK(up >= base - 1e-9);
      mv[i] = old;
    }
  }
}

TEST_CASE("budget loss gradient flows through the sampling relaxation") {
  auto m = toy_model();
  GateSamplerConfig sampler;
  sampler.hard_forward = false;  // the relaxation the straight-through backward uses
  BudgetConfig cfg;
  cfg.t_d = 0.3f;
  RngStream rng(25);
  std::vector<TensorT<double>> scores;
  for (const auto& blk : m.blocks) {
    std::vector<double> s(static_cast<size_t>(2) * blk.channels);
    for (auto& v : s) v = rng.uniform(-1.0, 1.0);
    scores.push_back(TensorT<double>::from({2, blk.channels}, std::move(s), true));
  }
  auto res = gradient_check<double>(
      [&] {
        std::vector<GateMask<double>> masks;
        for (size_t l = 0; l < scores.size(); ++l)
          masks.push_back(gumbel_mask(scores[l], 0.9, 31 + l, sampler));
        return budget_loss(flops_ratio(masks, m), cfg);
      },
      scores, 1e-5, 32);
  CHECK(res.checked > 0);
  CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("straight-through budget gradients are nonzero and signed by the deviation") {
  auto m = toy_model();
  GateSamplerConfig sampler;  // hard forward
  BudgetConfig cfg;
  cfg.t_d = 0.1f;  // ratio starts near 0.5, so the loss pushes scores down
  std::vector<Tensor> scores;
  std::vector<GateMask<float>> masks;
  for (size_t l = 0; l < m.blocks.size(); ++l) {
    scores.push_back(Tensor::zeros({4, m.blocks[l].channels}, true));
    masks.push_back(gumbel_mask(scores.back(), 1.0f, 51 + l, sampler));
  }
  auto loss = budget_loss(flops_ratio(masks, m), cfg);
  loss.backward();
  double total_grad = 0;
  for (auto& s : scores)
    for (float g : s.grad()) total_grad += g;
  CHECK(total_grad > 0.0);  // positive gradient drives scores (and the ratio) down
}

TEST_CASE("missing block masks are a contract error") {
  auto m = toy_model();
  auto masks = constant_masks(m, 2, 1.0f);
  masks.pop_back();
  CHECK_THROWS_AS(flops_ratio(masks, m), ContractError);
}
