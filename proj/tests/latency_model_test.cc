// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>

#include "hetserve/errors.h"
#include "hetserve/latency_model.h"
#include "support/oracles.h"
#include "support/synthetic.h"

namespace hetserve {
namespace {

using testing::decode_loop;
using testing::prefill_direct;
using testing::rel_err;

TEST(PrefillTest, HandValues) {
  const auto p = LatencyParams::from(1e-5, 1e-3, 2e-5, 5e-3, 0, 0, 0, 0);
  EXPECT_LT(rel_err(prefill_time(p, 4, 128), 0.01668), 1e-12);
  const auto c = LatencyParams::from(0, 0, 0, 0.25, 9, 9, 9, 9);
  EXPECT_DOUBLE_EQ(prefill_time(c, 17, 999), 0.25);
  EXPECT_DOUBLE_EQ(prefill_time(LatencyParams::from(1, 0, 0, 0, 0, 0, 0, 0), 2, 3), 6.0);
}

TEST(DecodeIterationTest, HandValues) {
  EXPECT_DOUBLE_EQ(decode_iteration_time(LatencyParams::from(0, 0, 0, 0, 1, 1, 1, 1), 2, 1), 6.0);
  EXPECT_DOUBLE_EQ(decode_iteration_time(LatencyParams{}, 100, 8), 0.0);
  EXPECT_DOUBLE_EQ(decode_iteration_time(LatencyParams::from(0, 0, 0, 0, 1, 0, 0, 0), 3, 2), 6.0);
}

TEST(DecodeTimeTest, HandValues) {
  const auto ones = LatencyParams::from(0, 0, 0, 0, 1, 1, 1, 1);
  EXPECT_DOUBLE_EQ(decode_time(ones, 1, 1, 2), 14.0);
  const auto p = testing::base_params();
  EXPECT_LT(rel_err(decode_time(p, 5, 300, 1), decode_iteration_time(p, 301, 5)), 1e-14);
}

TEST(DecodeTimeTest, ClosedFormMatchesLoopOnGrid) {
  std::mt19937_64 rng(1234);
  std::uniform_real_distribution<double> coef(1e-7, 1e-2);
  for (int draw = 0; draw < 5; ++draw) {
    LatencyParams p;
    for (auto& c : p.coef) c = coef(rng);
    for (std::int64_t b = 1; b <= 64; b += 7) {
      for (std::int64_t I = 1; I <= 64; I += 3) {
        for (std::int64_t O = 1; O <= 64; O += 5) {
          ASSERT_LT(rel_err(decode_time(p, b, I, O), decode_loop(p, b, I, O)), 1e-12)
              << "b=" << b << " I=" << I << " O=" << O;
        }
      }
    }
  }
}

TEST(LatencyParamsTest, LinearInParameters) {
  const auto p = testing::base_params();
  for (double alpha : {0.5, 3.0, 17.25}) {
    const auto q = p.scaled(alpha);
    EXPECT_LT(rel_err(prefill_time(q, 6, 211), alpha * prefill_time(p, 6, 211)), 1e-14);
    EXPECT_LT(rel_err(decode_time(q, 6, 211, 40), alpha * decode_time(p, 6, 211, 40)), 1e-14);
  }
}

TEST(LatencyParamsTest, MonotoneForNonNegativeCoefficients) {
  const auto p = testing::base_params();
  for (std::int64_t b = 1; b < 32; ++b) {
    for (std::int64_t I = 1; I < 512; I += 37) {
      EXPECT_LE(prefill_time(p, b, I), prefill_time(p, b + 1, I));
      EXPECT_LE(prefill_time(p, b, I), prefill_time(p, b, I + 1));
    }
  }
}

// Samples generated from known params on the profiling grid.
struct Synth {
  std::vector<ProfilingSample> prefill;
  std::vector<ProfilingSample> decode;
};

Synth synthesize(const LatencyParams& truth, const std::vector<std::int64_t>& inputs, int reps,
                 double noise, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> eps(0.0, noise);
  std::uniform_int_distribution<std::int64_t> out(16, 256);
  Synth s;
  for (int rep = 0; rep < reps; ++rep) {
    for (std::int64_t b : {1, 2, 4, 8}) {
      for (std::int64_t I : inputs) {
        const double f1 = noise > 0 ? 1.0 + eps(rng) : 1.0;
        const double f2 = noise > 0 ? 1.0 + eps(rng) : 1.0;
        const std::int64_t O = out(rng);
        s.prefill.push_back({Phase::kPrefill, b, I, O, prefill_direct(truth, b, I) * f1});
        s.decode.push_back({Phase::kDecode, b, I, O, decode_loop(truth, b, I, O) * f2});
      }
    }
  }
  return s;
}

TEST(FitTest, NoiseFreeRecoveryIsExact) {
  const auto truth = testing::fit_truth_params();
  const Synth s = synthesize(truth, {64, 128, 256}, 1, 0.0, 1);
  const FitResult fit = fit_params(s.prefill, s.decode);
  for (int i = 0; i < 8; ++i) {
    EXPECT_LT(rel_err(fit.params.coef[i], truth.coef[i]), 1e-6) << "p" << i + 1;
  }
  EXPECT_FALSE(fit.nonpositive_on_grid);
  EXPECT_LT(fit.residual_norm, 1e-9);
}

TEST(FitTest, OnePercentNoiseWithin5Percent) {
  const auto truth = testing::fit_truth_params();
  const Synth s = synthesize(truth, {64, 128, 256, 512}, 3, 0.01, 2024);
  ASSERT_EQ(s.prefill.size(), 48u);
  const FitResult fit = fit_params(s.prefill, s.decode);
  for (int i = 0; i < 8; ++i) {
    EXPECT_LT(rel_err(fit.params.coef[i], truth.coef[i]), 0.05) << "p" << i + 1;
  }
  EXPECT_FALSE(fit.nonpositive_on_grid);
}

TEST(FitTest, SingleBatchSizeIsRankDeficient) {
  auto s = synthesize(testing::base_params(), {64, 128, 256}, 1, 0.0, 1);
  for (auto& x : s.prefill) {
    x.batch_size = 1;
    x.seconds = prefill_direct(testing::base_params(), 1, x.input_len);
  }
  try {
    fit_params(s.prefill, s.decode);
    FAIL();
  } catch (const FitError& e) {
    EXPECT_NE(std::string(e.what()).find("batch"), std::string::npos) << e.what();
  }
}

TEST(FitTest, SingleInputLengthIsRankDeficient) {
  auto s = synthesize(testing::base_params(), {128}, 2, 0.0, 1);
  EXPECT_THROW(fit_params(s.prefill, s.decode), FitError);
}

TEST(FitTest, TooFewSamples) {
  auto s = synthesize(testing::base_params(), {64}, 1, 0.0, 1);
  s.prefill.resize(3);
  EXPECT_THROW(fit_params(s.prefill, s.decode), FitError);
}

TEST(FitTest, FlagsNonPositivePredictions) {
  // Positive at every profiled point but negative at the unprofiled corner
  // b=1, I=64 of the box the samples span.
  const auto truth = LatencyParams::from(1e-4, 1e-2, 1e-4, -0.03, 0, 0, 0, 0);
  Synth s = synthesize(testing::base_params(), {64, 128, 256}, 1, 0.0, 3);
  std::vector<ProfilingSample> prefill;
  for (const auto& x : s.prefill) {
    if (x.batch_size == 1 && x.input_len == 64) continue;
    ProfilingSample y = x;
    y.seconds = prefill_direct(truth, x.batch_size, x.input_len);
    ASSERT_GT(y.seconds, 0.0);
    prefill.push_back(y);
  }
  ASSERT_LT(prefill_direct(truth, 1, 64), 0.0);
  const FitResult fit = fit_params(prefill, s.decode);
  EXPECT_LT(rel_err(fit.params.coef[3], -0.03), 1e-6);
  EXPECT_TRUE(fit.nonpositive_on_grid);
}

TEST(ParamsFileTest, RoundTripAndLookup) {
  ParamsTable t;
  t.set("a", 1, testing::base_params(), 0.5);
  t.set("a", 2, testing::params_for_tp(2), 0.25);
  t.set("b", 4, testing::params_for_tp(4));
  const ParamsTable again = parse_params(serialize_params(t));
  EXPECT_EQ(again.entries().size(), 3u);
  EXPECT_EQ(again.at("a", 2), testing::params_for_tp(2));
  EXPECT_DOUBLE_EQ(again.entries().at({"a", 1}).residual_norm, 0.5);
  EXPECT_EQ(again.find("b", 8), nullptr);
  EXPECT_THROW(again.at("b", 8), ValidationError);
  EXPECT_EQ(serialize_params(again), serialize_params(t));
}

TEST(ParamsFileTest, RejectsBadRecords) {
  EXPECT_THROW(parse_params("{\"machine_name\": \"a\", \"tp_degree\": 1}\n"), ParseError);
  EXPECT_THROW(parse_params("not json\n"), ParseError);
}

TEST(SampleFileTest, GroupsByMachineAndDegree) {
  const std::string text =
      "{\"phase\": \"prefill\", \"batch_size\": 1, \"input_len\": 8, \"output_len\": 2, "
      "\"seconds\": 0.1}\n"
      "{\"phase\": \"decode\", \"batch_size\": 1, \"input_len\": 8, \"output_len\": 2, "
      "\"seconds\": 0.2, \"machine_name\": \"x\", \"tp_degree\": 2}\n"
      "{\"phase\": \"decode\", \"batch_size\": 2, \"input_len\": 8, \"output_len\": 2, "
      "\"seconds\": 0.3}\n";
  const auto groups = parse_samples(text);
  ASSERT_EQ(groups.size(), 2u);
  std::size_t total = 0;
  for (const auto& g : groups) total += g.prefill.size() + g.decode.size();
  EXPECT_EQ(total, 3u);
  EXPECT_EQ(parse_samples(serialize_samples(groups)).size(), 2u);
  EXPECT_THROW(parse_samples("{\"phase\": \"warmup\", \"batch_size\": 1, \"input_len\": 8, "
                             "\"output_len\": 2, \"seconds\": 0.1}\n"),
               ParseError);
}

}  // namespace
}  // namespace hetserve
