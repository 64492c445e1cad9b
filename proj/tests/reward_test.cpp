#include "sallmf/reward.hpp"

#include "sallmf/feedback.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

namespace sallmf::reward {
namespace {

RewardEnsemble small_ensemble(int state_dims, std::uint64_t seed, int members = 3) {
  return RewardEnsemble::create(state_dims, seed, members, 2, 16);
}

// Member whose output is the constant tanh(bias).
approx::Parameters constant_member(const approx::MLPSpec& spec, double value) {
  auto p = approx::zeros_like(spec);
  p.biases.back()[0] = std::atanh(value);
  return p;
}

TEST(SegmentReturnTest, ConstantModelSumsToHc) {
  auto task = envs::make_task("point_reach");
  std::mt19937_64 rng(1);
  auto seg = testutil::random_segment(task, rng, 10);
  auto e = small_ensemble(9, 3);
  auto member = constant_member(e.spec, 0.3);
  EXPECT_NEAR(segment_return(e.spec, member, seg), 10 * 0.3, 1e-12);
}

TEST(SegmentReturnTest, ZeroModelIsZero) {
  auto task = envs::make_task("point_reach");
  std::mt19937_64 rng(2);
  auto seg = testutil::random_segment(task, rng, 7);
  auto e = small_ensemble(9, 3);
  EXPECT_EQ(segment_return(e.spec, approx::zeros_like(e.spec), seg), 0.0);
}

TEST(SegmentReturnTest, EqualsSumOfPerStateForwards) {
  auto task = envs::make_task("point_reach");
  std::mt19937_64 rng(3);
  auto seg = testutil::random_segment(task, rng, 3);
  auto e = small_ensemble(9, 17);
  double expected = 0.0;
  for (const auto& s : seg.states()) {
    Mat row(1, 9);
    row.row(0) = s.values();
    expected += approx::forward(e.members[0], e.spec, row)(0, 0);
  }
  EXPECT_NEAR(segment_return(e, 0, seg), expected, 1e-12);
}

TEST(PreferenceProbabilityTest, IdenticalSegmentsExactlyHalf) {
  auto task = envs::make_task("point_reach");
  std::mt19937_64 rng(4);
  auto seg = testutil::random_segment(task, rng, 10);
  auto e = small_ensemble(9, 5);
  EXPECT_EQ(preference_probability(e, 0, seg, seg), 0.5);
}

TEST(PreferenceProbabilityTest, MatchesSigmoidClosedForm) {
  auto task = envs::make_task("point_reach");
  std::mt19937_64 rng(5);
  auto e = small_ensemble(9, 6);
  for (int i = 0; i < 20; ++i) {
    auto a = testutil::random_segment(task, rng, 10);
    auto b = testutil::random_segment(task, rng, 10);
    const double r0 = segment_return(e, 1, a);
    const double r1 = segment_return(e, 1, b);
    EXPECT_NEAR(preference_probability(e, 1, a, b), 1.0 / (1.0 + std::exp(r0 - r1)), 1e-12);
  }
}

TEST(PreferenceProbabilityTest, LargeReturnGapSaturates) {
  // Constant members near the tanh bound give |R1 - R0| close to 2H = 20.
  auto task = envs::make_task("point_reach");
  std::mt19937_64 rng(6);
  auto a = testutil::random_segment(task, rng, 10);
  auto b = testutil::random_segment(task, rng, 10);
  approx::MLPSpec spec{9, 1, 2, 16, approx::Activation::LeakyReLU, approx::OutputSquash::None};
  auto plus = approx::zeros_like(spec);
  plus.biases.back()[0] = 1.0;
  auto minus = approx::zeros_like(spec);
  minus.biases.back()[0] = -1.0;
  // Emulate the pair with one model by stacking: R(a)=-10 under plus-for-b.
  const double r0 = segment_return(spec, minus, a);
  const double r1 = segment_return(spec, plus, b);
  EXPECT_NEAR(sigmoid(r1 - r0), 1.0 / (1.0 + std::exp(-20.0)), 1e-12);
}

TEST(PreferenceProbabilityTest, ComplementIdentity) {
  auto task = envs::make_task("button_press_lite");
  std::mt19937_64 rng(7);
  auto e = small_ensemble(17, 8);
  for (int i = 0; i < 500; ++i) {
    auto a = testutil::random_segment(task, rng, 10);
    auto b = testutil::random_segment(task, rng, 10);
    const double p = preference_probability(e, 0, a, b);
    const double q = preference_probability(e, 0, b, a);
    EXPECT_NEAR(p + q, 1.0, 1e-12);
    EXPECT_GT(p, 0.0);
    EXPECT_LT(p, 1.0);
  }
}

TEST(PreferenceProbabilityTest, StableFormEqualsLiteralBradleyTerry) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  for (int i = 0; i < 1000; ++i) {
    const double r0 = u(rng), r1 = u(rng);
    const double literal = std::exp(r1) / (std::exp(r0) + std::exp(r1));
    EXPECT_NEAR(sigmoid(r1 - r0), literal, 1e-10);
  }
}

TEST(ShiftInvarianceTest, ReturnDifferencesDecide) {
  // Without the tanh squash a final-layer bias shift adds the same constant
  // to every per-state reward of both segments; the probability is invariant.
  auto task = envs::make_task("point_reach");
  std::mt19937_64 rng(9);
  auto a = testutil::random_segment(task, rng, 10);
  auto b = testutil::random_segment(task, rng, 10);
  approx::MLPSpec spec{9, 1, 2, 16, approx::Activation::LeakyReLU, approx::OutputSquash::None};
  auto params = approx::he_init(spec, 11);
  const double base = preference_probability(spec, params, a, b);

  auto shifted = params;
  shifted.biases.back()[0] += 0.37;
  EXPECT_NEAR(preference_probability(spec, shifted, a, b), base, 1e-12);

  // Shifting only one segment's return does change the probability.
  const double r0 = segment_return(spec, params, a);
  const double r1 = segment_return(spec, params, b);
  EXPECT_GT(std::abs(sigmoid((r1 + 0.37) - r0) - base), 1e-6);
}

TEST(ArgmaxConsistencyTest, ModelPreferenceMatchesReturnSign) {
  auto task = envs::make_task("point_reach");
  std::mt19937_64 rng(10);
  auto e = small_ensemble(9, 12);
  for (int i = 0; i < 50; ++i) {
    auto a = testutil::random_segment(task, rng, 10);
    auto b = testutil::random_segment(task, rng, 10);
    const double r0 = segment_return(e, 0, a);
    const double r1 = segment_return(e, 0, b);
    const double label = r0 >= r1 ? 0.0 : 1.0;
    const double p_second = preference_probability(e, 0, a, b);
    EXPECT_EQ(preferred_index(label) == PreferredSide::First, p_second <= 0.5);
  }
}

TEST(EnsembleRewardTest, MeanOfMembers) {
  auto e = small_ensemble(9, 13);
  e.members[0] = constant_member(e.spec, 0.2);
  e.members[1] = constant_member(e.spec, 0.4);
  e.members[2] = constant_member(e.spec, 0.6);
  State s(Vec::Zero(9), StateLayout::reach());
  EXPECT_NEAR(ensemble_reward(e, s), 0.4, 1e-12);

  for (auto& m : e.members) m = approx::zeros_like(e.spec);
  EXPECT_EQ(ensemble_reward(e, s), 0.0);
}

TEST(EnsembleRewardTest, TanhBoundHolds) {
  auto e = small_ensemble(9, 14);
  std::mt19937_64 rng(15);
  Mat states = testutil::random_matrix(2000, 9, rng, 3.0);
  Vec r = ensemble_reward_batch(e, states);
  EXPECT_LT(r.cwiseAbs().maxCoeff(), 1.0);
}

TEST(TrainTest, SinglePairProbabilityIncreasesMonotonically) {
  auto task = envs::make_task("point_reach");
  std::mt19937_64 rng(16);
  auto a = testutil::random_segment(task, rng, 10);
  auto b = testutil::random_segment(task, rng, 10);
  PreferenceDataset dataset;
  dataset.add(PreferenceTriple(a, b, 0.0, TripleSource::Sampled));

  auto e = RewardEnsemble::create(9, 17, 1, 2, 16);
  std::mt19937_64 train_rng(18);
  double last = preference_probability(e, 0, b, a);  // P[a > b]
  for (int round = 0; round < 8; ++round) {
    train(e, dataset, train_rng, 1, 64);
    const double p = preference_probability(e, 0, b, a);
    EXPECT_GT(p, last);
    last = p;
  }
}

TEST(TrainTest, EqualLabelOnIdenticalSegmentsHasZeroGradient) {
  auto task = envs::make_task("point_reach");
  std::mt19937_64 rng(19);
  auto seg = testutil::random_segment(task, rng, 10);
  PreferenceTriple triple(seg, seg, 0.5, TripleSource::Sampled);
  auto e = small_ensemble(9, 20);
  const PreferenceTriple* batch[] = {&triple};
  auto bl = preference_loss(e.spec, e.members[0], std::span<const PreferenceTriple* const>(batch, 1));
  for (const auto& w : bl.grads.weights) EXPECT_EQ(w.cwiseAbs().maxCoeff(), 0.0);
  for (const auto& b : bl.grads.biases) EXPECT_EQ(b.cwiseAbs().maxCoeff(), 0.0);
}

TEST(TrainTest, LossGradientMatchesFiniteDifferences) {
  auto task = envs::make_task("point_reach");
  std::mt19937_64 rng(21);
  auto t1 = PreferenceTriple(testutil::random_segment(task, rng, 5),
                             testutil::random_segment(task, rng, 5), 0.0, TripleSource::Sampled);
  auto t2 = PreferenceTriple(testutil::random_segment(task, rng, 5),
                             testutil::random_segment(task, rng, 5), 1.0, TripleSource::Sampled);
  approx::MLPSpec spec{9, 1, 2, 12, approx::Activation::LeakyReLU, approx::OutputSquash::Tanh};
  auto params = approx::he_init(spec, 22);
  const PreferenceTriple* batch[] = {&t1, &t2};
  auto span = std::span<const PreferenceTriple* const>(batch, 2);
  auto analytic = preference_loss(spec, params, span);
  auto numeric = testutil::numeric_gradient(
      [&](const approx::Parameters& p) { return preference_loss(spec, p, span).loss; }, params);
  EXPECT_LT(testutil::gradient_relative_error(analytic.grads, numeric), 1e-4);
}

TEST(TrainTest, EmptyDatasetRejected) {
  auto e = small_ensemble(9, 23);
  PreferenceDataset dataset;
  std::mt19937_64 rng(24);
  EXPECT_THROW(train(e, dataset, rng), std::invalid_argument);
}

// Small-instance oracle equivalence: preferences from two policies of clearly
// different quality train a model whose held-out label accuracy beats 90%.
TEST(TrainTest, HeldOutAccuracyOnScriptedLabels) {
  auto task = envs::make_task("point_reach");
  auto expert = envs::scripted_controller(task);
  auto rng_holder = std::make_shared<std::mt19937_64>(25);
  auto random = testutil::random_policy(task, rng_holder);

  std::mt19937_64 rng(26);
  auto make_triples = [&](int count, std::uint64_t seed_base) {
    std::vector<PreferenceTriple> triples;
    for (int i = 0; i < count; ++i) {
      // The expert window starts after convergence, so segment quality
      // actually reflects policy quality rather than the random start.
      auto good = testutil::rollout_segment(task, seed_base + static_cast<std::uint64_t>(i), 10,
                                            expert, 2 * i, 30);
      auto bad = testutil::rollout_segment(task, seed_base + 1000 + static_cast<std::uint64_t>(i),
                                           10, random, 2 * i + 1);
      const bool flip = rng() & 1;
      auto& a = flip ? bad : good;
      auto& b = flip ? good : bad;
      triples.emplace_back(a, b, feedback::scripted_label(a, b), TripleSource::Sampled);
    }
    return triples;
  };

  PreferenceDataset dataset;
  for (auto& t : make_triples(120, 10000)) dataset.add(std::move(t));
  auto e = RewardEnsemble::create(9, 27, 3, 2, 64, 1e-3);
  std::mt19937_64 train_rng(28);
  train(e, dataset, train_rng, 40, 32);

  auto held_out = make_triples(60, 50000);
  int correct = 0;
  for (const auto& t : held_out) {
    double mean_p = 0.0;
    for (int m = 0; m < e.member_count(); ++m) mean_p += preference_probability(e, m, t.seg0, t.seg1);
    mean_p /= e.member_count();
    const double predicted = mean_p <= 0.5 ? 0.0 : 1.0;
    if (predicted == t.label) correct += 1;
  }
  EXPECT_GT(static_cast<double>(correct) / static_cast<double>(held_out.size()), 0.9);
}

TEST(DatasetTest, CountersTrackSources) {
  auto task = envs::make_task("point_reach");
  std::mt19937_64 rng(29);
  PreferenceDataset d;
  auto a = testutil::random_segment(task, rng, 10);
  auto b = testutil::random_segment(task, rng, 10);
  d.add(PreferenceTriple(a, b, 1.0, TripleSource::Sampled));
  d.add(PreferenceTriple(a, b, 0.5, TripleSource::Sampled));
  EXPECT_EQ(d.sampled_count, 2);
  EXPECT_EQ(d.augmented_count, 0);
  EXPECT_EQ(d.equal_count, 1);
}

TEST(DatasetTest, ExportImportRoundTrip) {
  auto task = envs::make_task("button_press_lite");
  std::mt19937_64 rng(30);
  PreferenceDataset d;
  for (int i = 0; i < 5; ++i) {
    d.add(PreferenceTriple(testutil::random_segment(task, rng, 6),
                           testutil::random_segment(task, rng, 6),
                           i % 2 == 0 ? 0.0 : 1.0, TripleSource::Sampled));
  }
  const auto path = std::filesystem::temp_directory_path() / "sallmf_dataset.jsonl";
  export_dataset(d, path.string());
  auto imported = import_dataset(path.string(), task.layout);
  EXPECT_EQ(imported.size(), d.size());
  EXPECT_EQ(imported.sampled_count, d.sampled_count);
  for (size_t i = 0; i < d.size(); ++i) {
    EXPECT_EQ(imported.triples[i].label, d.triples[i].label);
    // 4-decimal quantization on coordinates
    EXPECT_LT((imported.triples[i].seg0.states()[0].values() -
               d.triples[i].seg0.states()[0].values())
                  .cwiseAbs()
                  .maxCoeff(),
              5.1e-5);
  }
  // Re-export is byte-stable (quantization is idempotent).
  const auto path2 = std::filesystem::temp_directory_path() / "sallmf_dataset2.jsonl";
  export_dataset(imported, path2.string());
  std::ifstream f1(path), f2(path2);
  std::stringstream s1, s2;
  s1 << f1.rdbuf();
  s2 << f2.rdbuf();
  EXPECT_EQ(s1.str(), s2.str());
  std::filesystem::remove(path);
  std::filesystem::remove(path2);
}

}  // namespace
}  // namespace sallmf::reward
