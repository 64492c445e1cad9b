#include "sallmf/textio.hpp"

#include "golden_util.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <set>
#include <string>

namespace sallmf::textio {
namespace {

TEST(FormatTest, FourDecimalCoordinates) {
  Vec p(3);
  p << -0.0567, 0.8098, 0.4486;
  EXPECT_EQ(format_point(p), "[-0.0567,0.8098,0.4486]");
  EXPECT_EQ(format_point(Vec::Zero(3)), "[0.0000,0.0000,0.0000]");
}

TEST(FormatTest, NegativeZeroNormalized) {
  EXPECT_EQ(format_coord(-1e-9), "0.0000");
  EXPECT_EQ(format_coord(-0.0), "0.0000");
}

TEST(SerializeTest, LayoutMismatchRejected) {
  auto reach = envs::make_task("point_reach");
  auto seg = testutil::golden_trajectory1();  // manipulation layout
  EXPECT_THROW(serialize_segment(seg, reach), std::invalid_argument);
}

TEST(SerializeTest, OnlyCurrentStepChannelsAppear) {
  auto task = envs::make_task("button_press_lite");
  auto text = serialize_segment(testutil::golden_trajectory1(), task);
  EXPECT_NE(text.raw.find("\"tcp\""), std::string::npos);
  EXPECT_NE(text.raw.find("\"obj\""), std::string::npos);
  EXPECT_NE(text.raw.find("\"target\""), std::string::npos);
  EXPECT_EQ(text.raw.find("grip"), std::string::npos);
  EXPECT_EQ(text.raw.find("prev"), std::string::npos);
}

TEST(GoldenTest, JudgePromptMatchesInput1) {
  auto task = envs::make_task("button_press_lite");
  auto t1 = serialize_segment(testutil::golden_trajectory1(), task);
  auto t2 = serialize_segment(testutil::golden_trajectory2(), task);
  EXPECT_EQ(build_judge_prompt(t1, t2, task, 10), testutil::read_fixture("judge_input1.txt"));
}

TEST(GoldenTest, SwappedJudgePromptMatchesInput2) {
  auto task = envs::make_task("button_press_lite");
  auto t1 = serialize_segment(testutil::golden_trajectory1(), task);
  auto t2 = serialize_segment(testutil::golden_trajectory2(), task);
  EXPECT_EQ(build_judge_prompt(t2, t1, task, 10), testutil::read_fixture("judge_input2.txt"));
}

TEST(GoldenTest, GeneratePromptMatchesInput3) {
  auto task = envs::make_task("button_press_lite");
  auto better = serialize_segment(testutil::golden_trajectory2(), task);
  EXPECT_EQ(build_generate_prompt(better, task, 10),
            testutil::read_fixture("generate_input3.txt"));
}

TEST(GoldenTest, TemplateAssetsMatchEmbedded) {
  EXPECT_EQ(testutil::read_asset("prompts/judge_v1.txt"), std::string(kJudgeTemplateV1));
  EXPECT_EQ(testutil::read_asset("prompts/generate_v1.txt"), std::string(kGenerateTemplateV1));
}

TEST(JudgePromptTest, SwapChangesOnlyTrajectoryOrder) {
  auto task = envs::make_task("button_press_lite");
  auto t1 = serialize_segment(testutil::golden_trajectory1(), task);
  auto t2 = serialize_segment(testutil::golden_trajectory2(), task);
  std::string ab = build_judge_prompt(t1, t2, task, 10);
  std::string ba = build_judge_prompt(t2, t1, task, 10);
  EXPECT_NE(ab, ba);
  // Same multiset of lines, just reordered blocks.
  auto swap_blocks = [&](std::string s) {
    const auto p1 = s.find(t1.raw);
    const auto p2 = s.find(t2.raw);
    return std::make_pair(p1 != std::string::npos, p2 != std::string::npos);
  };
  EXPECT_EQ(swap_blocks(ab), std::make_pair(true, true));
  EXPECT_EQ(swap_blocks(ba), std::make_pair(true, true));
}

TEST(JudgePromptTest, StepCountAppearsInPreamble) {
  auto task = envs::make_task("button_press_lite");
  auto t1 = serialize_segment(testutil::golden_trajectory1(), task);
  auto t2 = serialize_segment(testutil::golden_trajectory2(), task);
  std::string prompt = build_judge_prompt(t1, t2, task, 10);
  EXPECT_NE(prompt.find("contain 10 steps"), std::string::npos);
}

TEST(JudgePromptTest, DeterministicTemplate) {
  auto task = envs::make_task("point_reach");
  std::mt19937_64 rng(5);
  auto seg = testutil::random_segment(task, rng, 10);
  auto text = serialize_segment(seg, task);
  EXPECT_EQ(build_judge_prompt(text, text, task, 10), build_judge_prompt(text, text, task, 10));
}

TEST(GeneratePromptTest, FirstStateBlockHasOnePointPerChannel) {
  auto task = envs::make_task("button_press_lite");
  auto better = serialize_segment(testutil::golden_trajectory2(), task);
  std::string prompt = build_generate_prompt(better, task, 10);
  auto block = outer_brace_block(prompt);
  ASSERT_TRUE(block.has_value());
  auto scanned = scan_block(*block);
  ASSERT_TRUE(scanned.ok());
  for (const auto& [key, points] : scanned.value().channels) {
    EXPECT_EQ(points.size(), 1u) << key;
  }
}

TEST(ParseJudgeTest, GoldenOutput1IsSecond) {
  auto reply = parse_judge_reply(testutil::read_fixture("judge_output1.txt"));
  ASSERT_TRUE(reply.ok());
  EXPECT_EQ(reply.value().verdict, JudgeVerdict::Second);
}

TEST(ParseJudgeTest, BareDigits) {
  EXPECT_EQ(parse_judge_reply("1").value().verdict, JudgeVerdict::First);
  EXPECT_EQ(parse_judge_reply("2").value().verdict, JudgeVerdict::Second);
  EXPECT_EQ(parse_judge_reply("0").value().verdict, JudgeVerdict::Unsure);
}

TEST(ParseJudgeTest, MarkdownEmphasisStripped) {
  EXPECT_EQ(parse_judge_reply("analysis...\n*2*").value().verdict, JudgeVerdict::Second);
  EXPECT_EQ(parse_judge_reply("analysis...\n**1**").value().verdict, JudgeVerdict::First);
  EXPECT_EQ(parse_judge_reply("`0`").value().verdict, JudgeVerdict::Unsure);
}

TEST(ParseJudgeTest, ScansFromTheEnd) {
  EXPECT_EQ(parse_judge_reply("1\nsome analysis\n2").value().verdict, JudgeVerdict::Second);
  EXPECT_EQ(parse_judge_reply("2. Which Trajectory is Better?\n 1").value().verdict,
            JudgeVerdict::First);
}

TEST(ParseJudgeTest, NoVerdictIsAnError) {
  auto r = parse_judge_reply("The trajectories are identical.");
  ASSERT_FALSE(r.ok());
  EXPECT_EQ(r.error(), JudgeParseError::NoVerdictLine);
  EXPECT_FALSE(parse_judge_reply("").ok());
  EXPECT_FALSE(parse_judge_reply("verdict: 12").ok());
}

// --- generated trajectory validation ------------------------------------

TEST(ParseGeneratedTest, GoldenOutput3Parses) {
  auto task = envs::make_task("button_press_lite");
  auto seg = testutil::golden_trajectory2();
  auto gen = parse_generated_trajectory(testutil::read_fixture("generate_output3.txt"), task, 10,
                                        seg.states().front());
  ASSERT_TRUE(gen.ok());
  const auto& tcp = gen.value().channels.front().second;
  ASSERT_EQ(tcp.size(), 10u);
  EXPECT_DOUBLE_EQ(tcp[0][0], 0.4363);
  EXPECT_DOUBLE_EQ(tcp[0][1], 0.8715);
  EXPECT_DOUBLE_EQ(tcp[0][2], 0.4302);
}

TEST(ParseGeneratedTest, TruncatedIsWrongStepCount) {
  auto task = envs::make_task("button_press_lite");
  auto seg = testutil::golden_trajectory2();
  std::string raw = testutil::read_fixture("generate_output3.txt");
  // Drop one tcp point.
  const auto pos = raw.find("[0.4360,0.8705,0.4305], ");
  ASSERT_NE(pos, std::string::npos);
  raw.erase(pos, std::string("[0.4360,0.8705,0.4305], ").size());
  auto gen = parse_generated_trajectory(raw, task, 10, seg.states().front());
  ASSERT_FALSE(gen.ok());
  EXPECT_EQ(gen.error(), GenerateParseError::WrongStepCount);
}

TEST(ParseGeneratedTest, WrongInitialStateDetected) {
  auto task = envs::make_task("button_press_lite");
  auto seg = testutil::golden_trajectory2();
  std::string raw = testutil::read_fixture("generate_output3.txt");
  const auto pos = raw.find("[0.4363,0.8715,0.4302]");
  ASSERT_NE(pos, std::string::npos);
  raw.replace(pos, std::string("[0.4363,0.8715,0.4302]").size(), "[0.9000,0.9000,0.9000]");
  auto gen = parse_generated_trajectory(raw, task, 10, seg.states().front());
  ASSERT_FALSE(gen.ok());
  EXPECT_EQ(gen.error(), GenerateParseError::WrongInitialState);
}

TEST(ParseGeneratedTest, MalformedNumberDetected) {
  auto task = envs::make_task("button_press_lite");
  auto seg = testutil::golden_trajectory2();
  std::string raw = testutil::read_fixture("generate_output3.txt");
  const auto pos = raw.find("0.8705");
  raw.replace(pos, 6, "0.8x05");
  auto gen = parse_generated_trajectory(raw, task, 10, seg.states().front());
  ASSERT_FALSE(gen.ok());
  EXPECT_EQ(gen.error(), GenerateParseError::MalformedNumber);
}

TEST(ParseGeneratedTest, NonFiniteIsMalformed) {
  auto task = envs::make_task("button_press_lite");
  auto seg = testutil::golden_trajectory2();
  std::string raw = testutil::read_fixture("generate_output3.txt");
  const auto pos = raw.find("0.8705");
  raw.replace(pos, 6, "nan");
  auto gen = parse_generated_trajectory(raw, task, 10, seg.states().front());
  ASSERT_FALSE(gen.ok());
  EXPECT_EQ(gen.error(), GenerateParseError::MalformedNumber);
}

TEST(ParseGeneratedTest, OutOfBoundsDetected) {
  auto task = envs::make_task("button_press_lite");
  auto seg = testutil::golden_trajectory2();
  std::string raw = testutil::read_fixture("generate_output3.txt");
  const auto pos = raw.find("[0.4360,0.8705,0.4305]");
  raw.replace(pos, std::string("[0.4360,0.8705,0.4305]").size(), "[5.0000,0.8705,0.4305]");
  auto gen = parse_generated_trajectory(raw, task, 10, seg.states().front());
  ASSERT_FALSE(gen.ok());
  EXPECT_EQ(gen.error(), GenerateParseError::OutOfBounds);
}

TEST(ParseGeneratedTest, NoBlockFound) {
  auto task = envs::make_task("button_press_lite");
  auto seg = testutil::golden_trajectory2();
  auto gen = parse_generated_trajectory("I cannot help with that.", task, 10,
                                        seg.states().front());
  ASSERT_FALSE(gen.ok());
  EXPECT_EQ(gen.error(), GenerateParseError::NoBlockFound);
}

// --- reconstruction ------------------------------------------------------

TEST(GeneratedToSegmentTest, IdentityReconstruction) {
  auto task = envs::make_task("button_press_lite");
  auto seg = testutil::golden_trajectory2();
  auto text = serialize_segment(seg, task);
  auto gen = parse_generated_trajectory(text.raw, task, seg.length(), seg.states().front());
  ASSERT_TRUE(gen.ok());
  auto rebuilt = generated_to_segment(gen.value(), seg);
  EXPECT_TRUE(rebuilt.synthetic());
  const auto& L = seg.layout();
  for (int t = 0; t < seg.length(); ++t) {
    const auto& a = rebuilt.states()[static_cast<size_t>(t)];
    const auto& b = seg.states()[static_cast<size_t>(t)];
    EXPECT_LT((a.slice(L.tcp) - b.slice(L.tcp)).norm(), 1e-12);
    EXPECT_LT((a.slice(L.obj) - b.slice(L.obj)).norm(), 1e-12);
    EXPECT_LT((a.slice(L.target) - b.slice(L.target)).norm(), 1e-12);
    EXPECT_EQ(a[L.grip.begin], b[L.grip.begin]);  // copy rule
  }
}

TEST(GeneratedToSegmentTest, PrevSliceShiftRule) {
  auto task = envs::make_task("button_press_lite");
  auto seg = testutil::golden_trajectory2();
  auto text = serialize_segment(seg, task);
  auto gen = parse_generated_trajectory(text.raw, task, seg.length(), seg.states().front());
  ASSERT_TRUE(gen.ok());
  auto rebuilt = generated_to_segment(gen.value(), seg);
  const auto& L = seg.layout();
  for (int t = 1; t < rebuilt.length(); ++t) {
    const auto& cur = rebuilt.states()[static_cast<size_t>(t)];
    const auto& prev = rebuilt.states()[static_cast<size_t>(t - 1)];
    EXPECT_LT((cur.slice(L.prev_tcp) - prev.slice(L.tcp)).norm(), 1e-12);
    EXPECT_LT((cur.slice(L.prev_obj) - prev.slice(L.obj)).norm(), 1e-12);
  }
  // Step 0 copies the template's previous-step slices.
  EXPECT_LT((rebuilt.states()[0].slice(L.prev_tcp) - seg.states()[0].slice(L.prev_tcp)).norm(),
            1e-12);
  // Synthetic segments carry zero privileged rewards.
  PrivilegedAccess::Scope oracle;
  EXPECT_EQ(rebuilt.privileged_return(), 0.0);
}

// --- properties ----------------------------------------------------------

TEST(PropertyTest, GrammarRoundTrip) {
  std::mt19937_64 rng(123);
  for (const auto& name : {"button_press_lite", "point_reach", "maze_open"}) {
    auto task = envs::make_task(name);
    for (int i = 0; i < 400; ++i) {
      auto seg = testutil::random_segment(task, rng, 1 + static_cast<int>(rng() % 12));
      auto text = serialize_segment(seg, task);
      // Fixed point: parse back and re-serialize.
      auto scanned = scan_block(text.raw);
      ASSERT_TRUE(scanned.ok());
      std::vector<std::pair<std::string, std::vector<Vec>>> channels;
      Vec target;
      for (const auto& [key, pts] : scanned.value().channels) {
        if (key == "target") {
          target = pts.front();
        } else {
          channels.emplace_back(key, pts);
        }
      }
      EXPECT_EQ(trajectory_block(channels, target), text.raw);
      // Parsed values equal the 4-decimal serialization of the raw slices.
      int ci = 0;
      for (const auto& ch : task.movable_channels) {
        const auto& points = channels[static_cast<size_t>(ci++)].second;
        for (int t = 0; t < seg.length(); ++t) {
          Vec expected = seg.states()[static_cast<size_t>(t)].slice(ch.slice);
          for (int d = 0; d < expected.size(); ++d) {
            EXPECT_EQ(format_coord(points[static_cast<size_t>(t)][d]),
                      format_coord(expected[d]));
          }
        }
      }
    }
  }
}

TEST(PropertyTest, PromptInjectivity) {
  auto task = envs::make_task("point_reach");
  std::mt19937_64 rng(9);
  std::set<std::string> prompts;
  const int n = 200;
  for (int i = 0; i < n; ++i) {
    auto a = serialize_segment(testutil::random_segment(task, rng, 10), task);
    auto b = serialize_segment(testutil::random_segment(task, rng, 10), task);
    prompts.insert(build_judge_prompt(a, b, task, 10));
  }
  EXPECT_EQ(prompts.size(), static_cast<size_t>(n));
}

TEST(PropertyTest, ValidatorSoundness) {
  // Anything that passes validation converts into a segment satisfying the
  // core invariants (construction enforces them; no throw expected).
  auto task = envs::make_task("button_press_lite");
  std::mt19937_64 rng(31);
  for (int i = 0; i < 100; ++i) {
    auto seg = testutil::random_segment(task, rng, 10);
    auto text = serialize_segment(seg, task);
    auto gen = parse_generated_trajectory(text.raw, task, 10, seg.states().front());
    ASSERT_TRUE(gen.ok());
    EXPECT_NO_THROW({
      auto rebuilt = generated_to_segment(gen.value(), seg);
      EXPECT_EQ(rebuilt.length(), seg.length());
    });
  }
}

TEST(OneShotTest, AppendsExampleBlock) {
  auto task = envs::make_task("button_press_lite");
  auto t1 = serialize_segment(testutil::golden_trajectory1(), task);
  auto t2 = serialize_segment(testutil::golden_trajectory2(), task);
  std::string base = build_judge_prompt(t1, t2, task, 10);
  std::string one_shot = build_judge_prompt(t1, t2, task, 10, PromptTemplates::v1(), true);
  EXPECT_EQ(one_shot.rfind(base, 0), 0u);
  EXPECT_GT(one_shot.size(), base.size());
  EXPECT_NE(one_shot.find("example of a good answer"), std::string::npos);
}

}  // namespace
}  // namespace sallmf::textio
