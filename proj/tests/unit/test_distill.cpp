#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include <unistd.h>

#include "ctcd/base_model.hpp"
#include "ctcd/ctc.hpp"
#include "ctcd/distill.hpp"

using namespace ctcd;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.d_model = 32;
  c.n_layers = 1;
  c.n_heads = 2;
  c.max_seq_len = 16;
  return c;
}

DistilledExample with_labels(const std::string& labels) {
  DistilledExample ex;
  ex.labels = vocab::encode(labels);
  ex.input = ex.labels;
  return ex;
}

}  // namespace

TEST(Argmax, LowestIndexWinsTies) {
  const std::vector<float> v{1.0f, 3.0f, 3.0f, 2.0f};
  EXPECT_EQ(argmax(v), 1u);
}

TEST(SplitWithOverlap, WindowsShareOneToken) {
  TokenSeq seq(10);
  for (int i = 0; i < 10; ++i) seq[i] = i;
  const auto parts = split_with_overlap(seq, 4);
  ASSERT_EQ(parts.size(), 3u);
  EXPECT_EQ(parts[0], (TokenSeq{0, 1, 2, 3}));
  EXPECT_EQ(parts[1], (TokenSeq{3, 4, 5, 6}));
  EXPECT_EQ(parts[2], (TokenSeq{6, 7, 8, 9}));
  EXPECT_EQ(split_with_overlap(TokenSeq{1, 2}, 4).size(), 1u);
}

TEST(ExtractAnchorTargets, Cases) {
  // Anchor 0: targets start at label index 1.
  EXPECT_EQ(extract_anchor_targets(with_labels("xabcz"), 0, 3, 5), vocab::encode("abc"));
  EXPECT_EQ(extract_anchor_targets(with_labels("xaaaz"), 0, 3, 5), vocab::encode("aaa"));
  EXPECT_EQ(extract_anchor_targets(with_labels("xaaaz"), 0, 3, 4), vocab::encode("aa"));
  EXPECT_EQ(extract_anchor_targets(with_labels("xab"), 1, 3, 5), vocab::encode("b"));
  EXPECT_THROW(extract_anchor_targets(with_labels("xab"), 2, 3, 5), UsageError);
}

TEST(ExtractAnchorTargets, AlwaysFeasible) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 200; ++i) {
    std::string s(12, 'a');
    for (auto& ch : s) ch = static_cast<char>('a' + rng() % 2);
    const std::size_t L = 1 + rng() % 5, m = 1 + rng() % 5, t = rng() % 11;
    const auto y = extract_anchor_targets(with_labels(s), t, m, L);
    EXPECT_LE(min_alignment_length(y), L);
    EXPECT_LE(y.size(), m);
  }
}

TEST(Distill, LabelsAreTeacherArgmax) {
  const BaseModel base(tiny_config(), 1);
  const std::vector<TokenSeq> corpus{vocab::encode_prompt("hello world, again")};
  const auto ds = make_distilled_dataset(corpus, base);
  ASSERT_EQ(ds.size(), 2u);  // 19 tokens over windows of 16
  EXPECT_TRUE(make_distilled_dataset({}, base).empty());
  for (const auto& ex : ds) {
    ASSERT_EQ(ex.input.size(), ex.labels.size());
    const auto out = base.forward(ex.input);
    for (std::size_t t = 0; t < ex.input.size(); ++t) {
      EXPECT_EQ(ex.labels[t], static_cast<TokenId>(argmax(out.logits.data().subspan(t * 259, 259))));
    }
  }
  EXPECT_EQ(make_distilled_dataset(corpus, base), ds);
}

TEST(Distill, FileRoundTrip) {
  const std::vector<DistilledExample> ds{with_labels("abc"), with_labels("z")};
  const auto path = std::filesystem::temp_directory_path() / ("ctcd_ds_" + std::to_string(::getpid()));
  write_distilled(path, {{"base", "0123"}}, ds);
  const auto back = read_distilled(path);
  EXPECT_EQ(back.examples, ds);
  EXPECT_EQ(back.header["base"], "0123");
  std::filesystem::remove(path);
}
