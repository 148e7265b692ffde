#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "tpt/corpus.hpp"
#include "tpt/vocab.hpp"

using tpt::kBosId;
using tpt::kEosId;
using tpt::kPadId;
using tpt::kUnkId;
using tpt::Vocabulary;

namespace {

std::string temp_dir() {
  auto dir = std::filesystem::temp_directory_path() / "tpt_cli_data_test";
  std::filesystem::create_directories(dir);
  return dir.string();
}

}  // namespace

TEST(Vocab, FrequencyRankingByHand) {
  // corpus "a a b", size 6 -> ids a:4, b:5
  std::map<std::string, long long> counts{{"a", 2}, {"b", 1}};
  auto v = Vocabulary::build(counts, 6);
  EXPECT_EQ(v.id_of("a"), 4);
  EXPECT_EQ(v.id_of("b"), 5);
  EXPECT_EQ(v.size(), 6);
}

TEST(Vocab, TiesBreakLexicographically) {
  std::map<std::string, long long> counts{{"b", 3}, {"a", 3}, {"c", 3}};
  auto v = Vocabulary::build(counts, 10);
  EXPECT_EQ(v.id_of("a"), 4);
  EXPECT_EQ(v.id_of("b"), 5);
  EXPECT_EQ(v.id_of("c"), 6);
}

TEST(Vocab, SaveLoadRoundTrip) {
  std::map<std::string, long long> counts{{"apple", 9}, {"pear", 5}, {"plum", 2}};
  auto v = Vocabulary::build(counts, 10);
  const auto path = temp_dir() + "/vocab.txt";
  v.save(path);
  auto loaded = Vocabulary::load(path);
  EXPECT_EQ(loaded.size(), v.size());
  for (const auto& t : {"apple", "pear", "plum"}) EXPECT_EQ(loaded.id_of(t), v.id_of(t));
  // line number = id - 4
  std::ifstream is(path);
  std::string first;
  std::getline(is, first);
  EXPECT_EQ(first, "apple");
  std::filesystem::remove(path);
}

TEST(Vocab, SizeCapKeepsMostFrequent) {
  std::map<std::string, long long> counts{{"x", 10}, {"y", 5}, {"z", 1}};
  auto v = Vocabulary::build(counts, 6);  // room for two tokens
  EXPECT_EQ(v.id_of("x"), 4);
  EXPECT_EQ(v.id_of("y"), 5);
  EXPECT_EQ(v.id_of("z"), kUnkId);
  EXPECT_THROW(Vocabulary::build(counts, 4), tpt::ConfigError);
  EXPECT_THROW(Vocabulary::build({}, 10), tpt::DataError);
}

TEST(Encode, RoundTripAndUnk) {
  std::map<std::string, long long> counts{{"the", 5}, {"cat", 4}, {"sat", 3}};
  auto v = Vocabulary::build(counts, 10);
  auto ids = tpt::encode_text("The cat sat", v, 16);
  EXPECT_EQ(ids.back(), kEosId);
  EXPECT_EQ(tpt::decode_ids(ids, v), "the cat sat");
  auto with_oov = tpt::encode_text("the dog sat", v, 16);
  EXPECT_EQ(with_oov[1], kUnkId);
  EXPECT_EQ(tpt::decode_ids(with_oov, v), "the <unk> sat");
}

TEST(Encode, TruncationAtMaxLen) {
  std::map<std::string, long long> counts{{"w", 5}};
  auto v = Vocabulary::build(counts, 8);
  std::string text;
  const int max_len = 6;
  for (int i = 0; i < max_len + 5; ++i) text += "w ";
  auto ids = tpt::encode_text(text, v, max_len);
  ASSERT_EQ(static_cast<int>(ids.size()), max_len);
  for (int i = 0; i < max_len - 1; ++i) EXPECT_EQ(ids[i], 4);
  EXPECT_EQ(ids.back(), kEosId);
}

TEST(Encode, DecodeStopsAtEosAndChecksRange) {
  std::map<std::string, long long> counts{{"a", 2}, {"b", 1}};
  auto v = Vocabulary::build(counts, 8);
  EXPECT_EQ(tpt::decode_ids({4, 5, kEosId, 4, 4}, v), "a b");
  EXPECT_EQ(tpt::decode_ids({kBosId, 4, kPadId, 5, kEosId}, v), "a b");
  EXPECT_THROW(tpt::decode_ids({7}, v), tpt::DataError);
}

TEST(Corpus, JsonlLoadingAndErrors) {
  const auto dir = temp_dir();
  const auto good = dir + "/corpus.jsonl";
  {
    std::ofstream os(good);
    os << R"({"document": "a b c", "summary": "a b"})" << "\n";
    os << "\n";  // blank lines are skipped
    os << R"({"document": "x y", "summary": "y"})" << "\n";
  }
  auto corpus = tpt::load_corpus(good);
  ASSERT_EQ(corpus.size(), 2u);
  EXPECT_EQ(corpus[1].summary, "y");

  const auto bad = dir + "/bad.jsonl";
  {
    std::ofstream os(bad);
    os << R"({"document": "a"})" << "\n";
  }
  EXPECT_THROW(tpt::load_corpus(bad), tpt::DataError);
  {
    std::ofstream os(bad);
    os << R"({"document": "a", "summary": "   "})" << "\n";
  }
  try {
    tpt::load_corpus(bad);
    FAIL() << "empty summary must be a data error";
  } catch (const tpt::DataError& e) {
    EXPECT_NE(std::string(e.what()).find("summary"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find(":1"), std::string::npos);  // names the line
  }
  {
    std::ofstream os(bad);
    os << "{ not json\n";
  }
  EXPECT_THROW(tpt::load_corpus(bad), tpt::DataError);
  EXPECT_THROW(tpt::load_corpus(dir + "/missing.jsonl"), tpt::DataError);
  std::filesystem::remove(good);
  std::filesystem::remove(bad);
}

TEST(Corpus, EncodeCorpusTruncates) {
  std::vector<tpt::CorpusExample> corpus{{"a a a a a a a a", "b b"}};
  std::map<std::string, long long> counts{{"a", 8}, {"b", 2}};
  auto v = Vocabulary::build(counts, 8);
  auto enc = tpt::encode_corpus(corpus, v, 4, 16);
  ASSERT_EQ(enc.size(), 1u);
  EXPECT_EQ(enc[0].source.size(), 4u);  // 3 tokens + EOS
  EXPECT_EQ(enc[0].target.size(), 3u);
}
