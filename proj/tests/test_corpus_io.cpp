#include <cstring>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "support.hpp"
#include "tpnet/corpus_io.hpp"
#include "tpnet/datagen.hpp"

using namespace tpnet;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << s;
}

bool bitwise_equal(const Trajectory& a, const Trajectory& b) {
  if (a.frames.size() != b.frames.size() || a.contact != b.contact) return false;
  for (std::size_t t = 0; t < a.frames.size(); ++t) {
    if (a.frames[t].size() != b.frames[t].size()) return false;
    if (std::memcmp(a.frames[t].data(), b.frames[t].data(), a.frames[t].size() * sizeof(Vec2)) != 0) return false;
  }
  return a.meta == b.meta;
}

CorpusFormatError::Kind read_error_kind(const std::filesystem::path& p, long* frame = nullptr) {
  try {
    (void)read_trajectory(p);
  } catch (const CorpusFormatError& e) {
    if (frame) *frame = e.frame();
    return e.kind();
  }
  ADD_FAILURE() << "no error for " << p;
  return CorpusFormatError::Kind::io;
}

}  // namespace

TEST(CorpusIo, WriteReadIsBitwiseLossless) {
  test::TempDir dir;
  auto corpus = generate_corpus(WorldConfig{}, InitGrid::paper(), 4, 120, 21);
  // Values without short decimal forms.
  corpus[0].frames[3][0] = {0.1 + 0.2, 1.0 / 3.0};
  corpus[0].frames[4][1] = {5e-324, 44.999999999999993};
  const auto paths = write_corpus(dir.path(), corpus);
  ASSERT_EQ(paths.size(), 4u);
  const auto back = read_corpus(dir.path());
  ASSERT_EQ(back.size(), corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) EXPECT_TRUE(bitwise_equal(corpus[i], back[i])) << i;
}

TEST(CorpusIo, ReadCorpusOrdersByFilename) {
  test::TempDir dir;
  const auto corpus = generate_corpus(WorldConfig{}, InitGrid::paper(), 12, 3, 2);
  write_corpus(dir.path(), corpus);
  spit(dir / "notes.txt", "ignored");
  const auto back = read_corpus(dir.path());
  ASSERT_EQ(back.size(), 12u);
  for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(back[i], corpus[i]);
}

TEST(CorpusIo, UnknownVersionIsVersionError) {
  test::TempDir dir;
  const auto corpus = generate_corpus(WorldConfig{}, InitGrid::paper(), 1, 5, 2);
  const auto path = dir / "t.jsonl";
  write_trajectory(path, corpus[0]);
  auto text = slurp(path);
  const auto pos = text.find("\"version\":1");
  ASSERT_NE(pos, std::string::npos);
  text.replace(pos, 11, "\"version\":7");
  spit(path, text);
  EXPECT_EQ(read_error_kind(path), CorpusFormatError::Kind::version);
}

TEST(CorpusIo, TruncatedMidFrameNamesFrameIndex) {
  test::TempDir dir;
  const auto corpus = generate_corpus(WorldConfig{}, InitGrid::paper(), 1, 10, 2);
  const auto path = dir / "t.jsonl";
  write_trajectory(path, corpus[0]);
  const auto text = slurp(path);
  // Keep the header and frames 0..5, then half of frame 6.
  std::size_t cut = 0;
  for (int line = 0; line < 7; ++line) cut = text.find('\n', cut) + 1;
  const std::size_t next = text.find('\n', cut);
  spit(path, text.substr(0, cut + (next - cut) / 2));
  long frame = -1;
  EXPECT_EQ(read_error_kind(path, &frame), CorpusFormatError::Kind::truncated);
  EXPECT_EQ(frame, 6);
  try {
    (void)read_trajectory(path);
  } catch (const CorpusFormatError& e) {
    EXPECT_NE(std::string(e.what()).find("frame 6"), std::string::npos);
  }

  spit(path, text.substr(0, cut));
  EXPECT_EQ(read_error_kind(path, &frame), CorpusFormatError::Kind::truncated);
  EXPECT_EQ(frame, 6);
}

TEST(CorpusIo, OtherErrorKinds) {
  test::TempDir dir;
  EXPECT_EQ(read_error_kind(dir / "missing.jsonl"), CorpusFormatError::Kind::io);

  const auto corpus = generate_corpus(WorldConfig{}, InitGrid::paper(), 1, 4, 2);
  const auto path = dir / "t.jsonl";
  write_trajectory(path, corpus[0]);
  const auto text = slurp(path);

  spit(path, "{not json\n");
  EXPECT_EQ(read_error_kind(path), CorpusFormatError::Kind::malformed);

  // Drop one particle from frame 2.
  std::size_t line_start = 0;
  for (int line = 0; line < 3; ++line) line_start = text.find('\n', line_start) + 1;
  auto edited = text;
  const auto first_pair = edited.find("[[", line_start) + 1;
  const auto after = edited.find("],", first_pair) + 2;
  edited.erase(first_pair, after - first_pair);
  spit(path, edited);
  long frame = -1;
  EXPECT_EQ(read_error_kind(path, &frame), CorpusFormatError::Kind::particle_count);
  EXPECT_EQ(frame, 2);

  EXPECT_THROW(read_corpus(dir / "nope"), CorpusFormatError);
}

TEST(CorpusIo, InitGridJsonRoundTrip) {
  InitGrid g;
  g.center_steps = 4;
  g.magnitudes = {0.5};
  const InitGrid back = nlohmann::json(g).get<InitGrid>();
  EXPECT_EQ(back.center_steps, 4u);
  EXPECT_EQ(back.magnitudes, g.magnitudes);
  EXPECT_EQ(back.directions_deg, g.directions_deg);
  EXPECT_EQ(nlohmann::json::parse(R"({"center_steps":2})").get<InitGrid>().magnitudes, InitGrid{}.magnitudes);
}
