#include "coteval/corpus.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

using namespace coteval;

namespace {

const std::vector<std::string> kGroups{"A", "B"};

CorpusError::Kind error_kind(std::string_view text) {
    try {
        parse_corpus(text, kGroups);
    } catch (const CorpusError& e) {
        return e.kind();
    }
    ADD_FAILURE() << "expected a CorpusError";
    return CorpusError::Kind::Unreadable;
}

}  // namespace

TEST(Corpus, ParsesRequiredAndOptionalFields) {
    auto c = parse_corpus(
        R"({"id":"s1","group":"A","cot_body":"x","preamble":"ctx","summary":"sum","metadata":{"domain":"vision"}})"
        "\n"
        R"({"id":"s2","group":"B","cot_body":"y"})"
        "\n",
        kGroups);
    ASSERT_EQ(c.size(), 2u);
    EXPECT_EQ(c.samples[0].preamble, "ctx");
    EXPECT_EQ(c.samples[0].metadata["domain"], "vision");
    EXPECT_EQ(c.samples[1].summary, "");
    EXPECT_EQ(c.samples[1].line, 2u);
}

TEST(Corpus, SkipsBlankLinesButCountsThem) {
    auto c = parse_corpus("\n  \n{\"id\":\"s1\",\"group\":\"A\",\"cot_body\":\"x\"}\r\n", kGroups);
    ASSERT_EQ(c.size(), 1u);
    EXPECT_EQ(c.samples[0].line, 3u);
}

TEST(Corpus, FoldsExtraKeysIntoMetadata) {
    auto c = parse_corpus(R"({"id":"s1","group":"A","cot_body":"x","source":"interview"})", kGroups);
    EXPECT_EQ(c.samples[0].metadata["source"], "interview");
    EXPECT_THROW(parse_corpus(R"({"id":"s1","group":"A","cot_body":"x","metadata":3,"extra":1})", kGroups),
                 CorpusError);
}

TEST(Corpus, RejectsEachErrorClass) {
    EXPECT_EQ(error_kind("{not json"), CorpusError::Kind::Malformed);
    EXPECT_EQ(error_kind("[1,2]"), CorpusError::Kind::Malformed);
    EXPECT_EQ(error_kind(R"({"group":"A","cot_body":"x"})"), CorpusError::Kind::MissingField);
    EXPECT_EQ(error_kind(R"({"id":"s","group":"A"})"), CorpusError::Kind::MissingField);
    EXPECT_EQ(error_kind(R"({"id":7,"group":"A","cot_body":"x"})"), CorpusError::Kind::WrongType);
    EXPECT_EQ(error_kind(R"({"id":"s","group":"A","cot_body":"  \n\t"})"), CorpusError::Kind::EmptyBody);
    EXPECT_EQ(error_kind(R"({"id":"s","group":"C","cot_body":"x"})"), CorpusError::Kind::UnknownGroup);
}

TEST(Corpus, DuplicateIdNamesTheIdAndLine) {
    try {
        parse_corpus("{\"id\":\"dup7\",\"group\":\"A\",\"cot_body\":\"x\"}\n"
                     "{\"id\":\"dup7\",\"group\":\"B\",\"cot_body\":\"y\"}\n",
                     kGroups);
        FAIL() << "expected duplicate id error";
    } catch (const CorpusError& e) {
        EXPECT_EQ(e.kind(), CorpusError::Kind::DuplicateId);
        EXPECT_EQ(e.id(), "dup7");
        EXPECT_EQ(e.line(), 2u);
        EXPECT_NE(std::string(e.what()).find("dup7"), std::string::npos);
        EXPECT_EQ(corpus_error_name(e.kind()), "duplicate_id");
    }
}

TEST(Corpus, ErrorsCarryLineNumbers) {
    try {
        parse_corpus("{\"id\":\"a\",\"group\":\"A\",\"cot_body\":\"x\"}\n{\"id\":\"b\",\"group\":\"A\"}\n", kGroups);
        FAIL();
    } catch (const CorpusError& e) {
        EXPECT_EQ(e.line(), 2u);
        EXPECT_EQ(e.field(), "cot_body");
    }
}

TEST(Corpus, RoundTripIsByteStable) {
    auto c = parse_corpus(
        R"({"metadata":{"z":1,"a":2},"cot_body":"body \"q\" ü","group":"B","id":"s9","note":"n"})", kGroups);
    auto once = to_jsonl(c);
    auto again = to_jsonl(parse_corpus(once, kGroups));
    EXPECT_EQ(once, again);
    EXPECT_EQ(parse_corpus(once, kGroups), c);
}

TEST(Corpus, LoadAndMergeFiles) {
    auto dir = std::filesystem::temp_directory_path() / "coteval_corpus_test";
    std::filesystem::create_directories(dir);
    {
        std::ofstream(dir / "a.jsonl") << R"({"id":"a1","group":"A","cot_body":"x"})" << "\n";
        std::ofstream(dir / "b.jsonl") << R"({"id":"b1","group":"B","cot_body":"y"})" << "\n";
        std::ofstream(dir / "dup.jsonl") << R"({"id":"a1","group":"B","cot_body":"z"})" << "\n";
    }
    auto a = load_corpus(dir / "a.jsonl", kGroups);
    auto b = load_corpus(dir / "b.jsonl", kGroups);
    auto merged = merge_corpora({a, b}, kGroups);
    EXPECT_EQ(merged.size(), 2u);
    EXPECT_EQ(partition_by_group(merged).at("B").front().id, "b1");

    auto dup = load_corpus(dir / "dup.jsonl", kGroups);
    EXPECT_THROW(merge_corpora({a, dup}, kGroups), CorpusError);
    try {
        load_corpus(dir / "missing.jsonl", kGroups);
        FAIL();
    } catch (const CorpusError& e) {
        EXPECT_EQ(e.kind(), CorpusError::Kind::Unreadable);
    }
    std::filesystem::remove_all(dir);
}

TEST(Corpus, ShippedSamplesLoad) {
    auto a = load_corpus(std::filesystem::path(COTEVAL_SAMPLES) / "corpus_a.jsonl", kGroups);
    auto b = load_corpus(std::filesystem::path(COTEVAL_SAMPLES) / "corpus_b.jsonl", kGroups);
    EXPECT_EQ(a.size(), 20u);
    EXPECT_EQ(b.size(), 20u);
    EXPECT_EQ(merge_corpora({a, b}, kGroups).size(), 40u);
}
