#include <doctest.h>

#include <filesystem>
#include <random>

#include "valign/error.hpp"
#include "valign/ingest.hpp"
#include "valign/text.hpp"

using namespace valign;
using namespace valign::ingest;
namespace fs = std::filesystem;

namespace {

std::string squash(std::string_view s) {
    std::string out;
    for (char c : s) {
        if (c != ' ' && c != '\n' && c != '\t') out.push_back(c);
    }
    return out;
}

std::string joined(const std::vector<Chunk>& chunks) {
    std::string out;
    for (const auto& c : chunks) out += c.text;
    return out;
}

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "valign_ingest_test";
    fs::create_directories(dir);
    return dir / name;
}

} // namespace

TEST_CASE("normalization") {
    CHECK(normalize_text("hello world\r\n") == "hello world\n");
    CHECK(normalize_text("a\rb") == "a\nb");
    CHECK(normalize_text("\xEF\xBB\xBFtext") == "text");
    CHECK(normalize_text("a\x01\x7F" "b\tc") == "ab\tc");
    CHECK(normalize_text("x\xC2\x85y") == "xy");
    CHECK_THROWS_WITH_AS(normalize_text("bad \xFF byte"), doctest::Contains("undecodable bytes"), InputError);
}

TEST_CASE("load_document contract") {
    const auto crlf = scratch("crlf.txt");
    text::write_file(crlf, "hello world\r\n");
    const auto doc = load_document(crlf, DocFormat::plain);
    CHECK(doc.text == "hello world\n");
    CHECK(doc.doc_id == "crlf");

    const auto empty = scratch("empty.txt");
    text::write_file(empty, "");
    CHECK_THROWS_WITH_AS(load_document(empty, DocFormat::plain), "empty document", InputError);
    CHECK_THROWS_WITH_AS(load_document(scratch("nope.txt"), DocFormat::plain), doctest::Contains("missing file"),
                         InputError);
    CHECK(format_from_path("a/b.md") == DocFormat::markdown);
    CHECK(format_from_path("a/b.TXT") == DocFormat::plain);
}

TEST_CASE("single paragraph under budget gives one chunk") {
    const auto doc = make_document("d", "Just one short paragraph about rights.\n", DocFormat::plain);
    const auto chunks = chunk_document(doc, {});
    REQUIRE(chunks.size() == 1);
    CHECK(chunks[0].text == "Just one short paragraph about rights.");
    CHECK(chunks[0].index == 0);
    CHECK(chunks[0].token_estimate == 6);
    CHECK(chunks[0].section_path.empty());
}

TEST_CASE("three headings give three chunks with section paths") {
    const std::string md = "# Policy\n\n## Gifts\n\nNo gifts above fifty dollars.\n\n"
                           "## Travel\n\nBook economy class.\n\n## Data\n\nProtect customer data.\n";
    const auto doc = make_document("bcg", md, DocFormat::markdown);
    const auto chunks = chunk_document(doc, {});
    REQUIRE(chunks.size() == 3);
    CHECK(chunks[0].section_path == std::vector<std::string>{"Policy", "Gifts"});
    CHECK(chunks[1].section_path == std::vector<std::string>{"Policy", "Travel"});
    CHECK(chunks[2].section_path == std::vector<std::string>{"Policy", "Data"});
    CHECK(chunks[2].text == "Protect customer data.");
    for (std::size_t i = 0; i < chunks.size(); ++i) CHECK(chunks[i].index == i);

    ChunkPolicy flat;
    flat.split_on_headings = false;
    const auto one = chunk_document(doc, flat);
    CHECK(one.size() == 1);
}

TEST_CASE("whitespace-only document yields no chunks") {
    RawDocument doc;
    doc.doc_id = "blank";
    doc.text = "  \n\n\t \n";
    CHECK(chunk_document(doc, {}).empty());
}

TEST_CASE("policy validation") {
    ChunkPolicy p;
    p.max_tokens = 31;
    CHECK_THROWS_AS(p.validate(), ConfigError);
    p.max_tokens = 32;
    CHECK_NOTHROW(p.validate());
    const auto doc = make_document("d", "x", DocFormat::plain);
    p.max_tokens = 8;
    CHECK_THROWS_AS(chunk_document(doc, p), ConfigError);
}

TEST_CASE("oversized paragraph is split within budget") {
    std::string para;
    for (int i = 0; i < 100; ++i) para += "word" + std::to_string(i) + " ";
    const auto doc = make_document("big", para, DocFormat::plain);
    ChunkPolicy p;
    p.max_tokens = 32;
    const auto chunks = chunk_document(doc, p);
    CHECK(chunks.size() == 4);
    for (const auto& c : chunks) CHECK(c.token_estimate <= 32);
    CHECK(squash(joined(chunks)) == squash(retained_text(doc, p)));
}

TEST_CASE("chars_div4 estimator") {
    CHECK(estimate_tokens("abcd", TokenEstimator::chars_div4) == 1);
    CHECK(estimate_tokens("abcde", TokenEstimator::chars_div4) == 2);
    CHECK(estimate_tokens("a b  c", TokenEstimator::whitespace) == 3);
}

TEST_CASE("properties over random documents") {
    std::mt19937_64 gen(1234);
    const std::vector<std::string> vocab{"rights", "policy", "dignity", "the", "of", "\xC3\xA9quit\xC3\xA9", "a",
                                         "freedom", "staff", "must"};
    for (int trial = 0; trial < 60; ++trial) {
        std::string md;
        const int sections = 1 + static_cast<int>(gen() % 4);
        for (int s = 0; s < sections; ++s) {
            if (gen() % 2) md += std::string(1 + gen() % 3, '#') + " Heading " + std::to_string(s) + "\n\n";
            const int paras = 1 + static_cast<int>(gen() % 4);
            for (int p = 0; p < paras; ++p) {
                const int words = 1 + static_cast<int>(gen() % 90);
                for (int w = 0; w < words; ++w) md += vocab[gen() % vocab.size()] + ((gen() % 11) ? " " : "\n");
                md += "\n\n";
            }
        }
        const auto doc = make_document("rand", md, DocFormat::markdown);
        ChunkPolicy p;
        p.max_tokens = 32 + gen() % 64;
        p.token_estimator = (trial % 3 == 0) ? TokenEstimator::chars_div4 : TokenEstimator::whitespace;
        const auto a = chunk_document(doc, p);
        const auto b = chunk_document(doc, p);
        CHECK(a == b);
        CHECK(squash(joined(a)) == squash(retained_text(doc, p)));
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i].index == i);
            CHECK(a[i].token_estimate <= p.max_tokens);
            CHECK(a[i].token_estimate > 0);
            CHECK_FALSE(text::is_blank(a[i].text));
            CHECK(doc.text.find(a[i].text) != std::string::npos);
        }
    }
}

TEST_CASE("chunks jsonl round trip") {
    const auto doc = make_document("d", "# A\n\none\n\n# B\n\ntwo\n", DocFormat::markdown);
    const auto chunks = chunk_document(doc, {});
    const auto path = scratch("chunks.jsonl");
    write_chunks(path, chunks);
    CHECK(read_chunks(path) == chunks);
    const auto j = to_json(chunks[0]);
    CHECK(j.contains("doc_id"));
    CHECK(j.contains("index"));
    CHECK(j.contains("section_path"));
    CHECK(j.contains("text"));
}
