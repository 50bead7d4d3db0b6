#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "valign/mock.hpp"
#include "valign/rag.hpp"

using namespace valign;
using namespace valign::rag;
namespace fs = std::filesystem;

namespace {

ingest::Chunk chunk(std::size_t index, const std::string& text) {
    ingest::Chunk c;
    c.doc_id = "doc";
    c.index = index;
    c.text = text;
    c.token_estimate = 1;
    return c;
}

const std::vector<ingest::Chunk> kCorpus{
    chunk(0, "Employees have the right to equal pay for equal work."),
    chunk(1, "Customer data must be encrypted and access is logged."),
    chunk(2, "Gifts above fifty dollars must be declined politely."),
    chunk(3, "Employees have the right to equal pay for equal work."),
};

} // namespace

TEST_CASE("empty corpus is rejected") {
    CHECK_THROWS_WITH_AS(build_index({}, IndexMode::lexical), "cannot build an index over an empty corpus", InputError);
}

TEST_CASE("tf-idf weights") {
    const auto idx = build_index(kCorpus, IndexMode::lexical);
    CHECK(idx.size() == 4);
    const auto& vocab = idx.vocabulary();
    const auto pay = vocab.at("pay");
    const auto gifts = vocab.at("gifts");
    CHECK(idx.document_frequency(pay) == 2);
    CHECK(idx.document_frequency(gifts) == 1);
    CHECK(idx.idf()[pay] == doctest::Approx(std::log(5.0 / 3.0) + 1.0));
    CHECK(idx.idf()[gifts] == doctest::Approx(std::log(5.0 / 2.0) + 1.0));
    for (const auto& e : idx.entries()) {
        double norm = 0.0;
        for (const auto& [term, w] : e.tfidf) norm += w * w;
        CHECK(norm == doctest::Approx(1.0));
    }
    std::size_t prev = 0;
    bool first = true;
    for (const auto& [term, id] : vocab) {
        if (!first) CHECK(id == prev + 1);
        prev = id;
        first = false;
    }
}

TEST_CASE("retrieval ranks by cosine and breaks ties by position") {
    const auto idx = build_index(kCorpus, IndexMode::lexical);
    const auto hits = retrieve(idx, "encrypted customer data");
    REQUIRE(hits.size() == 1);
    CHECK(hits[0].entry == 1);
    const auto tie = retrieve(idx, "equal pay", 2);
    REQUIRE(tie.size() == 2);
    CHECK(tie[0].entry == 0);
    CHECK(tie[1].entry == 3);
    CHECK(tie[0].score == doctest::Approx(tie[1].score));
    const auto all = retrieve(idx, "the right to pay gifts", 10);
    CHECK(all.size() == 4);
    for (std::size_t i = 1; i < all.size(); ++i) CHECK(all[i - 1].score >= all[i].score);
}

TEST_CASE("empty and out-of-vocabulary queries return nothing") {
    const auto idx = build_index(kCorpus, IndexMode::lexical);
    CHECK(retrieve(idx, "").empty());
    CHECK(retrieve(idx, "zebra quantum").empty());
}

TEST_CASE("every chunk retrieves itself") {
    std::vector<ingest::Chunk> corpus;
    const std::vector<std::string> words{"honesty", "fairness", "privacy", "safety",  "respect", "dignity",
                                         "loyalty", "courage", "candour", "equity",  "care",    "trust"};
    for (std::size_t i = 0; i < words.size(); ++i) {
        corpus.push_back(chunk(i, "Our policy on " + words[i] + " and " + words[(i + 5) % words.size()] +
                                      " applies to every employee in code " + std::to_string(1000 + i) + "."));
    }
    const auto idx = build_index(corpus, IndexMode::lexical);
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const auto hits = retrieve(idx, corpus[i].text);
        REQUIRE(hits.size() == 1);
        CHECK(hits[0].entry == i);
        CHECK(hits[0].score == doctest::Approx(1.0));
    }
}

TEST_CASE("oracle retrieval") {
    const auto idx = build_index(kCorpus, IndexMode::lexical);
    const auto h = oracle_retrieve(idx, "doc", 2);
    REQUIRE(h);
    CHECK(h->entry == 2);
    CHECK_FALSE(oracle_retrieve(idx, "doc", 9));
}

TEST_CASE("index persists bit-for-bit") {
    const auto idx = build_index(kCorpus, IndexMode::lexical);
    const auto path = fs::temp_directory_path() / "valign_rag_test" / "index.json";
    idx.save(path);
    const auto loaded = ChunkIndex::load(path);
    CHECK(loaded == idx);
    CHECK(retrieve(loaded, "gifts").front().entry == 2);
    fs::remove_all(path.parent_path());
    CHECK_THROWS_AS(ChunkIndex::from_json(nlohmann::json{{"format", "nope"}}), InputError);
}

TEST_CASE("embedding mode") {
    teacher::TeacherConfig cfg;
    cfg.model_id = "mock";
    auto transport = std::make_shared<mock::ScriptedTransport>(mock::fixture_responder);
    teacher::TeacherClient client(cfg, transport);
    CHECK_THROWS_AS(build_index(kCorpus, IndexMode::embedding), ConfigError);
    const auto idx = build_index(kCorpus, IndexMode::embedding, &client);
    CHECK(idx.mode() == IndexMode::embedding);
    const auto hits = retrieve(idx, kCorpus[2].text, 1, &client);
    REQUIRE(hits.size() == 1);
    CHECK(hits[0].entry == 2);
    CHECK(ChunkIndex::from_json(idx.to_json()) == idx);
}

TEST_CASE("rag prompt composition") {
    const auto grounded = compose_rag_prompt("Can I accept a gift?", &kCorpus[2]);
    CHECK_FALSE(grounded.fallback);
    CHECK(grounded.prompt.find("Gifts above fifty dollars") != std::string::npos);
    CHECK(grounded.prompt.find("Query: Can I accept a gift?") != std::string::npos);
    const auto bare = compose_rag_prompt("Can I accept a gift?", nullptr);
    CHECK(bare.fallback);
    CHECK(bare.prompt == "Can I accept a gift?");
    CHECK(index_mode_from_string("embedding") == IndexMode::embedding);
    CHECK_THROWS_AS(index_mode_from_string("bm25"), ConfigError);
}
