#include <doctest.h>

#include "valign/mock.hpp"
#include "valign/sdg.hpp"
#include "valign/text.hpp"

using namespace valign;
using namespace valign::sdg;

namespace {

mock::MockReply reply(int status, std::string content) {
    mock::MockReply r;
    r.status = status;
    r.content = std::move(content);
    return r;
}

ingest::Chunk chunk(const std::string& doc, std::size_t index, const std::string& text) {
    ingest::Chunk c;
    c.doc_id = doc;
    c.index = index;
    c.text = text;
    c.token_estimate = text::split_ws(text).size();
    return c;
}

SdgConfig config(int nex = 3) {
    SdgConfig cfg;
    cfg.nex = nex;
    cfg.keyword = "rights";
    return cfg;
}

teacher::TeacherConfig tcfg() {
    teacher::TeacherConfig c;
    c.model_id = "mock";
    c.retry.base_backoff_ms = 0;
    return c;
}

bool is_question_prompt(const std::string& p) { return p.starts_with("You are asked to come up with a set of"); }

} // namespace

TEST_CASE("config validation") {
    auto cfg = config();
    CHECK_NOTHROW(cfg.validate());
    cfg.nex = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.nex = 11;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.nex = 10;
    CHECK_NOTHROW(cfg.validate());
    cfg.keyword = " ";
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = config();
    cfg.calls_per_chunk = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = config();
    cfg.answer_params = teacher::DecodeParams::nucleus();
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("question line parsing") {
    const std::string completion = "```jsonl\n"
                                   "{\"question\": \"First question here?\"}\n"
                                   "\n"
                                   "not json at all\n"
                                   "{\"question\": \"\"}\n"
                                   "{\"q\": \"wrong key\"}\n"
                                   "[\"array\"]\n"
                                   "{\"question\": \"Second question here?\"}\n"
                                   "{\"question\": \"Third question here?\"}\n"
                                   "```\n";
    const auto p = parse_question_lines(completion, 2);
    CHECK(p.questions == std::vector<std::string>{"First question here?", "Second question here?"});
    CHECK(p.dropped == 5);
}

TEST_CASE("n_ex questions per call and grounded answers") {
    auto transport = std::make_shared<mock::ScriptedTransport>(mock::fixture_responder);
    teacher::TeacherClient client(tcfg(), transport);
    const auto c = chunk("doc", 0, "Every employee has the right to fair pay. Other text follows.");
    auto cfg = config(4);
    cfg.calls_per_chunk = 2;
    cfg.seed = 10;
    const auto batch = gen_questions(client, c, cfg);
    CHECK(batch.questions.size() == 8);
    CHECK(batch.questions[0].text.find("draw 10") != std::string::npos);
    CHECK(batch.questions[4].text.find("draw 11") != std::string::npos);
    CHECK(batch.questions[4].call_id == 1);
    const auto reqs = transport->requests();
    REQUIRE(reqs.size() == 2);
    CHECK(reqs[0].body["seed"].get<int>() + reqs[1].body["seed"].get<int>() == 21);
    CHECK(reqs[0].body["seed"] != reqs[1].body["seed"]);
    CHECK(reqs[0].body["top_p"] == 0.9);

    const auto answer = gen_answer(client, c, batch.questions[0], cfg);
    REQUIRE(answer);
    CHECK(*answer == "According to the provided context: Every employee has the right to fair pay.");
    CHECK(transport->requests().back().body["temperature"] == 0.0);
}

TEST_CASE("sft dataset build is ordered and counts rejects") {
    auto transport = std::make_shared<mock::ScriptedTransport>([](const std::string& path, const nlohmann::json& req) {
        const auto p = mock::last_user_message(req);
        if (!is_question_prompt(p) && p.find("Chunk b1") != std::string::npos) return reply(200, "   ");
        return mock::fixture_responder(path, req);
    });
    teacher::TeacherClient client(tcfg(), transport);
    const std::vector<ingest::Chunk> chunks{chunk("b", 1, "Chunk b1 about rights."), chunk("a", 0, "Chunk a0 about rights."),
                                            chunk("b", 0, "Chunk b0 about rights.")};
    const auto r = build_sft_dataset(client, chunks, config(2));
    CHECK(r.questions_generated == 6);
    CHECK(r.rejected_answers == 2);
    REQUIRE(r.samples.size() == 4);
    CHECK(r.samples[0].id == "sft-a-0-0-0");
    CHECK(r.samples[1].id == "sft-a-0-0-1");
    CHECK(r.samples[2].id == "sft-b-0-0-0");
    CHECK(r.samples[3].chunk_ref == ChunkRef{"b", 0});
    for (const auto& s : r.samples) CHECK(s.answer.starts_with("According to the provided context"));

    const auto j = to_json(r.samples[0]);
    CHECK(j["messages"][0]["role"] == "user");
    CHECK(j["messages"][1]["role"] == "assistant");
    CHECK(instruct_from_json(j) == r.samples[0]);
}

TEST_CASE("teacher failure on one chunk is recorded, others continue") {
    auto transport = std::make_shared<mock::ScriptedTransport>([](const std::string& path, const nlohmann::json& req) {
        const auto p = mock::last_user_message(req);
        if (is_question_prompt(p) && p.find("broken") != std::string::npos) return reply(400, "nope");
        return mock::fixture_responder(path, req);
    });
    teacher::TeacherClient client(tcfg(), transport);
    const std::vector<ingest::Chunk> chunks{chunk("d", 0, "A broken chunk."), chunk("d", 1, "A healthy chunk.")};
    const auto r = build_sft_dataset(client, chunks, config(2));
    REQUIRE(r.failures.size() == 1);
    CHECK(r.failures[0].chunk_ref == ChunkRef{"d", 0});
    CHECK(r.failures[0].stage == "gen-questions");
    CHECK(r.failures[0].request_hash.size() == 64);
    CHECK(r.samples.size() == 2);
}

TEST_CASE("filter verdict parsing") {
    CHECK(parse_filter_verdict("YES").passed);
    CHECK(parse_filter_verdict(" yes.\n").passed);
    CHECK_FALSE(parse_filter_verdict("NO").passed);
    CHECK_FALSE(parse_filter_verdict("NO").parse_warning);
    const auto odd = parse_filter_verdict("Yes, because it mentions rights");
    CHECK_FALSE(odd.passed);
    CHECK(odd.parse_warning);
    CHECK(parse_filter_verdict("").parse_warning);
}

TEST_CASE("preference lines and orientation") {
    const std::string completion =
        "{\"question\":\"Q1 what?\",\"faithful\":\"good\",\"unfaithful\":\"bad\"}\n"
        "{\"question\":\"Q2 what?\",\"faithful\":\"same\",\"unfaithful\":\"same\"}\n"
        "{\"question\":\"Q3 what?\",\"faithful\":\"good\"}\n"
        "{\"question\":\"Q4 what?\",\"faithful\":\"yes\",\"unfaithful\":\"no\"}\n";
    const auto parsed = parse_preference_lines(completion, 5);
    REQUIRE(parsed.triples.size() == 2);
    CHECK(parsed.dropped == 2);
    const auto conv = to_preference_samples(parsed.triples);
    REQUIRE(conv.samples.size() == 2);
    CHECK(conv.samples[0].prompt == "Q1 what?");
    CHECK(conv.samples[0].chosen == "good");
    CHECK(conv.samples[0].rejected == "bad");
    const auto unpaired = to_unpaired(conv.samples);
    REQUIRE(unpaired.size() == 4);
    CHECK(unpaired[0].label);
    CHECK(unpaired[0].completion == "good");
    CHECK_FALSE(unpaired[1].label);
    CHECK(unpaired[1].completion == "bad");
    CHECK(unpaired_from_json(to_json(unpaired[1])) == unpaired[1]);
    CHECK(preference_from_json(to_json(conv.samples[1])) == conv.samples[1]);

    PreferenceTriple bad;
    bad.question = "q";
    bad.faithful = "x";
    bad.unfaithful = "x";
    CHECK(to_preference_samples({bad}).rejected == 1);
}

TEST_CASE("value filter gates preference generation") {
    auto transport = std::make_shared<mock::ScriptedTransport>(mock::fixture_responder);
    teacher::TeacherClient client(tcfg(), transport);
    const std::vector<ingest::Chunk> chunks{chunk("d", 0, "Staff have the right to privacy."),
                                            chunk("d", 1, "The cafeteria opens at nine."),
                                            chunk("d", 2, "Everyone has equal rights.")};
    const auto r = build_pref_dataset(client, chunks, config(3));
    CHECK(r.filtered_out == std::vector<ChunkRef>{{"d", 1}});
    CHECK(r.samples.size() == 6);
    for (const auto& s : r.samples) {
        CHECK(s.chunk_ref != ChunkRef{"d", 1});
        CHECK(s.chosen.starts_with("Follow the passage"));
        CHECK(s.rejected.starts_with("Ignore the passage"));
    }
    for (const auto& req : transport->requests()) {
        const auto p = mock::last_user_message(req.body);
        if (p.starts_with("You are asked to develop")) CHECK(p.find("cafeteria") == std::string::npos);
        if (p.starts_with("You are given a passage")) CHECK(req.body["temperature"] == 0.0);
    }
}

TEST_CASE("unparseable filter verdict drops the chunk with a warning count") {
    auto transport = std::make_shared<mock::ScriptedTransport>([](const std::string& path, const nlohmann::json& req) {
        if (mock::last_user_message(req).starts_with("You are given a passage")) return reply(200, "maybe");
        return mock::fixture_responder(path, req);
    });
    teacher::TeacherClient client(tcfg(), transport);
    const auto r = build_pref_dataset(client, {chunk("d", 0, "rights")}, config(2));
    CHECK(r.filter_parse_warnings == 1);
    CHECK(r.samples.empty());
    CHECK(r.filtered_out.size() == 1);
}

TEST_CASE("empty chunk list makes no calls") {
    auto transport = std::make_shared<mock::ScriptedTransport>(mock::fixture_responder);
    teacher::TeacherClient client(tcfg(), transport);
    CHECK(build_sft_dataset(client, {}, config()).samples.empty());
    CHECK(build_pref_dataset(client, {}, config()).samples.empty());
    CHECK(transport->request_count() == 0);
}
