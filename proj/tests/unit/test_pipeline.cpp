#include <doctest.h>

#include <filesystem>

#include "valign/curation.hpp"
#include "valign/error.hpp"
#include "valign/mock.hpp"
#include "valign/pipeline.hpp"
#include "valign/text.hpp"

using namespace valign;
using namespace valign::pipeline;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path fresh_root(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("valign_pipeline_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

json base_config(const fs::path& root) {
    return {{"run_id", "t"},
            {"run_root", root.string()},
            {"documents", {std::string(VALIGN_FIXTURES) + "/charter.md"}},
            {"keyword", "rights"},
            {"nex", 3},
            {"split", {{"group_by_chunk", false}}}};
}

} // namespace

TEST_CASE("stage names round trip") {
    for (auto s : all_stages()) CHECK(stage_from_string(to_string(s)) == s);
    CHECK(to_string(Stage::export_data) == "export");
    CHECK_THROWS_AS(stage_from_string("train"), Error);
}

TEST_CASE("config validation") {
    CHECK_THROWS_AS(validate_config(json{{"keyword", "k"}, {"bogus", 1}}), ConfigError);
    CHECK_THROWS_AS(validate_config(json{{"keyword", "k"}, {"teacher", {{"nope", 1}}}}), ConfigError);
    CHECK_THROWS_AS(validate_config(json{{"keyword", ""}}), ConfigError);
    CHECK_THROWS_AS(validate_config(json{{"keyword", "k"}, {"nex", 11}}), ConfigError);
    CHECK_THROWS_AS(validate_config(json{{"keyword", "k"}, {"nex", "five"}}), ConfigError);
    CHECK_THROWS_AS(validate_config(json{{"keyword", "k"}, {"split", {{"train", 0.9}}}}), ConfigError);
    CHECK_THROWS_AS(validate_config(json{{"keyword", "k"}, {"chunk_policy", {{"max_tokens", 8}}}}), ConfigError);
    CHECK_THROWS_AS(validate_config(json{{"keyword", "k"}, {"dpo", {{"beta", 0}}}}), ConfigError);
    CHECK_THROWS_AS(validate_config(json{{"keyword", "k"}, {"rag", {{"mode", "bm25"}}}}), ConfigError);
    const auto ok = validate_config(json{{"keyword", "k"}, {"judge", {{"responses", {{"any", "x.jsonl"}}}}}});
    CHECK(ok.values["nex"] == 5);
    CHECK(ok.run_id == ok.hash.substr(0, 12));
}

TEST_CASE("operational keys do not change the hash") {
    const auto a = validate_config(json{{"keyword", "k"}});
    const auto b = validate_config(json{{"keyword", "k"},
                                        {"run_root", "elsewhere"},
                                        {"teacher", {{"base_url", "http://10.0.0.1:9"}, {"max_concurrency", 16}}}});
    CHECK(a.hash == b.hash);
    const auto c = validate_config(json{{"keyword", "k"}, {"nex", 4}});
    CHECK(a.hash != c.hash);
}

TEST_CASE("overrides") {
    json cfg = json::object();
    apply_override(cfg, "nex=3");
    apply_override(cfg, "split.seed=7");
    apply_override(cfg, "keyword=privacy");
    CHECK(cfg["nex"] == 3);
    CHECK(cfg["split"]["seed"] == 7);
    CHECK(cfg["keyword"] == "privacy");
    CHECK_THROWS_AS(apply_override(cfg, "novalue"), ConfigError);
}

TEST_CASE("config file paths resolve against the file") {
    const auto root = fresh_root("load");
    text::write_file(root / "cfg.json", json{{"keyword", "k"}, {"run_root", "out"}}.dump());
    const auto cfg = load_config(root / "cfg.json", {"run_id=abc"});
    CHECK(cfg.run_dir() == root / "out" / "abc");
    text::write_file(root / "bad.json", "{not json");
    CHECK_THROWS_AS(load_config(root / "bad.json"), ConfigError);
    CHECK_THROWS_AS(load_config(root / "missing.json"), ConfigError);
    fs::remove_all(root);
}

TEST_CASE("missing upstream artifacts are reported") {
    const auto root = fresh_root("missing");
    Pipeline p(validate_config(base_config(root)), std::make_shared<mock::ScriptedTransport>(mock::fixture_responder));
    CHECK_THROWS_WITH_AS(p.run_stage(Stage::gen_instruct), "missing chunks artifact", MissingArtifactError);
    CHECK(p.manifest().stage(Stage::gen_instruct).status == "failed");
    CHECK_THROWS_AS(p.run_stage(Stage::curate), MissingArtifactError);
    CHECK_THROWS_AS(p.run_stage(Stage::rag_answer), MissingArtifactError);
    fs::remove_all(root);
}

TEST_CASE("full run, resumption and cache reuse") {
    const auto root = fresh_root("full");
    const auto cfg = validate_config(base_config(root));
    auto transport = std::make_shared<mock::ScriptedTransport>(mock::fixture_responder);
    {
        Pipeline p(cfg, transport);
        p.run_all();
        const auto& m = p.manifest();
        CHECK(m.failure_count() == 0);
        for (auto s : all_stages()) {
            const auto& st = m.stage(s).status;
            if (s == Stage::verify_losses) {
                CHECK(st == "skipped");
            } else {
                CHECK(st == "completed");
            }
        }
        CHECK(p.network_requests() > 0);
        CHECK(fs::exists(p.artifact("export/sft_chat/train.jsonl")));
        CHECK(fs::exists(p.artifact("export/dpo_pairs/train.jsonl")));
        CHECK(fs::exists(p.artifact("export/unpaired_pref/train.jsonl")));
        CHECK(fs::exists(p.artifact("export/dpo_config.json")));
        CHECK(fs::exists(p.artifact("winrates.csv")));
        const auto report = json::parse(text::read_file(p.artifact("curation_report.json")));
        CHECK(report.contains("sft"));
        const auto metrics = json::parse(text::read_file(p.artifact("metrics.json")));
        CHECK(metrics.contains("rag"));
    }
    const auto before = transport->request_count();
    {
        Pipeline p(cfg, transport);
        CHECK_FALSE(p.run_stage(Stage::ingest));
        CHECK_FALSE(p.run_stage(Stage::gen_instruct));
        CHECK(p.run_stage(Stage::gen_instruct, true));
        CHECK(p.network_requests() == 0);
        CHECK(p.manifest().stage(Stage::curate).status == "pending");
        CHECK(p.manifest().stage(Stage::ingest).status == "completed");
    }
    CHECK(transport->request_count() == before);

    {
        Pipeline p(cfg, transport);
        fs::remove(p.artifact("chunks.jsonl"));
        CHECK(p.run_stage(Stage::ingest));
    }
    fs::remove_all(root);
}

TEST_CASE("empty test split yields an empty metrics report") {
    const auto root = fresh_root("grouped");
    auto raw = base_config(root);
    raw["split"]["group_by_chunk"] = true;
    Pipeline p(validate_config(raw), std::make_shared<mock::ScriptedTransport>(mock::fixture_responder));
    p.run_all();
    CHECK(p.manifest().failure_count() == 0);
    CHECK(p.manifest().stage(Stage::eval_metrics).status == "completed");
    if (curation::import_sft_chat(p.artifact("curated/sft_test.jsonl")).empty()) {
        CHECK(json::parse(text::read_file(p.artifact("metrics.json"))).empty());
    }
    fs::remove_all(root);
}

TEST_CASE("changed config reruns a completed stage") {
    const auto root = fresh_root("rehash");
    auto raw = base_config(root);
    {
        Pipeline p(validate_config(raw), std::make_shared<mock::ScriptedTransport>(mock::fixture_responder));
        CHECK(p.run_stage(Stage::ingest));
    }
    raw["nex"] = 2;
    Pipeline p(validate_config(raw), std::make_shared<mock::ScriptedTransport>(mock::fixture_responder));
    CHECK(p.run_stage(Stage::ingest));
    fs::remove_all(root);
}

TEST_CASE("loss verification stage") {
    const auto root = fresh_root("losses");
    text::write_jsonl(root / "pref_scores.jsonl",
                      {json{{"sample_id", "a"}, {"logp_theta_w", -1.0}, {"logp_theta_l", -1.0}, {"logp_ref_w", -1.0},
                            {"logp_ref_l", -1.0}}});
    auto raw = base_config(root);
    raw["scores"] = {{"pref", (root / "pref_scores.jsonl").string()}};
    Pipeline p(validate_config(raw));
    CHECK(p.run_stage(Stage::verify_losses));
    const auto losses = json::parse(text::read_file(p.artifact("losses.json")));
    CHECK(losses.dump().find("0.693147") != std::string::npos);
    fs::remove_all(root);
}
