#include "valign/pipeline.hpp"

#include <algorithm>
#include <array>
#include <exception>
#include <map>
#include <set>

#include <spdlog/spdlog.h>

#include "valign/align_math.hpp"
#include "valign/curation.hpp"
#include "valign/error.hpp"
#include "valign/ingest.hpp"
#include "valign/judge.hpp"
#include "valign/metrics.hpp"
#include "valign/prompts.hpp"
#include "valign/rag.hpp"
#include "valign/sdg.hpp"
#include "valign/text.hpp"

namespace valign::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::string_view kChunks = "chunks.jsonl";
constexpr std::string_view kSftRaw = "sft_raw.jsonl";
constexpr std::string_view kPrefRaw = "pref_raw.jsonl";
constexpr std::string_view kCurationReport = "curation_report.json";
constexpr std::string_view kRagIndex = "rag_index.json";
constexpr std::string_view kQueries = "queries.jsonl";
constexpr std::string_view kReferences = "references.jsonl";
constexpr std::string_view kRagAnswers = "rag_answers.jsonl";
constexpr std::string_view kMetrics = "metrics.json";
constexpr std::string_view kTranscript = "judge_transcript.jsonl";
constexpr std::string_view kWinrates = "winrates.json";
constexpr std::string_view kWinratesCsv = "winrates.csv";
constexpr std::string_view kLosses = "losses.json";

const std::array<std::string_view, 3> kSplitNames{"train", "val", "test"};

// Keys whose values may hold arbitrary method names.
const std::set<std::string> kFreeObjects{"/eval/hypotheses", "/judge/responses"};

// Operational settings that do not change artifact content.
const std::vector<std::string> kUnhashed{"/run_id",
                                         "/run_root",
                                         "/teacher/base_url",
                                         "/teacher/api_key_env",
                                         "/teacher/max_concurrency",
                                         "/teacher/timeout_s",
                                         "/teacher/max_attempts",
                                         "/teacher/base_backoff_ms",
                                         "/judge/base_url",
                                         "/judge/max_concurrency"};

void merge_checked(json& target, const json& src, const std::string& ptr) {
    if (!src.is_object()) throw ConfigError("expected an object at " + (ptr.empty() ? "/" : ptr));
    for (const auto& [key, value] : src.items()) {
        const auto child = ptr + "/" + key;
        if (!target.contains(key)) throw ConfigError("unknown config key: " + child);
        auto& slot = target[key];
        if (kFreeObjects.count(child)) {
            if (!value.is_object()) throw ConfigError(child + " must be an object");
            for (const auto& [m, p] : value.items()) {
                if (!p.is_string()) throw ConfigError(child + "/" + m + " must be a path string");
            }
            slot = value;
        } else if (slot.is_object()) {
            merge_checked(slot, value, child);
        } else {
            const bool numeric_ok = slot.is_number() && value.is_number();
            if (slot.type() != value.type() && !numeric_ok) {
                throw ConfigError("wrong type for config key " + child + ": expected " + slot.type_name());
            }
            if (slot.is_number_integer() && !value.is_number_integer()) {
                throw ConfigError("config key " + child + " must be an integer");
            }
            slot = value;
        }
    }
}

void check_range(bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
}

teacher::TeacherConfig teacher_config(const PipelineConfig& cfg, bool judge) {
    const auto& t = cfg.values.at("teacher");
    teacher::TeacherConfig tc;
    tc.base_url = t.at("base_url").get<std::string>();
    tc.model_id = t.at("model_id").get<std::string>();
    tc.embedding_model_id = t.at("embedding_model_id").get<std::string>();
    tc.api_key_env = t.at("api_key_env").get<std::string>();
    tc.max_concurrency = t.at("max_concurrency").get<int>();
    tc.retry.max_attempts = t.at("max_attempts").get<int>();
    tc.retry.base_backoff_ms = t.at("base_backoff_ms").get<int>();
    tc.timeout_s = t.at("timeout_s").get<int>();
    tc.cache_dir = cfg.run_dir() / "cache";
    if (judge) {
        const auto& j = cfg.values.at("judge");
        if (const auto url = j.at("base_url").get<std::string>(); !url.empty()) tc.base_url = url;
        tc.model_id = j.at("model_id").get<std::string>();
        tc.max_concurrency = j.at("max_concurrency").get<int>();
    }
    return tc;
}

sdg::SdgConfig sdg_config(const PipelineConfig& cfg, const prompts::TemplateStore* templates) {
    const auto& v = cfg.values;
    const auto& t = v.at("teacher");
    sdg::SdgConfig s;
    s.nex = v.at("nex").get<int>();
    s.keyword = v.at("keyword").get<std::string>();
    s.calls_per_chunk = v.at("calls_per_chunk").get<int>();
    s.seed = v.at("seed").get<std::int64_t>();
    const auto temperature = t.at("temperature").get<double>();
    const auto top_p = t.at("top_p").get<double>();
    const auto max_tokens = t.at("max_tokens").get<int>();
    s.question_params = teacher::DecodeParams::nucleus(temperature, top_p, max_tokens);
    s.preference_params = teacher::DecodeParams::nucleus(temperature, top_p, max_tokens);
    s.answer_params = teacher::DecodeParams::greedy(max_tokens);
    s.templates = templates;
    return s;
}

curation::SplitSpec split_spec(const PipelineConfig& cfg) {
    const auto& s = cfg.values.at("split");
    curation::SplitSpec spec;
    spec.train_frac = s.at("train").get<double>();
    spec.val_frac = s.at("val").get<double>();
    spec.test_frac = s.at("test").get<double>();
    spec.seed = s.at("seed").get<std::uint64_t>();
    spec.group_by_chunk = s.at("group_by_chunk").get<bool>();
    return spec;
}

json usage_diff(const teacher::Usage& before, const teacher::Usage& after) {
    return {{"prompt_tokens", after.prompt_tokens - before.prompt_tokens},
            {"completion_tokens", after.completion_tokens - before.completion_tokens},
            {"network_requests", after.network_requests - before.network_requests},
            {"cache_hits", after.cache_hits - before.cache_hits},
            {"failures", after.failures - before.failures}};
}

teacher::Usage add(teacher::Usage a, const teacher::Usage& b) {
    a.prompt_tokens += b.prompt_tokens;
    a.completion_tokens += b.completion_tokens;
    a.network_requests += b.network_requests;
    a.cache_hits += b.cache_hits;
    a.failures += b.failures;
    return a;
}

const std::map<Stage, std::vector<Stage>>& dependencies() {
    static const std::map<Stage, std::vector<Stage>> deps{
        {Stage::ingest, {}},
        {Stage::gen_instruct, {Stage::ingest}},
        {Stage::gen_pref, {Stage::ingest}},
        {Stage::curate, {Stage::gen_instruct, Stage::gen_pref}},
        {Stage::export_data, {Stage::curate}},
        {Stage::rag_index, {Stage::ingest}},
        {Stage::rag_answer, {Stage::rag_index, Stage::curate}},
        {Stage::eval_metrics, {Stage::rag_answer}},
        {Stage::eval_judge, {Stage::rag_answer}},
        {Stage::verify_losses, {}},
    };
    return deps;
}

bool depends_on(Stage s, Stage upstream) {
    for (auto d : dependencies().at(s)) {
        if (d == upstream || depends_on(d, upstream)) return true;
    }
    return false;
}

// Reorders `responses` to follow `prompts`; every prompt must have exactly one response.
std::vector<judge::Response> align_to(const std::vector<judge::Prompt>& prompts,
                                      const std::vector<judge::Response>& responses, const std::string& method) {
    std::map<std::string, const judge::Response*> by_id;
    for (const auto& r : responses) {
        if (!by_id.emplace(r.prompt_id, &r).second) {
            throw InputError("duplicate prompt_id " + r.prompt_id + " in responses of " + method);
        }
    }
    std::vector<judge::Response> out;
    out.reserve(prompts.size());
    for (const auto& p : prompts) {
        const auto it = by_id.find(p.prompt_id);
        if (it == by_id.end()) throw InputError("misaligned response lists: " + method + " has no response for " + p.prompt_id);
        out.push_back(*it->second);
    }
    return out;
}

} // namespace

const std::vector<Stage>& all_stages() {
    static const std::vector<Stage> stages{Stage::ingest,     Stage::gen_instruct, Stage::gen_pref,
                                           Stage::curate,     Stage::export_data,  Stage::rag_index,
                                           Stage::rag_answer, Stage::eval_metrics, Stage::eval_judge,
                                           Stage::verify_losses};
    return stages;
}

std::string to_string(Stage s) {
    switch (s) {
    case Stage::ingest: return "ingest";
    case Stage::gen_instruct: return "gen-instruct";
    case Stage::gen_pref: return "gen-pref";
    case Stage::curate: return "curate";
    case Stage::export_data: return "export";
    case Stage::rag_index: return "rag-index";
    case Stage::rag_answer: return "rag-answer";
    case Stage::eval_metrics: return "eval-metrics";
    case Stage::eval_judge: return "eval-judge";
    case Stage::verify_losses: return "verify-losses";
    }
    return "";
}

Stage stage_from_string(std::string_view s) {
    for (auto st : all_stages()) {
        if (to_string(st) == s) return st;
    }
    throw ConfigError("unknown stage: " + std::string(s));
}

json default_config() {
    return {
        {"run_id", ""},
        {"run_root", "runs"},
        {"use_case", "values"},
        {"documents", json::array()},
        {"chunk_policy", {{"max_tokens", 512}, {"split_on_headings", true}, {"token_estimator", "whitespace"}}},
        {"teacher",
         {{"base_url", "http://127.0.0.1:8000"},
          {"model_id", "mistralai/Mixtral-8x7B-Instruct-v0.1"},
          {"embedding_model_id", ""},
          {"api_key_env", "OPENAI_API_KEY"},
          {"max_concurrency", 4},
          {"max_attempts", 4},
          {"base_backoff_ms", 500},
          {"timeout_s", 120},
          {"temperature", 1.0},
          {"top_p", 0.9},
          {"max_tokens", 1024}}},
        {"templates_dir", ""},
        {"nex", sdg::kRecommendedNex},
        {"keyword", ""},
        {"calls_per_chunk", 1},
        {"seed", 0},
        {"split", {{"train", 0.8}, {"val", 0.1}, {"test", 0.1}, {"seed", 0}, {"group_by_chunk", true}}},
        {"rag", {{"mode", "lexical"}, {"top_k", 1}, {"queries", ""}, {"oracle", false}}},
        {"eval", {{"references", ""}, {"hypotheses", json::object()}, {"embed_f1", false}}},
        {"judge",
         {{"base_url", ""},
          {"model_id", std::string(judge::kDefaultJudgeModel)},
          {"max_concurrency", 4},
          {"prompts", ""},
          {"responses", json::object()},
          {"rubric", ""},
          {"seed", 0},
          {"level", 0.95},
          {"bootstrap_resamples", 1000},
          {"bootstrap_seed", 0}}},
        {"dpo", {{"beta", 0.1}}},
        {"scores", {{"pref", ""}, {"sft", ""}}},
    };
}

void apply_override(json& config, std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos || eq == 0) throw ConfigError("override must look like key=value: " + std::string(assignment));
    const std::string key(assignment.substr(0, eq));
    const std::string raw(assignment.substr(eq + 1));
    std::string ptr;
    for (std::size_t start = 0; start <= key.size();) {
        auto dot = key.find('.', start);
        if (dot == std::string::npos) dot = key.size();
        ptr += "/" + key.substr(start, dot - start);
        start = dot + 1;
    }
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    config[json::json_pointer(ptr)] = std::move(value);
}

fs::path PipelineConfig::resolve(const std::string& p) const {
    fs::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
}

fs::path PipelineConfig::run_dir() const {
    return resolve(values.at("run_root").get<std::string>()) / run_id;
}

PipelineConfig validate_config(const json& raw, fs::path base_dir) {
    PipelineConfig cfg;
    cfg.base_dir = std::move(base_dir);
    cfg.values = default_config();
    merge_checked(cfg.values, raw, "");
    const auto& v = cfg.values;

    for (const auto& d : v.at("documents")) check_range(d.is_string(), "documents must be a list of paths");
    const auto nex = v.at("nex").get<int>();
    check_range(nex >= 1 && nex <= sdg::kMaxNex, "nex must lie in [1, " + std::to_string(sdg::kMaxNex) + "]");
    check_range(!text::is_blank(v.at("keyword").get<std::string>()), "keyword must be non-empty");
    check_range(v.at("calls_per_chunk").get<int>() >= 1, "calls_per_chunk must be at least 1");

    ingest::ChunkPolicy policy;
    policy.max_tokens = v.at("chunk_policy").at("max_tokens").get<std::size_t>();
    policy.token_estimator = ingest::token_estimator_from_string(v.at("chunk_policy").at("token_estimator").get<std::string>());
    policy.validate();

    split_spec(cfg).validate();
    rag::index_mode_from_string(v.at("rag").at("mode").get<std::string>());
    check_range(v.at("rag").at("top_k").get<int>() >= 1, "rag.top_k must be at least 1");
    align::DpoConfig{v.at("dpo").at("beta").get<double>()}.validate();
    const auto level = v.at("judge").at("level").get<double>();
    check_range(level > 0.0 && level < 1.0, "judge.level must lie in (0, 1)");
    check_range(v.at("judge").at("bootstrap_resamples").get<int>() >= 2, "judge.bootstrap_resamples must be at least 2");

    const auto tmp = PipelineConfig{cfg.values, {}, {}, "x"};
    teacher_config(tmp, false).validate();
    teacher_config(tmp, true).validate();
    sdg_config(tmp, nullptr).validate();

    json hashed = cfg.values;
    for (const auto& p : kUnhashed) hashed[json::json_pointer(p)] = nullptr;
    cfg.hash = text::sha256_hex(hashed.dump());
    cfg.run_id = v.at("run_id").get<std::string>();
    if (cfg.run_id.empty()) cfg.run_id = cfg.hash.substr(0, 12);
    check_range(cfg.run_id.find_first_of("/\\") == std::string::npos && cfg.run_id != "." && cfg.run_id != "..",
                "run_id must be a plain directory name");
    return cfg;
}

PipelineConfig load_config(const fs::path& path, const std::vector<std::string>& overrides) {
    if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
    json raw = json::parse(text::read_file(path), nullptr, false);
    if (raw.is_discarded()) throw ConfigError("config file is not valid JSON: " + path.string());
    for (const auto& o : overrides) apply_override(raw, o);
    return validate_config(raw, path.parent_path());
}

// ---- manifest ---------------------------------------------------------------

StageRecord& RunManifest::stage(Stage s) {
    for (auto& r : stages) {
        if (r.name == to_string(s)) return r;
    }
    throw Error("stage not in manifest: " + to_string(s));
}

const StageRecord& RunManifest::stage(Stage s) const { return const_cast<RunManifest*>(this)->stage(s); }

std::size_t RunManifest::failure_count() const {
    std::size_t n = 0;
    for (const auto& r : stages) n += r.failures.size();
    return n;
}

json RunManifest::usage_totals() const {
    json total = json::object();
    for (const auto& r : stages) {
        for (const auto& [k, v] : r.usage.items()) total[k] = total.value(k, std::uint64_t{0}) + v.get<std::uint64_t>();
    }
    return total;
}

json RunManifest::to_json() const {
    json st = json::array();
    for (const auto& r : stages) {
        st.push_back({{"name", r.name},
                      {"status", r.status},
                      {"config_hash", r.config_hash},
                      {"artifacts", r.artifacts},
                      {"failures", r.failures},
                      {"usage", r.usage},
                      {"summary", r.summary}});
    }
    return {{"run_id", run_id},
            {"config_hash", config_hash},
            {"stages", std::move(st)},
            {"failure_count", failure_count()},
            {"usage_totals", usage_totals()}};
}

RunManifest RunManifest::from_json(const json& j) {
    try {
        RunManifest m;
        m.run_id = j.at("run_id").get<std::string>();
        m.config_hash = j.at("config_hash").get<std::string>();
        for (const auto& s : j.at("stages")) {
            StageRecord r;
            r.name = s.at("name").get<std::string>();
            r.status = s.at("status").get<std::string>();
            r.config_hash = s.at("config_hash").get<std::string>();
            r.artifacts = s.at("artifacts").get<std::vector<std::string>>();
            r.failures = s.at("failures");
            r.usage = s.at("usage");
            r.summary = s.value("summary", json::object());
            m.stages.push_back(std::move(r));
        }
        return m;
    } catch (const json::exception& e) {
        throw InputError(std::string("malformed run manifest: ") + e.what());
    }
}

// ---- pipeline ---------------------------------------------------------------

struct Pipeline::Clients {
    std::unique_ptr<teacher::TeacherClient> teacher;
    std::unique_ptr<teacher::TeacherClient> judge;
    std::optional<prompts::TemplateStore> templates;
};

Pipeline::Pipeline(PipelineConfig cfg, std::shared_ptr<teacher::Transport> transport)
    : cfg_(std::move(cfg)), transport_(std::move(transport)), clients_(std::make_unique<Clients>()) {
    manifest_.run_id = cfg_.run_id;
    manifest_.config_hash = cfg_.hash;
    for (auto s : all_stages()) {
        manifest_.stages.emplace_back();
        manifest_.stages.back().name = to_string(s);
    }
    const auto path = manifest_path();
    if (fs::exists(path)) {
        const auto previous = RunManifest::from_json(json::parse(text::read_file(path)));
        for (const auto& r : previous.stages) {
            for (auto& mine : manifest_.stages) {
                if (mine.name == r.name) mine = r;
            }
        }
    }
    const auto tdir = cfg_.values.at("templates_dir").get<std::string>();
    if (!tdir.empty()) clients_->templates = prompts::TemplateStore::with_overrides(cfg_.resolve(tdir));
}

Pipeline::~Pipeline() = default;

fs::path Pipeline::manifest_path() const { return cfg_.run_dir() / "manifest.json"; }

fs::path Pipeline::artifact(std::string_view name) const { return cfg_.run_dir() / fs::path(std::string(name)); }

std::uint64_t Pipeline::network_requests() const {
    std::uint64_t n = 0;
    if (clients_->teacher) n += clients_->teacher->usage().network_requests;
    if (clients_->judge) n += clients_->judge->usage().network_requests;
    return n;
}

teacher::TeacherClient& Pipeline::teacher_client() {
    if (!clients_->teacher) {
        clients_->teacher = std::make_unique<teacher::TeacherClient>(teacher_config(cfg_, false), transport_);
    }
    return *clients_->teacher;
}

teacher::TeacherClient& Pipeline::judge_client() {
    if (!clients_->judge) {
        clients_->judge = std::make_unique<teacher::TeacherClient>(teacher_config(cfg_, true), transport_);
    }
    return *clients_->judge;
}

void Pipeline::require(std::string_view artifact_name, std::string_view what) const {
    if (!fs::exists(artifact(artifact_name))) throw MissingArtifactError("missing " + std::string(what) + " artifact");
}

void Pipeline::save_manifest() const { text::write_file(manifest_path(), manifest_.to_json().dump(2) + "\n"); }

bool Pipeline::run_stage(Stage stage, bool force) {
    auto& rec = manifest_.stage(stage);
    const bool intact = std::all_of(rec.artifacts.begin(), rec.artifacts.end(),
                                    [&](const std::string& a) { return fs::exists(artifact(a)); });
    if (!force && rec.status == "completed" && rec.config_hash == cfg_.hash && intact) {
        spdlog::info("stage {} is up to date", rec.name);
        return false;
    }

    const auto before = add(clients_->teacher ? clients_->teacher->usage() : teacher::Usage{},
                            clients_->judge ? clients_->judge->usage() : teacher::Usage{});
    StageRecord fresh;
    fresh.name = rec.name;
    fresh.config_hash = cfg_.hash;
    spdlog::info("running stage {}", rec.name);
    std::exception_ptr error;
    try {
        execute(stage, fresh);
        fresh.status = "completed";
    } catch (const std::exception& e) {
        fresh.status = "failed";
        fresh.failures.push_back({{"error", e.what()}});
        error = std::current_exception();
    }
    const auto after = add(clients_->teacher ? clients_->teacher->usage() : teacher::Usage{},
                           clients_->judge ? clients_->judge->usage() : teacher::Usage{});
    fresh.usage = usage_diff(before, after);
    rec = std::move(fresh);
    for (auto s : all_stages()) {
        auto& down = manifest_.stage(s);
        if (depends_on(s, stage) && down.status == "completed") down.status = "pending";
    }
    manifest_.config_hash = cfg_.hash;
    save_manifest();
    if (error) std::rethrow_exception(error);
    return true;
}

void Pipeline::run_all(bool force) {
    for (auto s : all_stages()) {
        if (s == Stage::verify_losses) {
            const auto& sc = cfg_.values.at("scores");
            if (sc.at("pref").get<std::string>().empty() && sc.at("sft").get<std::string>().empty()) {
                auto& rec = manifest_.stage(s);
                rec.status = "skipped";
                rec.config_hash = cfg_.hash;
                save_manifest();
                continue;
            }
        }
        run_stage(s, force);
    }
}

void Pipeline::execute(Stage stage, StageRecord& rec) {
    const auto& v = cfg_.values;
    const auto* templates = clients_->templates ? &*clients_->templates : nullptr;
    const auto failures_json = [](const std::vector<sdg::ChunkFailure>& fs) {
        json out = json::array();
        for (const auto& f : fs) out.push_back(sdg::to_json(f));
        return out;
    };

    switch (stage) {
    case Stage::ingest: {
        const auto& docs = v.at("documents");
        if (docs.empty()) throw ConfigError("no documents configured");
        ingest::ChunkPolicy policy;
        policy.max_tokens = v.at("chunk_policy").at("max_tokens").get<std::size_t>();
        policy.split_on_headings = v.at("chunk_policy").at("split_on_headings").get<bool>();
        policy.token_estimator =
            ingest::token_estimator_from_string(v.at("chunk_policy").at("token_estimator").get<std::string>());
        std::vector<ingest::Chunk> all;
        std::set<std::string> ids;
        for (const auto& d : docs) {
            const auto path = cfg_.resolve(d.get<std::string>());
            const auto doc = ingest::load_document(path, ingest::format_from_path(path));
            if (!ids.insert(doc.doc_id).second) throw ConfigError("duplicate document id: " + doc.doc_id);
            auto chunks = ingest::chunk_document(doc, policy);
            all.insert(all.end(), chunks.begin(), chunks.end());
        }
        ingest::write_chunks(artifact(kChunks), all);
        rec.artifacts = {std::string(kChunks)};
        rec.summary = {{"documents", docs.size()}, {"chunks", all.size()}};
        break;
    }
    case Stage::gen_instruct: {
        require(kChunks, "chunks");
        const auto chunks = ingest::read_chunks(artifact(kChunks));
        const auto result = sdg::build_sft_dataset(teacher_client(), chunks, sdg_config(cfg_, templates));
        std::vector<json> rows;
        for (const auto& s : result.samples) rows.push_back(sdg::to_json(s));
        text::write_jsonl(artifact(kSftRaw), rows);
        rec.artifacts = {std::string(kSftRaw)};
        rec.failures = failures_json(result.failures);
        rec.summary = {{"samples", result.samples.size()},
                       {"questions_generated", result.questions_generated},
                       {"dropped_lines", result.dropped_lines},
                       {"rejected_answers", result.rejected_answers}};
        break;
    }
    case Stage::gen_pref: {
        require(kChunks, "chunks");
        const auto chunks = ingest::read_chunks(artifact(kChunks));
        const auto result = sdg::build_pref_dataset(teacher_client(), chunks, sdg_config(cfg_, templates));
        std::vector<json> rows;
        for (const auto& s : result.samples) rows.push_back(sdg::to_json(s));
        text::write_jsonl(artifact(kPrefRaw), rows);
        rec.artifacts = {std::string(kPrefRaw)};
        rec.failures = failures_json(result.failures);
        json filtered = json::array();
        for (const auto& r : result.filtered_out) filtered.push_back(r.key());
        rec.summary = {{"samples", result.samples.size()},
                       {"filtered_out", filtered},
                       {"filter_parse_warnings", result.filter_parse_warnings},
                       {"dropped_lines", result.dropped_lines},
                       {"rejected_triples", result.rejected_triples}};
        break;
    }
    case Stage::curate: {
        require(kSftRaw, "instruct dataset");
        const auto spec = split_spec(cfg_);
        const auto sft = curation::curate(curation::import_sft_chat(artifact(kSftRaw)), spec);
        json report{{"sft", sft.report.to_json()}};
        const std::array<const std::vector<sdg::InstructSample>*, 3> sft_parts{&sft.splits.train, &sft.splits.val,
                                                                              &sft.splits.test};
        for (std::size_t i = 0; i < 3; ++i) {
            const auto name = "curated/sft_" + std::string(kSplitNames[i]) + ".jsonl";
            curation::export_jsonl(*sft_parts[i], artifact(name));
            rec.artifacts.push_back(name);
        }
        if (fs::exists(artifact(kPrefRaw))) {
            const auto pref = curation::curate(curation::import_dpo_pairs(artifact(kPrefRaw)), spec);
            report["pref"] = pref.report.to_json();
            const std::array<const std::vector<sdg::PreferenceSample>*, 3> parts{&pref.splits.train, &pref.splits.val,
                                                                                &pref.splits.test};
            for (std::size_t i = 0; i < 3; ++i) {
                const auto name = "curated/pref_" + std::string(kSplitNames[i]) + ".jsonl";
                curation::export_jsonl(*parts[i], curation::ExportFormat::dpo_pairs, artifact(name));
                rec.artifacts.push_back(name);
            }
        }
        text::write_file(artifact(kCurationReport), report.dump(2) + "\n");
        rec.artifacts.push_back(std::string(kCurationReport));
        rec.summary = report;
        break;
    }
    case Stage::export_data: {
        require("curated/sft_train.jsonl", "curated dataset");
        const auto use_case = v.at("use_case").get<std::string>();
        for (auto split : kSplitNames) {
            const auto s = std::string(split);
            const auto sft = curation::import_sft_chat(artifact("curated/sft_" + s + ".jsonl"));
            curation::export_jsonl(sft, artifact("export/sft_chat/" + s + ".jsonl"));
            rec.artifacts.push_back("export/sft_chat/" + s + ".jsonl");
            if (fs::exists(artifact("curated/pref_" + s + ".jsonl"))) {
                const auto pref = curation::import_dpo_pairs(artifact("curated/pref_" + s + ".jsonl"));
                curation::export_jsonl(pref, curation::ExportFormat::dpo_pairs, artifact("export/dpo_pairs/" + s + ".jsonl"));
                curation::export_jsonl(pref, curation::ExportFormat::unpaired_pref,
                                       artifact("export/unpaired_pref/" + s + ".jsonl"));
                rec.artifacts.push_back("export/dpo_pairs/" + s + ".jsonl");
                rec.artifacts.push_back("export/unpaired_pref/" + s + ".jsonl");
            }
        }
        auto dpo_cfg = align::trainer_config(use_case, align::TrainStage::dpo);
        dpo_cfg["hyperparameters"]["beta"] = v.at("dpo").at("beta").get<double>();
        align::export_trainer_config(use_case, align::TrainStage::sft, artifact("export/sft_config.json"));
        text::write_file(artifact("export/dpo_config.json"), dpo_cfg.dump(2) + "\n");
        rec.artifacts.push_back("export/sft_config.json");
        rec.artifacts.push_back("export/dpo_config.json");
        break;
    }
    case Stage::rag_index: {
        require(kChunks, "chunks");
        const auto mode = rag::index_mode_from_string(v.at("rag").at("mode").get<std::string>());
        const auto index = rag::build_index(ingest::read_chunks(artifact(kChunks)), mode,
                                            mode == rag::IndexMode::embedding ? &teacher_client() : nullptr);
        index.save(artifact(kRagIndex));
        rec.artifacts = {std::string(kRagIndex)};
        rec.summary = {{"mode", rag::to_string(mode)}, {"entries", index.size()}, {"vocabulary", index.vocabulary().size()}};
        break;
    }
    case Stage::rag_answer: {
        require(kRagIndex, "rag index");
        const auto index = rag::ChunkIndex::load(artifact(kRagIndex));
        const auto queries_cfg = v.at("rag").at("queries").get<std::string>();
        const bool oracle = v.at("rag").at("oracle").get<bool>();
        std::vector<judge::Prompt> queries;
        std::vector<std::optional<sdg::ChunkRef>> sources;
        std::vector<json> refs;
        if (!queries_cfg.empty()) {
            if (oracle) throw ConfigError("rag.oracle needs queries drawn from the curated test split");
            queries = judge::read_prompts(cfg_.resolve(queries_cfg));
            sources.resize(queries.size());
        } else {
            require("curated/sft_test.jsonl", "curated test split");
            for (const auto& s : curation::import_sft_chat(artifact("curated/sft_test.jsonl"))) {
                queries.push_back({s.id, s.question});
                sources.emplace_back(s.chunk_ref);
                refs.push_back({{"prompt_id", s.id}, {"response", s.answer}});
            }
        }
        const auto top_k = v.at("rag").at("top_k").get<std::size_t>();
        auto* embedder = index.mode() == rag::IndexMode::embedding ? &teacher_client() : nullptr;
        std::vector<teacher::ChatRequest> requests;
        std::vector<json> meta;
        for (std::size_t i = 0; i < queries.size(); ++i) {
            std::vector<rag::Hit> hits;
            if (oracle) {
                if (auto h = rag::oracle_retrieve(index, sources[i]->doc_id, sources[i]->index)) hits.push_back(*h);
            } else {
                hits = rag::retrieve(index, queries[i].prompt, top_k, embedder);
            }
            const auto* chunk = hits.empty() ? nullptr : &index.entries()[hits.front().entry].chunk;
            const auto prompt = rag::compose_rag_prompt(queries[i].prompt, chunk);
            json retrieved = json::array();
            for (const auto& h : hits) {
                const auto& c = index.entries()[h.entry].chunk;
                retrieved.push_back({{"doc_id", c.doc_id}, {"index", c.index}, {"score", h.score}});
            }
            meta.push_back({{"prompt_id", queries[i].prompt_id}, {"retrieved", retrieved}, {"fallback", prompt.fallback}});
            requests.push_back({{{teacher::Role::user, prompt.prompt}},
                                teacher::DecodeParams::greedy(v.at("teacher").at("max_tokens").get<int>())});
        }
        const auto results = teacher_client().chat_complete_batch(requests);
        std::vector<json> answers, qrows;
        for (std::size_t i = 0; i < results.size(); ++i) {
            if (!results[i].ok()) {
                rec.failures.push_back({{"prompt_id", queries[i].prompt_id},
                                        {"reason", results[i].error->what()},
                                        {"request_hash", results[i].error->request_hash()}});
                continue;
            }
            auto row = meta[i];
            row["response"] = text::trim(results[i].text);
            answers.push_back(std::move(row));
        }
        for (const auto& q : queries) qrows.push_back({{"prompt_id", q.prompt_id}, {"prompt", q.prompt}});
        text::write_jsonl(artifact(kRagAnswers), answers);
        text::write_jsonl(artifact(kQueries), qrows);
        rec.artifacts = {std::string(kRagAnswers), std::string(kQueries)};
        if (queries_cfg.empty()) {
            text::write_jsonl(artifact(kReferences), refs);
            rec.artifacts.push_back(std::string(kReferences));
        } else if (fs::exists(artifact(kReferences))) {
            fs::remove(artifact(kReferences));
        }
        rec.summary = {{"queries", queries.size()}, {"answered", answers.size()}, {"oracle", oracle}};
        break;
    }
    case Stage::eval_metrics: {
        const auto& ev = v.at("eval");
        const auto ref_cfg = ev.at("references").get<std::string>();
        if (ref_cfg.empty()) require(kReferences, "references");
        const auto references = judge::read_responses(ref_cfg.empty() ? artifact(kReferences) : cfg_.resolve(ref_cfg));
        if (references.empty() && !ref_cfg.empty()) throw InputError("no references to evaluate against");
        if (references.empty()) {
            spdlog::warn("curated test split is empty; writing an empty metrics report");
            text::write_file(artifact(kMetrics), "{}\n");
            rec.artifacts = {std::string(kMetrics)};
            rec.summary = {{"warning", "empty test split"}};
            break;
        }
        std::map<std::string, fs::path> hyps;
        for (const auto& [m, p] : ev.at("hypotheses").items()) hyps[m] = cfg_.resolve(p.get<std::string>());
        if (hyps.empty()) {
            require(kRagAnswers, "rag answers");
            hyps["rag"] = artifact(kRagAnswers);
        }
        std::vector<judge::Prompt> order;
        std::vector<std::string> ref_text;
        for (const auto& r : references) {
            order.push_back({r.prompt_id, {}});
            ref_text.push_back(r.response);
        }
        metrics::Embedder embedder = [this](const std::vector<std::string>& texts) { return teacher_client().embed(texts); };
        const bool use_embed = ev.at("embed_f1").get<bool>();
        json report = json::object();
        for (const auto& [method, path] : hyps) {
            const auto aligned = align_to(order, judge::read_responses(path), method);
            std::vector<std::string> hyp_text;
            for (const auto& r : aligned) hyp_text.push_back(r.response);
            report[method] = metrics::evaluate(hyp_text, ref_text, use_embed ? &embedder : nullptr).to_json();
        }
        text::write_file(artifact(kMetrics), report.dump(2) + "\n");
        rec.artifacts = {std::string(kMetrics)};
        rec.summary = report;
        break;
    }
    case Stage::eval_judge: {
        const auto& jc = v.at("judge");
        const auto prompts_cfg = jc.at("prompts").get<std::string>();
        if (prompts_cfg.empty()) require(kQueries, "queries");
        const auto prompts = judge::read_prompts(prompts_cfg.empty() ? artifact(kQueries) : cfg_.resolve(prompts_cfg));
        std::map<std::string, fs::path> paths;
        for (const auto& [m, p] : jc.at("responses").items()) paths[m] = cfg_.resolve(p.get<std::string>());
        if (paths.empty()) {
            require(kRagAnswers, "rag answers");
            require(kReferences, "references");
            paths["rag"] = artifact(kRagAnswers);
            paths["reference"] = artifact(kReferences);
        }
        std::vector<std::string> methods;
        std::map<std::string, std::vector<judge::Response>> responses;
        for (const auto& [m, p] : paths) {
            methods.push_back(m);
            responses[m] = align_to(prompts, judge::read_responses(p), m);
        }
        judge::JudgeConfig jcfg;
        jcfg.seed = jc.at("seed").get<std::int64_t>();
        jcfg.rubric = jc.at("rubric").get<std::string>();
        jcfg.templates = templates;
        judge::LlmJudge backend(judge_client(), jcfg);
        judge::BootstrapSpec boot{jc.at("level").get<double>(), jc.at("bootstrap_resamples").get<std::size_t>(),
                                  jc.at("bootstrap_seed").get<std::uint64_t>()};
        const auto matrix = judge::winrate_matrix(methods, prompts, responses, backend, jcfg.effective_rubric(), boot);
        judge::write_transcript(artifact(kTranscript), matrix.transcript);
        text::write_file(artifact(kWinrates), matrix.to_json().dump(2) + "\n");
        text::write_file(artifact(kWinratesCsv), matrix.to_csv());
        rec.artifacts = {std::string(kTranscript), std::string(kWinrates), std::string(kWinratesCsv)};
        std::size_t parse_failures = 0;
        for (const auto& e : matrix.transcript) parse_failures += !e.winner;
        rec.summary = {{"methods", methods}, {"prompts", prompts.size()}, {"parse_failures", parse_failures}};
        break;
    }
    case Stage::verify_losses: {
        const auto& sc = v.at("scores");
        const auto pref = sc.at("pref").get<std::string>();
        const auto sft = sc.at("sft").get<std::string>();
        if (pref.empty() && sft.empty()) throw MissingArtifactError("missing score records artifact");
        json report = json::object();
        if (!pref.empty()) {
            const auto records = align::read_pref_records(cfg_.resolve(pref));
            const auto loss = align::dpo_batch_loss(records, align::DpoConfig{v.at("dpo").at("beta").get<double>()});
            report["dpo"] = {{"n", records.size()},
                             {"mean_loss", loss.mean},
                             {"sum_loss", loss.sum},
                             {"margin_mean", loss.margin_mean},
                             {"margin_min", loss.margin_min},
                             {"margin_max", loss.margin_max},
                             {"reward_accuracy", loss.reward_accuracy}};
        }
        if (!sft.empty()) {
            const auto records = align::read_sft_records(cfg_.resolve(sft));
            const auto loss = align::sft_batch_nll(records);
            report["sft"] = {{"n", loss.n}, {"mean_nll", loss.mean}, {"sum_nll", loss.sum}};
        }
        text::write_file(artifact(kLosses), report.dump(2) + "\n");
        rec.artifacts = {std::string(kLosses)};
        rec.summary = report;
        break;
    }
    }
}

} // namespace valign::pipeline
