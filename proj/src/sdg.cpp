#include "valign/sdg.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include <spdlog/spdlog.h>

#include "valign/text.hpp"

namespace valign::sdg {

namespace {

std::string render(const SdgConfig& cfg, prompts::TemplateId id, const prompts::RenderContext& ctx) {
    return cfg.templates ? cfg.templates->render(id, ctx) : prompts::render(id, ctx);
}

bool has_control_chars(std::string_view s) {
    return std::any_of(s.begin(), s.end(), [](char ch) {
        const auto c = static_cast<unsigned char>(ch);
        return (c < 0x20 && c != '\n' && c != '\t') || c == 0x7F;
    });
}

// Non-empty, UTF-8 clean, no stray control characters.
bool well_formed_field(const nlohmann::json& obj, const char* key, std::string& out) {
    if (!obj.contains(key) || !obj[key].is_string()) return false;
    auto value = std::string(text::trim(obj[key].get<std::string>()));
    if (value.empty() || has_control_chars(value) || !text::is_valid_utf8(value)) return false;
    out = std::move(value);
    return true;
}

// Yields the JSON objects found on the lines of a completion, or a discarded
// value for lines that do not parse. Blank lines and ``` fences are skipped.
template <typename Fn>
void for_each_jsonl_line(std::string_view completion, Fn&& fn) {
    std::istringstream in{std::string(completion)};
    std::string line;
    while (std::getline(in, line)) {
        const auto t = text::trim(line);
        if (t.empty() || t.starts_with("```")) continue;
        auto j = nlohmann::json::parse(t, nullptr, false);
        if (!j.is_discarded() && !j.is_object()) j = nlohmann::json(nlohmann::json::value_t::discarded);
        fn(j);
    }
}

std::string sample_id(std::string_view prefix, const ChunkRef& ref, int call_id, int line) {
    return std::string(prefix) + "-" + ref.doc_id + "-" + std::to_string(ref.index) + "-" + std::to_string(call_id) +
           "-" + std::to_string(line);
}

ChunkFailure failure_of(const ChunkRef& ref, std::string stage, const teacher::TeacherError& e) {
    return ChunkFailure{ref, std::move(stage), e.what(), e.request_hash()};
}

std::vector<const ingest::Chunk*> sorted_chunks(const std::vector<ingest::Chunk>& chunks) {
    std::vector<const ingest::Chunk*> out;
    out.reserve(chunks.size());
    for (const auto& c : chunks) out.push_back(&c);
    std::stable_sort(out.begin(), out.end(), [](const auto* a, const auto* b) { return ref_of(*a) < ref_of(*b); });
    return out;
}

teacher::DecodeParams with_seed(teacher::DecodeParams p, std::int64_t seed) {
    p.seed = seed;
    return p;
}

} // namespace

ChunkRef ref_of(const ingest::Chunk& chunk) { return ChunkRef{chunk.doc_id, chunk.index}; }

nlohmann::json to_json(const ChunkRef& ref) { return {{"doc_id", ref.doc_id}, {"index", ref.index}}; }

ChunkRef chunk_ref_from_json(const nlohmann::json& j) {
    return ChunkRef{j.at("doc_id").get<std::string>(), j.at("index").get<std::size_t>()};
}

void SdgConfig::validate() const {
    if (nex < 1 || nex > kMaxNex) {
        throw ConfigError("nex must lie in [1, " + std::to_string(kMaxNex) + "], got " + std::to_string(nex));
    }
    if (nex > kRecommendedNex) {
        spdlog::warn("nex={} exceeds {}; large values tend to produce hallucinated or ill-formed generations", nex,
                     kRecommendedNex);
    }
    if (text::is_blank(keyword)) throw ConfigError("keyword must be non-empty");
    if (calls_per_chunk < 1) throw ConfigError("calls_per_chunk must be >= 1");
    question_params.validate();
    answer_params.validate();
    preference_params.validate();
    filter_params.validate();
    if (answer_params.mode != teacher::DecodeMode::greedy) throw ConfigError("answers must use greedy decoding");
}

nlohmann::json to_json(const ChunkFailure& f) {
    return {{"chunk_ref", to_json(f.chunk_ref)}, {"stage", f.stage}, {"reason", f.reason}, {"request_hash", f.request_hash}};
}

// ---- instruct ---------------------------------------------------------------

ParsedQuestions parse_question_lines(std::string_view completion, int nex) {
    ParsedQuestions out;
    for_each_jsonl_line(completion, [&](const nlohmann::json& j) {
        std::string q;
        if (j.is_discarded() || !well_formed_field(j, "question", q) ||
            static_cast<int>(out.questions.size()) >= nex) {
            ++out.dropped;
            return;
        }
        out.questions.push_back(std::move(q));
    });
    return out;
}

std::vector<teacher::ChatMessage> question_messages(const ingest::Chunk& chunk, const SdgConfig& cfg) {
    prompts::RenderContext ctx;
    ctx.nex = cfg.nex;
    ctx.keyword = cfg.keyword;
    ctx.passage = chunk.text;
    return {{teacher::Role::user, render(cfg, prompts::TemplateId::QuestionGen, ctx)}};
}

std::vector<teacher::ChatMessage> answer_messages(const ingest::Chunk& chunk, const std::string& question,
                                                 const SdgConfig& cfg) {
    prompts::RenderContext ctx;
    ctx.passage = chunk.text;
    ctx.question = question;
    return {{teacher::Role::user, render(cfg, prompts::TemplateId::AnswerGen, ctx)}};
}

QuestionBatch gen_questions(teacher::TeacherClient& client, const ingest::Chunk& chunk, const SdgConfig& cfg) {
    cfg.validate();
    const auto ref = ref_of(chunk);
    const auto messages = question_messages(chunk, cfg);
    std::vector<teacher::ChatRequest> requests;
    for (int call = 0; call < cfg.calls_per_chunk; ++call) {
        requests.push_back({messages, with_seed(cfg.question_params, cfg.seed + call)});
    }
    const auto results = client.chat_complete_batch(requests);

    QuestionBatch batch;
    for (int call = 0; call < cfg.calls_per_chunk; ++call) {
        const auto& r = results[static_cast<std::size_t>(call)];
        if (!r.ok()) {
            spdlog::warn("question generation failed for chunk {} call {}: {}", ref.key(), call, r.error->what());
            batch.failures.push_back(failure_of(ref, "gen-questions", *r.error));
            continue;
        }
        auto parsed = parse_question_lines(r.text, cfg.nex);
        batch.dropped += parsed.dropped;
        for (std::size_t i = 0; i < parsed.questions.size(); ++i) {
            batch.questions.push_back({ref, call, static_cast<int>(i), std::move(parsed.questions[i])});
        }
    }
    return batch;
}

std::optional<std::string> gen_answer(teacher::TeacherClient& client, const ingest::Chunk& chunk, const Question& q,
                                      const SdgConfig& cfg) {
    auto answer = client.chat_complete(answer_messages(chunk, q.text, cfg), cfg.answer_params);
    auto trimmed = std::string(text::trim(answer));
    if (trimmed.empty() || has_control_chars(trimmed)) return std::nullopt;
    return trimmed;
}

SftBuildResult build_sft_dataset(teacher::TeacherClient& client, const std::vector<ingest::Chunk>& chunks,
                                 const SdgConfig& cfg) {
    cfg.validate();
    SftBuildResult result;
    if (chunks.empty()) return result;
    const auto ordered = sorted_chunks(chunks);

    // Pass 1: every (chunk, call) question request in one order-stable batch.
    std::vector<teacher::ChatRequest> qreqs;
    for (const auto* c : ordered) {
        const auto messages = question_messages(*c, cfg);
        for (int call = 0; call < cfg.calls_per_chunk; ++call) {
            qreqs.push_back({messages, with_seed(cfg.question_params, cfg.seed + call)});
        }
    }
    const auto qres = client.chat_complete_batch(qreqs);

    struct Pending {
        const ingest::Chunk* chunk;
        Question question;
    };
    std::vector<Pending> pending;
    std::size_t slot = 0;
    for (const auto* c : ordered) {
        const auto ref = ref_of(*c);
        for (int call = 0; call < cfg.calls_per_chunk; ++call, ++slot) {
            const auto& r = qres[slot];
            if (!r.ok()) {
                spdlog::warn("question generation failed for chunk {} call {}: {}", ref.key(), call, r.error->what());
                result.failures.push_back(failure_of(ref, "gen-questions", *r.error));
                continue;
            }
            auto parsed = parse_question_lines(r.text, cfg.nex);
            result.dropped_lines += parsed.dropped;
            for (std::size_t i = 0; i < parsed.questions.size(); ++i) {
                pending.push_back({c, Question{ref, call, static_cast<int>(i), std::move(parsed.questions[i])}});
            }
        }
    }
    result.questions_generated = pending.size();

    // Pass 2: grounded answers, greedy decoding, same chunk as context.
    std::vector<teacher::ChatRequest> areqs;
    areqs.reserve(pending.size());
    for (const auto& p : pending) areqs.push_back({answer_messages(*p.chunk, p.question.text, cfg), cfg.answer_params});
    const auto ares = client.chat_complete_batch(areqs);

    for (std::size_t i = 0; i < pending.size(); ++i) {
        const auto& q = pending[i].question;
        if (!ares[i].ok()) {
            spdlog::warn("answer generation failed for {}: {}", sample_id("sft", q.chunk_ref, q.call_id, q.line_index),
                         ares[i].error->what());
            result.failures.push_back(failure_of(q.chunk_ref, "gen-answer", *ares[i].error));
            continue;
        }
        auto answer = std::string(text::trim(ares[i].text));
        if (answer.empty() || has_control_chars(answer)) {
            ++result.rejected_answers;
            continue;
        }
        InstructSample s;
        s.id = sample_id("sft", q.chunk_ref, q.call_id, q.line_index);
        s.question = q.text;
        s.answer = std::move(answer);
        s.chunk_ref = q.chunk_ref;
        result.samples.push_back(std::move(s));
    }
    return result;
}

nlohmann::json to_json(const InstructSample& s) {
    return {{"id", s.id},
            {"messages",
             {{{"role", "user"}, {"content", s.question}}, {{"role", "assistant"}, {"content", s.answer}}}},
            {"chunk_ref", to_json(s.chunk_ref)}};
}

InstructSample instruct_from_json(const nlohmann::json& j) {
    try {
        InstructSample s;
        s.id = j.at("id").get<std::string>();
        for (const auto& m : j.at("messages")) {
            const auto role = m.at("role").get<std::string>();
            if (role == "user") s.question = m.at("content").get<std::string>();
            if (role == "assistant") s.answer = m.at("content").get<std::string>();
        }
        s.chunk_ref = chunk_ref_from_json(j.at("chunk_ref"));
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("malformed sft_chat record: ") + e.what());
    }
}

// ---- preference -------------------------------------------------------------

FilterResult parse_filter_verdict(std::string_view raw) {
    FilterResult r;
    r.raw = std::string(raw);
    std::string word;
    for (char ch : text::trim(raw)) {
        const auto c = static_cast<unsigned char>(ch);
        if (!std::isalpha(c)) {
            if (word.empty()) continue;
            break;
        }
        word.push_back(static_cast<char>(std::toupper(c)));
    }
    // the verdict must be the whole answer, give or take punctuation
    std::string rest;
    for (char ch : text::trim(raw)) {
        if (std::isalpha(static_cast<unsigned char>(ch))) rest.push_back(static_cast<char>(std::toupper(ch)));
    }
    if (word == "YES" && rest == "YES") {
        r.passed = true;
    } else if (word == "NO" && rest == "NO") {
        r.passed = false;
    } else {
        r.passed = false;
        r.parse_warning = true;
    }
    return r;
}

FilterResult value_filter(teacher::TeacherClient& client, const ingest::Chunk& chunk, const SdgConfig& cfg) {
    prompts::RenderContext ctx;
    ctx.keyword = cfg.keyword;
    ctx.passage = chunk.text;
    const auto raw = client.chat_complete({{teacher::Role::user, render(cfg, prompts::TemplateId::ValueFilter, ctx)}},
                                          cfg.filter_params);
    auto r = parse_filter_verdict(raw);
    if (r.parse_warning) spdlog::warn("unparseable value-filter verdict for chunk {}: '{}'", ref_of(chunk).key(), raw);
    return r;
}

bool PreferenceTriple::valid() const {
    return !text::is_blank(question) && !text::is_blank(faithful) && !text::is_blank(unfaithful) &&
           faithful != unfaithful;
}

ParsedTriples parse_preference_lines(std::string_view completion, int nex) {
    ParsedTriples out;
    for_each_jsonl_line(completion, [&](const nlohmann::json& j) {
        PreferenceTriple t;
        if (j.is_discarded() || !well_formed_field(j, "question", t.question) ||
            !well_formed_field(j, "faithful", t.faithful) || !well_formed_field(j, "unfaithful", t.unfaithful) ||
            !t.valid() || static_cast<int>(out.triples.size()) >= nex) {
            ++out.dropped;
            return;
        }
        t.line_index = static_cast<int>(out.triples.size());
        out.triples.push_back(std::move(t));
    });
    return out;
}

std::vector<teacher::ChatMessage> preference_messages(const ingest::Chunk& chunk, const SdgConfig& cfg) {
    prompts::RenderContext ctx;
    ctx.nex = cfg.nex;
    ctx.keyword = cfg.keyword;
    ctx.passage = chunk.text;
    return {{teacher::Role::user, render(cfg, prompts::TemplateId::PreferenceGen, ctx)}};
}

namespace {

void collect_triples(const ChunkRef& ref, int call, const teacher::ChatResult& r, int nex, PreferenceBatch& batch) {
    if (!r.ok()) {
        spdlog::warn("preference generation failed for chunk {} call {}: {}", ref.key(), call, r.error->what());
        batch.failures.push_back(failure_of(ref, "gen-preferences", *r.error));
        return;
    }
    auto parsed = parse_preference_lines(r.text, nex);
    batch.dropped += parsed.dropped;
    for (auto& t : parsed.triples) {
        t.chunk_ref = ref;
        t.call_id = call;
        batch.triples.push_back(std::move(t));
    }
}

} // namespace

PreferenceBatch gen_preferences(teacher::TeacherClient& client, const ingest::Chunk& chunk, const SdgConfig& cfg) {
    cfg.validate();
    const auto ref = ref_of(chunk);
    const auto messages = preference_messages(chunk, cfg);
    std::vector<teacher::ChatRequest> requests;
    for (int call = 0; call < cfg.calls_per_chunk; ++call) {
        requests.push_back({messages, with_seed(cfg.preference_params, cfg.seed + call)});
    }
    const auto results = client.chat_complete_batch(requests);
    PreferenceBatch batch;
    for (int call = 0; call < cfg.calls_per_chunk; ++call) {
        collect_triples(ref, call, results[static_cast<std::size_t>(call)], cfg.nex, batch);
    }
    return batch;
}

Conversion to_preference_samples(const std::vector<PreferenceTriple>& triples) {
    Conversion out;
    out.samples.reserve(triples.size());
    for (const auto& t : triples) {
        if (!t.valid()) {
            ++out.rejected;
            continue;
        }
        PreferenceSample s;
        s.id = sample_id("pref", t.chunk_ref, t.call_id, t.line_index);
        s.prompt = t.question;
        s.chosen = t.faithful;
        s.rejected = t.unfaithful;
        s.chunk_ref = t.chunk_ref;
        out.samples.push_back(std::move(s));
    }
    return out;
}

std::vector<UnpairedRecord> to_unpaired(const std::vector<PreferenceSample>& samples) {
    std::vector<UnpairedRecord> out;
    out.reserve(samples.size() * 2);
    for (const auto& s : samples) {
        out.push_back({s.id + "-chosen", s.prompt, s.chosen, true});
        out.push_back({s.id + "-rejected", s.prompt, s.rejected, false});
    }
    return out;
}

PrefBuildResult build_pref_dataset(teacher::TeacherClient& client, const std::vector<ingest::Chunk>& chunks,
                                   const SdgConfig& cfg) {
    cfg.validate();
    PrefBuildResult result;
    if (chunks.empty()) return result;
    const auto ordered = sorted_chunks(chunks);

    // Pass 1: value filter over every chunk.
    std::vector<teacher::ChatRequest> freqs;
    for (const auto* c : ordered) {
        prompts::RenderContext ctx;
        ctx.keyword = cfg.keyword;
        ctx.passage = c->text;
        freqs.push_back({{{teacher::Role::user, render(cfg, prompts::TemplateId::ValueFilter, ctx)}}, cfg.filter_params});
    }
    const auto fres = client.chat_complete_batch(freqs);
    std::vector<const ingest::Chunk*> kept;
    for (std::size_t i = 0; i < ordered.size(); ++i) {
        const auto ref = ref_of(*ordered[i]);
        if (!fres[i].ok()) {
            result.failures.push_back(failure_of(ref, "value-filter", *fres[i].error));
            continue;
        }
        const auto verdict = parse_filter_verdict(fres[i].text);
        if (verdict.parse_warning) {
            ++result.filter_parse_warnings;
            spdlog::warn("unparseable value-filter verdict for chunk {}: '{}'", ref.key(), verdict.raw);
        }
        if (verdict.passed) {
            kept.push_back(ordered[i]);
        } else {
            result.filtered_out.push_back(ref);
        }
    }

    // Pass 2: preference triples for the chunks that passed.
    std::vector<teacher::ChatRequest> preqs;
    for (const auto* c : kept) {
        const auto messages = preference_messages(*c, cfg);
        for (int call = 0; call < cfg.calls_per_chunk; ++call) {
            preqs.push_back({messages, with_seed(cfg.preference_params, cfg.seed + call)});
        }
    }
    const auto pres = client.chat_complete_batch(preqs);
    PreferenceBatch batch;
    std::size_t slot = 0;
    for (const auto* c : kept) {
        for (int call = 0; call < cfg.calls_per_chunk; ++call, ++slot) {
            collect_triples(ref_of(*c), call, pres[slot], cfg.nex, batch);
        }
    }
    auto conv = to_preference_samples(batch.triples);
    result.samples = std::move(conv.samples);
    result.rejected_triples = conv.rejected;
    result.dropped_lines = batch.dropped;
    for (auto& f : batch.failures) result.failures.push_back(std::move(f));
    return result;
}

nlohmann::json to_json(const PreferenceSample& s) {
    return {{"id", s.id},
            {"prompt", s.prompt},
            {"chosen", s.chosen},
            {"rejected", s.rejected},
            {"chunk_ref", to_json(s.chunk_ref)}};
}

PreferenceSample preference_from_json(const nlohmann::json& j) {
    try {
        return PreferenceSample{j.at("id").get<std::string>(), j.at("prompt").get<std::string>(),
                                j.at("chosen").get<std::string>(), j.at("rejected").get<std::string>(),
                                chunk_ref_from_json(j.at("chunk_ref"))};
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("malformed dpo_pairs record: ") + e.what());
    }
}

nlohmann::json to_json(const UnpairedRecord& r) {
    return {{"id", r.id}, {"prompt", r.prompt}, {"completion", r.completion}, {"label", r.label}};
}

UnpairedRecord unpaired_from_json(const nlohmann::json& j) {
    try {
        return UnpairedRecord{j.at("id").get<std::string>(), j.at("prompt").get<std::string>(),
                              j.at("completion").get<std::string>(), j.at("label").get<bool>()};
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("malformed unpaired_pref record: ") + e.what());
    }
}

} // namespace valign::sdg
