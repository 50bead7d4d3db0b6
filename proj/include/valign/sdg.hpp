#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "valign/ingest.hpp"
#include "valign/prompts.hpp"
#include "valign/teacher.hpp"

// Synthetic data generation from document chunks: instruct (question, grounded
// answer) pairs and preference (question, faithful, unfaithful) triples.

namespace valign::sdg {

struct ChunkRef {
    std::string doc_id;
    std::size_t index = 0;

    auto operator<=>(const ChunkRef&) const = default;
    bool operator==(const ChunkRef&) const = default;
    std::string key() const { return doc_id + "#" + std::to_string(index); }
};

ChunkRef ref_of(const ingest::Chunk& chunk);
nlohmann::json to_json(const ChunkRef& ref);
ChunkRef chunk_ref_from_json(const nlohmann::json& j);

inline constexpr std::string_view kChatFormatVersion = "chat-v1";
inline constexpr int kMaxNex = 10;
inline constexpr int kRecommendedNex = 5;

struct SdgConfig {
    int nex = kRecommendedNex;
    std::string keyword;
    int calls_per_chunk = 1;
    std::int64_t seed = 0; ///< call c of a chunk is sent with seed + c
    teacher::DecodeParams question_params = teacher::DecodeParams::nucleus();
    teacher::DecodeParams answer_params = teacher::DecodeParams::greedy();
    teacher::DecodeParams preference_params = teacher::DecodeParams::nucleus();
    teacher::DecodeParams filter_params = teacher::DecodeParams::greedy(8);
    const prompts::TemplateStore* templates = nullptr; ///< null: built-in templates

    /// Rejects nex outside [1, 10], empty keyword, calls_per_chunk < 1; warns when nex > 5.
    void validate() const;
};

struct ChunkFailure {
    ChunkRef chunk_ref;
    std::string stage;
    std::string reason;
    std::string request_hash;
};

nlohmann::json to_json(const ChunkFailure& f);

// ---- instruct data -------------------------------------------------------

struct Question {
    ChunkRef chunk_ref;
    int call_id = 0;
    int line_index = 0;
    std::string text;
};

struct InstructSample {
    std::string id;
    std::string question;
    std::string answer;
    ChunkRef chunk_ref;
    std::string chat_format_version{kChatFormatVersion};

    bool operator==(const InstructSample&) const = default;
};

struct ParsedQuestions {
    std::vector<std::string> questions;
    std::size_t dropped = 0;
};

/// Parses a JSONL completion of {"question": ...} lines. Blank lines and code
/// fences are ignored; malformed lines and lines beyond `nex` are dropped.
ParsedQuestions parse_question_lines(std::string_view completion, int nex);

struct QuestionBatch {
    std::vector<Question> questions;
    std::size_t dropped = 0;
    std::vector<ChunkFailure> failures;
};

std::vector<teacher::ChatMessage> question_messages(const ingest::Chunk& chunk, const SdgConfig& cfg);
std::vector<teacher::ChatMessage> answer_messages(const ingest::Chunk& chunk, const std::string& question,
                                                 const SdgConfig& cfg);

QuestionBatch gen_questions(teacher::TeacherClient& client, const ingest::Chunk& chunk, const SdgConfig& cfg);

/// Greedy-decoded answer grounded on `chunk`; nullopt when the teacher returns
/// an empty answer. Teacher failures propagate as TeacherError.
std::optional<std::string> gen_answer(teacher::TeacherClient& client, const ingest::Chunk& chunk, const Question& q,
                                      const SdgConfig& cfg);

struct SftBuildResult {
    std::vector<InstructSample> samples;
    std::size_t questions_generated = 0;
    std::size_t dropped_lines = 0;
    std::size_t rejected_answers = 0;
    std::vector<ChunkFailure> failures;
};

/// Samples ordered by (doc_id, chunk index, call_id, line index).
SftBuildResult build_sft_dataset(teacher::TeacherClient& client, const std::vector<ingest::Chunk>& chunks,
                                 const SdgConfig& cfg);

nlohmann::json to_json(const InstructSample& s);
InstructSample instruct_from_json(const nlohmann::json& j);

// ---- preference data -----------------------------------------------------

struct FilterResult {
    bool passed = false;
    bool parse_warning = false;
    std::string raw;
};

/// "YES" -> pass, "NO" -> fail; anything else fails with parse_warning set.
FilterResult parse_filter_verdict(std::string_view raw);

FilterResult value_filter(teacher::TeacherClient& client, const ingest::Chunk& chunk, const SdgConfig& cfg);

struct PreferenceTriple {
    ChunkRef chunk_ref;
    int call_id = 0;
    int line_index = 0;
    std::string question;
    std::string faithful;
    std::string unfaithful;

    bool valid() const;
};

struct ParsedTriples {
    std::vector<PreferenceTriple> triples;
    std::size_t dropped = 0;
};

ParsedTriples parse_preference_lines(std::string_view completion, int nex);

struct PreferenceBatch {
    std::vector<PreferenceTriple> triples;
    std::size_t dropped = 0;
    std::vector<ChunkFailure> failures;
};

std::vector<teacher::ChatMessage> preference_messages(const ingest::Chunk& chunk, const SdgConfig& cfg);

PreferenceBatch gen_preferences(teacher::TeacherClient& client, const ingest::Chunk& chunk, const SdgConfig& cfg);

struct PreferenceSample {
    std::string id;
    std::string prompt;
    std::string chosen;
    std::string rejected;
    ChunkRef chunk_ref;

    bool operator==(const PreferenceSample&) const = default;
};

struct Conversion {
    std::vector<PreferenceSample> samples;
    std::size_t rejected = 0; ///< triples failing validation (empty field or faithful == unfaithful)
};

/// chosen <- faithful, rejected <- unfaithful, prompt <- question.
Conversion to_preference_samples(const std::vector<PreferenceTriple>& triples);

struct UnpairedRecord {
    std::string id;
    std::string prompt;
    std::string completion;
    bool label = false;

    bool operator==(const UnpairedRecord&) const = default;
};

/// Two records per sample: the chosen response labelled true, the rejected one false.
std::vector<UnpairedRecord> to_unpaired(const std::vector<PreferenceSample>& samples);

struct PrefBuildResult {
    std::vector<PreferenceSample> samples;
    std::vector<ChunkRef> filtered_out;
    std::size_t filter_parse_warnings = 0;
    std::size_t dropped_lines = 0;
    std::size_t rejected_triples = 0;
    std::vector<ChunkFailure> failures;
};

PrefBuildResult build_pref_dataset(teacher::TeacherClient& client, const std::vector<ingest::Chunk>& chunks,
                                   const SdgConfig& cfg);

nlohmann::json to_json(const PreferenceSample& s);
PreferenceSample preference_from_json(const nlohmann::json& j);
nlohmann::json to_json(const UnpairedRecord& r);
UnpairedRecord unpaired_from_json(const nlohmann::json& j);

} // namespace valign::sdg
