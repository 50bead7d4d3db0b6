#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "valign/sdg.hpp"

namespace valign::curation {

inline constexpr std::size_t kMinQuestionChars = 8;
inline constexpr std::size_t kMaxQuestionChars = 2048;

struct SplitSpec {
    double train_frac = 0.8;
    double val_frac = 0.1;
    double test_frac = 0.1;
    std::uint64_t seed = 0;
    bool group_by_chunk = true;

    /// Each fraction in [0, 1] and the sum equal to 1 within 1e-9.
    void validate() const;
};

template <typename T>
struct Filtered {
    std::vector<T> kept;
    std::size_t dropped = 0;
};

template <typename T>
struct Splits {
    std::vector<T> train;
    std::vector<T> val;
    std::vector<T> test;
};

struct CurationReport {
    std::size_t input_count = 0;
    std::size_t ill_formed_dropped = 0;
    std::size_t duplicates_dropped = 0;
    std::size_t train = 0;
    std::size_t val = 0;
    std::size_t test = 0;

    bool balanced() const { return input_count == ill_formed_dropped + duplicates_dropped + train + val + test; }
    nlohmann::json to_json() const;
};

/// Lowercase, punctuation removed, whitespace collapsed: "What is X?" and "what is x ?" collide.
std::string normalize_question(std::string_view q);

/// True when `s` is valid UTF-8 with no control characters or U+FFFD replacement marks.
bool clean_text(std::string_view s);

Filtered<sdg::InstructSample> validate_samples(const std::vector<sdg::InstructSample>& samples);
Filtered<sdg::PreferenceSample> validate_samples(const std::vector<sdg::PreferenceSample>& samples);

/// Keeps the first occurrence of each normalized question (prompt).
Filtered<sdg::InstructSample> dedup(const std::vector<sdg::InstructSample>& samples);
Filtered<sdg::PreferenceSample> dedup(const std::vector<sdg::PreferenceSample>& samples);

Splits<sdg::InstructSample> split(const std::vector<sdg::InstructSample>& samples, const SplitSpec& spec);
Splits<sdg::PreferenceSample> split(const std::vector<sdg::PreferenceSample>& samples, const SplitSpec& spec);

/// Split index (0 train, 1 val, 2 test) for each of `n` items grouped by `group`;
/// seeded Fisher-Yates over items or groups, then partition by cumulative size.
std::vector<int> assign_splits(const std::vector<std::string>& group, const SplitSpec& spec);

template <typename T>
struct Curated {
    Splits<T> splits;
    CurationReport report;
};

/// validate -> dedup -> split, with a balanced report.
Curated<sdg::InstructSample> curate(const std::vector<sdg::InstructSample>& samples, const SplitSpec& spec);
Curated<sdg::PreferenceSample> curate(const std::vector<sdg::PreferenceSample>& samples, const SplitSpec& spec);

enum class ExportFormat { sft_chat, dpo_pairs, unpaired_pref };

std::string to_string(ExportFormat f);
ExportFormat export_format_from_string(std::string_view s);

/// Writes schema-conformant JSONL. An empty dataset yields an empty file and a warning.
std::filesystem::path export_jsonl(const std::vector<sdg::InstructSample>& data, const std::filesystem::path& path);
std::filesystem::path export_jsonl(const std::vector<sdg::PreferenceSample>& data, ExportFormat format,
                                   const std::filesystem::path& path);

std::vector<sdg::InstructSample> import_sft_chat(const std::filesystem::path& path);
std::vector<sdg::PreferenceSample> import_dpo_pairs(const std::filesystem::path& path);
std::vector<sdg::UnpairedRecord> import_unpaired(const std::filesystem::path& path);

} // namespace valign::curation
