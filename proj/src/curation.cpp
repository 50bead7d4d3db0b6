#include "valign/curation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <numeric>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "valign/rng.hpp"
#include "valign/text.hpp"

namespace valign::curation {

namespace {

bool question_length_ok(std::string_view q) {
    const auto n = text::codepoint_count(text::trim(q));
    return n >= kMinQuestionChars && n <= kMaxQuestionChars;
}

bool field_ok(std::string_view s) { return !text::is_blank(s) && clean_text(s); }

template <typename T, typename Key>
Filtered<T> dedup_by(const std::vector<T>& samples, Key key) {
    Filtered<T> out;
    std::unordered_set<std::string> seen;
    for (const auto& s : samples) {
        if (seen.insert(normalize_question(key(s))).second) {
            out.kept.push_back(s);
        } else {
            ++out.dropped;
        }
    }
    return out;
}

template <typename T>
Splits<T> split_impl(const std::vector<T>& samples, const SplitSpec& spec) {
    std::vector<std::string> groups;
    groups.reserve(samples.size());
    for (const auto& s : samples) groups.push_back(spec.group_by_chunk ? s.chunk_ref.key() : s.id);
    const auto assignment = assign_splits(groups, spec);
    Splits<T> out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        switch (assignment[i]) {
        case 0: out.train.push_back(samples[i]); break;
        case 1: out.val.push_back(samples[i]); break;
        default: out.test.push_back(samples[i]); break;
        }
    }
    return out;
}

template <typename T>
Curated<T> curate_impl(const std::vector<T>& samples, const SplitSpec& spec) {
    spec.validate();
    Curated<T> out;
    out.report.input_count = samples.size();
    auto valid = validate_samples(samples);
    out.report.ill_formed_dropped = valid.dropped;
    auto unique = dedup(valid.kept);
    out.report.duplicates_dropped = unique.dropped;
    out.splits = split(unique.kept, spec);
    out.report.train = out.splits.train.size();
    out.report.val = out.splits.val.size();
    out.report.test = out.splits.test.size();
    return out;
}

template <typename T, typename ToJson>
std::filesystem::path write_records(const std::vector<T>& data, const std::filesystem::path& path, ToJson to_json_fn) {
    if (data.empty()) spdlog::warn("exporting empty dataset to {}", path.string());
    std::vector<nlohmann::json> records;
    records.reserve(data.size());
    for (const auto& d : data) to_json_fn(d, records);
    text::write_jsonl(path, records);
    return path;
}

} // namespace

void SplitSpec::validate() const {
    for (double f : {train_frac, val_frac, test_frac}) {
        if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("split fractions must lie in [0, 1]");
    }
    if (std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-9) {
        throw ConfigError("split fractions must sum to 1");
    }
}

nlohmann::json CurationReport::to_json() const {
    return {{"input_count", input_count},
            {"ill_formed_dropped", ill_formed_dropped},
            {"duplicates_dropped", duplicates_dropped},
            {"output_counts", {{"train", train}, {"val", val}, {"test", test}}}};
}

std::string normalize_question(std::string_view q) {
    std::string out;
    bool pending_space = false;
    for (char ch : q) {
        const auto c = static_cast<unsigned char>(ch);
        if (c < 0x80 && std::isspace(c)) {
            pending_space = true;
            continue;
        }
        if (c < 0x80 && std::ispunct(c)) continue;
        if (pending_space && !out.empty()) out.push_back(' ');
        pending_space = false;
        out.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    }
    return out;
}

bool clean_text(std::string_view s) {
    if (!text::is_valid_utf8(s)) return false;
    if (s.find("\xEF\xBF\xBD") != std::string_view::npos) return false; // U+FFFD
    return std::none_of(s.begin(), s.end(), [](char ch) {
        const auto c = static_cast<unsigned char>(ch);
        return (c < 0x20 && c != '\n' && c != '\t') || c == 0x7F;
    });
}

Filtered<sdg::InstructSample> validate_samples(const std::vector<sdg::InstructSample>& samples) {
    Filtered<sdg::InstructSample> out;
    for (const auto& s : samples) {
        if (!s.id.empty() && field_ok(s.question) && field_ok(s.answer) && question_length_ok(s.question)) {
            out.kept.push_back(s);
        } else {
            ++out.dropped;
        }
    }
    return out;
}

Filtered<sdg::PreferenceSample> validate_samples(const std::vector<sdg::PreferenceSample>& samples) {
    Filtered<sdg::PreferenceSample> out;
    for (const auto& s : samples) {
        if (!s.id.empty() && field_ok(s.prompt) && field_ok(s.chosen) && field_ok(s.rejected) &&
            s.chosen != s.rejected && question_length_ok(s.prompt)) {
            out.kept.push_back(s);
        } else {
            ++out.dropped;
        }
    }
    return out;
}

Filtered<sdg::InstructSample> dedup(const std::vector<sdg::InstructSample>& samples) {
    return dedup_by(samples, [](const sdg::InstructSample& s) -> const std::string& { return s.question; });
}

Filtered<sdg::PreferenceSample> dedup(const std::vector<sdg::PreferenceSample>& samples) {
    return dedup_by(samples, [](const sdg::PreferenceSample& s) -> const std::string& { return s.prompt; });
}

std::vector<int> assign_splits(const std::vector<std::string>& group, const SplitSpec& spec) {
    spec.validate();
    const std::size_t n = group.size();
    std::vector<int> out(n, 0);
    if (n == 0) return out;

    // Groups in sorted key order so membership depends only on content and seed.
    std::map<std::string, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < n; ++i) members[group[i]].push_back(i);
    std::vector<const std::vector<std::size_t>*> order;
    order.reserve(members.size());
    for (const auto& [key, idx] : members) order.push_back(&idx);

    SplitMix64 rng(spec.seed);
    for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[rng.below(i)]);
    }

    const double total = static_cast<double>(n);
    const double b1 = std::round(total * spec.train_frac);
    const double b2 = std::min(total, std::round(total * (spec.train_frac + spec.val_frac)));
    double cum = 0.0;
    for (const auto* idx : order) {
        const double size = static_cast<double>(idx->size());
        // singleton groups land on exact boundaries; larger groups go where their midpoint falls
        const double pos = size == 1.0 ? cum : cum + size / 2.0;
        const int which = pos < b1 ? 0 : (pos < b2 ? 1 : 2);
        for (auto i : *idx) out[i] = which;
        cum += size;
    }
    return out;
}

Splits<sdg::InstructSample> split(const std::vector<sdg::InstructSample>& samples, const SplitSpec& spec) {
    return split_impl(samples, spec);
}

Splits<sdg::PreferenceSample> split(const std::vector<sdg::PreferenceSample>& samples, const SplitSpec& spec) {
    return split_impl(samples, spec);
}

Curated<sdg::InstructSample> curate(const std::vector<sdg::InstructSample>& samples, const SplitSpec& spec) {
    return curate_impl(samples, spec);
}

Curated<sdg::PreferenceSample> curate(const std::vector<sdg::PreferenceSample>& samples, const SplitSpec& spec) {
    return curate_impl(samples, spec);
}

std::string to_string(ExportFormat f) {
    switch (f) {
    case ExportFormat::sft_chat: return "sft_chat";
    case ExportFormat::dpo_pairs: return "dpo_pairs";
    case ExportFormat::unpaired_pref: return "unpaired_pref";
    }
    return "";
}

ExportFormat export_format_from_string(std::string_view s) {
    if (s == "sft_chat") return ExportFormat::sft_chat;
    if (s == "dpo_pairs") return ExportFormat::dpo_pairs;
    if (s == "unpaired_pref") return ExportFormat::unpaired_pref;
    throw ConfigError("unknown export format: " + std::string(s));
}

std::filesystem::path export_jsonl(const std::vector<sdg::InstructSample>& data, const std::filesystem::path& path) {
    return write_records(data, path, [](const auto& s, auto& out) { out.push_back(sdg::to_json(s)); });
}

std::filesystem::path export_jsonl(const std::vector<sdg::PreferenceSample>& data, ExportFormat format,
                                   const std::filesystem::path& path) {
    switch (format) {
    case ExportFormat::dpo_pairs:
        return write_records(data, path, [](const auto& s, auto& out) { out.push_back(sdg::to_json(s)); });
    case ExportFormat::unpaired_pref:
        return write_records(data, path, [](const auto& s, auto& out) {
            for (const auto& r : sdg::to_unpaired({s})) out.push_back(sdg::to_json(r));
        });
    case ExportFormat::sft_chat: break;
    }
    throw ConfigError("preference data cannot be exported as sft_chat");
}

std::vector<sdg::InstructSample> import_sft_chat(const std::filesystem::path& path) {
    std::vector<sdg::InstructSample> out;
    for (const auto& j : text::read_jsonl(path)) out.push_back(sdg::instruct_from_json(j));
    return out;
}

std::vector<sdg::PreferenceSample> import_dpo_pairs(const std::filesystem::path& path) {
    std::vector<sdg::PreferenceSample> out;
    for (const auto& j : text::read_jsonl(path)) out.push_back(sdg::preference_from_json(j));
    return out;
}

std::vector<sdg::UnpairedRecord> import_unpaired(const std::filesystem::path& path) {
    std::vector<sdg::UnpairedRecord> out;
    for (const auto& j : text::read_jsonl(path)) out.push_back(sdg::unpaired_from_json(j));
    return out;
}

} // namespace valign::curation
