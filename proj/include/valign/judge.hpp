#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "valign/prompts.hpp"
#include "valign/teacher.hpp"

// Pairwise LLM-judge evaluation: both presentation orders per pair, win-rate
// aggregation and percentile-bootstrap intervals.

namespace valign::judge {

inline constexpr std::string_view kDefaultJudgeModel = "prometheus-eval/prometheus-8x7b-v2.0";

enum class Winner { A, B };
enum class Order { AB, BA };

std::string to_string(Winner w);
std::string to_string(Order o);
Order order_from_string(std::string_view s);

/// Last "[[A]]" / "[[B]]" marker in the judge output.
std::optional<Winner> parse_verdict(std::string_view raw);

struct JudgeRequest {
    std::string prompt;
    std::string response_a; ///< presented first
    std::string response_b; ///< presented second
    std::string rubric;
    int attempt = 0; ///< 0 for the first call, 1 for the retry after an unparseable answer
};

/// Produces raw judge text for a batch of requests, in order.
class JudgeBackend {
public:
    virtual ~JudgeBackend() = default;
    virtual std::vector<std::string> complete(const std::vector<JudgeRequest>& requests) = 0;
};

struct JudgeConfig {
    teacher::DecodeParams params = teacher::DecodeParams::greedy(512);
    std::int64_t seed = 0; ///< attempt k is sent with seed + k
    std::string rubric;    ///< empty: built-in rubric
    const prompts::TemplateStore* templates = nullptr;

    std::string effective_rubric() const;
};

/// Renders the pairwise template and calls the teacher client (bounded by its
/// concurrency ceiling). Endpoint failures propagate as TeacherError.
class LlmJudge : public JudgeBackend {
public:
    LlmJudge(teacher::TeacherClient& client, JudgeConfig cfg) : client_(client), cfg_(std::move(cfg)) {}
    std::vector<std::string> complete(const std::vector<JudgeRequest>& requests) override;

    std::string render(const JudgeRequest& req) const;

private:
    teacher::TeacherClient& client_;
    JudgeConfig cfg_;
};

/// Per-request function backend for tests and replays.
class ScriptedJudge : public JudgeBackend {
public:
    using Fn = std::function<std::string(const JudgeRequest&)>;
    explicit ScriptedJudge(Fn fn) : fn_(std::move(fn)) {}
    std::vector<std::string> complete(const std::vector<JudgeRequest>& requests) override;

private:
    Fn fn_;
};

struct JudgeVerdict {
    std::optional<Winner> winner; ///< empty: parse failure after the retry
    std::string raw_response;
    Order order = Order::AB;
    int attempts = 0;

    bool parse_failure() const { return !winner.has_value(); }
};

/// One judgment; an unparseable answer is retried once.
JudgeVerdict judge_pair(JudgeBackend& backend, const std::string& prompt, const std::string& response_a,
                        const std::string& response_b, const std::string& rubric, Order order = Order::AB);

struct BootstrapCi {
    double lo = 0.0;
    double hi = 0.0;
    double halfwidth = 0.0; ///< (hi - lo) / 2
};

/// Percentile bootstrap of the mean over `outcomes`. Throws InputError when n < 2.
BootstrapCi bootstrap_ci(const std::vector<double>& outcomes, double level = 0.95, std::size_t resamples = 1000,
                         std::uint64_t seed = 0);

struct Prompt {
    std::string prompt_id;
    std::string prompt;
};

struct Response {
    std::string prompt_id;
    std::string response;
};

/// One judged presentation. `first`/`second` are method names in presentation order.
struct TranscriptEntry {
    std::string prompt_id;
    std::string first;
    std::string second;
    std::string raw_response;
    std::optional<std::string> winner; ///< method name; empty on parse failure
    int attempts = 0;

    bool operator==(const TranscriptEntry&) const = default;
};

nlohmann::json to_json(const TranscriptEntry& e);
TranscriptEntry transcript_entry_from_json(const nlohmann::json& j);

struct WinRateCell {
    std::string method_a;
    std::string method_b;
    std::size_t wins_a = 0;
    std::size_t n = 0; ///< valid verdicts across both orders
    double rate = 0.0; ///< wins_a / n (0 when n == 0)
    double ci_halfwidth = 0.0;
    std::size_t parse_failures = 0;
    std::optional<double> rate_a_first;  ///< A's rate when presented first only
    std::optional<double> rate_a_second; ///< A's rate when presented second only

    nlohmann::json to_json() const;
};

struct BootstrapSpec {
    double level = 0.95;
    std::size_t resamples = 1000;
    std::uint64_t seed = 0;
};

struct WinRateMatrix {
    std::vector<std::string> methods;
    std::vector<std::vector<std::optional<WinRateCell>>> cells; ///< [a][b]; diagonal empty
    std::vector<TranscriptEntry> transcript;

    const WinRateCell& cell(const std::string& a, const std::string& b) const;
    /// Mean of a method's off-diagonal rates.
    double average_rate(const std::string& method) const;

    nlohmann::json to_json() const;
    std::string to_csv() const;
};

/// Aggregates a transcript. A pure function: same transcript, same matrix.
WinRateMatrix winrate_from_transcript(const std::vector<std::string>& methods,
                                      const std::vector<TranscriptEntry>& transcript, const BootstrapSpec& boot = {});

/// Judges every unordered method pair in both presentation orders over all prompts.
/// Throws InputError when fewer than two methods are given or response lists are misaligned.
WinRateMatrix winrate_matrix(const std::vector<std::string>& methods, const std::vector<Prompt>& prompts,
                             const std::map<std::string, std::vector<Response>>& responses, JudgeBackend& backend,
                             const std::string& rubric, const BootstrapSpec& boot = {});

void write_transcript(const std::filesystem::path& path, const std::vector<TranscriptEntry>& transcript);
std::vector<TranscriptEntry> read_transcript(const std::filesystem::path& path);

std::vector<Response> read_responses(const std::filesystem::path& path);
std::vector<Prompt> read_prompts(const std::filesystem::path& path);

} // namespace valign::judge
