#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

// Reference-based text metrics. BLEU follows the sacreBLEU conventions (13a
// tokenization, exponential smoothing); ROUGE follows rouge_score without stemming.

namespace valign::metrics {

/// sacreBLEU "13a" tokenization of one segment.
std::string tokenize_13a(std::string_view line);

struct BleuStats {
    std::array<std::size_t, 4> correct{};
    std::array<std::size_t, 4> total{};
    std::size_t sys_len = 0;
    std::size_t ref_len = 0;
};

BleuStats bleu_stats(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references);
double bleu_from_stats(const BleuStats& stats);

/// Corpus BLEU in [0, 100] with one reference per hypothesis.
/// Throws InputError on empty input or a length mismatch.
double corpus_bleu(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references);

struct Prf {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

struct RougeScores {
    Prf rouge1;
    Prf rouge2;
    Prf rougeL;
    Prf rougeLsum;
};

/// Lowercased alphanumeric tokens.
std::vector<std::string> rouge_tokenize(std::string_view text);
/// Splits on newlines, then on ". ".
std::vector<std::string> rouge_sentences(std::string_view text);

RougeScores rouge_scores(std::string_view hypothesis, std::string_view reference);

/// Batch embedding function; one vector per input string.
using Embedder = std::function<std::vector<std::vector<double>>(const std::vector<std::string>&)>;

/// Greedy token matching by cosine similarity in both directions; F1 of the two
/// means, clamped to [0, 1]. Returns nullopt when the embedder throws.
std::optional<double> embed_f1(std::string_view hypothesis, std::string_view reference, const Embedder& embedder);

struct MetricReport {
    double bleu = 0.0;
    double rouge1 = 0.0;
    double rouge2 = 0.0;
    double rougeL = 0.0;
    double rougeLsum = 0.0;
    std::optional<double> embed_f1;
    std::size_t n = 0;

    nlohmann::json to_json() const;
};

/// Corpus BLEU plus ROUGE F1 means over pairs; embed_f1 omitted when no embedder
/// is given or the service is unavailable.
MetricReport evaluate(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references,
                      const Embedder* embedder = nullptr);

} // namespace valign::metrics
