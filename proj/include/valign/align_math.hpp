#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

// Supervised fine-tuning negative log-likelihood and the DPO logistic loss,
// evaluated on externally computed log-probabilities.

namespace valign::align {

/// Token log-probabilities of a target response under the policy.
struct SftScoreRecord {
    std::string sample_id;
    std::vector<double> target_token_logprobs;
};

/// Sequence log-probabilities of the chosen (w) and rejected (l) responses under
/// the policy (theta) and the frozen reference.
struct PrefScoreRecord {
    std::string sample_id;
    double logp_theta_w = 0.0;
    double logp_theta_l = 0.0;
    double logp_ref_w = 0.0;
    double logp_ref_l = 0.0;

    std::array<double, 4> as_array() const { return {logp_theta_w, logp_theta_l, logp_ref_w, logp_ref_l}; }
    static PrefScoreRecord from_array(const std::array<double, 4>& v, std::string id = {});
};

struct DpoConfig {
    double beta = 0.1;
    void validate() const;
};

double sigmoid(double x);
/// log(sigmoid(x)) without overflow for large |x|.
double log_sigmoid(double x);
/// log(1 + e^x) without overflow.
double softplus(double x);

void validate(const SftScoreRecord& r);
void validate(const PrefScoreRecord& r);

/// -(sum of target token log-probs).
double sft_nll(const SftScoreRecord& record);

struct SftBatchLoss {
    double sum = 0.0;  ///< objective as a sum over records
    double mean = 0.0;
    std::size_t n = 0;
};

SftBatchLoss sft_batch_nll(std::span<const SftScoreRecord> records);

struct DpoExampleLoss {
    double loss = 0.0;
    double margin = 0.0; ///< (theta_w - ref_w) - (theta_l - ref_l)
};

/// loss = -log sigmoid(beta * margin) = log(1 + e^{-beta * margin}).
DpoExampleLoss dpo_example_loss(const PrefScoreRecord& record, const DpoConfig& cfg);

struct DpoBatchLoss {
    double mean = 0.0;
    double sum = 0.0;
    std::vector<double> margins;
    double margin_mean = 0.0;
    double margin_min = 0.0;
    double margin_max = 0.0;
    double reward_accuracy = 0.0; ///< fraction of records with margin > 0
};

DpoBatchLoss dpo_batch_loss(std::span<const PrefScoreRecord> records, const DpoConfig& cfg);

/// Analytic gradient of the example loss w.r.t. (theta_w, theta_l, ref_w, ref_l):
/// (-b s, +b s, +b s, -b s) with s = sigmoid(-beta * margin).
std::array<double, 4> dpo_gradient(const PrefScoreRecord& record, const DpoConfig& cfg);

using ScalarFn = std::function<double(std::span<const double>)>;
using GradientFn = std::function<std::vector<double>(std::span<const double>)>;

struct GradCheck {
    double max_rel_error = 0.0;
    std::vector<double> analytic;
    std::vector<double> numeric;
};

/// Compares `grad` against central differences of `fn` at `point`.
/// Relative error per coordinate is |a - n| / max(|a|, |n|), or 0 when both vanish.
/// Throws std::invalid_argument unless eps lies in [1e-8, 1e-3].
GradCheck finite_diff_check(const ScalarFn& fn, const GradientFn& grad, std::span<const double> point, double eps);

/// Gradient check of dpo_example_loss at `record`.
GradCheck dpo_finite_diff_check(const PrefScoreRecord& record, const DpoConfig& cfg, double eps = 1e-5);

enum class TrainStage { sft, dpo };
std::string to_string(TrainStage s);
TrainStage train_stage_from_string(std::string_view s);

/// Trainer hyperparameters for one stage; the "hyperparameters" object holds exactly
/// the reference training recipe.
nlohmann::json trainer_config(std::string_view use_case, TrainStage stage);
std::filesystem::path export_trainer_config(std::string_view use_case, TrainStage stage, const std::filesystem::path& path);

nlohmann::json to_json(const SftScoreRecord& r);
SftScoreRecord sft_record_from_json(const nlohmann::json& j);
nlohmann::json to_json(const PrefScoreRecord& r);
PrefScoreRecord pref_record_from_json(const nlohmann::json& j);

std::vector<PrefScoreRecord> read_pref_records(const std::filesystem::path& path);
std::vector<SftScoreRecord> read_sft_records(const std::filesystem::path& path);

} // namespace valign::align
