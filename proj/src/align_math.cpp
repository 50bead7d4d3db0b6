#include "valign/align_math.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "valign/error.hpp"
#include "valign/text.hpp"

namespace valign::align {

PrefScoreRecord PrefScoreRecord::from_array(const std::array<double, 4>& v, std::string id) {
    return PrefScoreRecord{std::move(id), v[0], v[1], v[2], v[3]};
}

void DpoConfig::validate() const {
    if (!(beta > 0.0) || !std::isfinite(beta)) throw ConfigError("dpo beta must be a positive finite number");
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus(double x) {
    // log(1 + e^x) = max(x, 0) + log1p(e^{-|x|})
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double log_sigmoid(double x) { return -softplus(-x); }

void validate(const SftScoreRecord& r) {
    if (r.target_token_logprobs.empty()) throw InputError("sft record " + r.sample_id + ": no target tokens");
    for (double lp : r.target_token_logprobs) {
        if (!std::isfinite(lp)) throw InputError("sft record " + r.sample_id + ": non-finite log-prob");
        if (lp > 0.0) throw InputError("sft record " + r.sample_id + ": log-prob above zero");
    }
}

void validate(const PrefScoreRecord& r) {
    for (double lp : r.as_array()) {
        if (!std::isfinite(lp)) throw InputError("preference record " + r.sample_id + ": non-finite log-prob");
        if (lp > 0.0) throw InputError("preference record " + r.sample_id + ": log-prob above zero");
    }
}

double sft_nll(const SftScoreRecord& record) {
    validate(record);
    double sum = 0.0;
    for (double lp : record.target_token_logprobs) sum += lp;
    return sum == 0.0 ? 0.0 : -sum;
}

SftBatchLoss sft_batch_nll(std::span<const SftScoreRecord> records) {
    if (records.empty()) throw InputError("empty batch");
    SftBatchLoss out;
    for (const auto& r : records) out.sum += sft_nll(r);
    out.n = records.size();
    out.mean = out.sum / static_cast<double>(out.n);
    return out;
}

DpoExampleLoss dpo_example_loss(const PrefScoreRecord& record, const DpoConfig& cfg) {
    cfg.validate();
    validate(record);
    const double margin = (record.logp_theta_w - record.logp_ref_w) - (record.logp_theta_l - record.logp_ref_l);
    return {softplus(-cfg.beta * margin), margin};
}

DpoBatchLoss dpo_batch_loss(std::span<const PrefScoreRecord> records, const DpoConfig& cfg) {
    if (records.empty()) throw InputError("empty batch");
    DpoBatchLoss out;
    out.margins.reserve(records.size());
    std::size_t positive = 0;
    for (const auto& r : records) {
        const auto ex = dpo_example_loss(r, cfg);
        out.sum += ex.loss;
        out.margins.push_back(ex.margin);
        if (ex.margin > 0.0) ++positive;
    }
    const auto n = static_cast<double>(records.size());
    out.mean = out.sum / n;
    out.margin_mean = std::accumulate(out.margins.begin(), out.margins.end(), 0.0) / n;
    const auto [lo, hi] = std::minmax_element(out.margins.begin(), out.margins.end());
    out.margin_min = *lo;
    out.margin_max = *hi;
    out.reward_accuracy = static_cast<double>(positive) / n;
    return out;
}

std::array<double, 4> dpo_gradient(const PrefScoreRecord& record, const DpoConfig& cfg) {
    const auto ex = dpo_example_loss(record, cfg);
    const double g = cfg.beta * sigmoid(-cfg.beta * ex.margin);
    return {-g, g, g, -g};
}

GradCheck finite_diff_check(const ScalarFn& fn, const GradientFn& grad, std::span<const double> point, double eps) {
    if (!(eps >= 1e-8 && eps <= 1e-3)) throw std::invalid_argument("finite_diff_check: eps must lie in [1e-8, 1e-3]");
    GradCheck out;
    out.analytic = grad(point);
    if (out.analytic.size() != point.size()) throw std::invalid_argument("finite_diff_check: gradient size mismatch");
    std::vector<double> x(point.begin(), point.end());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double x0 = x[i];
        // use the step actually representable around x0
        const double hi = x0 + eps;
        const double lo = x0 - eps;
        x[i] = hi;
        const double f_hi = fn(x);
        x[i] = lo;
        const double f_lo = fn(x);
        x[i] = x0;
        const double numeric = (f_hi - f_lo) / (hi - lo);
        out.numeric.push_back(numeric);
        const double a = out.analytic[i];
        const double scale = std::max(std::abs(a), std::abs(numeric));
        const double rel = scale == 0.0 ? 0.0 : std::abs(a - numeric) / scale;
        out.max_rel_error = std::max(out.max_rel_error, rel);
    }
    return out;
}

GradCheck dpo_finite_diff_check(const PrefScoreRecord& record, const DpoConfig& cfg, double eps) {
    // Loss as a function of the four log-probs; perturbations may step above zero,
    // so evaluate the closed form directly rather than through record validation.
    const ScalarFn fn = [&](std::span<const double> v) {
        const double margin = (v[0] - v[2]) - (v[1] - v[3]);
        return softplus(-cfg.beta * margin);
    };
    const GradientFn grad = [&](std::span<const double> v) {
        const auto g = dpo_gradient(PrefScoreRecord{record.sample_id, v[0], v[1], v[2], v[3]}, cfg);
        return std::vector<double>(g.begin(), g.end());
    };
    const auto point = record.as_array();
    return finite_diff_check(fn, grad, point, eps);
}

std::string to_string(TrainStage s) { return s == TrainStage::sft ? "sft" : "dpo"; }

TrainStage train_stage_from_string(std::string_view s) {
    if (s == "sft") return TrainStage::sft;
    if (s == "dpo") return TrainStage::dpo;
    throw ConfigError("unknown training stage: " + std::string(s));
}

nlohmann::json trainer_config(std::string_view use_case, TrainStage stage) {
    nlohmann::json hp;
    if (stage == TrainStage::sft) {
        hp = {{"learning_rate", 1e-6},
              {"warmup_ratio", 0.1},
              {"num_train_epochs", 5},
              {"per_device_train_batch_size", 16},
              {"gradient_accumulation_steps", 1}};
    } else {
        hp = {{"beta", 0.1},
              {"learning_rate", 1e-8},
              {"per_device_train_batch_size", 16},
              {"gradient_accumulation_steps", 16}};
    }
    nlohmann::json cfg{{"use_case", std::string(use_case)},
                       {"stage", to_string(stage)},
                       {"hyperparameters", hp},
                       {"full_weights", true}};
    if (stage == TrainStage::dpo) {
        cfg["reference_model"] = "sft_checkpoint";
        cfg["sequence_logprob_reduction"] = "sum";
        cfg["loss_reduction"] = "mean";
        cfg["dataset_format"] = "dpo_pairs";
    } else {
        cfg["loss_reduction"] = "mean";
        cfg["dataset_format"] = "sft_chat";
    }
    return cfg;
}

std::filesystem::path export_trainer_config(std::string_view use_case, TrainStage stage,
                                            const std::filesystem::path& path) {
    text::write_file(path, trainer_config(use_case, stage).dump(2) + "\n");
    return path;
}

nlohmann::json to_json(const SftScoreRecord& r) {
    return {{"sample_id", r.sample_id}, {"target_token_logprobs", r.target_token_logprobs}};
}

SftScoreRecord sft_record_from_json(const nlohmann::json& j) {
    try {
        SftScoreRecord r{j.at("sample_id").get<std::string>(), j.at("target_token_logprobs").get<std::vector<double>>()};
        validate(r);
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("malformed sft score record: ") + e.what());
    }
}

nlohmann::json to_json(const PrefScoreRecord& r) {
    return {{"sample_id", r.sample_id},
            {"logp_theta_w", r.logp_theta_w},
            {"logp_theta_l", r.logp_theta_l},
            {"logp_ref_w", r.logp_ref_w},
            {"logp_ref_l", r.logp_ref_l}};
}

PrefScoreRecord pref_record_from_json(const nlohmann::json& j) {
    try {
        PrefScoreRecord r{j.at("sample_id").get<std::string>(), j.at("logp_theta_w").get<double>(),
                          j.at("logp_theta_l").get<double>(), j.at("logp_ref_w").get<double>(),
                          j.at("logp_ref_l").get<double>()};
        validate(r);
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("malformed preference score record: ") + e.what());
    }
}

std::vector<PrefScoreRecord> read_pref_records(const std::filesystem::path& path) {
    std::vector<PrefScoreRecord> out;
    for (const auto& j : text::read_jsonl(path)) out.push_back(pref_record_from_json(j));
    return out;
}

std::vector<SftScoreRecord> read_sft_records(const std::filesystem::path& path) {
    std::vector<SftScoreRecord> out;
    for (const auto& j : text::read_jsonl(path)) out.push_back(sft_record_from_json(j));
    return out;
}

} // namespace valign::align
