#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "valign/align_math.hpp"
#include "valign/error.hpp"
#include "valign/rng.hpp"
#include "valign/text.hpp"

using namespace valign;
using namespace valign::align;
namespace fs = std::filesystem;

TEST_CASE("stable primitives") {
    CHECK(sigmoid(0.2) == doctest::Approx(0.54983399731247791131).epsilon(1e-15));
    CHECK(sigmoid(0.0) == 0.5);
    CHECK(sigmoid(-800.0) >= 0.0);
    CHECK(sigmoid(800.0) == 1.0);
    CHECK(softplus(0.0) == doctest::Approx(std::numbers::ln2).epsilon(1e-15));
    CHECK(softplus(1000.0) == 1000.0);
    CHECK(softplus(-1000.0) == 0.0);
    CHECK(log_sigmoid(-1000.0) == -1000.0);
    CHECK(std::isfinite(log_sigmoid(1000.0)));
}

TEST_CASE("dpo closed forms") {
    const PrefScoreRecord tie{"t", -10.0, -10.0, -10.0, -10.0};
    const auto l0 = dpo_example_loss(tie, {0.1});
    CHECK(std::abs(l0.loss - std::numbers::ln2) < 1e-12);
    CHECK(l0.margin == 0.0);

    const PrefScoreRecord r{"r", -3.0, -5.0, -4.0, -4.0};
    const auto l = dpo_example_loss(r, {0.1});
    CHECK(l.margin == 2.0);
    CHECK(std::abs(l.loss - 0.59813886938159183469) < 1e-14);

    const PrefScoreRecord swapped{"s", -5.0, -3.0, -4.0, -4.0};
    const auto ls = dpo_example_loss(swapped, {0.1});
    CHECK(ls.margin == -2.0);
    CHECK(std::abs(ls.loss - 0.79813886938159184579) < 1e-14);
    // swapping chosen and rejected adds exactly beta * margin
    CHECK(std::abs((ls.loss - l.loss) - 0.2) < 1e-14);
}

TEST_CASE("dpo batch summary") {
    const std::vector<PrefScoreRecord> rs{{"a", -3, -5, -4, -4}, {"b", -5, -3, -4, -4}, {"c", -1, -1, -1, -1}};
    const auto b = dpo_batch_loss(rs, {0.1});
    CHECK(b.margins == std::vector<double>{2.0, -2.0, 0.0});
    CHECK(b.reward_accuracy == doctest::Approx(1.0 / 3.0));
    CHECK(b.margin_min == -2.0);
    CHECK(b.margin_max == 2.0);
    CHECK(b.mean == doctest::Approx((0.59813886938159183469 + 0.79813886938159184579 + std::numbers::ln2) / 3));
    CHECK_THROWS_AS(dpo_batch_loss(std::vector<PrefScoreRecord>{}, {0.1}), InputError);
}

TEST_CASE("dpo input validation") {
    CHECK_THROWS_AS(dpo_example_loss({"x", 0.5, -1, -1, -1}, {0.1}), InputError);
    CHECK_THROWS_AS(dpo_example_loss({"x", NAN, -1, -1, -1}, {0.1}), InputError);
    CHECK_THROWS_AS(dpo_example_loss({"x", -1, -1, -1, -1}, {0.0}), ConfigError);
    CHECK_THROWS_AS(dpo_example_loss({"x", -1, -1, -1, -1}, {-0.5}), ConfigError);
}

TEST_CASE("dpo gradient matches finite differences") {
    SplitMix64 rng(3);
    for (double beta : {0.05, 0.1, 0.5}) {
        for (int i = 0; i < 200; ++i) {
            PrefScoreRecord r{"g", -200.0 * rng.uniform() - 1.0, -200.0 * rng.uniform() - 1.0,
                              -200.0 * rng.uniform() - 1.0, -200.0 * rng.uniform() - 1.0};
            const auto check = dpo_finite_diff_check(r, {beta});
            CHECK(check.max_rel_error < 1e-6);
            const auto g = dpo_gradient(r, {beta});
            CHECK(g[0] == -g[1]);
            CHECK(g[0] == -g[2]);
            CHECK(g[0] == g[3]);
            CHECK(g[0] <= 0.0);
        }
    }
    CHECK_THROWS_AS(dpo_finite_diff_check({"x", -1, -2, -1, -1}, {0.1}, 1e-2), std::invalid_argument);
}

TEST_CASE("sft negative log-likelihood") {
    const double lnv = std::log(8.0);
    const SftScoreRecord uniform{"u", {-lnv, -lnv, -lnv, -lnv}};
    CHECK(std::abs(sft_nll(uniform) - 8.317766166719343713) < 1e-12);
    CHECK(sft_nll({"z", {0.0, 0.0}}) == 0.0);
    CHECK_THROWS_AS(sft_nll({"e", {}}), InputError);
    CHECK_THROWS_AS(sft_nll({"p", {0.1}}), InputError);

    SplitMix64 rng(11);
    std::vector<SftScoreRecord> rs;
    double total = 0.0;
    for (int i = 0; i < 20; ++i) {
        SftScoreRecord r{"r" + std::to_string(i), {}};
        for (std::size_t k = 0; k < 1 + rng.below(30); ++k) r.target_token_logprobs.push_back(-5.0 * rng.uniform());
        total += sft_nll(r);
        rs.push_back(r);
    }
    const auto b = sft_batch_nll(rs);
    CHECK(b.sum == doctest::Approx(total).epsilon(1e-12));
    CHECK(b.n == 20);
    CHECK(b.mean == doctest::Approx(total / 20));
    std::reverse(rs.begin(), rs.end());
    CHECK(sft_batch_nll(rs).sum == doctest::Approx(total).epsilon(1e-12));
}

TEST_CASE("trainer configs carry the reference recipe") {
    const auto sft = trainer_config("values", TrainStage::sft);
    CHECK(sft["hyperparameters"]["learning_rate"] == 1e-6);
    CHECK(sft["hyperparameters"]["warmup_ratio"] == 0.1);
    CHECK(sft["hyperparameters"]["num_train_epochs"] == 5);
    CHECK(sft["hyperparameters"]["per_device_train_batch_size"] == 16);
    CHECK(sft["hyperparameters"]["gradient_accumulation_steps"] == 1);
    CHECK(sft["hyperparameters"].size() == 5);
    const auto dpo = trainer_config("values", TrainStage::dpo);
    CHECK(dpo["hyperparameters"]["beta"] == 0.1);
    CHECK(dpo["hyperparameters"]["learning_rate"] == 1e-8);
    CHECK(dpo["hyperparameters"]["per_device_train_batch_size"] == 16);
    CHECK(dpo["hyperparameters"]["gradient_accumulation_steps"] == 16);
    CHECK(dpo["hyperparameters"].size() == 4);
    CHECK(dpo["reference_model"] == "sft_checkpoint");
    CHECK_THROWS_AS(train_stage_from_string("ppo"), ConfigError);

    const auto path = fs::temp_directory_path() / "valign_align_cfg" / "dpo.json";
    export_trainer_config("values", TrainStage::dpo, path);
    CHECK(nlohmann::json::parse(text::read_file(path)) == dpo);
    fs::remove_all(path.parent_path());
}

TEST_CASE("score record io") {
    const auto dir = fs::temp_directory_path() / "valign_align_io";
    fs::remove_all(dir);
    text::write_jsonl(dir / "pref.jsonl", {to_json(PrefScoreRecord{"a", -1, -2, -3, -4})});
    const auto rs = read_pref_records(dir / "pref.jsonl");
    REQUIRE(rs.size() == 1);
    CHECK(rs[0].as_array() == std::array<double, 4>{-1, -2, -3, -4});
    text::write_file(dir / "bad.jsonl", "{\"sample_id\": \"a\", \"logp_theta_w\": -1}\n");
    CHECK_THROWS_AS(read_pref_records(dir / "bad.jsonl"), InputError);
    text::write_jsonl(dir / "sft.jsonl", {to_json(SftScoreRecord{"s", {-0.5, -0.25}})});
    CHECK(read_sft_records(dir / "sft.jsonl")[0].target_token_logprobs == std::vector<double>{-0.5, -0.25});
    fs::remove_all(dir);
}
