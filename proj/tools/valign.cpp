#include <csignal>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "valign/align_math.hpp"
#include "valign/error.hpp"
#include "valign/mock.hpp"
#include "valign/pipeline.hpp"
#include "valign/teacher.hpp"

namespace {

using valign::pipeline::Stage;

int report_error(const std::string& type, const std::string& message, int code) {
    std::cerr << nlohmann::json{{"error", {{"type", type}, {"message", message}}}}.dump() << std::endl;
    return code;
}

valign::mock::MockTeacherServer* g_server = nullptr;

void on_signal(int) {
    if (g_server) g_server->stop();
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"valign: synthetic value-alignment data generation and evaluation"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    bool force = false;
    std::string log_level = "info";
    app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off")->capture_default_str();

    std::vector<std::pair<CLI::App*, Stage>> stage_cmds;
    const auto add_common = [&](CLI::App* sub) {
        sub->add_option("-c,--config", config_path, "pipeline config (JSON)")->required()->check(CLI::ExistingFile);
        sub->add_option("--set", overrides, "override a config key, e.g. --set nex=3 --set split.seed=7");
        sub->add_flag("--force", force, "rerun even if the stage is up to date");
    };
    for (auto s : valign::pipeline::all_stages()) {
        auto* sub = app.add_subcommand(valign::pipeline::to_string(s), "run the " + valign::pipeline::to_string(s) + " stage");
        add_common(sub);
        stage_cmds.emplace_back(sub, s);
    }
    auto* run_all = app.add_subcommand("run-all", "run every configured stage in dependency order");
    add_common(run_all);
    auto* show = app.add_subcommand("validate-config", "print the normalized config and its hash");
    add_common(show);

    std::string stage_name = "sft";
    std::string use_case = "values";
    std::string out_path;
    auto* export_cfg = app.add_subcommand("export-config", "write trainer hyperparameters for one stage");
    export_cfg->add_option("--stage", stage_name, "sft|dpo")->check(CLI::IsMember({"sft", "dpo"}))->capture_default_str();
    export_cfg->add_option("--use-case", use_case)->capture_default_str();
    export_cfg->add_option("-o,--out", out_path)->required();

    std::string host = "127.0.0.1";
    int port = 8000;
    std::string responder = "fixture";
    auto* mock = app.add_subcommand("mock-teacher", "serve a deterministic OpenAI-compatible mock teacher");
    mock->add_option("--host", host)->capture_default_str();
    mock->add_option("--port", port)->capture_default_str();
    mock->add_option("--responder", responder)->check(CLI::IsMember({"fixture", "echo"}))->capture_default_str();

    CLI11_PARSE(app, argc, argv);
    spdlog::set_level(spdlog::level::from_str(log_level));
    spdlog::set_default_logger(spdlog::stderr_color_mt("valign"));

    try {
        if (*mock) {
            valign::mock::MockTeacherServer server(responder == "echo" ? valign::mock::Responder(valign::mock::echo_responder)
                                                                      : valign::mock::Responder(valign::mock::fixture_responder));
            g_server = &server;
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            spdlog::info("mock teacher listening on {}:{}", host, port);
            server.listen_blocking(host, port);
            return 0;
        }
        if (*export_cfg) {
            valign::align::export_trainer_config(use_case, valign::align::train_stage_from_string(stage_name), out_path);
            std::cout << out_path << std::endl;
            return 0;
        }

        const auto cfg = valign::pipeline::load_config(config_path, overrides);
        if (*show) {
            std::cout << nlohmann::json{{"run_id", cfg.run_id}, {"config_hash", cfg.hash}, {"config", cfg.values}}.dump(2)
                      << std::endl;
            return 0;
        }
        valign::pipeline::Pipeline pipe(cfg);
        if (*run_all) {
            pipe.run_all(force);
        } else {
            for (const auto& [sub, stage] : stage_cmds) {
                if (*sub) pipe.run_stage(stage, force);
            }
        }
        std::cout << nlohmann::json{{"run_id", cfg.run_id},
                                    {"manifest", pipe.manifest_path().string()},
                                    {"failure_count", pipe.manifest().failure_count()},
                                    {"network_requests", pipe.network_requests()}}
                         .dump()
                  << std::endl;
        return 0;
    } catch (const valign::ConfigError& e) {
        return report_error("config", e.what(), 2);
    } catch (const valign::MissingArtifactError& e) {
        return report_error("missing_artifact", e.what(), 3);
    } catch (const valign::InputError& e) {
        return report_error("input", e.what(), 4);
    } catch (const valign::teacher::TeacherError& e) {
        return report_error("teacher", e.what(), 5);
    } catch (const std::exception& e) {
        return report_error("internal", e.what(), 1);
    }
}
