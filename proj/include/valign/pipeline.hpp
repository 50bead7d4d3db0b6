#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "valign/teacher.hpp"

// Stage orchestration over a run directory with a resumable manifest.

namespace valign::pipeline {

enum class Stage {
    ingest,
    gen_instruct,
    gen_pref,
    curate,
    export_data,
    rag_index,
    rag_answer,
    eval_metrics,
    eval_judge,
    verify_losses,
};

/// Stages in dependency order.
const std::vector<Stage>& all_stages();
std::string to_string(Stage s);
Stage stage_from_string(std::string_view s);

/// Every configurable key with its default value.
nlohmann::json default_config();

/// Dotted-path override "a.b=value"; the value is parsed as JSON when possible,
/// otherwise taken as a string.
void apply_override(nlohmann::json& config, std::string_view assignment);

struct PipelineConfig {
    nlohmann::json values;            ///< normalized, defaults filled
    std::filesystem::path base_dir;   ///< relative paths resolve against this
    std::string hash;                 ///< sha256 of the normalized config
    std::string run_id;

    std::filesystem::path resolve(const std::string& p) const;
    std::filesystem::path run_dir() const;
};

/// Fills defaults and rejects unknown keys and invalid values (ConfigError).
PipelineConfig validate_config(const nlohmann::json& raw, std::filesystem::path base_dir = {});

PipelineConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

struct StageRecord {
    std::string name;
    std::string status = "pending"; ///< pending | completed | failed | skipped
    std::string config_hash;
    std::vector<std::string> artifacts; ///< relative to the run directory
    nlohmann::json failures = nlohmann::json::array();
    nlohmann::json usage = nlohmann::json::object();
    nlohmann::json summary = nlohmann::json::object();
};

struct RunManifest {
    std::string run_id;
    std::string config_hash;
    std::vector<StageRecord> stages; ///< dependency order

    StageRecord& stage(Stage s);
    const StageRecord& stage(Stage s) const;
    std::size_t failure_count() const;
    nlohmann::json usage_totals() const;

    nlohmann::json to_json() const;
    static RunManifest from_json(const nlohmann::json& j);
};

class Pipeline {
public:
    /// `transport` replaces HTTP for both teacher and judge clients (tests).
    explicit Pipeline(PipelineConfig cfg, std::shared_ptr<teacher::Transport> transport = nullptr);
    ~Pipeline();

    /// Runs one stage. A completed stage with the same config hash and intact
    /// artifacts is not rerun unless `force` is set. Returns false if that no-op
    /// path was taken.
    bool run_stage(Stage stage, bool force = false);

    /// Runs every stage whose inputs are configured, in dependency order.
    void run_all(bool force = false);

    const RunManifest& manifest() const { return manifest_; }
    const PipelineConfig& config() const { return cfg_; }
    std::filesystem::path manifest_path() const;
    std::filesystem::path artifact(std::string_view name) const;

    /// Network requests issued by this process (teacher + judge).
    std::uint64_t network_requests() const;

private:
    struct Clients;

    void execute(Stage stage, StageRecord& rec);
    void require(std::string_view artifact_name, std::string_view what) const;
    void save_manifest() const;
    teacher::TeacherClient& teacher_client();
    teacher::TeacherClient& judge_client();

    PipelineConfig cfg_;
    std::shared_ptr<teacher::Transport> transport_;
    std::unique_ptr<Clients> clients_;
    RunManifest manifest_;
};

} // namespace valign::pipeline
