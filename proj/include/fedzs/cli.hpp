#pragma once

#include <filesystem>
#include <optional>
#include <ostream>

#include "fedzs/federation.hpp"

namespace fedzs::cli {

struct RunManifest {
    std::filesystem::path scenario_path;
    std::filesystem::path out_dir;
    std::optional<std::uint64_t> seed_override;
    bool oracle_k = false;
    bool silent = false;
};

// Exit codes shared by every command: 0 success, 1 validation error,
// 2 runtime error.
constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

// Runs a scenario and writes metrics.csv, clusters.csv and summary.json into
// the output directory. All three land atomically (temp-then-rename) or not
// at all.
int cmd_run(const RunManifest& manifest, std::ostream& diag);

// Prints one finding per line; exits clean only when there are none.
int cmd_validate(const std::filesystem::path& scenario_path, std::ostream& out);

struct ImpressArgs {
    std::filesystem::path model_path;
    int class_id = 0;
    int count = 100;
    double beta = 1.0;
    std::filesystem::path out_path = "impressions.txt";
};

// Synthesizes impressions for one class of a dumped model and writes them in
// the feature-file format.
int cmd_impress(const ImpressArgs& args, std::ostream& diag);

}  // namespace fedzs::cli
