#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <string>
#include <vector>

#include "fedzs/dataset.hpp"
#include "fedzs/impressions.hpp"
#include "fedzs/nn.hpp"

namespace fedzs::scenario {

// Hidden widths plus activation; dimensions are filled in per round.
struct ArchitectureSpec {
    std::vector<int> widths;
    nn::Activation activation = nn::Activation::kRelu;
};

struct InjectionEvent {
    int user = 0;       // 1-based
    int iteration = 0;  // 1-based
    int label = -1;     // source-class id, outside the initial public label set
    int count = 0;
};

struct ArchitectureEvent {
    int user = 0;
    int iteration = 0;
    ArchitectureSpec arch;
};

enum class ReportingMode { kReportNewClasses, kSilent };

struct CorpusConfig {
    bool synthetic = true;
    double separation = 6.0;
    std::filesystem::path path;  // used when synthetic == false
};

struct ClusterParams {
    double min_split_silhouette = 0.25;
    double merge_distance = 0.0;
    bool oracle_k = false;
};

struct ScenarioConfig {
    std::string name;
    int num_users = 0;
    int num_iterations = 0;
    int feature_dim = 0;
    std::uint64_t master_seed = 0;
    ReportingMode mode = ReportingMode::kReportNewClasses;

    data::LabelRegistry registry;
    std::vector<int> base_labels;   // initial public label set Y
    std::vector<int> extra_labels;  // injectable classes outside Y
    std::vector<std::vector<int>> user_labels;  // initial l_m, index 0 = user 1
    std::vector<ArchitectureSpec> user_arch;

    int public_frames_per_label = 0;
    int frames_min = 0;
    int frames_max = 0;

    nn::TrainConfig train;
    nn::TrainConfig announce_train;
    impressions::SynthesisConfig synthesis;
    bool synthesis_init_from_public = true;  // derive init range from public features
    ClusterParams clustering;
    CorpusConfig corpus;

    std::vector<InjectionEvent> injections;
    std::vector<ArchitectureEvent> architecture_events;
};

ScenarioConfig parse_scenario(std::istream& in, const std::string& origin);
ScenarioConfig load_scenario_file(const std::filesystem::path& path);

// Human-readable findings; empty means the scenario is clean.
std::vector<std::string> validate_scenario(const ScenarioConfig& cfg);

// Source corpus split into the shared public set and the private pool the
// per-round streams draw from.
struct Corpus {
    data::Dataset private_pool;
    data::PublicDataset public_set;
};

Corpus build_corpus(const ScenarioConfig& cfg);

// Labels discovered so far, as the federation loop tracks them.
struct LabelState {
    std::vector<std::vector<int>> user_labels;  // current l_m per user
    std::map<int, int> minted_to_source;        // minted id -> source class
    std::map<int, int> resolved;                // source class -> minted id
};

struct NewClassSlot {
    int source_label = -1;
    int count = 0;
};

struct RoundAssignment {
    int iteration = 0;
    std::vector<data::Dataset> user_data;
    std::vector<std::vector<int>> user_labels;  // l_m in force this round
    std::vector<ArchitectureSpec> user_arch;
    std::vector<std::vector<NewClassSlot>> new_slots;  // unresolved injections
};

// Draws each user's round data: per label of its l_m a seeded count in
// [frames_min, frames_max], sampled without replacement within the round.
// `state` carries labels minted in earlier rounds; null means initial sets.
RoundAssignment partition_round(const ScenarioConfig& cfg, const data::Dataset& source,
                                int iteration, const LabelState* state = nullptr);

// Labels delivered to users that did not hold them before this round.
struct InjectionOutcome {
    std::vector<std::pair<int, int>> newly_held;  // (user, minted label)
};

// Appends scheduled new-class samples. Classes already resolved globally are
// relabeled to their minted id; unresolved ones are recorded as new slots.
InjectionOutcome apply_injection(RoundAssignment& assignment, const ScenarioConfig& cfg,
                                 const data::Dataset& source, int iteration,
                                 const LabelState* state = nullptr);

// Architecture in force for a user at an iteration (base spec plus the most
// recent scheduled change at or before it).
ArchitectureSpec architecture_in_force(const ScenarioConfig& cfg, int user,
                                       int iteration);

}  // namespace fedzs::scenario
