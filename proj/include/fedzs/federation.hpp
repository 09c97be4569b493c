#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fedzs/clustering.hpp"
#include "fedzs/dataset.hpp"
#include "fedzs/impressions.hpp"
#include "fedzs/matrix.hpp"
#include "fedzs/nn.hpp"
#include "fedzs/scenario.hpp"

namespace fedzs::federation {

// Server-side view: accumulated scores over the current public dataset.
// Columns track the current label set Y; rows stay nonnegative but are not
// normalized after weighted merges.
struct GlobalState {
    Matrix scores;
    std::vector<int> label_ids;
    data::PublicDataset public_set;
    int iteration = 0;
};

struct AnnouncedSlot {
    int slot_index = 0;
    int source_label = -1;  // simulator-side ground truth, never sent anywhere
    int sample_count = 0;
};

// One user's contribution for a round: merged scores when nothing new was
// seen, or announcement-head weights when new classes are reported.
struct ClientRoundOutput {
    int user = 0;
    std::optional<nn::ScoreTable> scores;
    std::optional<nn::LastLayerWeights> weights;
    std::vector<AnnouncedSlot> slots;
    double local_accuracy = 0.0;
    double alpha = 0.0;
    bool skipped = false;
};

struct MetricsRecord {
    int iteration = 0;
    std::string entity;  // "user_<m>" or "GLOBAL"
    std::string phase;   // "local" or "global"
    double accuracy = 0.0;
    int label_count = 0;
    int public_size = 0;
    int new_labels_resolved = 0;
};

struct Resolution {
    int iteration = 0;
    int user = 0;
    int slot = 0;
    int source_label = -1;
    int minted_label = -1;
    int cluster_id = 0;
};

struct ClusterPlotRow {
    int iteration = 0;
    int user = 0;
    int slot = 0;
    double pc1 = 0.0;
    double pc2 = 0.0;
    int cluster_id = 0;
};

struct RunResult {
    std::vector<MetricsRecord> metrics;
    GlobalState final_state;
    std::vector<Resolution> resolutions;
    std::vector<ClusterPlotRow> cluster_plots;
    scenario::LabelState final_labels;
    data::LabelRegistry registry;  // includes minted names
    // Per round: plain argmax accuracy of the full global table over the
    // whole public set (all labels at once, not the served-to-user view).
    std::vector<double> full_table_accuracy;
};

// Private-to-public size ratio weighting a round's fresh scores.
double compute_alpha(std::size_t private_size, std::size_t public_size);

// Adds alpha-scaled fresh scores to the user's slice of the global table and
// renormalizes each row over those columns.
nn::ScoreTable local_update_choice1(const Matrix& global_restricted,
                                    const nn::ScoreTable& local_scores, double alpha);

// One user's round. Returns merged scores, or announcement weights when the
// round data carries unresolved classes in reporting mode.
ClientRoundOutput local_round(int user, const data::Dataset& round_data,
                              const std::vector<int>& user_labels,
                              const scenario::ArchitectureSpec& arch,
                              const std::vector<scenario::NewClassSlot>& new_slots,
                              const GlobalState& state,
                              const scenario::ScenarioConfig& cfg, int iteration);

// Label-wise merge: a label held by one user is copied; a label held by
// several is their accuracy-weighted mean. Untouched columns persist.
GlobalState global_update_choice1(GlobalState state,
                                  const std::vector<ClientRoundOutput>& outputs);

struct Choice2Result {
    GlobalState state;
    std::vector<Resolution> resolutions;
    std::vector<ClusterPlotRow> plots;
    std::vector<int> minted;  // label ids created this round
};

// Synthesizes impressions from every announcing user's weights, clusters
// their representatives, mints one label per cluster, and admits the
// averaged impressions into the public dataset.
Choice2Result global_update_choice2(GlobalState state,
                                    const std::vector<ClientRoundOutput>& outputs,
                                    const scenario::ScenarioConfig& cfg,
                                    data::LabelRegistry& registry, int iteration);

// Executes the full schedule: per round partition, injection, local rounds,
// then the global update (announcement handling first when present).
RunResult run(const scenario::ScenarioConfig& cfg);

}  // namespace fedzs::federation
