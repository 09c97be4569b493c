#include "fedzs/federation.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "fedzs/common.hpp"

namespace fedzs::federation {

namespace {

enum SeedTag : std::uint64_t {
    kTagModelInit = 0xB1,
    kTagTrain = 0xB2,
    kTagAnnounceInit = 0xB3,
    kTagAnnounceTrain = 0xB4,
    kTagDirichlet = 0xB5,
    kTagSynthesis = 0xB6,
    kTagCluster = 0xB7,
};

// Column index of each requested label within the state's label list.
std::vector<std::size_t> column_indices(const std::vector<int>& state_labels,
                                        const std::vector<int>& wanted) {
    std::vector<std::size_t> idx;
    idx.reserve(wanted.size());
    for (int label : wanted) {
        const auto it = std::find(state_labels.begin(), state_labels.end(), label);
        if (it == state_labels.end())
            throw LabelError("label " + std::to_string(label) +
                             " is not part of the global label set");
        idx.push_back(static_cast<std::size_t>(it - state_labels.begin()));
    }
    return idx;
}

Matrix restrict_columns(const GlobalState& state, const std::vector<int>& labels) {
    const auto idx = column_indices(state.label_ids, labels);
    Matrix out(state.scores.rows(), labels.size());
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t j = 0; j < idx.size(); ++j)
            out(i, j) = state.scores(i, idx[j]);
    return out;
}

// Accuracy over the public rows whose true label belongs to the user's set.
double restricted_public_accuracy(const nn::ScoreTable& table,
                                  const data::PublicDataset& pub,
                                  const std::vector<int>& user_labels) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < pub.size(); ++i)
        if (std::find(user_labels.begin(), user_labels.end(), pub.data.labels[i]) !=
            user_labels.end())
            rows.push_back(i);
    if (rows.empty()) return 0.0;
    std::size_t correct = 0;
    for (std::size_t i : rows)
        if (nn::predicted_label(table.scores.row(i), table.label_ids) ==
            pub.data.labels[i])
            ++correct;
    return static_cast<double>(correct) / static_cast<double>(rows.size());
}

// Provisional (negative) id for announced slot s; never enters the registry.
int provisional_id(int slot_index) { return -(slot_index + 1); }

// Accuracy of the global table as served to one user: its label columns,
// scored on the public rows carrying those labels.
double restricted_global_accuracy(const GlobalState& state,
                                  const std::vector<int>& user_labels) {
    nn::ScoreTable view;
    view.label_ids = user_labels;
    view.scores = restrict_columns(state, user_labels);
    return restricted_public_accuracy(view, state.public_set, user_labels);
}

nn::Classifier head_from_weights(const nn::LastLayerWeights& w) {
    nn::ModelSpec spec;
    spec.input_dim = static_cast<int>(w.weights.rows());
    spec.num_classes = static_cast<int>(w.weights.cols());
    nn::Classifier head = nn::build_classifier(spec, w.label_ids);
    head.weights[0] = w.weights;
    std::fill(head.biases[0].begin(), head.biases[0].end(), 0.0);
    return head;
}

}  // namespace

double compute_alpha(std::size_t private_size, std::size_t public_size) {
    if (public_size == 0) throw ConfigError("public dataset is empty");
    if (private_size == 0) throw InputError("private dataset is empty");
    return static_cast<double>(private_size) / static_cast<double>(public_size);
}

nn::ScoreTable local_update_choice1(const Matrix& global_restricted,
                                    const nn::ScoreTable& local_scores, double alpha) {
    if (global_restricted.rows() != local_scores.scores.rows() ||
        global_restricted.cols() != local_scores.scores.cols())
        throw LabelError("global and local score tables disagree in shape");

    nn::ScoreTable out;
    out.label_ids = local_scores.label_ids;
    out.scores = Matrix(global_restricted.rows(), global_restricted.cols());
    const std::size_t k = out.scores.cols();
    for (std::size_t i = 0; i < out.scores.rows(); ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            const double v = global_restricted(i, j) + alpha * local_scores.scores(i, j);
            out.scores(i, j) = v;
            sum += v;
        }
        if (sum > 0.0) {
            for (std::size_t j = 0; j < k; ++j) out.scores(i, j) /= sum;
        } else {
            for (std::size_t j = 0; j < k; ++j)
                out.scores(i, j) = 1.0 / static_cast<double>(k);
        }
    }
    return out;
}

ClientRoundOutput local_round(int user, const data::Dataset& round_data,
                              const std::vector<int>& user_labels,
                              const scenario::ArchitectureSpec& arch,
                              const std::vector<scenario::NewClassSlot>& new_slots,
                              const GlobalState& state,
                              const scenario::ScenarioConfig& cfg, int iteration) {
    ClientRoundOutput out;
    out.user = user;

    const bool reporting = cfg.mode == scenario::ReportingMode::kReportNewClasses;
    const bool announcing = reporting && !new_slots.empty();

    auto in_user_labels = [&](int label) {
        return std::find(user_labels.begin(), user_labels.end(), label) !=
               user_labels.end();
    };

    if (announcing) {
        // Train a fresh linear head on the public slice of the user's labels
        // plus the full round data; its weight matrix is what gets sent.
        std::map<int, int> slot_of;  // source label -> slot index
        for (std::size_t s = 0; s < new_slots.size(); ++s) {
            out.slots.push_back({static_cast<int>(s), new_slots[s].source_label,
                                 new_slots[s].count});
            slot_of[new_slots[s].source_label] = static_cast<int>(s);
        }

        std::vector<int> head_labels = user_labels;
        std::sort(head_labels.begin(), head_labels.end());
        for (std::size_t s = 0; s < new_slots.size(); ++s)
            head_labels.push_back(provisional_id(static_cast<int>(s)));

        data::Dataset training;
        for (std::size_t i = 0; i < state.public_set.size(); ++i)
            if (in_user_labels(state.public_set.data.labels[i]))
                training.append(state.public_set.data.features.row(i),
                                state.public_set.data.labels[i]);
        for (std::size_t i = 0; i < round_data.size(); ++i) {
            const int label = round_data.labels[i];
            if (in_user_labels(label)) {
                training.append(round_data.features.row(i), label);
            } else {
                const auto it = slot_of.find(label);
                if (it != slot_of.end())
                    training.append(round_data.features.row(i),
                                    provisional_id(it->second));
            }
        }

        nn::ModelSpec spec;
        spec.input_dim = cfg.feature_dim;
        spec.num_classes = static_cast<int>(head_labels.size());
        spec.init_seed = derive_seed(cfg.master_seed,
                                     {kTagAnnounceInit, static_cast<std::uint64_t>(iteration),
                                      static_cast<std::uint64_t>(user)});
        nn::Classifier head = nn::build_classifier(spec, head_labels);
        nn::TrainConfig tc = cfg.announce_train;
        tc.seed = derive_seed(cfg.master_seed,
                              {kTagAnnounceTrain, static_cast<std::uint64_t>(iteration),
                               static_cast<std::uint64_t>(user)});
        head = nn::train(head, training.features, training.labels, tc);

        out.alpha = compute_alpha(training.size(), state.public_set.size());
        out.local_accuracy = restricted_public_accuracy(
            nn::forward(head, state.public_set.data.features), state.public_set,
            user_labels);
        out.weights = nn::last_layer_weights(head);
        return out;
    }

    // Regular round: train the user's private model on the usable samples
    // (unknown-label samples are dropped in silent mode).
    data::Dataset usable;
    for (std::size_t i = 0; i < round_data.size(); ++i)
        if (in_user_labels(round_data.labels[i]))
            usable.append(round_data.features.row(i), round_data.labels[i]);

    if (usable.size() == 0) {
        out.skipped = true;
        return out;
    }

    std::vector<int> labels = user_labels;
    std::sort(labels.begin(), labels.end());
    nn::ModelSpec spec;
    spec.hidden_widths = arch.widths;
    spec.hidden_activation = arch.activation;
    spec.input_dim = cfg.feature_dim;
    spec.num_classes = static_cast<int>(labels.size());
    spec.init_seed = derive_seed(cfg.master_seed,
                                 {kTagModelInit, static_cast<std::uint64_t>(iteration),
                                  static_cast<std::uint64_t>(user)});
    nn::Classifier model = nn::build_classifier(spec, labels);
    nn::TrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.master_seed,
                          {kTagTrain, static_cast<std::uint64_t>(iteration),
                           static_cast<std::uint64_t>(user)});
    model = nn::train(model, usable.features, usable.labels, tc);

    const nn::ScoreTable fresh = nn::forward(model, state.public_set.data.features);
    out.alpha = compute_alpha(usable.size(), state.public_set.size());
    const nn::ScoreTable merged =
        local_update_choice1(restrict_columns(state, labels), fresh, out.alpha);
    out.local_accuracy =
        restricted_public_accuracy(merged, state.public_set, user_labels);
    out.scores = merged;
    return out;
}

GlobalState global_update_choice1(GlobalState state,
                                  const std::vector<ClientRoundOutput>& outputs) {
    struct Holder {
        const ClientRoundOutput* output;
        std::size_t column;
    };
    for (std::size_t col = 0; col < state.label_ids.size(); ++col) {
        const int label = state.label_ids[col];
        std::vector<Holder> holders;
        for (const auto& out : outputs) {
            if (out.skipped || !out.scores) continue;
            const auto& ids = out.scores->label_ids;
            const auto it = std::find(ids.begin(), ids.end(), label);
            if (it != ids.end())
                holders.push_back({&out, static_cast<std::size_t>(it - ids.begin())});
        }
        if (holders.empty()) continue;  // column persists from the previous state

        // A holder's scores are meaningful only on the public rows whose
        // class it knows: each user works with its slice of the public set
        // (rows and columns of its own labels). Merged tables also cover
        // only the rows that existed when this round's predictions were
        // made; later rows keep their current values.
        for (std::size_t i = 0;
             i < holders.front().output->scores->scores.rows(); ++i) {
            const int row_label = state.public_set.data.labels[i];
            double sum = 0.0, denom = 0.0;
            std::size_t contributors = 0;
            const Holder* last = nullptr;
            for (const auto& h : holders) {
                const auto& ids = h.output->scores->label_ids;
                if (std::find(ids.begin(), ids.end(), row_label) == ids.end())
                    continue;
                ++contributors;
                last = &h;
                sum += h.output->local_accuracy *
                       h.output->scores->scores(i, h.column);
                denom += h.output->local_accuracy;
            }
            if (contributors == 0) continue;
            if (contributors == 1) {
                state.scores(i, col) = last->output->scores->scores(i, last->column);
            } else if (denom > 0.0) {
                state.scores(i, col) = sum / denom;
            } else {
                double plain = 0.0;
                for (const auto& h : holders) {
                    const auto& ids = h.output->scores->label_ids;
                    if (std::find(ids.begin(), ids.end(), row_label) != ids.end())
                        plain += h.output->scores->scores(i, h.column);
                }
                state.scores(i, col) =
                    plain / static_cast<double>(contributors);
            }
        }
    }
    return state;
}

Choice2Result global_update_choice2(GlobalState state,
                                    const std::vector<ClientRoundOutput>& outputs,
                                    const scenario::ScenarioConfig& cfg,
                                    data::LabelRegistry& registry, int iteration) {
    Choice2Result result;

    double init_lo = cfg.synthesis.init_lo;
    double init_hi = cfg.synthesis.init_hi;
    if (cfg.synthesis_init_from_public && state.public_set.size() > 0) {
        const auto& raw = state.public_set.data.features.raw();
        const auto [mn, mx] = std::minmax_element(raw.begin(), raw.end());
        init_lo = *mn;
        init_hi = *mx;
    }

    std::vector<impressions::DataImpressionBatch> batches;
    std::vector<int> batch_source;  // ground-truth class per batch

    for (const auto& out : outputs) {
        if (!out.weights) continue;
        impressions::ClassSimilarityMatrix csm;
        nn::Classifier head;
        try {
            head = head_from_weights(*out.weights);
            csm = impressions::class_similarity_matrix(*out.weights);
        } catch (const DegenerateWeightsError&) {
            continue;  // user's slots defer to a later announcement
        }
        if (head.input_dim() != cfg.feature_dim)
            throw ConfigError("announcement head width " +
                              std::to_string(head.input_dim()) +
                              " does not match feature_dim " +
                              std::to_string(cfg.feature_dim));

        for (const auto& slot : out.slots) {
            const int pid = provisional_id(slot.slot_index);
            const auto it =
                std::find(out.weights->label_ids.begin(), out.weights->label_ids.end(), pid);
            if (it == out.weights->label_ids.end()) continue;
            const int col = static_cast<int>(it - out.weights->label_ids.begin());

            const auto conc = impressions::concentration_vector(
                csm, col, cfg.synthesis.dirichlet_beta, cfg.synthesis.concentration_floor);
            impressions::SoftmaxTargetBatch targets = impressions::sample_softmax(
                conc.values, cfg.synthesis.samples_per_class,
                derive_seed(cfg.master_seed,
                            {kTagDirichlet, static_cast<std::uint64_t>(iteration),
                             static_cast<std::uint64_t>(out.user),
                             static_cast<std::uint64_t>(slot.slot_index)}));
            targets.class_index = col;

            impressions::SynthesisConfig sc = cfg.synthesis;
            sc.init_lo = init_lo;
            sc.init_hi = init_hi;
            sc.seed = derive_seed(cfg.master_seed,
                                  {kTagSynthesis, static_cast<std::uint64_t>(iteration),
                                   static_cast<std::uint64_t>(out.user),
                                   static_cast<std::uint64_t>(slot.slot_index)});
            impressions::DataImpressionBatch batch;
            try {
                batch = impressions::synthesize_impressions(head, targets, sc);
            } catch (const SynthesisDivergenceError&) {
                continue;  // slot defers to the next announcement round
            }
            batch.class_slot = slot.slot_index;
            batch.origin_user = out.user;
            batch.origin_iteration = iteration;
            batches.push_back(std::move(batch));
            batch_source.push_back(slot.source_label);
        }
    }

    if (batches.empty()) {
        result.state = std::move(state);
        return result;
    }

    const clustering::PointSet reps = clustering::representative_points(batches);
    clustering::SelectOptions opts;
    opts.min_split_silhouette = cfg.clustering.min_split_silhouette;
    opts.merge_distance = cfg.clustering.merge_distance;
    opts.seed = derive_seed(cfg.master_seed,
                            {kTagCluster, static_cast<std::uint64_t>(iteration)});
    if (cfg.clustering.oracle_k) {
        std::set<int> distinct(batch_source.begin(), batch_source.end());
        opts.oracle_k = static_cast<int>(distinct.size());
    }
    const clustering::Selection sel =
        clustering::select_num_clusters(reps, static_cast<int>(reps.size()), opts);

    // One minted label per cluster; admitted impressions are the member mean.
    std::vector<data::ResolvedImpressions> admitted;
    std::vector<int> minted_of_cluster(static_cast<std::size_t>(sel.k), -1);
    for (int c = 0; c < sel.k; ++c) {
        std::vector<impressions::DataImpressionBatch> members;
        for (std::size_t b = 0; b < batches.size(); ++b)
            if (sel.assignment.labels[b] == c) members.push_back(batches[b]);
        if (members.empty()) continue;
        const int minted = registry.mint();
        minted_of_cluster[static_cast<std::size_t>(c)] = minted;
        admitted.push_back({minted, impressions::average_impressions(members)});
        result.minted.push_back(minted);
    }
    for (std::size_t b = 0; b < batches.size(); ++b) {
        const int c = sel.assignment.labels[b];
        result.resolutions.push_back({iteration, batches[b].origin_user,
                                      batches[b].class_slot, batch_source[b],
                                      minted_of_cluster[static_cast<std::size_t>(c)], c});
    }

    const std::size_t old_rows = state.public_set.size();
    state.public_set = data::augment_public(state.public_set, admitted);

    // Grow the score table: fresh columns for minted labels, and one-hot rows
    // for the admitted impressions (the server knows what it just added).
    std::vector<int> new_labels = state.label_ids;
    for (int m : result.minted) new_labels.push_back(m);
    std::sort(new_labels.begin(), new_labels.end());
    Matrix grown(state.public_set.size(), new_labels.size());
    const auto old_cols = column_indices(new_labels, state.label_ids);
    for (std::size_t i = 0; i < old_rows; ++i)
        for (std::size_t j = 0; j < state.label_ids.size(); ++j)
            grown(i, old_cols[j]) = state.scores(i, j);
    for (std::size_t i = old_rows; i < state.public_set.size(); ++i) {
        const int label = state.public_set.data.labels[i];
        const auto it = std::find(new_labels.begin(), new_labels.end(), label);
        grown(i, static_cast<std::size_t>(it - new_labels.begin())) = 1.0;
    }
    state.scores = std::move(grown);
    state.label_ids = std::move(new_labels);

    // Plot data for this round's representatives.
    if (reps.size() >= 2) {
        const clustering::PcaResult pca = clustering::pca_project(reps);
        for (std::size_t b = 0; b < reps.size(); ++b)
            result.plots.push_back({iteration, reps.meta[b].user, reps.meta[b].slot,
                                    pca.coords(b, 0), pca.coords(b, 1),
                                    sel.assignment.labels[b]});
    } else {
        result.plots.push_back({iteration, reps.meta[0].user, reps.meta[0].slot, 0.0,
                                0.0, sel.assignment.labels[0]});
    }

    result.state = std::move(state);
    return result;
}

RunResult run(const scenario::ScenarioConfig& cfg) {
    const auto findings = validate_scenario(cfg);
    if (!findings.empty())
        throw ConfigError("scenario invalid: " + findings.front() +
                          (findings.size() > 1
                               ? " (+" + std::to_string(findings.size() - 1) + " more)"
                               : ""));

    const scenario::Corpus corpus = scenario::build_corpus(cfg);

    RunResult result;
    result.registry = cfg.registry;

    GlobalState state;
    state.public_set = corpus.public_set;
    state.label_ids = cfg.base_labels;
    std::sort(state.label_ids.begin(), state.label_ids.end());
    state.scores = Matrix(state.public_set.size(), state.label_ids.size());

    scenario::LabelState labels;
    labels.user_labels = cfg.user_labels;
    for (auto& l : labels.user_labels) std::sort(l.begin(), l.end());

    for (int iteration = 1; iteration <= cfg.num_iterations; ++iteration) {
        scenario::RoundAssignment assignment =
            scenario::partition_round(cfg, corpus.private_pool, iteration, &labels);
        const scenario::InjectionOutcome outcome = scenario::apply_injection(
            assignment, cfg, corpus.private_pool, iteration, &labels);
        std::map<int, int> user_new_labels;
        for (const auto& [user, minted] : outcome.newly_held) {
            auto& l = labels.user_labels[static_cast<std::size_t>(user - 1)];
            if (std::find(l.begin(), l.end(), minted) == l.end()) {
                l.push_back(minted);
                std::sort(l.begin(), l.end());
            }
            ++user_new_labels[user];
        }

        std::vector<ClientRoundOutput> outputs;
        for (int user = 1; user <= cfg.num_users; ++user) {
            const std::size_t ui = static_cast<std::size_t>(user - 1);
            outputs.push_back(local_round(user, assignment.user_data[ui],
                                          assignment.user_labels[ui],
                                          assignment.user_arch[ui],
                                          assignment.new_slots[ui], state, cfg,
                                          iteration));
        }

        // Announcement handling first: it can mint labels and grow the public
        // set before the score merge.
        int minted_this_round = 0;
        const bool any_weights =
            std::any_of(outputs.begin(), outputs.end(),
                        [](const ClientRoundOutput& o) { return o.weights.has_value(); });
        if (any_weights) {
            Choice2Result c2 = global_update_choice2(std::move(state), outputs, cfg,
                                                     result.registry, iteration);
            state = std::move(c2.state);
            minted_this_round = static_cast<int>(c2.minted.size());
            for (const auto& res : c2.resolutions) {
                labels.resolved.emplace(res.source_label, res.minted_label);
                labels.minted_to_source.emplace(res.minted_label, res.source_label);
                auto& l = labels.user_labels[static_cast<std::size_t>(res.user - 1)];
                if (std::find(l.begin(), l.end(), res.minted_label) == l.end()) {
                    l.push_back(res.minted_label);
                    std::sort(l.begin(), l.end());
                }
                ++user_new_labels[res.user];
            }
            result.resolutions.insert(result.resolutions.end(), c2.resolutions.begin(),
                                      c2.resolutions.end());
            result.cluster_plots.insert(result.cluster_plots.end(), c2.plots.begin(),
                                        c2.plots.end());
        }
        state = global_update_choice1(std::move(state), outputs);
        state.iteration = iteration;

        for (const auto& out : outputs)
            result.metrics.push_back({iteration, "user_" + std::to_string(out.user),
                                      "local", out.local_accuracy,
                                      static_cast<int>(state.label_ids.size()),
                                      static_cast<int>(state.public_set.size()),
                                      user_new_labels[out.user]});
        // The round's global accuracy is the mean over users of the global
        // table restricted to that user's labels, scored on that user's
        // slice of the public set (the served-to-user view).
        double global_acc = 0.0;
        for (int user = 1; user <= cfg.num_users; ++user)
            global_acc += restricted_global_accuracy(
                state, labels.user_labels[static_cast<std::size_t>(user - 1)]);
        global_acc /= static_cast<double>(cfg.num_users);
        result.metrics.push_back({iteration, "GLOBAL", "global", global_acc,
                                  static_cast<int>(state.label_ids.size()),
                                  static_cast<int>(state.public_set.size()),
                                  minted_this_round});
        result.full_table_accuracy.push_back(
            nn::accuracy(nn::ScoreTable{state.scores, state.label_ids},
                         state.public_set.data.labels));
    }

    result.final_state = std::move(state);
    result.final_labels = std::move(labels);
    return result;
}

}  // namespace fedzs::federation
