#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>
#include <sstream>

#include "fedzs/common.hpp"
#include "fedzs/federation.hpp"

using namespace fedzs;

namespace {

// Independent re-implementation of the label-wise merge rule: per cell, a
// user contributes only when it holds both the column's label and the row's
// class; a unique contributor is copied, several are accuracy-weighted and
// divided by the total weight.
Matrix brute_force_merge(const Matrix& previous, const std::vector<int>& state_labels,
                         const std::vector<int>& row_labels,
                         const std::vector<federation::ClientRoundOutput>& outputs) {
    auto holds = [](const federation::ClientRoundOutput& out, int label) {
        const auto& ids = out.scores->label_ids;
        return std::find(ids.begin(), ids.end(), label) != ids.end();
    };
    Matrix merged = previous;
    for (std::size_t col = 0; col < state_labels.size(); ++col) {
        for (std::size_t row = 0; row < merged.rows(); ++row) {
            std::vector<std::pair<const federation::ClientRoundOutput*, std::size_t>>
                cell_holders;
            for (const auto& out : outputs) {
                if (!out.scores || out.skipped) continue;
                if (!holds(out, state_labels[col]) || !holds(out, row_labels[row]))
                    continue;
                for (std::size_t j = 0; j < out.scores->label_ids.size(); ++j)
                    if (out.scores->label_ids[j] == state_labels[col])
                        cell_holders.push_back({&out, j});
            }
            if (cell_holders.empty()) continue;
            if (cell_holders.size() == 1) {
                merged(row, col) =
                    cell_holders[0].first->scores->scores(row, cell_holders[0].second);
                continue;
            }
            double num = 0.0, den = 0.0;
            for (const auto& [out, j] : cell_holders) {
                num += out->local_accuracy * out->scores->scores(row, j);
                den += out->local_accuracy;
            }
            merged(row, col) = num / den;
        }
    }
    return merged;
}

scenario::ScenarioConfig one_user_scenario() {
    const char* text = R"(
[scenario]
name = solo
users = 1
iterations = 1
feature_dim = 3
master_seed = 11

[labels]
base = a b

[corpus]
type = synthetic
separation = 8.0

[public]
frames_per_label = 10

[rounds]
frames_min = 10
frames_max = 10

[train]
epochs = 10
learning_rate = 0.3
batch_size = 8

[user 1]
labels = a b
model = linear
)";
    std::istringstream in(text);
    return scenario::parse_scenario(in, "solo");
}

scenario::ScenarioConfig tiny_inject_scenario() {
    const char* text = R"(
[scenario]
name = tiny_inject
users = 2
iterations = 4
feature_dim = 6
master_seed = 55

[labels]
base = a b c
extra = z

[corpus]
type = synthetic
separation = 8.0

[public]
frames_per_label = 20

[rounds]
frames_min = 10
frames_max = 15

[train]
epochs = 10
learning_rate = 0.2
batch_size = 8

[announce]
epochs = 25
learning_rate = 0.3
batch_size = 8

[synthesis]
impressions_per_class = 25
max_steps = 300
step_size = 0.1
loss_tolerance = 0.001
init_lo = -2.0
init_hi = 2.0

[clustering]
min_split_silhouette = 0.25
merge_distance = 3.5

[user 1]
labels = a b
model = linear

[user 2]
labels = b c
model = 8 relu

[inject]
1 3 z 12
2 3 z 12
)";
    std::istringstream in(text);
    return scenario::parse_scenario(in, "tiny_inject");
}

// A weight-type round output whose slot column points along `direction`.
federation::ClientRoundOutput announcement_output(int user, int source_label,
                                                  const std::vector<double>& direction,
                                                  double known_scale = 1.0) {
    federation::ClientRoundOutput out;
    out.user = user;
    out.local_accuracy = 0.9;
    out.alpha = 0.5;
    nn::LastLayerWeights w;
    const std::size_t d = direction.size();
    w.weights = Matrix(d, 3);
    // Two known-class columns confined to the first coordinates, plus the
    // announced slot column.
    w.weights(0, 0) = known_scale;
    w.weights(1, 0) = -known_scale;
    w.weights(0, 1) = -known_scale;
    w.weights(1, 1) = known_scale;
    for (std::size_t i = 0; i < d; ++i) w.weights(i, 2) = direction[i];
    w.label_ids = {0, 1, -1};
    out.weights = w;
    out.slots.push_back({0, source_label, 12});
    return out;
}

}  // namespace

TEST_CASE("compute_alpha is the exact size ratio") {
    CHECK(federation::compute_alpha(1200, 2400) == doctest::Approx(0.5));
    CHECK(federation::compute_alpha(2400, 2400) == doctest::Approx(1.0));
    CHECK(federation::compute_alpha(50, 400) == doctest::Approx(0.125));
    CHECK_THROWS_AS(federation::compute_alpha(10, 0), ConfigError);
}

TEST_CASE("local merge with a zero global table returns the fresh scores") {
    Matrix zero(2, 2);
    nn::ScoreTable local;
    local.label_ids = {0, 1};
    local.scores = Matrix::from_rows({{0.75, 0.25}, {0.4, 0.6}});
    const auto merged = federation::local_update_choice1(zero, local, 1.0);
    CHECK(merged.scores == local.scores);
    // Scaling alpha cannot change the argmax when the global part is zero.
    const auto doubled = federation::local_update_choice1(zero, local, 2.0);
    for (std::size_t i = 0; i < 2; ++i)
        CHECK(doubled.scores(i, 0) == doctest::Approx(merged.scores(i, 0)));
}

TEST_CASE("local merge adds and renormalizes") {
    Matrix global = Matrix::from_rows({{0.6, 0.0}});
    nn::ScoreTable local;
    local.label_ids = {0, 1};
    local.scores = Matrix::from_rows({{0.2, 0.8}});
    const auto merged = federation::local_update_choice1(global, local, 0.5);
    // Pre-normalization entries are 0.6 + 0.5*0.2 = 0.7 and 0.5*0.8 = 0.4.
    CHECK(merged.scores(0, 0) == doctest::Approx(0.7 / 1.1));
    CHECK(merged.scores(0, 1) == doctest::Approx(0.4 / 1.1));
}

TEST_CASE("local merge rejects shape mismatches") {
    Matrix global(2, 3);
    nn::ScoreTable local;
    local.label_ids = {0, 1};
    local.scores = Matrix(2, 2);
    CHECK_THROWS_AS(federation::local_update_choice1(global, local, 1.0), LabelError);
}

TEST_CASE("global merge copies unique holders and weights shared ones") {
    federation::GlobalState state;
    state.label_ids = {0, 1, 2};
    state.scores = Matrix(1, 3);
    state.scores(0, 2) = 0.33;  // held by nobody this round; must persist
    state.public_set.data.append(std::vector<double>{0.0}, 0);
    state.public_set.provenance.push_back(data::Provenance::kOriginal);

    federation::ClientRoundOutput u1;
    u1.user = 1;
    u1.local_accuracy = 0.8;
    u1.scores = nn::ScoreTable{Matrix::from_rows({{1.0, 0.7}}), {0, 1}};
    federation::ClientRoundOutput u2;
    u2.user = 2;
    u2.local_accuracy = 0.6;
    u2.scores = nn::ScoreTable{Matrix::from_rows({{0.5}}), {0}};

    const auto merged = federation::global_update_choice1(state, {u1, u2});
    CHECK(merged.scores(0, 0) ==
          doctest::Approx((0.8 * 1.0 + 0.6 * 0.5) / 1.4));  // shared label
    CHECK(merged.scores(0, 1) == doctest::Approx(0.7));     // unique holder copy
    CHECK(merged.scores(0, 2) == doctest::Approx(0.33));    // persisted
}

TEST_CASE("global merge matches the brute-force rule on random tables") {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> value(0.0, 1.0);
    std::uniform_int_distribution<int> coin(0, 1);
    for (int trial = 0; trial < 200; ++trial) {
        federation::GlobalState state;
        state.label_ids = {0, 1, 2, 3};
        state.scores = Matrix(5, 4);
        for (double& v : state.scores.raw()) v = value(rng);
        for (int r = 0; r < 5; ++r) {
            state.public_set.data.append(std::vector<double>{0.0}, r % 4);
            state.public_set.provenance.push_back(data::Provenance::kOriginal);
        }

        std::vector<federation::ClientRoundOutput> outputs;
        for (int user = 1; user <= 3; ++user) {
            federation::ClientRoundOutput out;
            out.user = user;
            out.local_accuracy = 0.25 + 0.75 * value(rng);
            std::vector<int> held;
            for (int l = 0; l < 4; ++l)
                if (coin(rng)) held.push_back(l);
            if (held.empty()) held.push_back(user % 4);
            Matrix scores(5, held.size());
            for (double& v : scores.raw()) v = value(rng);
            out.scores = nn::ScoreTable{scores, held};
            outputs.push_back(std::move(out));
        }

        const auto merged = federation::global_update_choice1(state, outputs);
        const auto oracle = brute_force_merge(state.scores, state.label_ids,
                                              state.public_set.data.labels, outputs);
        for (std::size_t i = 0; i < merged.scores.rows(); ++i)
            for (std::size_t j = 0; j < merged.scores.cols(); ++j)
                CHECK(std::abs(merged.scores(i, j) - oracle(i, j)) < 1e-12);
    }
}

TEST_CASE("announcing users send a head with one extra column per slot") {
    auto cfg = tiny_inject_scenario();
    const auto corpus = scenario::build_corpus(cfg);
    federation::GlobalState state;
    state.public_set = corpus.public_set;
    state.label_ids = cfg.base_labels;
    std::sort(state.label_ids.begin(), state.label_ids.end());
    state.scores = Matrix(state.public_set.size(), state.label_ids.size());

    auto assignment = scenario::partition_round(cfg, corpus.private_pool, 3);
    scenario::apply_injection(assignment, cfg, corpus.private_pool, 3);
    const auto out = federation::local_round(
        1, assignment.user_data[0], assignment.user_labels[0], assignment.user_arch[0],
        assignment.new_slots[0], state, cfg, 3);
    REQUIRE(out.weights.has_value());
    CHECK_FALSE(out.scores.has_value());
    CHECK(out.weights->weights.cols() == 3);  // |l_m| + 1 announced slot
    CHECK(out.weights->weights.rows() == 6);  // feature dimension
    REQUIRE(out.slots.size() == 1);
    CHECK(out.slots[0].source_label == cfg.extra_labels[0]);
}

TEST_CASE("silent mode drops unknown-label samples and reports scores") {
    auto cfg = tiny_inject_scenario();
    cfg.mode = scenario::ReportingMode::kSilent;
    const auto corpus = scenario::build_corpus(cfg);
    federation::GlobalState state;
    state.public_set = corpus.public_set;
    state.label_ids = cfg.base_labels;
    std::sort(state.label_ids.begin(), state.label_ids.end());
    state.scores = Matrix(state.public_set.size(), state.label_ids.size());

    auto assignment = scenario::partition_round(cfg, corpus.private_pool, 3);
    scenario::apply_injection(assignment, cfg, corpus.private_pool, 3);
    const auto out = federation::local_round(
        1, assignment.user_data[0], assignment.user_labels[0], assignment.user_arch[0],
        assignment.new_slots[0], state, cfg, 3);
    REQUIRE(out.scores.has_value());
    CHECK_FALSE(out.weights.has_value());
    CHECK(out.scores->label_ids.size() == 2);  // only the user's own labels
    CHECK(out.scores->scores.rows() == state.public_set.size());
}

TEST_CASE("empty usable data skips the round without failing") {
    auto cfg = one_user_scenario();
    const auto corpus = scenario::build_corpus(cfg);
    federation::GlobalState state;
    state.public_set = corpus.public_set;
    state.label_ids = cfg.base_labels;
    state.scores = Matrix(state.public_set.size(), 2);

    data::Dataset empty;
    const auto out = federation::local_round(1, empty, cfg.user_labels[0],
                                             cfg.user_arch[0], {}, state, cfg, 1);
    CHECK(out.skipped);
}

TEST_CASE("announcements of different classes mint two labels") {
    auto cfg = tiny_inject_scenario();
    const auto corpus = scenario::build_corpus(cfg);
    federation::GlobalState state;
    state.public_set = corpus.public_set;
    state.label_ids = cfg.base_labels;
    std::sort(state.label_ids.begin(), state.label_ids.end());
    state.scores = Matrix(state.public_set.size(), state.label_ids.size());
    const std::size_t rows_before = state.public_set.size();

    data::LabelRegistry registry = cfg.registry;
    // Slot directions far apart: the impressions drift into distinct regions.
    cfg.clustering.merge_distance = 1.5;
    const auto a = announcement_output(1, cfg.extra_labels[0], {0, 0, 3.0, 0, 0, 0});
    const auto b = announcement_output(2, cfg.extra_labels[0], {0, 0, 0, 0, 0, -3.0});
    const auto result =
        federation::global_update_choice2(state, {a, b}, cfg, registry, 3);

    CHECK(result.minted.size() == 2);
    CHECK(result.state.label_ids.size() == 5);
    CHECK(result.state.public_set.size() ==
          rows_before + 2 * static_cast<std::size_t>(cfg.synthesis.samples_per_class));
    REQUIRE(result.resolutions.size() == 2);
    CHECK(result.resolutions[0].minted_label != result.resolutions[1].minted_label);
    CHECK(result.plots.size() == 2);

    // The admitted rows start as one-hot votes for their minted label.
    const auto& st = result.state;
    for (std::size_t i = rows_before; i < st.public_set.size(); ++i) {
        const int label = st.public_set.data.labels[i];
        const auto it = std::find(st.label_ids.begin(), st.label_ids.end(), label);
        REQUIRE(it != st.label_ids.end());
        CHECK(st.scores(i, static_cast<std::size_t>(it - st.label_ids.begin())) ==
              doctest::Approx(1.0));
    }
}

TEST_CASE("announcements of the same class merge into one minted label") {
    auto cfg = tiny_inject_scenario();
    const auto corpus = scenario::build_corpus(cfg);
    federation::GlobalState state;
    state.public_set = corpus.public_set;
    state.label_ids = cfg.base_labels;
    std::sort(state.label_ids.begin(), state.label_ids.end());
    state.scores = Matrix(state.public_set.size(), state.label_ids.size());

    data::LabelRegistry registry = cfg.registry;
    cfg.clustering.merge_distance = 1.5;
    const auto a = announcement_output(1, cfg.extra_labels[0], {0, 0, 3.0, 0, 0, 0});
    const auto b =
        announcement_output(2, cfg.extra_labels[0], {0, 0, 2.9, 0.3, 0, 0});

    SUBCASE("silhouette mode relies on the configured distance scale") {
        const auto result =
            federation::global_update_choice2(state, {a, b}, cfg, registry, 3);
        CHECK(result.minted.size() == 1);
        REQUIRE(result.resolutions.size() == 2);
        CHECK(result.resolutions[0].minted_label == result.resolutions[1].minted_label);
    }
    SUBCASE("oracle mode uses the scheduled ground truth") {
        cfg.clustering.oracle_k = true;
        const auto result =
            federation::global_update_choice2(state, {a, b}, cfg, registry, 3);
        CHECK(result.minted.size() == 1);
    }
}

TEST_CASE("a single-user run has equal local and global accuracy") {
    const auto cfg = one_user_scenario();
    const auto result = federation::run(cfg);
    REQUIRE(result.metrics.size() == 2);
    CHECK(result.metrics[0].phase == "local");
    CHECK(result.metrics[1].phase == "global");
    // One holder for every label, alpha = 20/20 = 1, zero initial global
    // scores: the global table is a copy of the user's merged table.
    CHECK(result.metrics[0].accuracy == doctest::Approx(result.metrics[1].accuracy));
}

TEST_CASE("runs are deterministic") {
    const auto cfg = tiny_inject_scenario();
    const auto a = federation::run(cfg);
    const auto b = federation::run(cfg);
    REQUIRE(a.metrics.size() == b.metrics.size());
    for (std::size_t i = 0; i < a.metrics.size(); ++i) {
        CHECK(a.metrics[i].accuracy == b.metrics[i].accuracy);
        CHECK(a.metrics[i].entity == b.metrics[i].entity);
        CHECK(a.metrics[i].new_labels_resolved == b.metrics[i].new_labels_resolved);
    }
}

TEST_CASE("an injected class is resolved once and then flows as ordinary data") {
    const auto cfg = tiny_inject_scenario();
    const auto result = federation::run(cfg);

    // Metrics: (2 users + GLOBAL) x 4 rounds.
    CHECK(result.metrics.size() == 12);

    // Both users announced the same class at round 3; it resolved to a single
    // minted label.
    REQUIRE_FALSE(result.resolutions.empty());
    std::set<int> minted;
    for (const auto& r : result.resolutions) minted.insert(r.minted_label);
    CHECK(minted.size() == 1);
    CHECK(result.final_state.label_ids.size() == 4);  // 3 base + 1 minted

    // Both users hold the minted label afterwards.
    const int m = *minted.begin();
    for (int user = 0; user < 2; ++user) {
        const auto& l = result.final_labels.user_labels[static_cast<std::size_t>(user)];
        CHECK(std::find(l.begin(), l.end(), m) != l.end());
    }

    // The public set grew by exactly one impression batch.
    CHECK(result.final_state.public_set.size() ==
          60 + static_cast<std::size_t>(cfg.synthesis.samples_per_class));
    CHECK(result.final_state.public_set.original_count() == 60);

    // The label set never shrinks and only grows at the announcement round.
    int previous = 3;
    for (const auto& mrec : result.metrics) {
        CHECK(mrec.label_count >= previous);
        if (mrec.phase == "global") previous = mrec.label_count;
    }
}
