#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "fedzs/common.hpp"
#include "fedzs/nn.hpp"
#include "test_support.hpp"

using namespace fedzs;

namespace {

nn::ModelSpec small_spec(std::vector<int> widths, int input_dim, int k,
                         std::uint64_t seed,
                         nn::Activation act = nn::Activation::kRelu) {
    nn::ModelSpec spec;
    spec.hidden_widths = std::move(widths);
    spec.hidden_activation = act;
    spec.input_dim = input_dim;
    spec.num_classes = k;
    spec.init_seed = seed;
    return spec;
}

std::vector<int> iota_labels(int k) {
    std::vector<int> ids(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) ids[static_cast<std::size_t>(i)] = i;
    return ids;
}

}  // namespace

TEST_CASE("build_classifier shapes follow the spec") {
    const auto model = nn::build_classifier(small_spec({16, 32}, 8, 4, 1), iota_labels(4));
    REQUIRE(model.weights.size() == 3);
    CHECK(model.weights[0].rows() == 8);
    CHECK(model.weights[0].cols() == 16);
    CHECK(model.weights[1].rows() == 16);
    CHECK(model.weights[1].cols() == 32);
    CHECK(model.weights[2].rows() == 32);
    CHECK(model.weights[2].cols() == 4);
}

TEST_CASE("build_classifier is deterministic for a fixed seed") {
    const auto a = nn::build_classifier(small_spec({16, 32}, 8, 4, 77), iota_labels(4));
    const auto b = nn::build_classifier(small_spec({16, 32}, 8, 4, 77), iota_labels(4));
    for (std::size_t l = 0; l < a.weights.size(); ++l)
        CHECK(a.weights[l] == b.weights[l]);
}

TEST_CASE("build_classifier with no hidden layers is a single weight matrix") {
    const auto model = nn::build_classifier(small_spec({}, 3, 2, 5), iota_labels(2));
    REQUIRE(model.weights.size() == 1);
    CHECK(model.weights[0].rows() == 3);
    CHECK(model.weights[0].cols() == 2);
    CHECK(model.biases[0].size() == 2);
}

TEST_CASE("build_classifier init stays within the fan-in bound") {
    const auto model = nn::build_classifier(small_spec({16}, 4, 3, 9), iota_labels(3));
    const double bound0 = 1.0 / std::sqrt(4.0);
    for (double v : model.weights[0].raw()) CHECK(std::abs(v) <= bound0);
    const double bound1 = 1.0 / std::sqrt(16.0);
    for (double v : model.weights[1].raw()) CHECK(std::abs(v) <= bound1);
}

TEST_CASE("build_classifier rejects inconsistent label lists") {
    CHECK_THROWS_AS(nn::build_classifier(small_spec({}, 3, 2, 0), iota_labels(3)),
                    ConfigError);
}

TEST_CASE("forward with a zero final layer is uniform") {
    auto model = nn::build_classifier(small_spec({}, 3, 4, 0), iota_labels(4));
    for (double& v : model.weights[0].raw()) v = 0.0;
    Matrix batch = Matrix::from_rows({{1.0, -2.0, 0.5}});
    const auto table = nn::forward(model, batch);
    for (std::size_t j = 0; j < 4; ++j)
        CHECK(table.scores(0, j) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("forward rows are on the simplex") {
    const auto model =
        nn::build_classifier(small_spec({8, 8}, 5, 3, 3), iota_labels(3));
    std::mt19937_64 rng(11);
    std::normal_distribution<double> g(0.0, 2.0);
    Matrix batch(20, 5);
    for (double& v : batch.raw()) v = g(rng);
    const auto table = nn::forward(model, batch);
    for (std::size_t i = 0; i < batch.rows(); ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < 3; ++j) {
            CHECK(table.scores(i, j) >= 0.0);
            sum += table.scores(i, j);
        }
        CHECK(std::abs(sum - 1.0) < 1e-9);
    }
}

TEST_CASE("forward on a hand-set linear model matches a softmax by hand") {
    auto model = nn::build_classifier(small_spec({}, 2, 2, 0), iota_labels(2));
    // z = x W + b with W = [[1, -1], [0, 2]], b = (0.5, 0).
    model.weights[0] = Matrix::from_rows({{1.0, -1.0}, {0.0, 2.0}});
    model.biases[0] = {0.5, 0.0};
    Matrix batch = Matrix::from_rows({{2.0, 1.0}});
    // z = (2*1 + 1*0 + 0.5, 2*-1 + 1*2 + 0) = (2.5, 0).
    const double e0 = std::exp(2.5), e1 = std::exp(0.0);
    const auto table = nn::forward(model, batch);
    CHECK(table.scores(0, 0) == doctest::Approx(e0 / (e0 + e1)).epsilon(1e-12));
    CHECK(table.scores(0, 1) == doctest::Approx(e1 / (e0 + e1)).epsilon(1e-12));
}

TEST_CASE("forward rejects dimension mismatches") {
    const auto model = nn::build_classifier(small_spec({}, 3, 2, 0), iota_labels(2));
    Matrix batch(1, 4, 1.0);
    CHECK_THROWS_AS(nn::forward(model, batch), InputError);
}

TEST_CASE("train separates two blobs") {
    Matrix features;
    std::vector<int> labels;
    test::make_blobs(features, labels, 50, 2, 10.0, 21);
    auto model = nn::build_classifier(small_spec({}, 2, 2, 4), iota_labels(2));
    nn::TrainConfig cfg;
    cfg.epochs = 50;
    cfg.learning_rate = 0.5;
    cfg.batch_size = 16;
    cfg.seed = 99;
    model = nn::train(model, features, labels, cfg);
    CHECK(nn::accuracy(model, features, labels) >= 0.95);
}

TEST_CASE("train with zero learning rate is the identity on parameters") {
    Matrix features;
    std::vector<int> labels;
    test::make_blobs(features, labels, 10, 3, 4.0, 5);
    const auto model =
        nn::build_classifier(small_spec({6}, 3, 2, 12), iota_labels(2));
    nn::TrainConfig cfg;
    cfg.epochs = 3;
    cfg.learning_rate = 0.0;
    cfg.seed = 1;
    const auto trained = nn::train(model, features, labels, cfg);
    for (std::size_t l = 0; l < model.weights.size(); ++l) {
        CHECK(model.weights[l] == trained.weights[l]);
        CHECK(model.biases[l] == trained.biases[l]);
    }
}

TEST_CASE("train is deterministic") {
    Matrix features;
    std::vector<int> labels;
    test::make_blobs(features, labels, 20, 3, 3.0, 8);
    const auto model =
        nn::build_classifier(small_spec({8}, 3, 2, 2), iota_labels(2));
    nn::TrainConfig cfg;
    cfg.epochs = 5;
    cfg.learning_rate = 0.1;
    cfg.seed = 31;
    const auto a = nn::train(model, features, labels, cfg);
    const auto b = nn::train(model, features, labels, cfg);
    for (std::size_t l = 0; l < a.weights.size(); ++l) CHECK(a.weights[l] == b.weights[l]);
}

TEST_CASE("train lowers the loss on the training data") {
    Matrix features;
    std::vector<int> labels;
    test::make_blobs(features, labels, 30, 4, 3.0, 17);
    const auto model =
        nn::build_classifier(small_spec({10}, 4, 2, 6), iota_labels(2));
    auto mean_loss = [&](const nn::Classifier& m) {
        double s = 0.0;
        for (std::size_t i = 0; i < features.rows(); ++i) {
            std::vector<double> target(2, 0.0);
            target[static_cast<std::size_t>(labels[i])] = 1.0;
            s += nn::cross_entropy(target, nn::forward_one(m, features.row(i)));
        }
        return s / static_cast<double>(features.rows());
    };
    nn::TrainConfig cfg;
    cfg.epochs = 20;
    cfg.learning_rate = 0.1;
    cfg.seed = 3;
    const auto trained = nn::train(model, features, labels, cfg);
    CHECK(mean_loss(trained) <= mean_loss(model));
}

TEST_CASE("train rejects unknown label ids") {
    Matrix features = Matrix::from_rows({{1.0, 2.0}});
    std::vector<int> labels{7};
    const auto model = nn::build_classifier(small_spec({}, 2, 2, 0), iota_labels(2));
    CHECK_THROWS_AS(nn::train(model, features, labels, {}), LabelError);
}

TEST_CASE("input_gradient is zero at a perfectly matched target") {
    const auto model = nn::build_classifier(small_spec({6}, 4, 3, 44), iota_labels(3));
    const std::vector<double> x{0.3, -0.2, 0.9, 0.1};
    const std::vector<double> target = nn::forward_one(model, x);
    const auto g = nn::input_gradient(model, x, target);
    for (double v : g) CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("input_gradient matches the hand-derived linear formula") {
    auto model = nn::build_classifier(small_spec({}, 2, 2, 0), iota_labels(2));
    model.weights[0] = Matrix::from_rows({{1.0, -0.5}, {0.25, 2.0}});
    model.biases[0] = {0.0, 0.0};
    const std::vector<double> x{0.7, -0.3};
    const std::vector<double> target{1.0, 0.0};
    const std::vector<double> p = nn::forward_one(model, x);
    // For a linear softmax model the gradient is W (p - y).
    const std::vector<double> expected{
        model.weights[0](0, 0) * (p[0] - target[0]) +
            model.weights[0](0, 1) * (p[1] - target[1]),
        model.weights[0](1, 0) * (p[0] - target[0]) +
            model.weights[0](1, 1) * (p[1] - target[1])};
    const auto g = nn::input_gradient(model, x, target);
    CHECK(g[0] == doctest::Approx(expected[0]).epsilon(1e-12));
    CHECK(g[1] == doctest::Approx(expected[1]).epsilon(1e-12));
}

TEST_CASE("input_gradient agrees with central finite differences") {
    std::mt19937_64 rng(2024);
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_int_distribution<int> pick_act(0, 2);
    for (int trial = 0; trial < 100; ++trial) {
        const auto act = static_cast<nn::Activation>(pick_act(rng));
        const auto model = nn::build_classifier(
            small_spec({5, 4}, 3, 3, 1000 + static_cast<std::uint64_t>(trial), act),
            iota_labels(3));
        std::vector<double> x{g(rng), g(rng), g(rng)};
        std::vector<double> target{0.6, 0.3, 0.1};
        const auto analytic = nn::input_gradient(model, x, target);
        const auto numeric = test::finite_difference_input_gradient(model, x, target);
        CHECK(test::relative_error(analytic, numeric) < 1e-4);
    }
}

TEST_CASE("input_gradient rejects non-simplex targets") {
    const auto model = nn::build_classifier(small_spec({}, 2, 2, 0), iota_labels(2));
    const std::vector<double> x{0.0, 0.0};
    CHECK_THROWS_AS(nn::input_gradient(model, x, std::vector<double>{0.5, 0.2}),
                    InputError);
    CHECK_THROWS_AS(nn::input_gradient(model, x, std::vector<double>{1.5, -0.5}),
                    InputError);
}

TEST_CASE("last_layer_weights returns the output matrix as a copy") {
    const auto linear = nn::build_classifier(small_spec({}, 3, 2, 0), iota_labels(2));
    auto w = nn::last_layer_weights(linear);
    CHECK(w.weights == linear.weights[0]);

    const auto deep = nn::build_classifier(small_spec({16, 32}, 8, 4, 0), iota_labels(4));
    const auto dw = nn::last_layer_weights(deep);
    CHECK(dw.weights.rows() == 32);
    CHECK(dw.weights.cols() == 4);

    w.weights(0, 0) += 100.0;
    CHECK(linear.weights[0](0, 0) != w.weights(0, 0));
}

TEST_CASE("accuracy counts argmax hits and breaks ties to the lowest label id") {
    nn::ScoreTable table;
    table.label_ids = {0, 1, 2, 3};
    table.scores = Matrix::from_rows({{1.0, 0.0, 0.0, 0.0},
                                      {0.0, 1.0, 0.0, 0.0},
                                      {0.0, 0.0, 1.0, 0.0},
                                      {0.0, 0.0, 1.0, 0.0}});
    std::vector<int> labels{0, 1, 2, 3};
    CHECK(nn::accuracy(table, labels) == doctest::Approx(0.75));

    nn::ScoreTable uniform;
    uniform.label_ids = {0, 1, 2, 3};
    uniform.scores = Matrix(4, 4, 0.25);
    // Uniform rows all argmax to label 0 under the tie-break rule.
    CHECK(nn::accuracy(uniform, labels) == doctest::Approx(0.25));

    nn::ScoreTable onehot;
    onehot.label_ids = {0, 1};
    onehot.scores = Matrix::from_rows({{1.0, 0.0}, {0.0, 1.0}});
    std::vector<int> two{0, 1};
    CHECK(nn::accuracy(onehot, two) == doctest::Approx(1.0));
}

TEST_CASE("accuracy rejects empty data") {
    nn::ScoreTable table;
    table.label_ids = {0};
    CHECK_THROWS_AS(nn::accuracy(table, std::vector<int>{}), InputError);
}

TEST_CASE("model dump round-trips through save and load") {
    const auto model = nn::build_classifier(
        small_spec({6, 5}, 4, 3, 123, nn::Activation::kSoftmax), iota_labels(3));
    const auto path =
        std::filesystem::path(FEDZS_TEST_TMP_DIR) / "roundtrip.model";
    std::filesystem::create_directories(path.parent_path());
    nn::save_model(path, model);
    const auto loaded = nn::load_model(path);
    CHECK(loaded.spec.hidden_widths == model.spec.hidden_widths);
    CHECK(loaded.label_ids == model.label_ids);
    for (std::size_t l = 0; l < model.weights.size(); ++l) {
        CHECK(loaded.weights[l] == model.weights[l]);
        CHECK(loaded.biases[l] == model.biases[l]);
    }
}
