#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fedzs/matrix.hpp"

namespace fedzs::nn {

// Hidden-layer nonlinearity. Softmax here means a row-normalized
// exponential applied to the whole hidden layer.
enum class Activation { kRelu, kSoftmax, kIdentity };

Activation activation_from_string(const std::string& name);
std::string to_string(Activation a);

struct ModelSpec {
    std::vector<int> hidden_widths;  // empty = plain linear softmax classifier
    Activation hidden_activation = Activation::kRelu;
    int input_dim = 0;
    int num_classes = 0;
    std::uint64_t init_seed = 0;
};

// Softmax outputs of one model over a batch; rows are samples, columns
// follow label_ids. Every row is nonnegative and sums to 1.
struct ScoreTable {
    Matrix scores;
    std::vector<int> label_ids;
};

// Weight matrix into the output layer, one column per class node.
// Biases are not part of this view.
struct LastLayerWeights {
    Matrix weights;  // penultimate_width x num_classes
    std::vector<int> label_ids;
};

struct TrainConfig {
    int epochs = 1;
    double learning_rate = 0.1;
    int batch_size = 32;
    std::uint64_t seed = 0;
};

// Feed-forward softmax classifier. Layer l maps fan_in -> fan_out with
// weights[l] (fan_in x fan_out) and biases[l]; the final layer always
// ends in a softmax. Treated as an immutable value once built/trained.
struct Classifier {
    ModelSpec spec;
    std::vector<Matrix> weights;
    std::vector<std::vector<double>> biases;
    std::vector<int> label_ids;  // output column order

    int input_dim() const { return spec.input_dim; }
    int num_classes() const { return spec.num_classes; }
};

// Builds a classifier with seeded uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)]
// per layer; biases start at zero. Deterministic for a fixed spec.
Classifier build_classifier(const ModelSpec& spec, std::vector<int> label_ids);

std::vector<double> forward_one(const Classifier& model, std::span<const double> x);

ScoreTable forward(const Classifier& model, const Matrix& features);

// Mini-batch gradient descent on mean cross-entropy. Returns a new
// classifier; the input model is untouched.
Classifier train(const Classifier& model, const Matrix& features,
                 const std::vector<int>& labels, const TrainConfig& cfg);

// Gradient of the cross-entropy between `target` (a point on the class
// simplex) and the model's softmax output, taken with respect to the input.
std::vector<double> input_gradient(const Classifier& model, std::span<const double> x,
                                   std::span<const double> target);

LastLayerWeights last_layer_weights(const Classifier& model);

double cross_entropy(std::span<const double> target, std::span<const double> predicted);

// Fraction of rows whose argmax column label equals the true label.
// Argmax ties break toward the lowest label id.
double accuracy(const ScoreTable& table, std::span<const int> labels);
double accuracy(const Classifier& model, const Matrix& features,
                std::span<const int> labels);

// Argmax over one score row under the tie-break rule above; returns the label id.
int predicted_label(std::span<const double> scores, std::span<const int> label_ids);

// Plain-text model dump, loadable by the CLI `impress` command.
void save_model(const std::filesystem::path& path, const Classifier& model);
Classifier load_model(const std::filesystem::path& path);

}  // namespace fedzs::nn
