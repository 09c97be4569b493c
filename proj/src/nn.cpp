#include "fedzs/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "fedzs/common.hpp"

namespace fedzs::nn {

namespace {

void softmax_inplace(std::span<double> v) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double x : v) mx = std::max(mx, x);
    double sum = 0.0;
    for (double& x : v) {
        x = std::exp(x - mx);
        sum += x;
    }
    for (double& x : v) x /= sum;
}

void apply_activation(Activation act, std::span<double> v) {
    switch (act) {
        case Activation::kRelu:
            for (double& x : v) x = std::max(0.0, x);
            break;
        case Activation::kSoftmax:
            // Row-normalized exponential, scaled by the layer width so the
            // mean activation stays near 1; the bare normalization starves
            // deeper layers of signal.
            softmax_inplace(v);
            for (double& x : v) x *= static_cast<double>(v.size());
            break;
        case Activation::kIdentity:
            break;
    }
}

// z = x * W + b
std::vector<double> affine(std::span<const double> x, const Matrix& w,
                           const std::vector<double>& b) {
    std::vector<double> z(b);
    for (std::size_t i = 0; i < w.rows(); ++i) {
        const double xi = x[i];
        if (xi == 0.0) continue;
        const auto wr = w.row(i);
        for (std::size_t j = 0; j < w.cols(); ++j) z[j] += xi * wr[j];
    }
    return z;
}

// Layer widths including input and output.
std::vector<int> layer_sizes(const ModelSpec& spec) {
    std::vector<int> sizes;
    sizes.push_back(spec.input_dim);
    for (int w : spec.hidden_widths) sizes.push_back(w);
    sizes.push_back(spec.num_classes);
    return sizes;
}

struct ForwardTrace {
    std::vector<std::vector<double>> pre;   // pre-activation per layer
    std::vector<std::vector<double>> post;  // post-activation per layer (last = softmax)
};

ForwardTrace forward_trace(const Classifier& model, std::span<const double> x) {
    ForwardTrace t;
    std::vector<double> a(x.begin(), x.end());
    const std::size_t n_layers = model.weights.size();
    for (std::size_t l = 0; l < n_layers; ++l) {
        std::vector<double> z = affine(a, model.weights[l], model.biases[l]);
        t.pre.push_back(z);
        if (l + 1 == n_layers) {
            softmax_inplace(z);
        } else {
            apply_activation(model.spec.hidden_activation, z);
        }
        t.post.push_back(z);
        a = t.post.back();
    }
    return t;
}

// Pulls a downstream gradient through one activation: given dL/da returns dL/dz.
std::vector<double> activation_backward(Activation act, const std::vector<double>& pre,
                                        const std::vector<double>& post,
                                        const std::vector<double>& grad_post) {
    std::vector<double> g(grad_post.size());
    switch (act) {
        case Activation::kRelu:
            for (std::size_t i = 0; i < g.size(); ++i)
                g[i] = pre[i] > 0.0 ? grad_post[i] : 0.0;
            break;
        case Activation::kIdentity:
            g = grad_post;
            break;
        case Activation::kSoftmax: {
            // For s = n * softmax(z): ds_i/dz_j = s_i (delta_ij - s_j / n).
            const double n = static_cast<double>(post.size());
            const double sh = dot(post, grad_post) / n;
            for (std::size_t i = 0; i < g.size(); ++i) g[i] = post[i] * (grad_post[i] - sh);
            break;
        }
    }
    return g;
}

struct Gradients {
    std::vector<Matrix> weights;
    std::vector<std::vector<double>> biases;
};

Gradients zero_gradients(const Classifier& model) {
    Gradients g;
    for (std::size_t l = 0; l < model.weights.size(); ++l) {
        g.weights.emplace_back(model.weights[l].rows(), model.weights[l].cols());
        g.biases.emplace_back(model.biases[l].size(), 0.0);
    }
    return g;
}

// Accumulates parameter gradients for one (x, target) pair; target is a
// point on the simplex (one-hot during training).
void accumulate_sample_gradients(const Classifier& model, std::span<const double> x,
                                 std::span<const double> target, Gradients& grads) {
    const ForwardTrace t = forward_trace(model, x);
    const std::size_t n_layers = model.weights.size();

    // Cross-entropy against the output softmax: dL/dz = p - y.
    std::vector<double> delta(t.post.back());
    for (std::size_t j = 0; j < delta.size(); ++j) delta[j] -= target[j];

    for (std::size_t l = n_layers; l-- > 0;) {
        const std::vector<double>* input =
            l == 0 ? nullptr : &t.post[l - 1];
        for (std::size_t i = 0; i < model.weights[l].rows(); ++i) {
            const double ai = input ? (*input)[i] : x[i];
            if (ai == 0.0) continue;
            auto gr = grads.weights[l].row(i);
            for (std::size_t j = 0; j < delta.size(); ++j) gr[j] += ai * delta[j];
        }
        for (std::size_t j = 0; j < delta.size(); ++j) grads.biases[l][j] += delta[j];

        if (l == 0) break;
        std::vector<double> grad_post(model.weights[l].rows(), 0.0);
        for (std::size_t i = 0; i < grad_post.size(); ++i)
            grad_post[i] = dot(model.weights[l].row(i), delta);
        delta = activation_backward(model.spec.hidden_activation, t.pre[l - 1],
                                    t.post[l - 1], grad_post);
    }
}

}  // namespace

Activation activation_from_string(const std::string& name) {
    if (name == "relu") return Activation::kRelu;
    if (name == "softmax") return Activation::kSoftmax;
    if (name == "identity" || name == "linear") return Activation::kIdentity;
    throw ConfigError("unknown activation '" + name + "'");
}

std::string to_string(Activation a) {
    switch (a) {
        case Activation::kRelu: return "relu";
        case Activation::kSoftmax: return "softmax";
        case Activation::kIdentity: return "identity";
    }
    return "relu";
}

Classifier build_classifier(const ModelSpec& spec, std::vector<int> label_ids) {
    if (spec.input_dim < 1) throw ConfigError("model input_dim must be >= 1");
    if (spec.num_classes < 1) throw ConfigError("model num_classes must be >= 1");
    for (int w : spec.hidden_widths)
        if (w < 1) throw ConfigError("hidden layer widths must be positive");
    if (static_cast<int>(label_ids.size()) != spec.num_classes)
        throw ConfigError("label list size does not match num_classes");

    Classifier model;
    model.spec = spec;
    model.label_ids = std::move(label_ids);

    std::mt19937_64 rng(spec.init_seed);
    const std::vector<int> sizes = layer_sizes(spec);
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        const int fan_in = sizes[l];
        const int fan_out = sizes[l + 1];
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        Matrix w(fan_in, fan_out);
        for (int i = 0; i < fan_in; ++i)
            for (int j = 0; j < fan_out; ++j) w(i, j) = dist(rng);
        model.weights.push_back(std::move(w));
        model.biases.emplace_back(fan_out, 0.0);
    }
    return model;
}

std::vector<double> forward_one(const Classifier& model, std::span<const double> x) {
    if (static_cast<int>(x.size()) != model.input_dim())
        throw InputError("feature dimension does not match model input_dim");
    return forward_trace(model, x).post.back();
}

ScoreTable forward(const Classifier& model, const Matrix& features) {
    if (static_cast<int>(features.cols()) != model.input_dim())
        throw InputError("feature dimension does not match model input_dim");
    ScoreTable table;
    table.label_ids = model.label_ids;
    table.scores = Matrix(features.rows(), model.num_classes());
    for (std::size_t i = 0; i < features.rows(); ++i) {
        const std::vector<double> p = forward_trace(model, features.row(i)).post.back();
        std::copy(p.begin(), p.end(), table.scores.row(i).begin());
    }
    return table;
}

Classifier train(const Classifier& model, const Matrix& features,
                 const std::vector<int>& labels, const TrainConfig& cfg) {
    if (features.rows() == 0) throw InputError("training data is empty");
    if (features.rows() != labels.size())
        throw InputError("feature rows and label count differ");
    if (static_cast<int>(features.cols()) != model.input_dim())
        throw InputError("feature dimension does not match model input_dim");
    if (cfg.epochs < 1 || cfg.batch_size < 1 || cfg.learning_rate < 0.0)
        throw ConfigError("train config fields must be positive");

    // Column index per label id.
    std::vector<int> column(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto it =
            std::find(model.label_ids.begin(), model.label_ids.end(), labels[i]);
        if (it == model.label_ids.end())
            throw LabelError("training label " + std::to_string(labels[i]) +
                             " not among the model's classes");
        column[i] = static_cast<int>(it - model.label_ids.begin());
    }

    Classifier out = model;
    const int k = out.num_classes();
    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(features.rows());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop =
                std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            Gradients grads = zero_gradients(out);
            std::vector<double> target(k, 0.0);
            for (std::size_t b = start; b < stop; ++b) {
                const std::size_t idx = order[b];
                target.assign(k, 0.0);
                target[column[idx]] = 1.0;
                accumulate_sample_gradients(out, features.row(idx), target, grads);
            }
            const double step = cfg.learning_rate / static_cast<double>(stop - start);
            for (std::size_t l = 0; l < out.weights.size(); ++l) {
                auto& wv = out.weights[l].raw();
                const auto& gv = grads.weights[l].raw();
                for (std::size_t i = 0; i < wv.size(); ++i) wv[i] -= step * gv[i];
                for (std::size_t j = 0; j < out.biases[l].size(); ++j)
                    out.biases[l][j] -= step * grads.biases[l][j];
            }
        }
    }
    return out;
}

std::vector<double> input_gradient(const Classifier& model, std::span<const double> x,
                                   std::span<const double> target) {
    if (static_cast<int>(x.size()) != model.input_dim())
        throw InputError("input dimension does not match model input_dim");
    if (static_cast<int>(target.size()) != model.num_classes())
        throw InputError("target dimension does not match num_classes");
    double sum = 0.0;
    for (double t : target) {
        if (t < -1e-12) throw InputError("target has a negative component");
        sum += t;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw InputError("target does not sum to 1");
    for (double v : x)
        if (!std::isfinite(v)) throw InputError("input vector is not finite");

    const ForwardTrace t = forward_trace(model, x);
    const std::size_t n_layers = model.weights.size();
    std::vector<double> delta(t.post.back());
    for (std::size_t j = 0; j < delta.size(); ++j) delta[j] -= target[j];

    for (std::size_t l = n_layers; l-- > 0;) {
        std::vector<double> grad_prev(model.weights[l].rows(), 0.0);
        for (std::size_t i = 0; i < grad_prev.size(); ++i)
            grad_prev[i] = dot(model.weights[l].row(i), delta);
        if (l == 0) return grad_prev;
        delta = activation_backward(model.spec.hidden_activation, t.pre[l - 1],
                                    t.post[l - 1], grad_prev);
    }
    return {};
}

LastLayerWeights last_layer_weights(const Classifier& model) {
    LastLayerWeights out;
    out.weights = model.weights.back();
    out.label_ids = model.label_ids;
    return out;
}

double cross_entropy(std::span<const double> target, std::span<const double> predicted) {
    double loss = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i)
        if (target[i] > 0.0) loss -= target[i] * std::log(std::max(predicted[i], 1e-300));
    return loss;
}

int predicted_label(std::span<const double> scores, std::span<const int> label_ids) {
    double best = -std::numeric_limits<double>::infinity();
    int best_label = label_ids.empty() ? -1 : label_ids[0];
    for (std::size_t j = 0; j < scores.size(); ++j) {
        if (scores[j] > best || (scores[j] == best && label_ids[j] < best_label)) {
            best = scores[j];
            best_label = label_ids[j];
        }
    }
    return best_label;
}

double accuracy(const ScoreTable& table, std::span<const int> labels) {
    if (labels.empty()) throw InputError("accuracy needs a non-empty sample set");
    if (table.scores.rows() != labels.size())
        throw InputError("score rows and label count differ");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (predicted_label(table.scores.row(i), table.label_ids) == labels[i]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double accuracy(const Classifier& model, const Matrix& features,
                std::span<const int> labels) {
    return accuracy(forward(model, features), labels);
}

void save_model(const std::filesystem::path& path, const Classifier& model) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot open model file for writing: " + path.string());
    char buf[64];
    out << "fedzs-model 1\n";
    out << "input_dim " << model.spec.input_dim << "\n";
    out << "classes " << model.spec.num_classes << "\n";
    out << "activation " << to_string(model.spec.hidden_activation) << "\n";
    out << "widths";
    for (int w : model.spec.hidden_widths) out << ' ' << w;
    out << "\n";
    out << "labels";
    for (int id : model.label_ids) out << ' ' << id;
    out << "\n";
    for (std::size_t l = 0; l < model.weights.size(); ++l) {
        const Matrix& w = model.weights[l];
        out << "layer " << l << ' ' << w.rows() << ' ' << w.cols() << "\n";
        for (std::size_t i = 0; i < w.rows(); ++i) {
            const auto row = w.row(i);
            for (std::size_t j = 0; j < row.size(); ++j) {
                std::snprintf(buf, sizeof buf, "%.17g", row[j]);
                out << (j ? " " : "") << buf;
            }
            out << "\n";
        }
        out << "bias";
        for (double b : model.biases[l]) {
            std::snprintf(buf, sizeof buf, "%.17g", b);
            out << ' ' << buf;
        }
        out << "\n";
    }
}

Classifier load_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open model file: " + path.string());
    std::string line;
    auto next_line = [&](const char* what) {
        if (!std::getline(in, line))
            throw ParseError(std::string("model file truncated before ") + what);
        return std::istringstream(line);
    };

    {
        auto ss = next_line("header");
        std::string magic;
        int version = 0;
        ss >> magic >> version;
        if (magic != "fedzs-model" || version != 1)
            throw ParseError("not a fedzs model file: " + path.string());
    }

    ModelSpec spec;
    std::string key;
    next_line("input_dim") >> key >> spec.input_dim;
    next_line("classes") >> key >> spec.num_classes;
    {
        std::string act;
        next_line("activation") >> key >> act;
        spec.hidden_activation = activation_from_string(act);
    }
    {
        auto ss = next_line("widths");
        ss >> key;
        int w;
        while (ss >> w) spec.hidden_widths.push_back(w);
    }
    std::vector<int> label_ids;
    {
        auto ss = next_line("labels");
        ss >> key;
        int id;
        while (ss >> id) label_ids.push_back(id);
    }

    Classifier model = build_classifier(spec, label_ids);
    for (std::size_t l = 0; l < model.weights.size(); ++l) {
        std::size_t idx = 0, rows = 0, cols = 0;
        next_line("layer header") >> key >> idx >> rows >> cols;
        if (key != "layer" || rows != model.weights[l].rows() ||
            cols != model.weights[l].cols())
            throw ParseError("layer " + std::to_string(l) + " shape mismatch in " +
                             path.string());
        for (std::size_t i = 0; i < rows; ++i) {
            auto ss = next_line("weight row");
            for (std::size_t j = 0; j < cols; ++j)
                if (!(ss >> model.weights[l](i, j)))
                    throw ParseError("bad weight row " + std::to_string(i) + " in layer " +
                                     std::to_string(l));
        }
        auto ss = next_line("bias row");
        ss >> key;
        for (std::size_t j = 0; j < cols; ++j)
            if (!(ss >> model.biases[l][j]))
                throw ParseError("bad bias row in layer " + std::to_string(l));
    }
    return model;
}

}  // namespace fedzs::nn
