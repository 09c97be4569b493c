#include "fedzs/impressions.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "fedzs/common.hpp"

namespace fedzs::impressions {

ClassSimilarityMatrix class_similarity_matrix(const nn::LastLayerWeights& w) {
    const std::size_t k = w.weights.cols();
    const std::size_t h = w.weights.rows();
    std::vector<std::vector<double>> cols(k, std::vector<double>(h));
    for (std::size_t j = 0; j < k; ++j)
        for (std::size_t i = 0; i < h; ++i) cols[j][i] = w.weights(i, j);

    std::vector<double> norms(k);
    for (std::size_t j = 0; j < k; ++j) {
        norms[j] = norm(cols[j]);
        if (norms[j] == 0.0)
            throw DegenerateWeightsError("last-layer column " + std::to_string(j) +
                                         " is all zero; cosine undefined");
    }

    ClassSimilarityMatrix csm;
    csm.label_ids = w.label_ids;
    csm.values = Matrix(k, k);
    for (std::size_t i = 0; i < k; ++i) {
        csm.values(i, i) = 1.0;
        for (std::size_t j = i + 1; j < k; ++j) {
            const double c =
                std::clamp(dot(cols[i], cols[j]) / (norms[i] * norms[j]), -1.0, 1.0);
            csm.values(i, j) = c;
            csm.values(j, i) = c;
        }
    }
    return csm;
}

ConcentrationVector concentration_vector(const ClassSimilarityMatrix& csm,
                                         int class_index, double beta,
                                         double floor_eps) {
    const std::size_t k = csm.values.cols();
    if (class_index < 0 || static_cast<std::size_t>(class_index) >= k)
        throw InputError("class index out of range");
    if (beta <= 0.0 || floor_eps <= 0.0 || floor_eps >= 1.0)
        throw ConfigError("beta must be positive and floor in (0,1)");

    const auto row = csm.values.row(static_cast<std::size_t>(class_index));
    const auto [mn_it, mx_it] = std::minmax_element(row.begin(), row.end());
    const double mn = *mn_it, mx = *mx_it;

    ConcentrationVector out;
    out.values.resize(k);
    if (mx - mn < 1e-15) {
        out.degenerate = true;
        std::fill(out.values.begin(), out.values.end(), beta);
        return out;
    }
    for (std::size_t j = 0; j < k; ++j)
        out.values[j] = beta * (floor_eps + (1.0 - floor_eps) * (row[j] - mn) / (mx - mn));
    return out;
}

SoftmaxTargetBatch sample_softmax(std::span<const double> concentration, int n,
                                  std::uint64_t seed) {
    if (n < 1) throw InputError("sample count must be >= 1");
    for (double a : concentration)
        if (a <= 0.0) throw InputError("concentration entries must be positive");

    const std::size_t k = concentration.size();
    SoftmaxTargetBatch batch;
    batch.targets = Matrix(static_cast<std::size_t>(n), k);
    std::mt19937_64 rng(seed);
    std::vector<std::gamma_distribution<double>> gammas;
    gammas.reserve(k);
    for (double a : concentration) gammas.emplace_back(a, 1.0);

    for (int i = 0; i < n; ++i) {
        auto row = batch.targets.row(static_cast<std::size_t>(i));
        double sum = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            row[j] = gammas[j](rng);
            sum += row[j];
        }
        if (sum <= 0.0) {
            // Every gamma variate underflowed (possible for very small
            // concentrations): fall back to the corner the largest
            // concentration points at.
            const std::size_t peak = static_cast<std::size_t>(
                std::max_element(concentration.begin(), concentration.end()) -
                concentration.begin());
            std::fill(row.begin(), row.end(), 0.0);
            row[peak] = 1.0;
            continue;
        }
        for (std::size_t j = 0; j < k; ++j) row[j] /= sum;
    }
    return batch;
}

DataImpressionBatch synthesize_impressions(const nn::Classifier& model,
                                           const SoftmaxTargetBatch& targets,
                                           const SynthesisConfig& cfg) {
    if (static_cast<int>(targets.targets.cols()) != model.num_classes())
        throw InputError("target width does not match the model's class count");
    if (cfg.max_steps < 0 || cfg.step_size <= 0.0 || cfg.loss_tolerance <= 0.0)
        throw ConfigError("synthesis config fields must be positive");
    if (cfg.init_lo >= cfg.init_hi)
        throw ConfigError("synthesis init range must satisfy lo < hi");

    const std::size_t n = targets.targets.rows();
    const std::size_t d = static_cast<std::size_t>(model.input_dim());

    DataImpressionBatch batch;
    batch.class_slot = targets.class_index;
    batch.vectors = Matrix(n, d);
    batch.final_losses.resize(n);
    if (cfg.record_traces) batch.loss_traces.resize(n);

    for (std::size_t s = 0; s < n; ++s) {
        std::mt19937_64 rng(derive_seed(cfg.seed, {0xD1, s}));
        std::uniform_real_distribution<double> init(cfg.init_lo, cfg.init_hi);
        std::vector<double> x(d);
        for (double& v : x) v = init(rng);

        const auto target = targets.targets.row(s);
        double loss = nn::cross_entropy(target, nn::forward_one(model, x));
        std::vector<double> best_x = x;
        double best_loss = loss;
        if (cfg.record_traces) batch.loss_traces[s].push_back(loss);

        for (int step = 0; step < cfg.max_steps && loss >= cfg.loss_tolerance; ++step) {
            const std::vector<double> g = nn::input_gradient(model, x, target);
            for (std::size_t j = 0; j < d; ++j) x[j] -= cfg.step_size * g[j];
            loss = nn::cross_entropy(target, nn::forward_one(model, x));
            if (!std::isfinite(loss))
                throw SynthesisDivergenceError(
                    "non-finite loss while synthesizing sample " + std::to_string(s) +
                    " of class slot " + std::to_string(targets.class_index));
            if (cfg.record_traces) batch.loss_traces[s].push_back(loss);
            if (loss < best_loss) {
                best_loss = loss;
                best_x = x;
            }
        }
        std::copy(best_x.begin(), best_x.end(), batch.vectors.row(s).begin());
        batch.final_losses[s] = best_loss;
    }
    return batch;
}

Matrix average_impressions(const std::vector<DataImpressionBatch>& batches) {
    if (batches.empty()) throw InputError("no impression batches to average");
    const std::size_t n = batches.front().vectors.rows();
    const std::size_t d = batches.front().vectors.cols();
    for (const auto& b : batches)
        if (b.vectors.rows() != n || b.vectors.cols() != d)
            throw InputError("impression batches disagree in shape");

    Matrix mean(n, d);
    for (const auto& b : batches) {
        const auto& src = b.vectors.raw();
        auto& dst = mean.raw();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
    const double inv = 1.0 / static_cast<double>(batches.size());
    for (double& v : mean.raw()) v *= inv;
    return mean;
}

}  // namespace fedzs::impressions
