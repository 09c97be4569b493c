#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fedzs/matrix.hpp"
#include "fedzs/nn.hpp"

namespace fedzs::impressions {

// Cosine similarities between the weight columns feeding each class node.
// Symmetric, unit diagonal, entries in [-1, 1].
struct ClassSimilarityMatrix {
    Matrix values;
    std::vector<int> label_ids;
};

// Sampled softmax targets for one class slot; every row lies on the simplex.
struct SoftmaxTargetBatch {
    Matrix targets;
    int class_index = 0;
};

struct SynthesisConfig {
    int samples_per_class = 100;
    double dirichlet_beta = 1.0;      // concentration scaling; smaller = peakier draws
    double concentration_floor = 0.01;
    int max_steps = 500;
    double step_size = 0.05;
    double loss_tolerance = 1e-3;
    double init_lo = -1.0;
    double init_hi = 1.0;
    std::uint64_t seed = 0;
    bool record_traces = false;       // keep per-step loss traces per sample
};

// Synthesized feature vectors for one (user, class-slot) pair.
struct DataImpressionBatch {
    Matrix vectors;
    int class_slot = 0;
    int origin_user = 0;
    int origin_iteration = 0;
    std::vector<double> final_losses;
    std::vector<std::vector<double>> loss_traces;  // filled when record_traces is set
};

struct ConcentrationVector {
    std::vector<double> values;
    bool degenerate = false;  // set when the similarity row was constant
};

ClassSimilarityMatrix class_similarity_matrix(const nn::LastLayerWeights& w);

// Row k of the similarity matrix, min-max normalized to [floor_eps, 1] and
// scaled by beta. Entry k is always the maximum. A constant row yields the
// uniform vector beta*1, flagged degenerate.
ConcentrationVector concentration_vector(const ClassSimilarityMatrix& csm,
                                         int class_index, double beta,
                                         double floor_eps);

// N independent Dirichlet draws obtained from normalized seeded gamma variates.
SoftmaxTargetBatch sample_softmax(std::span<const double> concentration, int n,
                                  std::uint64_t seed);

// Gradient descent in input space toward each sampled target, from a seeded
// uniform init in [init_lo, init_hi]. Keeps the best iterate per sample, so
// the final loss never exceeds the initial one.
DataImpressionBatch synthesize_impressions(const nn::Classifier& model,
                                           const SoftmaxTargetBatch& targets,
                                           const SynthesisConfig& cfg);

// Element-wise mean across batches of identical shape.
Matrix average_impressions(const std::vector<DataImpressionBatch>& batches);

}  // namespace fedzs::impressions
