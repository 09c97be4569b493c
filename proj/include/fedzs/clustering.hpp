#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "fedzs/impressions.hpp"
#include "fedzs/matrix.hpp"

namespace fedzs::clustering {

struct PointMeta {
    int user = 0;
    int slot = 0;
    int iteration = 0;
};

struct PointSet {
    Matrix points;
    std::vector<PointMeta> meta;

    std::size_t size() const { return points.rows(); }
};

struct ClusterAssignment {
    int k = 0;
    std::vector<int> medoid_indices;  // row indices into the point set
    std::vector<int> labels;          // cluster id per point
    double total_cost = 0.0;          // sum of point-to-medoid distances
};

// One row per impression batch: the column-wise mean of its vectors.
PointSet representative_points(const std::vector<impressions::DataImpressionBatch>& batches);

// PAM-style k-medoids: greedy build, then best-improvement swaps until no
// swap lowers the total Euclidean cost. Deterministic; ties break toward
// lower indices.
ClusterAssignment kmedoids(const PointSet& points, int k, std::uint64_t seed);

// Mean over points of (b-a)/max(a,b); singleton clusters contribute 0, as
// does the fully degenerate a=b=0 case.
double silhouette_score(const PointSet& points, const ClusterAssignment& assignment);

struct SelectOptions {
    int oracle_k = 0;                   // >0 forces the cluster count
    double min_split_silhouette = 0.25; // below this the sweep is not trusted
    double merge_distance = 0.0;        // >0 enables distance-linkage fallback
    std::uint64_t seed = 0;
};

struct Selection {
    int k = 0;
    ClusterAssignment assignment;
    double best_silhouette = 0.0;
    bool low_confidence = false;
};

// Chooses the cluster count: oracle override when configured; otherwise a
// silhouette sweep over k in [2, k_max]. When the best silhouette is below
// the confidence floor the result caps at the trivial single cluster, unless
// merge_distance is set, in which case single-linkage components at that
// distance decide k.
Selection select_num_clusters(const PointSet& points, int k_max,
                              const SelectOptions& opts = {});

struct PcaResult {
    Matrix coords;  // n x 2
    std::array<double, 2> explained_variance{0.0, 0.0};
};

// Projects points onto the top-2 eigenvectors of their covariance, found by
// power iteration with deflation (tolerance 1e-10). Axes are orthonormal and
// ordered by explained variance.
PcaResult pca_project(const PointSet& points, int dims = 2);

}  // namespace fedzs::clustering
