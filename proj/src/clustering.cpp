#include "fedzs/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>

#include "fedzs/common.hpp"

namespace fedzs::clustering {

namespace {

Matrix distance_matrix(const PointSet& points) {
    const std::size_t n = points.size();
    Matrix d(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double dist = euclidean_distance(points.points.row(i), points.points.row(j));
            d(i, j) = dist;
            d(j, i) = dist;
        }
    return d;
}

// Nearest-medoid assignment with ties toward the lowest medoid row index.
void assign_points(const Matrix& dist, const std::vector<int>& medoids,
                   std::vector<int>& labels, double& total_cost) {
    const std::size_t n = dist.rows();
    labels.assign(n, 0);
    total_cost = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        int best_cluster = 0;
        for (std::size_t c = 0; c < medoids.size(); ++c) {
            const double d = dist(i, static_cast<std::size_t>(medoids[c]));
            const bool closer =
                d < best || (d == best && medoids[c] < medoids[static_cast<std::size_t>(best_cluster)]);
            if (closer) {
                best = d;
                best_cluster = static_cast<int>(c);
            }
        }
        labels[i] = best_cluster;
        total_cost += best;
    }
}

double cost_of(const Matrix& dist, const std::vector<int>& medoids) {
    double total = 0.0;
    for (std::size_t i = 0; i < dist.rows(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (int m : medoids) best = std::min(best, dist(i, static_cast<std::size_t>(m)));
        total += best;
    }
    return total;
}

ClusterAssignment trivial_single_cluster(const PointSet& points, const Matrix& dist) {
    ClusterAssignment a;
    a.k = 1;
    // Medoid of the whole set.
    double best = std::numeric_limits<double>::infinity();
    int best_idx = 0;
    for (std::size_t j = 0; j < points.size(); ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < points.size(); ++i) s += dist(i, j);
        if (s < best) {
            best = s;
            best_idx = static_cast<int>(j);
        }
    }
    a.medoid_indices = {best_idx};
    assign_points(dist, a.medoid_indices, a.labels, a.total_cost);
    return a;
}

}  // namespace

PointSet representative_points(
    const std::vector<impressions::DataImpressionBatch>& batches) {
    if (batches.empty()) throw InputError("no impression batches to reduce");
    const std::size_t d = batches.front().vectors.cols();
    for (const auto& b : batches)
        if (b.vectors.cols() != d)
            throw InputError("impression batches disagree in feature dimension");

    PointSet ps;
    ps.points = Matrix(batches.size(), d);
    for (std::size_t b = 0; b < batches.size(); ++b) {
        const Matrix& v = batches[b].vectors;
        if (v.rows() == 0) throw InputError("empty impression batch");
        auto out = ps.points.row(b);
        for (std::size_t i = 0; i < v.rows(); ++i) {
            const auto row = v.row(i);
            for (std::size_t j = 0; j < d; ++j) out[j] += row[j];
        }
        for (std::size_t j = 0; j < d; ++j) out[j] /= static_cast<double>(v.rows());
        ps.meta.push_back({batches[b].origin_user, batches[b].class_slot,
                           batches[b].origin_iteration});
    }
    return ps;
}

namespace {

// Number of k-subsets of n, saturating; decides whether exact search is cheap.
double subset_count(std::size_t n, int k) {
    double c = 1.0;
    for (int i = 0; i < k; ++i)
        c *= static_cast<double>(n - static_cast<std::size_t>(i)) / (i + 1);
    return c;
}

// Exhaustive medoid search; ties resolve to the lexicographically smallest
// subset. Point counts here are single-digit in practice, so this is the
// common path.
std::vector<int> exact_medoids(const Matrix& dist, int k) {
    const std::size_t n = dist.rows();
    std::vector<int> current(static_cast<std::size_t>(k));
    std::vector<int> best_set;
    double best_cost = std::numeric_limits<double>::infinity();
    std::function<void(int, int)> recurse = [&](int start, int depth) {
        if (depth == k) {
            const double c = cost_of(dist, current);
            if (c < best_cost - 1e-15) {
                best_cost = c;
                best_set = current;
            }
            return;
        }
        for (int cand = start; cand <= static_cast<int>(n) - (k - depth); ++cand) {
            current[static_cast<std::size_t>(depth)] = cand;
            recurse(cand + 1, depth + 1);
        }
    };
    recurse(0, 0);
    return best_set;
}

}  // namespace

ClusterAssignment kmedoids(const PointSet& points, int k, std::uint64_t seed) {
    (void)seed;  // search is deterministic; ties break by index
    const std::size_t n = points.size();
    if (n == 0) throw InputError("empty point set");
    if (k < 1 || static_cast<std::size_t>(k) > n)
        throw InputError("cluster count must be in [1, n]");

    const Matrix dist = distance_matrix(points);

    if (subset_count(n, k) <= 20000.0) {
        ClusterAssignment a;
        a.k = k;
        a.medoid_indices = exact_medoids(dist, k);
        assign_points(dist, a.medoid_indices, a.labels, a.total_cost);
        return a;
    }

    // Greedy build: start from the 1-medoid cost minimizer, then repeatedly
    // add the point that lowers the total cost the most.
    std::vector<int> medoids;
    std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
    for (int added = 0; added < k; ++added) {
        double best_delta = std::numeric_limits<double>::infinity();
        int best_idx = -1;
        for (std::size_t cand = 0; cand < n; ++cand) {
            if (std::find(medoids.begin(), medoids.end(), static_cast<int>(cand)) !=
                medoids.end())
                continue;
            double cost = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                cost += std::min(nearest[i], dist(i, cand));
            if (cost < best_delta) {
                best_delta = cost;
                best_idx = static_cast<int>(cand);
            }
        }
        medoids.push_back(best_idx);
        for (std::size_t i = 0; i < n; ++i)
            nearest[i] = std::min(nearest[i], dist(i, static_cast<std::size_t>(best_idx)));
    }

    // Swap phase: apply the best improving (medoid, candidate) swap until none.
    double current = cost_of(dist, medoids);
    for (;;) {
        double best_cost = current;
        int best_m = -1, best_c = -1;
        for (std::size_t m = 0; m < medoids.size(); ++m) {
            for (std::size_t cand = 0; cand < n; ++cand) {
                if (std::find(medoids.begin(), medoids.end(), static_cast<int>(cand)) !=
                    medoids.end())
                    continue;
                std::vector<int> trial = medoids;
                trial[m] = static_cast<int>(cand);
                const double c = cost_of(dist, trial);
                if (c < best_cost - 1e-15) {
                    best_cost = c;
                    best_m = static_cast<int>(m);
                    best_c = static_cast<int>(cand);
                }
            }
        }
        if (best_m < 0) break;
        medoids[static_cast<std::size_t>(best_m)] = best_c;
        current = best_cost;
    }

    std::sort(medoids.begin(), medoids.end());
    ClusterAssignment a;
    a.k = k;
    a.medoid_indices = medoids;
    assign_points(dist, a.medoid_indices, a.labels, a.total_cost);
    return a;
}

double silhouette_score(const PointSet& points, const ClusterAssignment& assignment) {
    const std::size_t n = points.size();
    if (assignment.k < 2) throw InputError("silhouette needs at least 2 clusters");
    std::vector<int> sizes(static_cast<std::size_t>(assignment.k), 0);
    for (int l : assignment.labels) ++sizes[static_cast<std::size_t>(l)];
    for (int s : sizes)
        if (s == 0) throw InputError("silhouette needs every cluster non-empty");

    const Matrix dist = distance_matrix(points);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const int own = assignment.labels[i];
        if (sizes[static_cast<std::size_t>(own)] == 1) continue;  // singleton scores 0

        std::vector<double> sum_to(static_cast<std::size_t>(assignment.k), 0.0);
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) sum_to[static_cast<std::size_t>(assignment.labels[j])] += dist(i, j);

        const double a =
            sum_to[static_cast<std::size_t>(own)] / (sizes[static_cast<std::size_t>(own)] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (int c = 0; c < assignment.k; ++c) {
            if (c == own) continue;
            b = std::min(b, sum_to[static_cast<std::size_t>(c)] /
                                sizes[static_cast<std::size_t>(c)]);
        }
        const double denom = std::max(a, b);
        total += denom > 0.0 ? (b - a) / denom : 0.0;
    }
    return total / static_cast<double>(n);
}

Selection select_num_clusters(const PointSet& points, int k_max,
                              const SelectOptions& opts) {
    const std::size_t n = points.size();
    if (n == 0) throw InputError("empty point set");
    if (k_max > static_cast<int>(n)) k_max = static_cast<int>(n);

    Selection sel;
    if (opts.oracle_k > 0) {
        sel.k = std::min(opts.oracle_k, static_cast<int>(n));
        sel.assignment = kmedoids(points, sel.k, opts.seed);
        return sel;
    }
    const Matrix dist = distance_matrix(points);
    if (n == 1 || k_max < 2) {
        sel.k = 1;
        sel.assignment = trivial_single_cluster(points, dist);
        return sel;
    }

    double best_sil = -std::numeric_limits<double>::infinity();
    ClusterAssignment best_asg;
    for (int k = 2; k <= k_max; ++k) {
        ClusterAssignment asg = kmedoids(points, k, opts.seed);
        const double s = silhouette_score(points, asg);
        if (s > best_sil) {
            best_sil = s;
            best_asg = std::move(asg);
        }
    }
    sel.best_silhouette = best_sil;
    if (best_sil >= opts.min_split_silhouette) {
        sel.k = best_asg.k;
        sel.assignment = std::move(best_asg);
        return sel;
    }

    sel.low_confidence = true;
    if (opts.merge_distance > 0.0) {
        // Single-linkage components at the configured distance scale.
        std::vector<int> parent(n);
        std::iota(parent.begin(), parent.end(), 0);
        std::function<int(int)> find = [&](int x) {
            while (parent[static_cast<std::size_t>(x)] != x) {
                parent[static_cast<std::size_t>(x)] =
                    parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
                x = parent[static_cast<std::size_t>(x)];
            }
            return x;
        };
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j)
                if (dist(i, j) <= opts.merge_distance)
                    parent[static_cast<std::size_t>(find(static_cast<int>(j)))] =
                        find(static_cast<int>(i));

        std::vector<int> roots;
        std::vector<int> comp(n);
        for (std::size_t i = 0; i < n; ++i) {
            const int r = find(static_cast<int>(i));
            auto it = std::find(roots.begin(), roots.end(), r);
            if (it == roots.end()) {
                comp[i] = static_cast<int>(roots.size());
                roots.push_back(r);
            } else {
                comp[i] = static_cast<int>(it - roots.begin());
            }
        }
        sel.k = static_cast<int>(roots.size());
        sel.assignment.k = sel.k;
        sel.assignment.labels = comp;
        // Component medoids: per component, the point with the least
        // intra-component distance sum.
        sel.assignment.medoid_indices.assign(static_cast<std::size_t>(sel.k), -1);
        std::vector<double> best(static_cast<std::size_t>(sel.k),
                                 std::numeric_limits<double>::infinity());
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                if (comp[i] == comp[j]) s += dist(i, j);
            const auto c = static_cast<std::size_t>(comp[j]);
            if (s < best[c]) {
                best[c] = s;
                sel.assignment.medoid_indices[c] = static_cast<int>(j);
            }
        }
        sel.assignment.total_cost = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            sel.assignment.total_cost += dist(
                i, static_cast<std::size_t>(
                       sel.assignment.medoid_indices[static_cast<std::size_t>(comp[i])]));
        return sel;
    }

    sel.k = 1;
    sel.assignment = trivial_single_cluster(points, dist);
    return sel;
}

PcaResult pca_project(const PointSet& points, int dims) {
    const std::size_t n = points.size();
    const std::size_t d = points.points.cols();
    if (n < 2) throw InputError("projection needs at least 2 points");
    if (dims != 2) throw InputError("only 2-D projection is supported");

    // Center.
    std::vector<double> mean(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = points.points.row(i);
        for (std::size_t j = 0; j < d; ++j) mean[j] += row[j];
    }
    for (double& m : mean) m /= static_cast<double>(n);
    Matrix centered(n, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
            centered(i, j) = points.points(i, j) - mean[j];

    // Sample covariance.
    Matrix cov(d, d);
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = a; b < d; ++b) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += centered(i, a) * centered(i, b);
            s /= static_cast<double>(n - 1);
            cov(a, b) = s;
            cov(b, a) = s;
        }

    PcaResult result;
    result.coords = Matrix(n, 2);

    double trace = 0.0;
    for (std::size_t a = 0; a < d; ++a) trace += cov(a, a);
    std::vector<std::vector<double>> axes;
    if (trace <= 1e-300) {
        // Zero-variance data: no direction to find.
        return result;
    }

    Matrix work = cov;
    std::mt19937_64 rng(0x9E3779B9u);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int axis = 0; axis < 2; ++axis) {
        std::vector<double> v(d);
        for (double& x : v) x = gauss(rng);
        // Keep the iterate orthogonal to already-found axes.
        for (const auto& prev : axes) {
            const double p = dot(v, prev);
            for (std::size_t j = 0; j < d; ++j) v[j] -= p * prev[j];
        }
        double vn = norm(v);
        if (vn == 0.0) v[axis % d] = 1.0, vn = 1.0;
        for (double& x : v) x /= vn;

        double eigenvalue = 0.0;
        for (int iter = 0; iter < 100000; ++iter) {
            std::vector<double> w(d, 0.0);
            for (std::size_t a = 0; a < d; ++a) {
                const double va = v[a];
                if (va == 0.0) continue;
                const auto row = work.row(a);
                for (std::size_t b = 0; b < d; ++b) w[b] += va * row[b];
            }
            for (const auto& prev : axes) {
                const double p = dot(w, prev);
                for (std::size_t j = 0; j < d; ++j) w[j] -= p * prev[j];
            }
            const double wn = norm(w);
            if (wn <= 1e-300) {
                eigenvalue = 0.0;
                break;
            }
            double diff = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double nj = w[j] / wn;
                diff += std::abs(nj - v[j]);
                v[j] = nj;
            }
            eigenvalue = wn;  // ||C v|| -> lambda as v converges
            if (diff < 1e-10) break;
        }

        if (eigenvalue <= 0.0) {
            // Remaining variance is zero; fabricate a deterministic unit
            // vector orthogonal to the found axes so the basis stays valid.
            std::vector<double> u(d, 0.0);
            for (std::size_t start = 0; start < d; ++start) {
                u.assign(d, 0.0);
                u[start] = 1.0;
                for (const auto& prev : axes) {
                    const double p = dot(u, prev);
                    for (std::size_t j = 0; j < d; ++j) u[j] -= p * prev[j];
                }
                const double un = norm(u);
                if (un > 1e-8) {
                    for (double& x : u) x /= un;
                    break;
                }
            }
            v = u;
            eigenvalue = 0.0;
        }

        result.explained_variance[static_cast<std::size_t>(axis)] = eigenvalue;
        axes.push_back(v);
        // Deflate.
        for (std::size_t a = 0; a < d; ++a)
            for (std::size_t b = 0; b < d; ++b) work(a, b) -= eigenvalue * v[a] * v[b];
    }

    if (result.explained_variance[1] > result.explained_variance[0]) {
        std::swap(result.explained_variance[0], result.explained_variance[1]);
        std::swap(axes[0], axes[1]);
    }
    for (std::size_t i = 0; i < n; ++i) {
        result.coords(i, 0) = dot(centered.row(i), axes[0]);
        result.coords(i, 1) = dot(centered.row(i), axes[1]);
    }
    return result;
}

}  // namespace fedzs::clustering
