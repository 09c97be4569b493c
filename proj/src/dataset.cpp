#include "fedzs/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "fedzs/common.hpp"

namespace fedzs::data {

int LabelRegistry::add(const std::string& name) {
    if (ids_.count(name)) throw ConfigError("duplicate label name '" + name + "'");
    const int id = static_cast<int>(names_.size());
    names_.push_back(name);
    ids_[name] = id;
    return id;
}

int LabelRegistry::mint() {
    return add("new_" + std::to_string(minted_count_++));
}

const std::string& LabelRegistry::name(int id) const {
    if (id < 0 || id >= static_cast<int>(names_.size()))
        throw LabelError("unknown label id " + std::to_string(id));
    return names_[static_cast<std::size_t>(id)];
}

std::optional<int> LabelRegistry::find(const std::string& name) const {
    const auto it = ids_.find(name);
    if (it == ids_.end()) return std::nullopt;
    return it->second;
}

std::vector<int> Dataset::label_set() const {
    std::set<int> s(labels.begin(), labels.end());
    return {s.begin(), s.end()};
}

void Dataset::append(std::span<const double> row, int label) {
    features.append_row(row);
    labels.push_back(label);
}

std::map<int, int> PublicDataset::per_label_counts() const {
    std::map<int, int> counts;
    for (int l : data.labels) ++counts[l];
    return counts;
}

std::size_t PublicDataset::original_count() const {
    return static_cast<std::size_t>(
        std::count(provenance.begin(), provenance.end(), Provenance::kOriginal));
}

Dataset generate_synthetic_dataset(int num_classes, int frames_per_class,
                                   int feature_dim, double separation,
                                   std::uint64_t seed) {
    if (num_classes < 1 || frames_per_class < 1 || feature_dim < 1)
        throw ConfigError("synthetic dataset counts must be positive");
    if (separation <= 0.0) throw ConfigError("separation must be positive");

    // Rejection-sample class means on a sphere of radius 1.25 * separation,
    // keeping every pair at least `separation` apart. The modest radius keeps
    // class structure at a scale the rest of the pipeline can reach; a
    // dimension too low for the requested class count exhausts the budget.
    const double radius = 1.25 * separation;
    std::mt19937_64 mean_rng(derive_seed(seed, {0xA11CE5}));
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<std::vector<double>> means;
    int attempts = 0;
    const int max_attempts = 1000 * num_classes;
    while (static_cast<int>(means.size()) < num_classes) {
        if (++attempts > max_attempts)
            throw ConfigError(
                "feature_dim too small to place " + std::to_string(num_classes) +
                " class means at separation " + std::to_string(separation));
        std::vector<double> candidate(static_cast<std::size_t>(feature_dim));
        for (double& v : candidate) v = gauss(mean_rng);
        const double n = norm(candidate);
        if (n < 1e-12) continue;
        for (double& v : candidate) v *= radius / n;
        bool ok = true;
        for (const auto& m : means)
            if (euclidean_distance(m, candidate) < separation) {
                ok = false;
                break;
            }
        if (ok) means.push_back(std::move(candidate));
    }

    Dataset ds;
    ds.features = Matrix(static_cast<std::size_t>(num_classes) *
                             static_cast<std::size_t>(frames_per_class),
                         static_cast<std::size_t>(feature_dim));
    ds.labels.resize(ds.features.rows());
    std::size_t row = 0;
    for (int k = 0; k < num_classes; ++k) {
        std::mt19937_64 rng(derive_seed(seed, {0x5A4D, static_cast<std::uint64_t>(k)}));
        std::normal_distribution<double> noise(0.0, 1.0);
        for (int s = 0; s < frames_per_class; ++s, ++row) {
            auto out = ds.features.row(row);
            for (int j = 0; j < feature_dim; ++j)
                out[static_cast<std::size_t>(j)] =
                    means[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)] +
                    noise(rng);
            ds.labels[row] = k;
        }
    }
    return ds;
}

Dataset load_feature_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open feature file: " + path.string());

    std::string line;
    int line_no = 0;
    auto next_data_line = [&]() -> bool {
        while (std::getline(in, line)) {
            ++line_no;
            std::size_t i = line.find_first_not_of(" \t\r");
            if (i == std::string::npos || line[i] == '#') continue;
            return true;
        }
        return false;
    };

    if (!next_data_line()) throw ParseError("feature file has no header line");
    std::size_t n = 0, d = 0;
    {
        std::istringstream ss(line);
        if (!(ss >> n >> d) || d == 0)
            throw ParseError("bad feature file header at line " +
                             std::to_string(line_no));
    }

    Dataset ds;
    ds.features = Matrix(n, d);
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!next_data_line())
            throw ParseError("feature file ends after " + std::to_string(i) + " of " +
                             std::to_string(n) + " rows");
        std::istringstream ss(line);
        for (std::size_t j = 0; j < d; ++j)
            if (!(ss >> ds.features(i, j)))
                throw ParseError("non-numeric or short feature row at line " +
                                 std::to_string(line_no));
        if (!(ss >> ds.labels[i]))
            throw ParseError("missing label at line " + std::to_string(line_no));
        double excess;
        if (ss >> excess)
            throw ParseError("feature row longer than header dimension at line " +
                             std::to_string(line_no));
    }
    return ds;
}

void save_feature_file(const std::filesystem::path& path, const Dataset& ds,
                       const std::vector<std::string>& comment_lines) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot open feature file for writing: " + path.string());
    for (const auto& c : comment_lines) out << "# " << c << "\n";
    out << ds.size() << ' ' << ds.feature_dim() << "\n";
    char buf[64];
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto row = ds.features.row(i);
        for (std::size_t j = 0; j < row.size(); ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", row[j]);
            out << buf << ' ';
        }
        out << ds.labels[i] << "\n";
    }
}

PublicDataset make_public_dataset(const Dataset& source, const std::vector<int>& labels,
                                  int frames_per_label) {
    if (frames_per_label < 1) throw ConfigError("frames_per_label must be positive");
    PublicDataset pub;
    for (int wanted : labels) {
        int taken = 0;
        for (std::size_t i = 0; i < source.size() && taken < frames_per_label; ++i) {
            if (source.labels[i] != wanted) continue;
            pub.data.append(source.features.row(i), wanted);
            pub.provenance.push_back(Provenance::kOriginal);
            ++taken;
        }
        if (taken < frames_per_label)
            throw ConfigError("source corpus has only " + std::to_string(taken) +
                              " samples of label " + std::to_string(wanted) +
                              ", need " + std::to_string(frames_per_label));
        pub.label_set.push_back(wanted);
    }
    return pub;
}

PublicDataset augment_public(const PublicDataset& pub,
                             const std::vector<ResolvedImpressions>& admitted) {
    PublicDataset out = pub;
    for (const auto& batch : admitted) {
        if (std::find(out.label_set.begin(), out.label_set.end(), batch.label_id) !=
            out.label_set.end())
            throw ConfigError("admitted label " + std::to_string(batch.label_id) +
                              " collides with the existing public label set");
        if (!batch.vectors.empty() &&
            batch.vectors.cols() != out.data.feature_dim() && out.data.size() > 0)
            throw InputError("impression dimension does not match the public dataset");
        for (std::size_t i = 0; i < batch.vectors.rows(); ++i) {
            out.data.append(batch.vectors.row(i), batch.label_id);
            out.provenance.push_back(Provenance::kImpression);
        }
        out.label_set.push_back(batch.label_id);
    }
    return out;
}

}  // namespace fedzs::data
