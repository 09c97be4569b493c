#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fedzs/matrix.hpp"

namespace fedzs::data {

// Maps opaque non-negative label ids to human names. Ids are unique within
// a run; minted ids (labels discovered at runtime) come from the same space.
class LabelRegistry {
  public:
    int add(const std::string& name);
    // Registers a fresh id with a generated name for a newly discovered class.
    int mint();
    const std::string& name(int id) const;
    std::optional<int> find(const std::string& name) const;
    int size() const { return static_cast<int>(names_.size()); }

  private:
    std::vector<std::string> names_;
    std::map<std::string, int> ids_;
    int minted_count_ = 0;
};

struct Dataset {
    Matrix features;
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
    std::size_t feature_dim() const { return features.cols(); }
    std::vector<int> label_set() const;
    void append(std::span<const double> row, int label);
};

enum class Provenance { kOriginal, kImpression };

// The shared reference set visible to every party. Grows only by admitted
// impression batches; original samples are never touched.
struct PublicDataset {
    Dataset data;
    std::vector<Provenance> provenance;
    std::vector<int> label_set;  // every label currently represented

    std::size_t size() const { return data.size(); }
    std::map<int, int> per_label_counts() const;
    std::size_t original_count() const;
};

// Impressions admitted for one resolved label, ready to join the public set.
struct ResolvedImpressions {
    int label_id = -1;
    Matrix vectors;
};

// Per-class isotropic unit-variance Gaussian clusters with seeded means at
// pairwise distance >= separation. Labels are 0..num_classes-1.
Dataset generate_synthetic_dataset(int num_classes, int frames_per_class,
                                   int feature_dim, double separation,
                                   std::uint64_t seed);

// Plain-text feature file: header "N d", then N lines of d reals and one
// integer label. Lines starting with '#' are ignored.
Dataset load_feature_file(const std::filesystem::path& path);
void save_feature_file(const std::filesystem::path& path, const Dataset& ds,
                       const std::vector<std::string>& comment_lines = {});

// Builds the initial public set by taking the first frames_per_label samples
// of each requested label from the source corpus.
PublicDataset make_public_dataset(const Dataset& source,
                                  const std::vector<int>& labels,
                                  int frames_per_label);

// Appends impression batches under their resolved labels and extends the
// label set. Returns a new value; the input is never mutated.
PublicDataset augment_public(const PublicDataset& pub,
                             const std::vector<ResolvedImpressions>& admitted);

}  // namespace fedzs::data
