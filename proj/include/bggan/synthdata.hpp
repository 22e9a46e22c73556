#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bggan/tensor.hpp"

namespace bggan {

/// One synthetic scan pair. sc is symmetric nonnegative with a zero diagonal;
/// fc is symmetric with unit diagonal and entries in [-1, 1]; feats stacks
/// per-node row statistics, one slice per modality.
struct Subject {
    std::string id;
    int label = 0;
    Matrix sc;
    Matrix fc;
    Tensor3 feats;
};

using Cohort = std::vector<Subject>;

/// Additive class-conditional shift on one structural edge (i < j), applied
/// before the functional simulation so both modalities inherit it.
struct PlantedEdge {
    int i = 0;
    int j = 0;
    std::vector<double> deltas;  // one per class
};

struct CohortSpec {
    std::vector<int> n_per_class;
    int n_rois = 90;
    int n_communities = 4;
    std::vector<PlantedEdge> planted_edges;
    double noise_sigma = 0.05;
    std::uint64_t seed = 1;

    void validate() const;
};

/// Width of the per-node row-statistic feature vector; fixed by the statistic
/// set in make_cohort (strength, mean, max, norm, degree fraction, triangle
/// weight, variance, two-hop strength).
constexpr Eigen::Index kFeatureDim = 8;

/// Modality slices everywhere: 0 = sc, 1 = |fc|, 2 = sc .* |fc|.
constexpr Eigen::Index kModalitySlices = 3;

/// The nonnegative adjacency slices the graph layers consume.
Tensor3 adjacency_tensor(const Subject& s);

int class_count(const Cohort& cohort);

Cohort make_cohort(const CohortSpec& spec);

/// Writes `manifest` plus per-subject sc_<id>.csv / fc_<id>.csv /
/// feat_<id>_<r>.csv files. Numbers are decimal text with 17 significant
/// digits, so save -> load roundtrips bitwise.
void save_cohort(const std::string& dir, const Cohort& cohort);

/// Loads a directory written by save_cohort, enforcing every Subject
/// invariant; violations raise ValidationError naming the failed check.
Cohort load_cohort(const std::string& dir);

/// One matrix per file, comma-separated rows, 17 significant digits.
void write_matrix_csv(const std::string& path, const Matrix& m);
Matrix read_matrix_csv(const std::string& path);

}  // namespace bggan
