#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "bggan/errors.hpp"
#include "bggan/synthdata.hpp"

using namespace bggan;
namespace fs = std::filesystem;

namespace {

CohortSpec small_spec() {
    CohortSpec spec;
    spec.n_per_class = {3, 3};
    spec.n_rois = 12;
    spec.n_communities = 3;
    spec.noise_sigma = 0.05;
    spec.seed = 42;
    return spec;
}

void check_invariants(const Subject& s, int n_rois) {
    REQUIRE(s.sc.rows() == n_rois);
    REQUIRE(s.sc.cols() == n_rois);
    REQUIRE(s.fc.rows() == n_rois);
    for (Eigen::Index i = 0; i < n_rois; ++i) {
        CHECK(s.sc(i, i) == 0.0);
        CHECK(s.fc(i, i) == 1.0);
        for (Eigen::Index j = 0; j < n_rois; ++j) {
            CHECK(s.sc(i, j) == s.sc(j, i));
            CHECK(s.sc(i, j) >= 0.0);
            CHECK(s.fc(i, j) == s.fc(j, i));
            CHECK(s.fc(i, j) >= -1.0);
            CHECK(s.fc(i, j) <= 1.0);
        }
    }
    CHECK(s.feats.rows() == n_rois);
    CHECK(s.feats.cols() == kFeatureDim);
    CHECK(s.feats.num_slices() == kModalitySlices);
    CHECK(s.feats.is_real());
}

fs::path fresh_dir(const char* name) {
    const fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    return dir;
}


bool same(const Matrix& a, const Matrix& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && (a.array() == b.array()).all();
}

}  // namespace

TEST_CASE("cohort spec validation") {
    CohortSpec spec = small_spec();
    CHECK_NOTHROW(spec.validate());

    CohortSpec bad = spec;
    bad.n_per_class.clear();
    CHECK_THROWS_AS(make_cohort(bad), ValidationError);

    bad = spec;
    bad.n_per_class = {3, 0};
    CHECK_THROWS_AS(make_cohort(bad), ValidationError);

    bad = spec;
    bad.planted_edges = {{5, 3, {0.0, 0.1}}};  // i >= j
    CHECK_THROWS_AS(make_cohort(bad), ValidationError);

    bad = spec;
    bad.planted_edges = {{3, 50, {0.0, 0.1}}};  // j out of range
    CHECK_THROWS_AS(make_cohort(bad), ValidationError);

    bad = spec;
    bad.planted_edges = {{3, 5, {0.1}}};  // one delta for two classes
    CHECK_THROWS_AS(make_cohort(bad), ValidationError);

    bad = spec;
    bad.noise_sigma = -0.1;
    CHECK_THROWS_AS(make_cohort(bad), ValidationError);

    bad = spec;
    bad.n_communities = 0;
    CHECK_THROWS_AS(make_cohort(bad), ValidationError);
}

TEST_CASE("cohort invariants and labels") {
    const CohortSpec spec = small_spec();
    const Cohort cohort = make_cohort(spec);
    REQUIRE(cohort.size() == 6);
    CHECK(class_count(cohort) == 2);
    for (std::size_t i = 0; i < cohort.size(); ++i) {
        check_invariants(cohort[i], spec.n_rois);
        CHECK(cohort[i].label == (i < 3 ? 0 : 1));
    }
    CHECK(cohort[0].id != cohort[1].id);

    const Tensor3 adj = adjacency_tensor(cohort[0]);
    CHECK(same(adj.real_slice(0), cohort[0].sc));
    CHECK(same(adj.real_slice(1), cohort[0].fc.cwiseAbs()));
    CHECK(same(adj.real_slice(2), cohort[0].sc.cwiseProduct(cohort[0].fc.cwiseAbs())));
}

TEST_CASE("generation is reproducible from the seed") {
    const CohortSpec spec = small_spec();
    const Cohort a = make_cohort(spec);
    const Cohort b = make_cohort(spec);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(same(a[i].sc, b[i].sc));
        CHECK(same(a[i].fc, b[i].fc));
        for (Eigen::Index k = 0; k < kModalitySlices; ++k) {
            CHECK(same(a[i].feats.real_slice(k), b[i].feats.real_slice(k)));
        }
    }

    CohortSpec other = spec;
    other.seed = 43;
    const Cohort c = make_cohort(other);
    CHECK(!same(a[0].sc, c[0].sc));
}

TEST_CASE("functional matrices are a function of the structural ones") {
    // A planted delta of zero must leave everything bitwise unchanged: the
    // functional simulation depends only on the structural matrix, not on the
    // spec bookkeeping around it.
    CohortSpec plain = small_spec();
    plain.noise_sigma = 0.0;
    CohortSpec with_zero_delta = plain;
    with_zero_delta.planted_edges = {{2, 7, {0.0, 0.0}}};

    const Cohort a = make_cohort(plain);
    const Cohort b = make_cohort(with_zero_delta);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(same(a[i].sc, b[i].sc));
        CHECK(same(a[i].fc, b[i].fc));
    }
}

TEST_CASE("planted class difference shows up in the class means") {
    CohortSpec spec;
    spec.n_per_class = {30, 30};
    spec.n_rois = 20;
    spec.n_communities = 4;
    spec.noise_sigma = 0.05;
    spec.seed = 7;
    spec.planted_edges = {{3, 7, {0.0, 0.5}}};
    const Cohort cohort = make_cohort(spec);

    double mean0 = 0.0, mean1 = 0.0;
    for (const Subject& s : cohort) {
        (s.label == 0 ? mean0 : mean1) += s.sc(3, 7);
    }
    mean0 /= 30.0;
    mean1 /= 30.0;

    // 3 sigma / sqrt(n) with the generator's edge jitter sigma of 0.12
    const double tol = 3.0 * 0.12 / std::sqrt(30.0);
    CHECK(std::abs((mean1 - mean0) - 0.5) < tol);

    // the delta also propagates into the functional matrices
    double fdiff = 0.0;
    for (const Subject& s : cohort) {
        fdiff += (s.label == 0 ? -1.0 : 1.0) * s.fc(3, 7);
    }
    CHECK(std::abs(fdiff / 30.0) > 1e-4);
}

TEST_CASE("save and load roundtrip bitwise") {
    const fs::path dir = fresh_dir("bggan_synth_roundtrip");
    const Cohort cohort = make_cohort(small_spec());
    save_cohort(dir.string(), cohort);
    const Cohort loaded = load_cohort(dir.string());

    REQUIRE(loaded.size() == cohort.size());
    for (std::size_t i = 0; i < cohort.size(); ++i) {
        CHECK(loaded[i].id == cohort[i].id);
        CHECK(loaded[i].label == cohort[i].label);
        CHECK(same(loaded[i].sc, cohort[i].sc));
        CHECK(same(loaded[i].fc, cohort[i].fc));
        for (Eigen::Index k = 0; k < kModalitySlices; ++k) {
            CHECK(same(loaded[i].feats.real_slice(k), cohort[i].feats.real_slice(k)));
        }
    }
    fs::remove_all(dir);
}

TEST_CASE("loader failure modes") {
    const fs::path dir = fresh_dir("bggan_synth_failures");
    const Cohort cohort = make_cohort(small_spec());
    save_cohort(dir.string(), cohort);

    SUBCASE("missing matrix file") {
        fs::remove(dir / ("sc_" + cohort[0].id + ".csv"));
        CHECK_THROWS_WITH_AS(load_cohort(dir.string()), doctest::Contains("missing file"),
                             ValidationError);
    }
    SUBCASE("missing manifest") {
        fs::remove(dir / "manifest");
        CHECK_THROWS_WITH_AS(load_cohort(dir.string()), doctest::Contains("missing file"),
                             ValidationError);
    }
    SUBCASE("asymmetric structural matrix is named") {
        Matrix sc = cohort[0].sc;
        sc(0, 1) += 1.0;  // break symmetry
        std::ofstream out(dir / ("sc_" + cohort[0].id + ".csv"));
        for (Eigen::Index i = 0; i < sc.rows(); ++i) {
            for (Eigen::Index j = 0; j < sc.cols(); ++j) {
                out << (j ? "," : "") << sc(i, j);
            }
            out << '\n';
        }
        out.close();
        CHECK_THROWS_WITH_AS(load_cohort(dir.string()), doctest::Contains("not symmetric"),
                             ValidationError);
    }
    SUBCASE("malformed number") {
        std::ofstream out(dir / ("fc_" + cohort[0].id + ".csv"));
        out << "1,zzz\nzzz,1\n";
        out.close();
        CHECK_THROWS_WITH_AS(load_cohort(dir.string()), doctest::Contains("malformed"),
                             ValidationError);
    }
    fs::remove_all(dir);
}
