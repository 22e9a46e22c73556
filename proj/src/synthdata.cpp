#include "bggan/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "bggan/errors.hpp"
#include "bggan/rng.hpp"

namespace bggan {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Community edge-weight distribution constants. Planted deltas ride on top of
// these, so class means differ by exactly the delta in expectation.
constexpr double kMuIn = 0.7;
constexpr double kMuOut = 0.15;
constexpr double kEdgeSigma = 0.12;

// Functional simulation: x_{t+1} = (1-alpha) x_t + alpha norm(sc) x_t + noise.
constexpr double kAlpha = 0.3;
constexpr int kSteps = 200;

constexpr double kDegreeThreshold = 0.1;

int community_of(int node, int n_rois, int n_communities) {
    return static_cast<int>(static_cast<long long>(node) * n_communities / n_rois);
}

Matrix symmetric_normalize(const Matrix& a) {
    const Eigen::Index n = a.rows();
    Eigen::VectorXd deg = a.rowwise().sum();
    Eigen::VectorXd dinv(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        dinv(i) = deg(i) > 0.0 ? 1.0 / std::sqrt(deg(i)) : 0.0;
    }
    return dinv.asDiagonal() * a * dinv.asDiagonal();
}

Matrix simulate_fc(const Matrix& sc, double noise_sigma, std::mt19937_64& rng) {
    const Eigen::Index n = sc.rows();
    const Matrix s = symmetric_normalize(sc);

    Eigen::VectorXd x(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        x(i) = std::sin(static_cast<double>(i) + 1.0);
    }

    std::normal_distribution<double> noise(0.0, noise_sigma);
    Matrix series(n, kSteps);
    for (int t = 0; t < kSteps; ++t) {
        Eigen::VectorXd next = (1.0 - kAlpha) * x + kAlpha * (s * x);
        if (noise_sigma > 0.0) {
            for (Eigen::Index i = 0; i < n; ++i) {
                next(i) += noise(rng);
            }
        }
        x = next;
        series.col(t) = x;
    }

    Matrix centered = series.colwise() - series.rowwise().mean();
    Eigen::VectorXd norms = centered.rowwise().norm();
    Matrix fc = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double denom = norms(i) * norms(j);
            double c = denom > 1e-30 ? centered.row(i).dot(centered.row(j)) / denom : 0.0;
            c = std::clamp(c, -1.0, 1.0);
            fc(i, j) = c;
            fc(j, i) = c;
        }
        fc(i, i) = 1.0;
    }
    return fc;
}

Tensor3 row_statistics(const Tensor3& adj) {
    const Eigen::Index n = adj.rows();
    std::vector<Matrix> out;
    for (Eigen::Index k = 0; k < adj.num_slices(); ++k) {
        const Matrix a = adj.real_slice(k);
        const Matrix a2 = a * a;
        const Matrix a3 = a2 * a;
        Matrix f(n, kFeatureDim);
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto row = a.row(i);
            const double strength = row.sum();
            const double mean = row.mean();
            double degree = 0.0;
            for (Eigen::Index j = 0; j < n; ++j) {
                if (row(j) > kDegreeThreshold) {
                    degree += 1.0;
                }
            }
            f(i, 0) = strength;
            f(i, 1) = strength / static_cast<double>(n - 1);
            f(i, 2) = row.maxCoeff();
            f(i, 3) = row.norm();
            f(i, 4) = degree / static_cast<double>(n - 1);
            f(i, 5) = a3(i, i) / (strength * strength + 1.0);
            f(i, 6) = (row.array() - mean).square().mean();
            f(i, 7) = a2.row(i).sum() / static_cast<double>(n);
        }
        // standardize each statistic across nodes so downstream layers see
        // O(1) inputs regardless of graph size and weight scale
        for (Eigen::Index c = 0; c < kFeatureDim; ++c) {
            const double mu = f.col(c).mean();
            const double sd = std::sqrt((f.col(c).array() - mu).square().mean());
            if (sd > 1e-12) {
                f.col(c) = (f.col(c).array() - mu) / sd;
            } else {
                f.col(c).setZero();
            }
        }
        out.push_back(std::move(f));
    }
    return Tensor3::from_real_slices(std::move(out));
}

std::string format_value(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

void write_matrix_csv(const std::string& path, const Matrix& m) {
    std::ofstream out(path);
    if (!out) {
        throw ValidationError("cannot open for writing: " + path);
    }
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            if (j > 0) {
                out << ',';
            }
            out << format_value(m(i, j));
        }
        out << '\n';
    }
}

Matrix read_matrix_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ValidationError("missing file: " + path);
    }
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            std::size_t pos = 0;
            double v = 0.0;
            try {
                v = std::stod(cell, &pos);
            } catch (const std::exception&) {
                throw ValidationError("malformed number in " + path + ": '" + cell + "'");
            }
            row.push_back(v);
        }
        if (!rows.empty() && row.size() != rows.front().size()) {
            throw ValidationError("ragged rows in " + path);
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) {
        throw ValidationError("empty matrix file: " + path);
    }
    Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        }
    }
    return m;
}

namespace {

void check_subject(const Subject& s, Eigen::Index n_rois) {
    const std::string who = "subject " + s.id + ": ";
    if (s.sc.rows() != n_rois || s.sc.cols() != n_rois) {
        throw ValidationError(who + "sc shape does not match n_rois");
    }
    if (s.fc.rows() != n_rois || s.fc.cols() != n_rois) {
        throw ValidationError(who + "fc shape does not match n_rois");
    }
    if (s.label < 0) {
        throw ValidationError(who + "negative label");
    }
    for (Eigen::Index i = 0; i < n_rois; ++i) {
        for (Eigen::Index j = 0; j < n_rois; ++j) {
            if (s.sc(i, j) != s.sc(j, i)) {
                throw ValidationError(who + "sc not symmetric");
            }
            if (s.sc(i, j) < 0.0) {
                throw ValidationError(who + "sc has a negative entry");
            }
            if (s.fc(i, j) != s.fc(j, i)) {
                throw ValidationError(who + "fc not symmetric");
            }
            if (s.fc(i, j) < -1.0 || s.fc(i, j) > 1.0) {
                throw ValidationError(who + "fc entry outside [-1, 1]");
            }
        }
        if (s.sc(i, i) != 0.0) {
            throw ValidationError(who + "sc diagonal not zero");
        }
        if (s.fc(i, i) != 1.0) {
            throw ValidationError(who + "fc diagonal not one");
        }
    }
    if (s.feats.rows() != n_rois || s.feats.cols() != kFeatureDim ||
        s.feats.num_slices() != kModalitySlices) {
        throw ValidationError(who + "feature tensor has the wrong shape");
    }
    if (!s.feats.is_real()) {
        throw ValidationError(who + "feature tensor is not real");
    }
}

}  // namespace

void CohortSpec::validate() const {
    if (n_per_class.empty()) {
        throw ValidationError("cohort spec: n_per_class is empty");
    }
    for (int n : n_per_class) {
        if (n <= 0) {
            throw ValidationError("cohort spec: every class needs at least one subject");
        }
    }
    if (n_rois < 2) {
        throw ValidationError("cohort spec: n_rois must be at least 2");
    }
    if (n_communities < 1 || n_communities > n_rois) {
        throw ValidationError("cohort spec: n_communities must be in [1, n_rois]");
    }
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
        throw ValidationError("cohort spec: noise_sigma must be finite and nonnegative");
    }
    const int classes = static_cast<int>(n_per_class.size());
    for (const PlantedEdge& e : planted_edges) {
        if (e.i < 0 || e.j >= n_rois || e.i >= e.j) {
            throw ValidationError("cohort spec: planted edge (" + std::to_string(e.i) + ", " +
                                  std::to_string(e.j) + ") must satisfy 0 <= i < j < n_rois");
        }
        if (static_cast<int>(e.deltas.size()) != classes) {
            throw ValidationError("cohort spec: planted edge needs one delta per class");
        }
        for (double d : e.deltas) {
            if (!std::isfinite(d)) {
                throw ValidationError("cohort spec: planted delta not finite");
            }
        }
    }
}

Tensor3 adjacency_tensor(const Subject& s) {
    const Matrix fc_abs = s.fc.cwiseAbs();
    return Tensor3::from_real_slices({s.sc, fc_abs, s.sc.cwiseProduct(fc_abs)});
}

int class_count(const Cohort& cohort) {
    int classes = 0;
    for (const Subject& s : cohort) {
        classes = std::max(classes, s.label + 1);
    }
    return classes;
}

Cohort make_cohort(const CohortSpec& spec) {
    spec.validate();
    const Eigen::Index n = spec.n_rois;

    Cohort cohort;
    int index = 0;
    for (int label = 0; label < static_cast<int>(spec.n_per_class.size()); ++label) {
        for (int s = 0; s < spec.n_per_class[static_cast<std::size_t>(label)]; ++s, ++index) {
            auto rng = make_rng(spec.seed, static_cast<std::uint64_t>(index) + 1);
            std::normal_distribution<double> jitter(0.0, kEdgeSigma);

            Matrix sc = Matrix::Zero(n, n);
            for (Eigen::Index i = 0; i < n; ++i) {
                for (Eigen::Index j = i + 1; j < n; ++j) {
                    const bool within =
                        community_of(static_cast<int>(i), spec.n_rois, spec.n_communities) ==
                        community_of(static_cast<int>(j), spec.n_rois, spec.n_communities);
                    const double mu = within ? kMuIn : kMuOut;
                    const double w = std::abs(mu + jitter(rng));
                    sc(i, j) = w;
                    sc(j, i) = w;
                }
            }
            for (const PlantedEdge& e : spec.planted_edges) {
                const double w =
                    std::max(0.0, sc(e.i, e.j) + e.deltas[static_cast<std::size_t>(label)]);
                sc(e.i, e.j) = w;
                sc(e.j, e.i) = w;
            }

            Subject subj;
            char id[16];
            std::snprintf(id, sizeof(id), "s%04d", index);
            subj.id = id;
            subj.label = label;
            subj.sc = std::move(sc);
            subj.fc = simulate_fc(subj.sc, spec.noise_sigma, rng);
            subj.feats = row_statistics(adjacency_tensor(subj));
            cohort.push_back(std::move(subj));
        }
    }
    return cohort;
}

void save_cohort(const std::string& dir, const Cohort& cohort) {
    if (cohort.empty()) {
        throw ValidationError("save_cohort: empty cohort");
    }
    const fs::path root(dir);
    fs::create_directories(root);

    json manifest;
    manifest["schema_version"] = 1;
    manifest["n_rois"] = cohort.front().sc.rows();
    manifest["feat_dim"] = kFeatureDim;
    manifest["n_slices"] = kModalitySlices;
    manifest["subjects"] = json::array();

    for (const Subject& s : cohort) {
        check_subject(s, cohort.front().sc.rows());
        const std::string sc_name = "sc_" + s.id + ".csv";
        const std::string fc_name = "fc_" + s.id + ".csv";
        write_matrix_csv(root / sc_name, s.sc);
        write_matrix_csv(root / fc_name, s.fc);
        json feats = json::array();
        for (Eigen::Index k = 0; k < s.feats.num_slices(); ++k) {
            const std::string name = "feat_" + s.id + "_" + std::to_string(k) + ".csv";
            write_matrix_csv(root / name, s.feats.real_slice(k));
            feats.push_back(name);
        }
        manifest["subjects"].push_back(
            {{"id", s.id}, {"label", s.label}, {"sc", sc_name}, {"fc", fc_name}, {"feats", feats}});
    }

    std::ofstream out(root / "manifest");
    if (!out) {
        throw ValidationError("cannot write manifest in " + dir);
    }
    out << manifest.dump(2) << '\n';
}

Cohort load_cohort(const std::string& dir) {
    const fs::path root(dir);
    std::ifstream in(root / "manifest");
    if (!in) {
        throw ValidationError("missing file: " + (root / "manifest").string());
    }
    json manifest;
    try {
        in >> manifest;
    } catch (const std::exception& e) {
        throw ValidationError("malformed manifest in " + dir + ": " + e.what());
    }
    if (!manifest.contains("schema_version") || manifest["schema_version"] != 1) {
        throw ValidationError("manifest: unsupported schema_version");
    }
    const Eigen::Index n_rois = manifest.at("n_rois").get<Eigen::Index>();

    Cohort cohort;
    for (const json& entry : manifest.at("subjects")) {
        Subject s;
        s.id = entry.at("id").get<std::string>();
        s.label = entry.at("label").get<int>();
        s.sc = read_matrix_csv(root / entry.at("sc").get<std::string>());
        s.fc = read_matrix_csv(root / entry.at("fc").get<std::string>());
        std::vector<Matrix> feat_slices;
        for (const json& name : entry.at("feats")) {
            feat_slices.push_back(read_matrix_csv(root / name.get<std::string>()));
        }
        for (const Matrix& f : feat_slices) {
            if (f.rows() != n_rois || f.cols() != kFeatureDim) {
                throw ValidationError("subject " + s.id + ": feature file has the wrong shape");
            }
        }
        if (static_cast<Eigen::Index>(feat_slices.size()) != kModalitySlices) {
            throw ValidationError("subject " + s.id + ": wrong number of feature slices");
        }
        s.feats = Tensor3::from_real_slices(std::move(feat_slices));
        check_subject(s, n_rois);
        cohort.push_back(std::move(s));
    }
    if (cohort.empty()) {
        throw ValidationError("manifest: no subjects");
    }
    return cohort;
}

}  // namespace bggan
