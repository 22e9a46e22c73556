#include "bggan/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>

#include "bggan/errors.hpp"

namespace bggan {
namespace {

std::string format_value(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw ValidationError("cannot open for writing: " + path);
    }
    return out;
}

// Continued fraction for the incomplete beta (modified Lentz).
double beta_continued_fraction(double a, double b, double x) {
    constexpr int kMaxIter = 300;
    constexpr double kEps = 1e-15;
    constexpr double kTiny = 1e-300;

    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < kTiny) {
        d = kTiny;
    }
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) {
            d = kTiny;
        }
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) {
            c = kTiny;
        }
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) {
            d = kTiny;
        }
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) {
            c = kTiny;
        }
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEps) {
            return h;
        }
    }
    throw NumericalError("incomplete beta continued fraction did not converge");
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
    if (!(a > 0.0) || !(b > 0.0)) {
        throw ValidationError("regularized_incomplete_beta: a and b must be positive");
    }
    if (!(x >= 0.0 && x <= 1.0)) {
        throw ValidationError("regularized_incomplete_beta: x must lie in [0, 1]");
    }
    if (x == 0.0) {
        return 0.0;
    }
    if (x == 1.0) {
        return 1.0;
    }
    const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                            a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) {
        return front * beta_continued_fraction(a, b, x) / a;
    }
    return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_two_sided_p(double t, double df) {
    if (!(df > 0.0)) {
        throw ValidationError("student_t_two_sided_p: df must be positive");
    }
    if (std::isinf(t)) {
        return 0.0;
    }
    const double x = df / (df + t * t);
    return regularized_incomplete_beta(df / 2.0, 0.5, x);
}

Metrics metrics(const ConfusionCounts& c) {
    if (c.tp < 0 || c.fp < 0 || c.fn < 0 || c.tn < 0) {
        throw ValidationError("metrics: negative confusion counts");
    }
    Metrics m;
    const long total = c.tp + c.fp + c.fn + c.tn;
    if (total > 0) {
        m.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(total);
    }
    if (c.tp + c.fn > 0) {
        m.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
    }
    if (c.tp + c.fp > 0) {
        m.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
    }
    if (m.recall && m.precision && (*m.recall + *m.precision) > 0.0) {
        m.f1 = 2.0 * *m.precision * *m.recall / (*m.precision + *m.recall);
    }
    return m;
}

long count_connections(const Matrix& m, double threshold) {
    long count = 0;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = i + 1; j < m.cols(); ++j) {
            if (std::abs(m(i, j)) > threshold) {
                ++count;
            }
        }
    }
    return count;
}

std::vector<EdgeStat> edge_ttests(const std::vector<Matrix>& group_a,
                                  const std::vector<Matrix>& group_b) {
    if (group_a.size() < 2 || group_b.size() < 2) {
        throw ValidationError("edge_ttests: each group needs at least two matrices");
    }
    const Eigen::Index n = group_a.front().rows();
    for (const auto* group : {&group_a, &group_b}) {
        for (const Matrix& m : *group) {
            if (m.rows() != n || m.cols() != n) {
                throw ValidationError("edge_ttests: inconsistent matrix sizes");
            }
        }
    }
    const double na = static_cast<double>(group_a.size());
    const double nb = static_cast<double>(group_b.size());

    std::vector<EdgeStat> stats;
    stats.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            double ma = 0.0, mb = 0.0;
            for (const Matrix& m : group_a) {
                ma += m(i, j);
            }
            for (const Matrix& m : group_b) {
                mb += m(i, j);
            }
            ma /= na;
            mb /= nb;
            double va = 0.0, vb = 0.0;
            for (const Matrix& m : group_a) {
                va += (m(i, j) - ma) * (m(i, j) - ma);
            }
            for (const Matrix& m : group_b) {
                vb += (m(i, j) - mb) * (m(i, j) - mb);
            }
            va /= na - 1.0;
            vb /= nb - 1.0;

            EdgeStat e;
            e.i = static_cast<int>(i);
            e.j = static_cast<int>(j);
            const double se2 = va / na + vb / nb;
            if (se2 == 0.0) {
                if (ma == mb) {
                    e.t_value = 0.0;
                    e.p_value = 1.0;
                } else {
                    e.t_value = ma > mb ? std::numeric_limits<double>::infinity()
                                        : -std::numeric_limits<double>::infinity();
                    e.p_value = 0.0;
                }
            } else {
                e.t_value = (ma - mb) / std::sqrt(se2);
                const double df = se2 * se2 /
                                  (va * va / (na * na * (na - 1.0)) +
                                   vb * vb / (nb * nb * (nb - 1.0)));
                e.p_value = student_t_two_sided_p(e.t_value, df);
            }
            stats.push_back(e);
        }
    }
    return stats;
}

TopAbnormal top_k_abnormal(const std::vector<EdgeStat>& stats, int k, double alpha) {
    if (stats.empty()) {
        throw ValidationError("top_k_abnormal: empty statistics list");
    }
    TopAbnormal out;
    for (const EdgeStat& e : stats) {
        if (e.p_value < alpha) {
            out.edges.push_back(e);
        }
    }
    out.total_significant = static_cast<long>(out.edges.size());
    std::sort(out.edges.begin(), out.edges.end(), [](const EdgeStat& a, const EdgeStat& b) {
        if (a.p_value != b.p_value) {
            return a.p_value < b.p_value;
        }
        return std::pair(a.i, a.j) < std::pair(b.i, b.j);
    });
    if (static_cast<int>(out.edges.size()) > k) {
        out.edges.resize(static_cast<std::size_t>(k));
    }
    return out;
}

Recurrence cross_experiment_recurrence(const std::vector<std::vector<EdgeStat>>& reports) {
    if (reports.size() < 2) {
        throw ValidationError("cross_experiment_recurrence: needs at least two reports");
    }
    std::map<std::pair<int, int>, int> edge_counts;
    std::map<int, int> node_counts;
    for (const auto& report : reports) {
        std::map<std::pair<int, int>, bool> seen_edge;
        std::map<int, bool> seen_node;
        for (const EdgeStat& e : report) {
            seen_edge[{e.i, e.j}] = true;
            seen_node[e.i] = true;
            seen_node[e.j] = true;
        }
        for (const auto& [edge, _] : seen_edge) {
            ++edge_counts[edge];
        }
        for (const auto& [node, _] : seen_node) {
            ++node_counts[node];
        }
    }

    Recurrence r;
    for (const auto& [edge, count] : edge_counts) {
        r.edges.push_back({edge.first, edge.second, count});
    }
    for (const auto& [node, count] : node_counts) {
        r.nodes.push_back({node, count});
    }
    std::stable_sort(r.edges.begin(), r.edges.end(),
                     [](const EdgeCount& a, const EdgeCount& b) { return a.count > b.count; });
    std::stable_sort(r.nodes.begin(), r.nodes.end(),
                     [](const NodeCount& a, const NodeCount& b) { return a.count > b.count; });
    return r;
}

void write_metrics_csv(const std::string& path,
                       const std::vector<std::pair<std::string, Metrics>>& rows) {
    auto out = open_out(path);
    out << "name,accuracy,recall,precision,f1\n";
    auto cell = [](const std::optional<double>& v) {
        return v ? format_value(*v) : std::string("undefined");
    };
    for (const auto& [name, m] : rows) {
        out << name << ',' << cell(m.accuracy) << ',' << cell(m.recall) << ','
            << cell(m.precision) << ',' << cell(m.f1) << '\n';
    }
}

void write_edge_stats_csv(const std::string& path, const std::vector<EdgeStat>& stats) {
    auto out = open_out(path);
    out << "i,j,t,p\n";
    for (const EdgeStat& e : stats) {
        out << e.i << ',' << e.j << ',' << format_value(e.t_value) << ','
            << format_value(e.p_value) << '\n';
    }
}

void write_recurrence_csv(const std::string& path, const Recurrence& r) {
    auto out = open_out(path);
    out << "kind,i,j,count\n";
    for (const EdgeCount& e : r.edges) {
        out << "edge," << e.i << ',' << e.j << ',' << e.count << '\n';
    }
    for (const NodeCount& n : r.nodes) {
        out << "node," << n.node << ",," << n.count << '\n';
    }
}

void write_series_csv(const std::string& path, const std::string& x_label,
                      const std::string& y_label,
                      const std::vector<std::pair<double, double>>& series) {
    auto out = open_out(path);
    out << x_label << ',' << y_label << '\n';
    for (const auto& [x, y] : series) {
        out << format_value(x) << ',' << format_value(y) << '\n';
    }
}

}  // namespace bggan
