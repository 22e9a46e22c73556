#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bggan/tensor.hpp"

namespace bggan {

struct ConfusionCounts {
    long tp = 0, fp = 0, fn = 0, tn = 0;
};

/// Metrics with zero denominators are reported as absent, never as zero.
struct Metrics {
    std::optional<double> accuracy, recall, precision, f1;
};

Metrics metrics(const ConfusionCounts& c);

/// Upper-triangular (i < j) entries with |value| above the threshold.
long count_connections(const Matrix& m, double threshold);

struct EdgeStat {
    int i = 0, j = 0;
    double t_value = 0.0;
    double p_value = 1.0;
};

/// Per-edge Welch unequal-variance two-sample t statistics with two-sided
/// p-values (Welch-Satterthwaite degrees of freedom, regularized incomplete
/// beta CDF). Edges with zero variance in both groups and equal means get
/// t = 0, p = 1.
std::vector<EdgeStat> edge_ttests(const std::vector<Matrix>& group_a,
                                  const std::vector<Matrix>& group_b);

struct TopAbnormal {
    std::vector<EdgeStat> edges;   // p < alpha, ascending p, truncated to k
    long total_significant = 0;    // survivors before truncation
};

TopAbnormal top_k_abnormal(const std::vector<EdgeStat>& stats, int k = 30, double alpha = 0.05);

struct EdgeCount {
    int i = 0, j = 0, count = 0;
};
struct NodeCount {
    int node = 0, count = 0;
};
struct Recurrence {
    std::vector<EdgeCount> edges;  // descending count, ties ascending (i, j)
    std::vector<NodeCount> nodes;  // descending count, ties ascending node
};

/// How often each edge (and each endpoint node) appears across several ranked
/// reports; an edge counts once per report.
Recurrence cross_experiment_recurrence(const std::vector<std::vector<EdgeStat>>& reports);

/// Continued-fraction regularized incomplete beta I_x(a, b).
double regularized_incomplete_beta(double a, double b, double x);

/// P(|T| > |t|) for Student's t with df degrees of freedom.
double student_t_two_sided_p(double t, double df);

// Report emission ------------------------------------------------------------

void write_metrics_csv(const std::string& path,
                       const std::vector<std::pair<std::string, Metrics>>& rows);
void write_edge_stats_csv(const std::string& path, const std::vector<EdgeStat>& stats);
void write_recurrence_csv(const std::string& path, const Recurrence& r);

/// Two-column plot-data series.
void write_series_csv(const std::string& path, const std::string& x_label,
                      const std::string& y_label,
                      const std::vector<std::pair<double, double>>& series);

}  // namespace bggan
