#pragma once

#include <random>
#include <vector>

#include "bggan/spectral.hpp"
#include "bggan/tensor.hpp"

namespace bggan {

using Vector = Eigen::VectorXd;

/// One learnable buffer: value plus gradient plus Adam moments, all flat and
/// shape-tagged. Matrices use slices == 1; InnerGCN kernels are N x D x R.
struct Param {
    Vector value, grad, m, v;
    Eigen::Index rows = 0, cols = 0, slices = 1;
    long step_count = 0;

    static Param zeros(Eigen::Index rows, Eigen::Index cols, Eigen::Index slices = 1);

    Eigen::Index size() const { return rows * cols * slices; }

    Eigen::Map<Matrix> mat(Eigen::Index s = 0);
    Eigen::Map<const Matrix> mat(Eigen::Index s = 0) const;
    Eigen::Map<Matrix> grad_mat(Eigen::Index s = 0);

    Tensor3 tensor() const;
    void set_tensor(const Tensor3& t);
    void add_tensor_grad(const Tensor3& t);
};

/// Bias-corrected Adam. Consumes and zeroes the gradient.
void adam_step(Param& p, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

void glorot_init(Param& p, std::mt19937_64& rng);
void gaussian_init(Param& p, double stddev, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// GCN layer: out = relu(norm(adj + I) x w), norm = D^{-1/2} (.) D^{-1/2}.

struct GcnCache {
    Matrix s;     // normalized adjacency with self-loops
    Vector deg;   // row sums of adj + I
    Matrix x;     // layer input
    Matrix w;     // weights at forward time
    Matrix sx;    // s * x
    Matrix pre;   // pre-activation
    bool relu = true;
    bool valid = false;
};

Matrix gcn_forward(const Matrix& x, const Matrix& adj, const Matrix& w, GcnCache& cache,
                   bool relu = true);

struct GcnGrads {
    Matrix dx, dadj, dw;
};

/// Gradients w.r.t. input features, raw adjacency entries (treated as
/// independent, so finite differences on single entries agree), and weights.
GcnGrads gcn_backward(const GcnCache& cache, const Matrix& grad_out);

// ---------------------------------------------------------------------------
// InnerGCN: x * g = inverse-transform((U <> x) (.) (U <> g)) with the Hadamard
// product taken in the original (slice) domain. The basis is a constant of the
// layer; no gradient flows into it.

struct InnerGcnCache {
    Tensor3 p, q;  // U <> x and U <> g
    const SpectralBasis* basis = nullptr;
    bool valid = false;
};

Tensor3 innergcn_forward(const Tensor3& x, const Tensor3& g, const SpectralBasis& basis,
                         InnerGcnCache& cache);

struct InnerGcnGrads {
    Tensor3 dx, dg;
};

InnerGcnGrads innergcn_backward(const InnerGcnCache& cache, const Tensor3& grad_out);

/// idft3(hat_slices[k] * dft3(x)(k)); the building block of InnerGCN. Input
/// and output are real tensors (the hat slices must be conjugate-mirror
/// symmetric, as SpectralBasis guarantees).
Tensor3 basis_apply(const std::vector<CMatrix>& hat_slices, const Tensor3& x);

/// Adjoint of basis_apply under the real inner product: uses hat_slices[k]^H.
Tensor3 basis_apply_adjoint(const std::vector<CMatrix>& hat_slices, const Tensor3& y);

// ---------------------------------------------------------------------------
// Dense + softmax classifier pieces.

Vector dense_softmax_forward(const Vector& f, const Matrix& w, const Vector& b);

/// -log p[label], probabilities clamped at 1e-12.
double cross_entropy(const Vector& probs, int label);

struct DenseSoftmaxGrads {
    Vector dfeat;
    Matrix dw;
    Vector db;
};

/// Closed-form gradient of cross_entropy(dense_softmax_forward(f, w, b), label).
DenseSoftmaxGrads dense_softmax_backward(const Vector& f, const Matrix& w, const Vector& probs,
                                         int label);

/// Two-layer head: dense -> relu -> (dropout when training) -> dense -> softmax.
struct ClassifierParams {
    Param w1, b1, w2, b2;
};

ClassifierParams make_classifier(Eigen::Index in_dim, Eigen::Index hidden, Eigen::Index classes,
                                 std::mt19937_64& rng);

struct ClassifierCache {
    Vector f, h_pre, h, probs;
    Vector keep;  // dropout keep mask scaled by 1/(1-rate); ones at inference
    bool valid = false;
};

Vector classifier_forward(const Vector& f, const ClassifierParams& p, ClassifierCache& cache,
                          bool train, double dropout, std::mt19937_64& rng);

/// Accumulates cross-entropy gradients (scaled by weight) into the params and
/// returns the gradient w.r.t. the input features.
Vector classifier_backward(const ClassifierCache& cache, ClassifierParams& p, int label,
                           double weight);

// ---------------------------------------------------------------------------
// Discriminator: two GCN layers, mean pool over nodes, dense to a raw score.

struct DiscParams {
    Param w1, w2, wout, bout;
};

DiscParams make_discriminator(Eigen::Index feat_dim, Eigen::Index hidden, std::mt19937_64& rng);

struct DiscCache {
    GcnCache g1, g2;
    Matrix h2;
    Vector pooled;
    bool valid = false;
};

double discriminator_forward(const Matrix& adj, const Matrix& feats, const DiscParams& p,
                             DiscCache& cache);

struct DiscInputGrads {
    Matrix dadj, dfeats;
};

/// Backpropagates dscore through the critic. Parameter gradients are
/// accumulated only when update_params is set (the generator and Balancer
/// losses differentiate through a frozen critic).
DiscInputGrads discriminator_backward(const DiscCache& cache, DiscParams& p, double dscore,
                                      bool update_params);

// ---------------------------------------------------------------------------
// Balancer: 2-channel 3x3 conv stack (2 -> 8 -> 1, relu between), skip
// connection adding the real target, symmetrized output.

struct BalancerParams {
    Param k1, b1, k2, b2;  // kernels stored out_ch x (in_ch * 9)
};

BalancerParams make_balancer(std::mt19937_64& rng);

struct BalancerCache {
    std::vector<Matrix> input;  // the two stacked channels
    std::vector<Matrix> h_pre, h;
    bool valid = false;
};

Matrix balancer_forward(const Matrix& real_target, const Matrix& other_domain,
                        const BalancerParams& p, BalancerCache& cache);

/// Accumulates parameter gradients; input gradients are not produced (the
/// Balancer's inputs are data, not learnable).
void balancer_backward(const BalancerCache& cache, BalancerParams& p, const Matrix& grad_out);

}  // namespace bggan
