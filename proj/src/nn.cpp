#include "bggan/nn.hpp"

#include <cmath>
#include <string>

#include "bggan/errors.hpp"

namespace bggan {

// ---------------------------------------------------------------------------
// Param

Param Param::zeros(Eigen::Index rows, Eigen::Index cols, Eigen::Index slices) {
    if (rows <= 0 || cols <= 0 || slices <= 0) throw ValidationError("Param: dims must be positive");
    Param p;
    p.rows = rows;
    p.cols = cols;
    p.slices = slices;
    p.value = Vector::Zero(p.size());
    p.grad = Vector::Zero(p.size());
    p.m = Vector::Zero(p.size());
    p.v = Vector::Zero(p.size());
    return p;
}

Eigen::Map<Matrix> Param::mat(Eigen::Index s) {
    return Eigen::Map<Matrix>(value.data() + s * rows * cols, rows, cols);
}

Eigen::Map<const Matrix> Param::mat(Eigen::Index s) const {
    return Eigen::Map<const Matrix>(value.data() + s * rows * cols, rows, cols);
}

Eigen::Map<Matrix> Param::grad_mat(Eigen::Index s) {
    return Eigen::Map<Matrix>(grad.data() + s * rows * cols, rows, cols);
}

Tensor3 Param::tensor() const {
    std::vector<Matrix> slices_out;
    slices_out.reserve(static_cast<std::size_t>(slices));
    for (Eigen::Index s = 0; s < slices; ++s) slices_out.push_back(mat(s));
    return Tensor3::from_real_slices(std::move(slices_out));
}

void Param::set_tensor(const Tensor3& t) {
    if (t.rows() != rows || t.cols() != cols || t.num_slices() != slices)
        throw ValidationError("Param::set_tensor: shape mismatch");
    for (Eigen::Index s = 0; s < slices; ++s) mat(s) = t.slice(s).real();
}

void Param::add_tensor_grad(const Tensor3& t) {
    if (t.rows() != rows || t.cols() != cols || t.num_slices() != slices)
        throw ValidationError("Param::add_tensor_grad: shape mismatch");
    for (Eigen::Index s = 0; s < slices; ++s) grad_mat(s) += t.slice(s).real();
}

void adam_step(Param& p, double lr, double beta1, double beta2, double eps) {
    p.step_count += 1;
    const auto t = static_cast<double>(p.step_count);
    p.m = beta1 * p.m + (1.0 - beta1) * p.grad;
    p.v = beta2 * p.v + (1.0 - beta2) * p.grad.cwiseProduct(p.grad);
    const double c1 = 1.0 - std::pow(beta1, t);
    const double c2 = 1.0 - std::pow(beta2, t);
    p.value.array() -= lr * (p.m.array() / c1) / ((p.v.array() / c2).sqrt() + eps);
    p.grad.setZero();
}

void glorot_init(Param& p, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(p.rows + p.cols));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (Eigen::Index i = 0; i < p.size(); ++i) p.value(i) = dist(rng);
}

void gaussian_init(Param& p, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (Eigen::Index i = 0; i < p.size(); ++i) p.value(i) = dist(rng);
}

// ---------------------------------------------------------------------------
// GCN

Matrix gcn_forward(const Matrix& x, const Matrix& adj, const Matrix& w, GcnCache& cache,
                   bool relu) {
    if (adj.rows() != adj.cols() || adj.rows() != x.rows() || x.cols() != w.rows())
        throw ValidationError("gcn_forward: shape mismatch");
    const Eigen::Index n = adj.rows();

    Matrix ahat = adj + Matrix::Identity(n, n);
    cache.deg = ahat.rowwise().sum();
    Vector dinv(n);
    for (Eigen::Index i = 0; i < n; ++i)
        dinv(i) = cache.deg(i) > 0.0 ? 1.0 / std::sqrt(cache.deg(i)) : 0.0;

    cache.s = dinv.asDiagonal() * ahat * dinv.asDiagonal();
    cache.x = x;
    cache.w = w;
    cache.sx = cache.s * x;
    cache.pre = cache.sx * w;
    cache.relu = relu;
    cache.valid = true;
    return relu ? cache.pre.cwiseMax(0.0) : cache.pre;
}

GcnGrads gcn_backward(const GcnCache& cache, const Matrix& grad_out) {
    if (!cache.valid) throw ValidationError("gcn_backward: stale cache");
    if (grad_out.rows() != cache.pre.rows() || grad_out.cols() != cache.pre.cols())
        throw ValidationError("gcn_backward: gradient shape mismatch");

    const Matrix dpre =
        cache.relu ? (cache.pre.array() > 0.0).select(grad_out, Matrix::Zero(grad_out.rows(), grad_out.cols()))
                   : grad_out;

    GcnGrads g;
    g.dw = cache.sx.transpose() * dpre;
    const Matrix dprew = dpre * cache.w.transpose();  // gradient of s*x
    g.dx = cache.s.transpose() * dprew;

    const Matrix ds = dprew * cache.x.transpose();

    // S_pq = Ahat_pq / sqrt(d_p d_q) with d depending on row sums of Ahat;
    // differentiating through both the entry and the degrees gives
    //   dA_pq = dS_pq / sqrt(d_p d_q) - (rowsum_p + colsum_p)(dS (.) S) / (2 d_p).
    const Eigen::Index n = ds.rows();
    Vector dinv(n);
    for (Eigen::Index i = 0; i < n; ++i)
        dinv(i) = cache.deg(i) > 0.0 ? 1.0 / std::sqrt(cache.deg(i)) : 0.0;
    const Matrix dss = ds.cwiseProduct(cache.s);
    Vector rowcol = dss.rowwise().sum() + dss.colwise().sum().transpose();
    Vector degterm(n);
    for (Eigen::Index i = 0; i < n; ++i)
        degterm(i) = cache.deg(i) > 0.0 ? rowcol(i) / (2.0 * cache.deg(i)) : 0.0;
    g.dadj = dinv.asDiagonal() * ds * dinv.asDiagonal();
    g.dadj.colwise() -= degterm;
    return g;
}

// ---------------------------------------------------------------------------
// InnerGCN

namespace {

Tensor3 hadamard(const Tensor3& a, const Tensor3& b) {
    if (!a.same_shape(b)) throw ValidationError("hadamard: shape mismatch");
    std::vector<Matrix> slices;
    slices.reserve(static_cast<std::size_t>(a.num_slices()));
    for (Eigen::Index k = 0; k < a.num_slices(); ++k)
        slices.push_back(a.slice(k).real().cwiseProduct(b.slice(k).real()));
    return Tensor3::from_real_slices(std::move(slices));
}

Tensor3 apply_hat(const std::vector<CMatrix>& hat, const Tensor3& x, bool adjoint,
                  const char* who) {
    if (hat.empty() || static_cast<Eigen::Index>(hat.size()) != x.num_slices())
        throw ValidationError(std::string(who) + ": frequency count mismatch");
    const Eigen::Index want = adjoint ? hat[0].rows() : hat[0].cols();
    if (x.rows() != want) throw ValidationError(std::string(who) + ": row dimension mismatch");

    Tensor3 xh = dft3(x);
    Tensor3 yh(adjoint ? hat[0].cols() : hat[0].rows(), x.cols(), x.num_slices(), false);
    for (Eigen::Index k = 0; k < x.num_slices(); ++k) {
        const auto& hk = hat[static_cast<std::size_t>(k)];
        yh.mutable_slice(k) = adjoint ? (hk.adjoint() * xh.slice(k)).eval() : (hk * xh.slice(k)).eval();
    }
    Tensor3 y = idft3(yh);
    if (!y.zero_small_imag(1e-8))
        throw NumericalError(std::string(who) + ": output has imaginary residue above 1e-8");
    return y;
}

}  // namespace

Tensor3 basis_apply(const std::vector<CMatrix>& hat_slices, const Tensor3& x) {
    return apply_hat(hat_slices, x, false, "basis_apply");
}

Tensor3 basis_apply_adjoint(const std::vector<CMatrix>& hat_slices, const Tensor3& y) {
    return apply_hat(hat_slices, y, true, "basis_apply_adjoint");
}

Tensor3 innergcn_forward(const Tensor3& x, const Tensor3& g, const SpectralBasis& basis,
                         InnerGcnCache& cache) {
    if (!x.same_shape(g)) throw ValidationError("innergcn_forward: x and g shapes differ");
    if (x.rows() != basis.u.rows() || x.num_slices() != basis.u.num_slices())
        throw ValidationError("innergcn_forward: basis dimension mismatch");
    cache.p = basis_apply(basis.u_hat, x);
    cache.q = basis_apply(basis.u_hat, g);
    cache.basis = &basis;
    cache.valid = true;
    return basis_apply(basis.u_inv_hat, hadamard(cache.p, cache.q));
}

InnerGcnGrads innergcn_backward(const InnerGcnCache& cache, const Tensor3& grad_out) {
    if (!cache.valid || cache.basis == nullptr)
        throw ValidationError("innergcn_backward: stale cache");
    Tensor3 dh = basis_apply_adjoint(cache.basis->u_inv_hat, grad_out);
    InnerGcnGrads g;
    g.dx = basis_apply_adjoint(cache.basis->u_hat, hadamard(dh, cache.q));
    g.dg = basis_apply_adjoint(cache.basis->u_hat, hadamard(dh, cache.p));
    return g;
}

// ---------------------------------------------------------------------------
// Dense + softmax

Vector dense_softmax_forward(const Vector& f, const Matrix& w, const Vector& b) {
    if (w.rows() != f.size() || w.cols() != b.size())
        throw ValidationError("dense_softmax_forward: shape mismatch");
    Vector logits = w.transpose() * f + b;
    const double mx = logits.maxCoeff();
    Vector e = (logits.array() - mx).exp();
    return e / e.sum();
}

double cross_entropy(const Vector& probs, int label) {
    if (label < 0 || label >= probs.size())
        throw ValidationError("cross_entropy: label out of range");
    return -std::log(std::max(probs(label), 1e-12));
}

DenseSoftmaxGrads dense_softmax_backward(const Vector& f, const Matrix& w, const Vector& probs,
                                         int label) {
    if (label < 0 || label >= probs.size())
        throw ValidationError("dense_softmax_backward: label out of range");
    Vector dlogits = probs;
    dlogits(label) -= 1.0;
    DenseSoftmaxGrads g;
    g.dw = f * dlogits.transpose();
    g.db = dlogits;
    g.dfeat = w * dlogits;
    return g;
}

ClassifierParams make_classifier(Eigen::Index in_dim, Eigen::Index hidden, Eigen::Index classes,
                                 std::mt19937_64& rng) {
    ClassifierParams p;
    p.w1 = Param::zeros(in_dim, hidden);
    p.b1 = Param::zeros(hidden, 1);
    p.w2 = Param::zeros(hidden, classes);
    p.b2 = Param::zeros(classes, 1);
    glorot_init(p.w1, rng);
    glorot_init(p.w2, rng);
    return p;
}

Vector classifier_forward(const Vector& f, const ClassifierParams& p, ClassifierCache& cache,
                          bool train, double dropout, std::mt19937_64& rng) {
    if (f.size() != p.w1.rows) throw ValidationError("classifier_forward: feature width mismatch");
    cache.f = f;
    cache.h_pre = p.w1.mat().transpose() * f + p.b1.value;
    Vector h = cache.h_pre.cwiseMax(0.0);
    cache.keep = Vector::Ones(h.size());
    if (train && dropout > 0.0) {
        std::bernoulli_distribution drop(dropout);
        for (Eigen::Index i = 0; i < h.size(); ++i)
            cache.keep(i) = drop(rng) ? 0.0 : 1.0 / (1.0 - dropout);
    }
    cache.h = h.cwiseProduct(cache.keep);
    cache.probs = dense_softmax_forward(cache.h, p.w2.mat(), p.b2.value);
    cache.valid = true;
    return cache.probs;
}

Vector classifier_backward(const ClassifierCache& cache, ClassifierParams& p, int label,
                           double weight) {
    if (!cache.valid) throw ValidationError("classifier_backward: stale cache");
    Vector dlogits = cache.probs;
    dlogits(label) -= 1.0;
    dlogits *= weight;

    p.w2.grad_mat() += cache.h * dlogits.transpose();
    p.b2.grad += dlogits;

    Vector dh = (p.w2.mat() * dlogits).cwiseProduct(cache.keep);
    Vector dh_pre = (cache.h_pre.array() > 0.0).select(dh, Vector::Zero(dh.size()));

    p.w1.grad_mat() += cache.f * dh_pre.transpose();
    p.b1.grad += dh_pre;
    return p.w1.mat() * dh_pre;
}

// ---------------------------------------------------------------------------
// Discriminator

DiscParams make_discriminator(Eigen::Index feat_dim, Eigen::Index hidden, std::mt19937_64& rng) {
    DiscParams p;
    p.w1 = Param::zeros(feat_dim, hidden);
    p.w2 = Param::zeros(hidden, hidden);
    p.wout = Param::zeros(hidden, 1);
    p.bout = Param::zeros(1, 1);
    glorot_init(p.w1, rng);
    glorot_init(p.w2, rng);
    glorot_init(p.wout, rng);
    return p;
}

double discriminator_forward(const Matrix& adj, const Matrix& feats, const DiscParams& p,
                             DiscCache& cache) {
    Matrix h1 = gcn_forward(feats, adj, p.w1.mat(), cache.g1, true);
    cache.h2 = gcn_forward(h1, adj, p.w2.mat(), cache.g2, true);
    cache.pooled = cache.h2.colwise().mean().transpose();
    cache.valid = true;
    return cache.pooled.dot(p.wout.value) + p.bout.value(0);
}

DiscInputGrads discriminator_backward(const DiscCache& cache, DiscParams& p, double dscore,
                                      bool update_params) {
    if (!cache.valid) throw ValidationError("discriminator_backward: stale cache");
    if (update_params) {
        p.wout.grad += dscore * cache.pooled;
        p.bout.grad(0) += dscore;
    }
    const Eigen::Index n = cache.h2.rows();
    Matrix dh2 = (dscore / static_cast<double>(n)) *
                 (Matrix::Ones(n, 1) * p.wout.value.transpose());

    GcnGrads g2 = gcn_backward(cache.g2, dh2);
    if (update_params) p.w2.grad_mat() += g2.dw;
    GcnGrads g1 = gcn_backward(cache.g1, g2.dx);
    if (update_params) p.w1.grad_mat() += g1.dw;

    return {g1.dadj + g2.dadj, g1.dx};
}

// ---------------------------------------------------------------------------
// Balancer

namespace {

// 3x3 same-padding cross-correlation; kernels stored out_ch x (in_ch*9) with
// column index c*9 + (dy+1)*3 + (dx+1).
std::vector<Matrix> conv3x3(const std::vector<Matrix>& in, const Param& k, const Param& b) {
    const Eigen::Index oc = k.rows;
    const auto ic = static_cast<Eigen::Index>(in.size());
    const Eigen::Index n = in[0].rows(), m = in[0].cols();
    auto km = k.mat();

    std::vector<Matrix> out;
    out.reserve(static_cast<std::size_t>(oc));
    for (Eigen::Index o = 0; o < oc; ++o) {
        Matrix acc = Matrix::Constant(n, m, b.value(o));
        for (Eigen::Index c = 0; c < ic; ++c)
            for (Eigen::Index dy = -1; dy <= 1; ++dy)
                for (Eigen::Index dx = -1; dx <= 1; ++dx) {
                    const double wv = km(o, c * 9 + (dy + 1) * 3 + (dx + 1));
                    const Eigen::Index r0 = std::max<Eigen::Index>(0, -dy);
                    const Eigen::Index c0 = std::max<Eigen::Index>(0, -dx);
                    const Eigen::Index h = n - std::abs(dy);
                    const Eigen::Index w = m - std::abs(dx);
                    acc.block(r0, c0, h, w) +=
                        wv * in[static_cast<std::size_t>(c)].block(r0 + dy, c0 + dx, h, w);
                }
        out.push_back(std::move(acc));
    }
    return out;
}

void conv3x3_backward(const std::vector<Matrix>& in, Param& k, Param& b,
                      const std::vector<Matrix>& dout, std::vector<Matrix>* din) {
    const Eigen::Index oc = k.rows;
    const auto ic = static_cast<Eigen::Index>(in.size());
    const Eigen::Index n = in[0].rows(), m = in[0].cols();
    auto km = k.mat();
    auto kg = k.grad_mat();

    if (din) din->assign(static_cast<std::size_t>(ic), Matrix::Zero(n, m));
    for (Eigen::Index o = 0; o < oc; ++o) {
        b.grad(o) += dout[static_cast<std::size_t>(o)].sum();
        for (Eigen::Index c = 0; c < ic; ++c)
            for (Eigen::Index dy = -1; dy <= 1; ++dy)
                for (Eigen::Index dx = -1; dx <= 1; ++dx) {
                    const Eigen::Index col = c * 9 + (dy + 1) * 3 + (dx + 1);
                    const Eigen::Index r0 = std::max<Eigen::Index>(0, -dy);
                    const Eigen::Index c0 = std::max<Eigen::Index>(0, -dx);
                    const Eigen::Index h = n - std::abs(dy);
                    const Eigen::Index w = m - std::abs(dx);
                    const auto dblock = dout[static_cast<std::size_t>(o)].block(r0, c0, h, w);
                    kg(o, col) += dblock
                                      .cwiseProduct(in[static_cast<std::size_t>(c)].block(
                                          r0 + dy, c0 + dx, h, w))
                                      .sum();
                    if (din)
                        (*din)[static_cast<std::size_t>(c)].block(r0 + dy, c0 + dx, h, w) +=
                            km(o, col) * dblock;
                }
    }
}

}  // namespace

BalancerParams make_balancer(std::mt19937_64& rng) {
    BalancerParams p;
    p.k1 = Param::zeros(8, 2 * 9);
    p.b1 = Param::zeros(8, 1);
    p.k2 = Param::zeros(1, 8 * 9);
    p.b2 = Param::zeros(1, 1);
    glorot_init(p.k1, rng);
    glorot_init(p.k2, rng);
    return p;
}

Matrix balancer_forward(const Matrix& real_target, const Matrix& other_domain,
                        const BalancerParams& p, BalancerCache& cache) {
    if (real_target.rows() != real_target.cols() || real_target.rows() != other_domain.rows() ||
        real_target.cols() != other_domain.cols())
        throw ValidationError("balancer_forward: inputs must be square and same-shaped");

    cache.input = {real_target, other_domain};
    cache.h_pre = conv3x3(cache.input, p.k1, p.b1);
    cache.h.clear();
    cache.h.reserve(cache.h_pre.size());
    for (const Matrix& hp : cache.h_pre) cache.h.push_back(hp.cwiseMax(0.0));
    Matrix conv_out = conv3x3(cache.h, p.k2, p.b2)[0];
    Matrix raw = conv_out + real_target;
    cache.valid = true;
    return 0.5 * (raw + raw.transpose());
}

void balancer_backward(const BalancerCache& cache, BalancerParams& p, const Matrix& grad_out) {
    if (!cache.valid) throw ValidationError("balancer_backward: stale cache");
    const Matrix draw = 0.5 * (grad_out + grad_out.transpose());

    std::vector<Matrix> dh;
    conv3x3_backward(cache.h, p.k2, p.b2, {draw}, &dh);
    for (std::size_t c = 0; c < dh.size(); ++c)
        dh[c] = (cache.h_pre[c].array() > 0.0)
                    .select(dh[c], Matrix::Zero(dh[c].rows(), dh[c].cols()));
    conv3x3_backward(cache.input, p.k1, p.b1, dh, nullptr);
}

}  // namespace bggan
