#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "bggan/errors.hpp"
#include "bggan/nn.hpp"
#include "bggan/rng.hpp"
#include "fd_check.hpp"

using namespace bggan;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double lo = -1.0,
                     double hi = 1.0) {
    auto rng = make_rng(seed);
    std::uniform_real_distribution<double> dist(lo, hi);
    Matrix m(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
        for (Eigen::Index i = 0; i < r; ++i) m(i, j) = dist(rng);
    return m;
}

Matrix random_sym_adj(Eigen::Index n, std::uint64_t seed) {
    auto rng = make_rng(seed);
    std::uniform_real_distribution<double> dist(0.2, 1.0);
    Matrix a = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j) a(i, j) = a(j, i) = dist(rng);
    return a;
}

std::vector<Matrix> random_slices(Eigen::Index r, Eigen::Index c, Eigen::Index k,
                                  std::uint64_t seed) {
    std::vector<Matrix> s;
    for (Eigen::Index i = 0; i < k; ++i) s.push_back(random_matrix(r, c, seed * 31 + i));
    return s;
}

SpectralBasis test_basis(Eigen::Index n, std::uint64_t seed) {
    auto rng = make_rng(seed);
    std::uniform_real_distribution<double> dist(0.1, 1.0);
    std::vector<Matrix> slices;
    for (Eigen::Index k = 0; k < 3; ++k) {
        Matrix a = Matrix::Zero(n, n);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = i + 1; j < n; ++j) a(i, j) = a(j, i) = dist(rng);
        slices.push_back(a);
    }
    return spectral_basis(normalized_laplacian(Tensor3::from_real_slices(std::move(slices))));
}

double weighted_sum(const Matrix& m, const Matrix& t) { return m.cwiseProduct(t).sum(); }

double weighted_sum(const Tensor3& m, const std::vector<Matrix>& t) {
    double acc = 0.0;
    for (Eigen::Index k = 0; k < m.num_slices(); ++k)
        acc += m.slice(k).real().cwiseProduct(t[static_cast<std::size_t>(k)]).sum();
    return acc;
}

}  // namespace

TEST_CASE("param buffers and adam") {
    Param p = Param::zeros(2, 3, 2);
    CHECK(p.size() == 12);
    CHECK(p.value.size() == 12);
    CHECK(p.grad.size() == 12);
    CHECK(p.m.size() == 12);
    CHECK(p.v.size() == 12);
    CHECK(p.step_count == 0);

    SUBCASE("zero gradient leaves the value unchanged") {
        adam_step(p, 0.1);
        CHECK(p.value.cwiseAbs().maxCoeff() == 0.0);
        CHECK(p.step_count == 1);
    }
    SUBCASE("first step with unit gradient moves by about -lr") {
        p.grad.setOnes();
        adam_step(p, 0.0005);
        for (Eigen::Index i = 0; i < p.size(); ++i)
            CHECK(std::abs(p.value(i) + 0.0005) < 1e-9);
        CHECK(p.grad.cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("identical params follow identical trajectories") {
        auto rng = make_rng(3);
        Param a = Param::zeros(3, 3);
        glorot_init(a, rng);
        Param b = a;
        for (int step = 0; step < 5; ++step) {
            Matrix g = random_matrix(3, 3, 40 + static_cast<std::uint64_t>(step));
            a.grad_mat() += g;
            b.grad_mat() += g;
            adam_step(a, 0.01);
            adam_step(b, 0.01);
        }
        CHECK((a.value.array() == b.value.array()).all());
    }
}

TEST_CASE("init is seeded and deterministic") {
    Param a = Param::zeros(4, 5);
    Param b = Param::zeros(4, 5);
    auto r1 = make_rng(9, 1);
    auto r2 = make_rng(9, 1);
    glorot_init(a, r1);
    glorot_init(b, r2);
    CHECK((a.value.array() == b.value.array()).all());
    const double limit = std::sqrt(6.0 / 9.0);
    CHECK(a.value.cwiseAbs().maxCoeff() <= limit);

    auto r3 = make_rng(9, 2);
    glorot_init(b, r3);
    CHECK(!(a.value.array() == b.value.array()).all());

    Param g = Param::zeros(10, 10);
    auto r4 = make_rng(9, 3);
    gaussian_init(g, 0.01, r4);
    CHECK(g.value.cwiseAbs().maxCoeff() < 0.1);
    CHECK(g.value.cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("gcn_forward basics") {
    SUBCASE("no edges with identity weights is the identity map") {
        GcnCache c;
        Matrix x = random_matrix(3, 3, 2, 0.0, 1.0);
        Matrix out = gcn_forward(x, Matrix::Zero(3, 3), Matrix::Identity(3, 3), c);
        CHECK((out - x).cwiseAbs().maxCoeff() < 1e-12);
    }
    SUBCASE("zero weights give zero output") {
        GcnCache c;
        Matrix out = gcn_forward(random_matrix(3, 2, 3), random_sym_adj(3, 4), Matrix::Zero(2, 2), c);
        CHECK(out.cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("two-node path graph") {
        // Ahat = [[1,1],[1,1]], degrees (2,2), so norm(Ahat) is constant 1/2.
        GcnCache c;
        Matrix adj(2, 2);
        adj << 0, 1, 1, 0;
        Matrix out = gcn_forward(Matrix::Identity(2, 2), adj, Matrix::Identity(2, 2), c);
        CHECK(out(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(out(0, 1) == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(out(1, 0) == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(out(1, 1) == doctest::Approx(0.5).epsilon(1e-12));
    }
    SUBCASE("shape mismatch") {
        GcnCache c;
        CHECK_THROWS_AS(gcn_forward(Matrix::Zero(3, 2), Matrix::Zero(2, 2), Matrix::Zero(2, 2), c),
                        ValidationError);
        CHECK_THROWS_AS(gcn_forward(Matrix::Zero(2, 2), Matrix::Zero(2, 2), Matrix::Zero(3, 2), c),
                        ValidationError);
    }
}

TEST_CASE("gcn gradients match finite differences") {
    FdResult r;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Matrix x = random_matrix(3, 4, 100 + seed);
        Matrix adj = random_sym_adj(3, 200 + seed);
        Matrix w = random_matrix(4, 2, 300 + seed);
        Matrix t = random_matrix(3, 2, 400 + seed);
        const bool relu = seed % 2 == 0;

        GcnCache cache;
        gcn_forward(x, adj, w, cache, relu);
        GcnGrads g = gcn_backward(cache, t);

        auto loss_x = [&] {
            GcnCache c2;
            return weighted_sum(gcn_forward(x, adj, w, c2, relu), t);
        };
        fd_check_buffer(r, loss_x, x.data(), x.size(), g.dx.data());
        fd_check_buffer(r, loss_x, w.data(), w.size(), g.dw.data());
        fd_check_buffer(r, loss_x, adj.data(), adj.size(), g.dadj.data());
    }
    CHECK(r.max_rel < 1e-4);
    CHECK(r.checked > 100);
    CHECK(r.skipped < r.checked / 10);
}

TEST_CASE("gcn_backward rejects a stale cache") {
    GcnCache c;
    CHECK_THROWS_AS(gcn_backward(c, Matrix::Zero(2, 2)), ValidationError);
}

TEST_CASE("innergcn identity and zero kernels") {
    SpectralBasis basis = test_basis(4, 60);
    Tensor3 x = Tensor3::from_real_slices(random_slices(4, 2, 3, 61));

    SUBCASE("spectral all-ones kernel is the identity") {
        Tensor3 ones(4, 2, 3);
        for (Eigen::Index k = 0; k < 3; ++k) ones.mutable_slice(k).setOnes();
        ones.zero_small_imag(0.0);
        Tensor3 g = basis_apply(basis.u_inv_hat, ones);

        InnerGcnCache cache;
        Tensor3 out = innergcn_forward(x, g, basis, cache);
        double err = 0.0;
        for (Eigen::Index k = 0; k < 3; ++k)
            err = std::max(err, (out.slice(k) - x.slice(k)).cwiseAbs().maxCoeff());
        CHECK(err < 1e-8);

        // With loss = sum(out), the identity map passes the gradient straight through.
        Tensor3 gsum(4, 2, 3);
        for (Eigen::Index k = 0; k < 3; ++k) gsum.mutable_slice(k).setOnes();
        gsum.zero_small_imag(0.0);
        InnerGcnGrads grads = innergcn_backward(cache, gsum);
        for (Eigen::Index k = 0; k < 3; ++k)
            CHECK((grads.dx.slice(k).real() - Matrix::Ones(4, 2)).cwiseAbs().maxCoeff() < 1e-8);
    }
    SUBCASE("zero kernel maps everything to zero") {
        InnerGcnCache cache;
        Tensor3 out = innergcn_forward(x, Tensor3(4, 2, 3), basis, cache);
        CHECK(out.max_imag() == 0.0);
        for (Eigen::Index k = 0; k < 3; ++k)
            CHECK(out.slice(k).cwiseAbs().maxCoeff() < 1e-10);

        // Bilinearity: with x = 0 the kernel gradient vanishes.
        InnerGcnCache c0;
        innergcn_forward(Tensor3(4, 2, 3), Tensor3::from_real_slices(random_slices(4, 2, 3, 62)),
                         basis, c0);
        Tensor3 gsum(4, 2, 3);
        for (Eigen::Index k = 0; k < 3; ++k) gsum.mutable_slice(k).setOnes();
        gsum.zero_small_imag(0.0);
        InnerGcnGrads grads = innergcn_backward(c0, gsum);
        for (Eigen::Index k = 0; k < 3; ++k)
            CHECK(grads.dg.slice(k).cwiseAbs().maxCoeff() < 1e-10);
    }
    SUBCASE("shape preserved; mismatches rejected") {
        InnerGcnCache cache;
        Tensor3 out = innergcn_forward(x, Tensor3(4, 2, 3), basis, cache);
        CHECK(out.same_shape(x));
        CHECK_THROWS_AS(innergcn_forward(x, Tensor3(4, 3, 3), basis, cache), ValidationError);
        CHECK_THROWS_AS(innergcn_forward(Tensor3(5, 2, 3), Tensor3(5, 2, 3), basis, cache),
                        ValidationError);
    }
    SUBCASE("stale cache rejected") {
        InnerGcnCache cache;
        CHECK_THROWS_AS(innergcn_backward(cache, x), ValidationError);
    }
}

TEST_CASE("innergcn gradients match finite differences") {
    SpectralBasis basis = test_basis(3, 70);
    FdResult r;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        std::vector<Matrix> xs = random_slices(3, 2, 3, 700 + seed);
        std::vector<Matrix> gs = random_slices(3, 2, 3, 800 + seed);
        std::vector<Matrix> t = random_slices(3, 2, 3, 900 + seed);

        InnerGcnCache cache;
        Tensor3 out = innergcn_forward(Tensor3::from_real_slices(xs),
                                       Tensor3::from_real_slices(gs), basis, cache);
        Tensor3 tw = Tensor3::from_real_slices(t);
        InnerGcnGrads grads = innergcn_backward(cache, tw);

        auto loss = [&] {
            InnerGcnCache c2;
            return weighted_sum(innergcn_forward(Tensor3::from_real_slices(xs),
                                                 Tensor3::from_real_slices(gs), basis, c2),
                                t);
        };
        for (Eigen::Index k = 0; k < 3; ++k) {
            const auto uk = static_cast<std::size_t>(k);
            Matrix dxk = grads.dx.slice(k).real();
            Matrix dgk = grads.dg.slice(k).real();
            fd_check_buffer(r, loss, xs[uk].data(), xs[uk].size(), dxk.data());
            fd_check_buffer(r, loss, gs[uk].data(), gs[uk].size(), dgk.data());
        }
    }
    CHECK(r.max_rel < 1e-4);
    CHECK(r.checked > 100);
    CHECK(r.skipped == 0);  // the map is bilinear, no kinks anywhere
}

TEST_CASE("dense softmax cross entropy") {
    SUBCASE("one-hot probabilities onto the true label cost nothing") {
        Vector p(3);
        p << 0, 1, 0;
        CHECK(cross_entropy(p, 1) == doctest::Approx(0.0).epsilon(1e-12));
    }
    SUBCASE("uniform two-class loss is ln 2") {
        Vector f = Vector::Ones(4);
        Vector probs = dense_softmax_forward(f, Matrix::Zero(4, 2), Vector::Zero(2));
        CHECK(probs(0) == doctest::Approx(0.5));
        CHECK(cross_entropy(probs, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }
    SUBCASE("probabilities are positive and sum to one") {
        Vector f = 50.0 * Vector::Random(5);
        Matrix w = random_matrix(5, 4, 11);
        Vector b = Vector::Zero(4);
        Vector probs = dense_softmax_forward(f, w, b);
        CHECK(probs.minCoeff() >= 0.0);
        CHECK(std::abs(probs.sum() - 1.0) < 1e-9);
    }
    SUBCASE("label range enforced") {
        Vector p(2);
        p << 0.5, 0.5;
        CHECK_THROWS_AS(cross_entropy(p, 2), ValidationError);
        CHECK_THROWS_AS(cross_entropy(p, -1), ValidationError);
    }
    SUBCASE("gradients match finite differences") {
        FdResult r;
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            Matrix fm = random_matrix(5, 1, 20 + seed);
            Matrix w = random_matrix(5, 3, 30 + seed);
            Matrix bm = random_matrix(3, 1, 40 + seed);
            const int label = static_cast<int>(seed % 3);

            Vector probs = dense_softmax_forward(fm.col(0), w, bm.col(0));
            DenseSoftmaxGrads g = dense_softmax_backward(fm.col(0), w, probs, label);

            auto loss = [&] {
                return cross_entropy(dense_softmax_forward(fm.col(0), w, bm.col(0)), label);
            };
            fd_check_buffer(r, loss, fm.data(), fm.size(), g.dfeat.data());
            fd_check_buffer(r, loss, w.data(), w.size(), g.dw.data());
            fd_check_buffer(r, loss, bm.data(), bm.size(), g.db.data());
        }
        CHECK(r.max_rel < 1e-5);
        CHECK(r.skipped == 0);
    }
}

TEST_CASE("classifier head") {
    auto rng = make_rng(80);
    ClassifierParams p = make_classifier(6, 8, 2, rng);

    SUBCASE("dropout masks are seeded and off at inference") {
        Vector f = random_matrix(6, 1, 81).col(0);
        ClassifierCache c1, c2, c3;
        auto r1 = make_rng(5);
        auto r2 = make_rng(5);
        auto r3 = make_rng(6);
        Vector a = classifier_forward(f, p, c1, true, 0.5, r1);
        Vector b = classifier_forward(f, p, c2, true, 0.5, r2);
        CHECK((a.array() == b.array()).all());
        Vector d = classifier_forward(f, p, c3, false, 0.5, r3);
        Vector e = classifier_forward(f, p, c3, false, 0.5, r3);
        CHECK((d.array() == e.array()).all());
        CHECK((c3.keep.array() == 1.0).all());
    }
    SUBCASE("gradients match finite differences (dropout off)") {
        FdResult r;
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            Matrix fm = random_matrix(6, 1, 90 + seed);
            const int label = static_cast<int>(seed % 2);

            for (Param* q : {&p.w1, &p.b1, &p.w2, &p.b2}) q->grad.setZero();
            ClassifierCache cache;
            auto r0 = make_rng(0);
            classifier_forward(fm.col(0), p, cache, false, 0.0, r0);
            Vector dfeat = classifier_backward(cache, p, label, 1.0);

            auto loss = [&] {
                ClassifierCache c2;
                auto rr = make_rng(0);
                Vector probs = classifier_forward(fm.col(0), p, c2, false, 0.0, rr);
                return cross_entropy(probs, label);
            };
            fd_check_buffer(r, loss, fm.data(), fm.size(), dfeat.data());
            for (Param* q : {&p.w1, &p.b1, &p.w2, &p.b2}) {
                Vector saved = q->grad;
                fd_check_buffer(r, loss, q->value.data(), q->size(), saved.data());
            }
            for (Param* q : {&p.w1, &p.b1, &p.w2, &p.b2}) q->grad.setZero();
        }
        CHECK(r.max_rel < 1e-4);
        CHECK(r.checked > 100);
        CHECK(r.skipped < r.checked / 10);
    }
}

TEST_CASE("discriminator") {
    SUBCASE("zero parameters score zero") {
        DiscParams p;
        p.w1 = Param::zeros(4, 6);
        p.w2 = Param::zeros(6, 6);
        p.wout = Param::zeros(6, 1);
        p.bout = Param::zeros(1, 1);
        DiscCache c;
        CHECK(discriminator_forward(random_sym_adj(5, 1), random_matrix(5, 4, 2), p, c) == 0.0);
    }
    SUBCASE("deterministic") {
        auto rng = make_rng(7);
        DiscParams p = make_discriminator(4, 6, rng);
        Matrix adj = random_sym_adj(5, 3);
        Matrix feats = random_matrix(5, 4, 4);
        DiscCache c1, c2;
        CHECK(discriminator_forward(adj, feats, p, c1) == discriminator_forward(adj, feats, p, c2));
    }
    SUBCASE("gradients match finite differences") {
        FdResult r;
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            auto rng = make_rng(500 + seed);
            DiscParams p = make_discriminator(3, 5, rng);
            Matrix adj = random_sym_adj(4, 600 + seed);
            Matrix feats = random_matrix(4, 3, 700 + seed);

            DiscCache cache;
            discriminator_forward(adj, feats, p, cache);
            DiscInputGrads g = discriminator_backward(cache, p, 1.0, true);

            auto loss = [&] {
                DiscCache c2;
                return discriminator_forward(adj, feats, p, c2);
            };
            fd_check_buffer(r, loss, adj.data(), adj.size(), g.dadj.data());
            fd_check_buffer(r, loss, feats.data(), feats.size(), g.dfeats.data());
            for (Param* q : {&p.w1, &p.w2, &p.wout, &p.bout}) {
                Vector saved = q->grad;
                fd_check_buffer(r, loss, q->value.data(), q->size(), saved.data());
                q->grad.setZero();
            }
        }
        CHECK(r.max_rel < 1e-4);
        CHECK(r.checked > 200);
        CHECK(r.skipped < r.checked / 10);
    }
    SUBCASE("frozen-parameter backward leaves gradients untouched") {
        auto rng = make_rng(8);
        DiscParams p = make_discriminator(3, 5, rng);
        DiscCache cache;
        discriminator_forward(random_sym_adj(4, 9), random_matrix(4, 3, 10), p, cache);
        discriminator_backward(cache, p, 1.0, false);
        for (Param* q : {&p.w1, &p.w2, &p.wout, &p.bout})
            CHECK(q->grad.cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("balancer") {
    SUBCASE("zero weights pass the real target through") {
        BalancerParams p;
        p.k1 = Param::zeros(8, 18);
        p.b1 = Param::zeros(8, 1);
        p.k2 = Param::zeros(1, 72);
        p.b2 = Param::zeros(1, 1);
        Matrix rt = random_sym_adj(5, 11);
        BalancerCache c;
        Matrix out = balancer_forward(rt, random_matrix(5, 5, 12), p, c);
        CHECK((out - rt).cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("output is always symmetric") {
        auto rng = make_rng(13);
        BalancerParams p = make_balancer(rng);
        BalancerCache c;
        Matrix out = balancer_forward(random_matrix(6, 6, 14), random_matrix(6, 6, 15), p, c);
        CHECK((out - out.transpose()).cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("shape mismatch rejected") {
        auto rng = make_rng(16);
        BalancerParams p = make_balancer(rng);
        BalancerCache c;
        CHECK_THROWS_AS(balancer_forward(Matrix::Zero(3, 3), Matrix::Zero(4, 4), p, c),
                        ValidationError);
        CHECK_THROWS_AS(balancer_forward(Matrix::Zero(3, 4), Matrix::Zero(3, 4), p, c),
                        ValidationError);
    }
    SUBCASE("conv gradients match finite differences") {
        FdResult r;
        for (std::uint64_t seed = 0; seed < 3; ++seed) {
            auto rng = make_rng(900 + seed);
            BalancerParams p = make_balancer(rng);
            Matrix rt = random_sym_adj(5, 910 + seed);
            Matrix other = random_matrix(5, 5, 920 + seed);
            Matrix t = random_matrix(5, 5, 930 + seed);

            BalancerCache cache;
            balancer_forward(rt, other, p, cache);
            balancer_backward(cache, p, t);

            auto loss = [&] {
                BalancerCache c2;
                return weighted_sum(balancer_forward(rt, other, p, c2), t);
            };
            for (Param* q : {&p.k1, &p.b1, &p.k2, &p.b2}) {
                Vector saved = q->grad;
                fd_check_buffer(r, loss, q->value.data(), q->size(), saved.data());
                q->grad.setZero();
            }
        }
        CHECK(r.max_rel < 1e-4);
        CHECK(r.checked > 200);
        CHECK(r.skipped < r.checked / 10);
    }
}
