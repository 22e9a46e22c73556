#include "bggan/spectral.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "bggan/errors.hpp"

namespace bggan {

LaplacianTensor normalized_laplacian(const Tensor3& adj, const std::vector<SliceKind>& kinds) {
    if (!adj.is_real()) throw ValidationError("normalized_laplacian: adjacency must be real");
    if (adj.rows() != adj.cols()) throw ValidationError("normalized_laplacian: slices must be square");
    const Eigen::Index n = adj.rows();
    const Eigen::Index r = adj.num_slices();
    if (!kinds.empty() && static_cast<Eigen::Index>(kinds.size()) != r)
        throw ValidationError("normalized_laplacian: one slice kind per slice expected");

    std::vector<Matrix> out;
    out.reserve(static_cast<std::size_t>(r));
    for (Eigen::Index k = 0; k < r; ++k) {
        const SliceKind kind = kinds.empty() ? SliceKind::structural : kinds[static_cast<std::size_t>(k)];
        Matrix a = adj.slice(k).real();
        if (kind == SliceKind::functional) a = a.cwiseAbs();
        if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-9)
            throw ValidationError("normalized_laplacian: slice " + std::to_string(k) + " is asymmetric");
        if (a.minCoeff() < 0.0)
            throw ValidationError("normalized_laplacian: slice " + std::to_string(k) +
                                  " has negative entries");
        a.diagonal().setZero();

        Eigen::VectorXd deg = a.rowwise().sum();
        Eigen::VectorXd dinv(n);
        for (Eigen::Index i = 0; i < n; ++i) dinv(i) = deg(i) > 0.0 ? 1.0 / std::sqrt(deg(i)) : 0.0;

        Matrix l = Matrix::Identity(n, n) - dinv.asDiagonal() * a * dinv.asDiagonal();
        Matrix sym = 0.5 * (l + l.transpose());
        out.push_back(std::move(sym));
    }
    return LaplacianTensor{Tensor3::from_real_slices(std::move(out))};
}

namespace {

struct FrequencySlice {
    CMatrix vectors;
    Eigen::VectorXcd values;
};

FrequencySlice decompose_slice(const CMatrix& mat, Eigen::Index freq) {
    const Eigen::Index n = mat.rows();
    Eigen::ComplexEigenSolver<CMatrix> es(mat, true);
    if (es.info() != Eigen::Success)
        throw NumericalError("spectral_basis: eigensolver failed at frequency " + std::to_string(freq));

    CMatrix vecs = es.eigenvectors();
    Eigen::VectorXcd vals = es.eigenvalues();

    // Deterministic normalization: unit 2-norm, first sizable component
    // rotated onto the positive real axis.
    std::vector<Eigen::Index> peak(static_cast<std::size_t>(n), 0);
    for (Eigen::Index c = 0; c < n; ++c) {
        Eigen::VectorXcd v = vecs.col(c);
        v.normalize();
        for (Eigen::Index i = 0; i < n; ++i) {
            if (std::abs(v(i)) > 1e-12) {
                v *= std::conj(v(i)) / std::abs(v(i));
                break;
            }
        }
        double best = -1.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (std::abs(v(i)) > best) {
                best = std::abs(v(i));
                peak[static_cast<std::size_t>(c)] = i;
            }
        }
        vecs.col(c) = v;
    }

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::sort(order.begin(), order.end(), [&](Eigen::Index x, Eigen::Index y) {
        if (vals(x).real() != vals(y).real()) return vals(x).real() < vals(y).real();
        if (vals(x).imag() != vals(y).imag()) return vals(x).imag() < vals(y).imag();
        if (peak[static_cast<std::size_t>(x)] != peak[static_cast<std::size_t>(y)])
            return peak[static_cast<std::size_t>(x)] < peak[static_cast<std::size_t>(y)];
        return x < y;
    });

    FrequencySlice out;
    out.vectors.resize(n, n);
    out.values.resize(n);
    for (Eigen::Index c = 0; c < n; ++c) {
        out.vectors.col(c) = vecs.col(order[static_cast<std::size_t>(c)]);
        out.values(c) = vals(order[static_cast<std::size_t>(c)]);
    }
    return out;
}

CMatrix invert_slice(const CMatrix& u, Eigen::Index freq) {
    const Eigen::Index n = u.rows();
    Eigen::PartialPivLU<CMatrix> lu(u);
    CMatrix inv = lu.inverse();
    const double resid = (u * inv - CMatrix::Identity(n, n)).cwiseAbs().maxCoeff();
    if (!std::isfinite(resid) || resid > 1e-8)
        throw NumericalError("spectral_basis: eigenvector matrix at frequency " +
                             std::to_string(freq) + " is not invertible (residual " +
                             std::to_string(resid) + ")");
    return inv;
}

}  // namespace

SpectralBasis spectral_basis(const LaplacianTensor& lap) {
    const Tensor3& l = lap.value;
    if (l.rows() != l.cols()) throw ValidationError("spectral_basis: Laplacian slices must be square");
    const Eigen::Index n = l.rows();
    const Eigen::Index r = l.num_slices();

    const Tensor3 lhat = dft3(l);

    std::vector<CMatrix> u_hat(static_cast<std::size_t>(r));
    std::vector<CMatrix> u_inv_hat(static_cast<std::size_t>(r));
    std::vector<Eigen::VectorXcd> lam_hat(static_cast<std::size_t>(r));

    for (Eigen::Index k = 0; k <= r / 2; ++k) {
        FrequencySlice fs = decompose_slice(lhat.slice(k), k);
        u_hat[static_cast<std::size_t>(k)] = fs.vectors;
        lam_hat[static_cast<std::size_t>(k)] = fs.values;
        u_inv_hat[static_cast<std::size_t>(k)] = invert_slice(fs.vectors, k);

        const Eigen::Index mirror = (r - k) % r;
        if (mirror != k) {
            u_hat[static_cast<std::size_t>(mirror)] = fs.vectors.conjugate();
            lam_hat[static_cast<std::size_t>(mirror)] = fs.values.conjugate();
            u_inv_hat[static_cast<std::size_t>(mirror)] =
                u_inv_hat[static_cast<std::size_t>(k)].conjugate();
        }
    }

    std::vector<CMatrix> u_slices = u_hat;
    std::vector<CMatrix> lam_slices;
    lam_slices.reserve(static_cast<std::size_t>(r));
    for (Eigen::Index k = 0; k < r; ++k)
        lam_slices.push_back(lam_hat[static_cast<std::size_t>(k)]);

    SpectralBasis basis;
    basis.u = idft3(Tensor3::from_complex_slices(std::move(u_slices)));
    basis.lambda = idft3(Tensor3::from_complex_slices(std::move(lam_slices)));
    basis.u_hat = std::move(u_hat);
    basis.u_inv_hat = std::move(u_inv_hat);
    return basis;
}

}  // namespace bggan
