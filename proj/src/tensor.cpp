#include "bggan/tensor.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "bggan/errors.hpp"

namespace bggan {

namespace {

[[noreturn]] void shape_error(const std::string& op, const std::string& detail) {
    throw ValidationError(op + ": " + detail);
}

}  // namespace

Tensor3::Tensor3(Eigen::Index rows, Eigen::Index cols, Eigen::Index slices, bool real)
    : rows_(rows), cols_(cols), real_(real) {
    if (rows <= 0 || cols <= 0 || slices <= 0)
        shape_error("Tensor3", "dims must be strictly positive");
    slices_.assign(static_cast<std::size_t>(slices), CMatrix::Zero(rows, cols));
}

Tensor3 Tensor3::from_real_slices(std::vector<Matrix> slices) {
    if (slices.empty()) shape_error("Tensor3", "no slices");
    Tensor3 t(slices[0].rows(), slices[0].cols(), static_cast<Eigen::Index>(slices.size()), true);
    for (std::size_t k = 0; k < slices.size(); ++k) {
        if (slices[k].rows() != t.rows_ || slices[k].cols() != t.cols_)
            shape_error("Tensor3", "ragged slices");
        t.slices_[k] = slices[k].cast<Complex>();
    }
    return t;
}

Tensor3 Tensor3::from_complex_slices(std::vector<CMatrix> slices) {
    if (slices.empty()) shape_error("Tensor3", "no slices");
    Tensor3 t(slices[0].rows(), slices[0].cols(), static_cast<Eigen::Index>(slices.size()), false);
    for (std::size_t k = 0; k < slices.size(); ++k) {
        if (slices[k].rows() != t.rows_ || slices[k].cols() != t.cols_)
            shape_error("Tensor3", "ragged slices");
        t.slices_[k] = std::move(slices[k]);
    }
    return t;
}

CMatrix& Tensor3::mutable_slice(Eigen::Index k) {
    real_ = false;  // caller may write complex values; flags are re-derived via zero_small_imag
    return slices_.at(static_cast<std::size_t>(k));
}

std::vector<Matrix> Tensor3::real_slices() const {
    if (!real_) throw ValidationError("Tensor3: real_slices() on a complex tensor");
    std::vector<Matrix> out;
    out.reserve(slices_.size());
    for (const auto& s : slices_) out.push_back(s.real());
    return out;
}

Matrix Tensor3::real_slice(Eigen::Index k) const {
    if (!real_) throw ValidationError("Tensor3: real_slice() on a complex tensor");
    return slice(k).real();
}

double Tensor3::max_imag() const {
    double m = 0.0;
    for (const auto& s : slices_) m = std::max(m, s.imag().cwiseAbs().maxCoeff());
    return m;
}

bool Tensor3::conjugate_symmetric(double tol) const {
    const Eigen::Index r = num_slices();
    for (Eigen::Index k = 0; k < r; ++k) {
        const CMatrix diff = slices_[static_cast<std::size_t>(k)] -
                             slices_[static_cast<std::size_t>((r - k) % r)].conjugate();
        if (diff.cwiseAbs().maxCoeff() > tol) return false;
    }
    return true;
}

bool Tensor3::zero_small_imag(double tol) {
    bool all_zero = true;
    for (auto& s : slices_) {
        for (Eigen::Index j = 0; j < s.cols(); ++j) {
            for (Eigen::Index i = 0; i < s.rows(); ++i) {
                Complex& v = s(i, j);
                if (std::abs(v.imag()) <= tol)
                    v.imag(0.0);
                else
                    all_zero = false;
            }
        }
    }
    real_ = all_zero;
    return real_;
}

Tensor3 dft3(const Tensor3& t) {
    const Eigen::Index r = t.num_slices();
    Tensor3 out(t.rows(), t.cols(), r, false);
    const double base = -2.0 * std::numbers::pi / static_cast<double>(r);
    for (Eigen::Index k = 0; k < r; ++k) {
        CMatrix acc = CMatrix::Zero(t.rows(), t.cols());
        for (Eigen::Index j = 0; j < r; ++j) {
            const double phase = base * static_cast<double>((j * k) % r);
            acc += t.slice(j) * Complex(std::cos(phase), std::sin(phase));
        }
        out.mutable_slice(k) = std::move(acc);
    }
    out.zero_small_imag(0.0);  // re-derive flag; exact zeros only (e.g. R=1)
    return out;
}

Tensor3 idft3(const Tensor3& t) {
    const Eigen::Index r = t.num_slices();
    const bool symmetric = t.conjugate_symmetric(1e-10);
    Tensor3 out(t.rows(), t.cols(), r, false);
    const double base = 2.0 * std::numbers::pi / static_cast<double>(r);
    const double inv_r = 1.0 / static_cast<double>(r);
    for (Eigen::Index j = 0; j < r; ++j) {
        CMatrix acc = CMatrix::Zero(t.rows(), t.cols());
        for (Eigen::Index k = 0; k < r; ++k) {
            const double phase = base * static_cast<double>((j * k) % r);
            acc += t.slice(k) * Complex(std::cos(phase), std::sin(phase));
        }
        out.mutable_slice(j) = acc * inv_r;
    }
    if (symmetric) out.zero_small_imag(1e-10);
    return out;
}

CMatrix fold1(const Tensor3& a) {
    const Eigen::Index r = a.num_slices();
    CMatrix m(a.rows() * r, a.cols());
    for (Eigen::Index k = 0; k < r; ++k) m.middleRows(k * a.rows(), a.rows()) = a.slice(k);
    return m;
}

CMatrix fold2(const Tensor3& b) {
    const Eigen::Index r = b.num_slices();
    CMatrix m(b.rows() * r, b.cols() * r);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < r; ++j)
            m.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = b.slice(((i - j) % r + r) % r);
    return m;
}

Tensor3 unfold(const CMatrix& m, Eigen::Index rows, Eigen::Index cols, Eigen::Index r) {
    if (m.rows() != rows * r || (m.cols() != cols && m.cols() != cols * r)) {
        std::ostringstream oss;
        oss << "unfold: matrix " << m.rows() << "x" << m.cols() << " does not split into " << r
            << " blocks of " << rows << "x" << cols;
        throw ValidationError(oss.str());
    }
    std::vector<CMatrix> slices;
    slices.reserve(static_cast<std::size_t>(r));
    for (Eigen::Index k = 0; k < r; ++k) slices.push_back(m.block(k * rows, 0, rows, cols));
    Tensor3 out = Tensor3::from_complex_slices(std::move(slices));
    out.zero_small_imag(0.0);
    return out;
}

Tensor3 tprod(const Tensor3& a, const Tensor3& b) {
    if (a.cols() != b.rows() || a.num_slices() != b.num_slices()) {
        std::ostringstream oss;
        oss << "tprod: shape mismatch " << a.rows() << "x" << a.cols() << "x" << a.num_slices()
            << " vs " << b.rows() << "x" << b.cols() << "x" << b.num_slices();
        throw ValidationError(oss.str());
    }
    const Tensor3 ah = dft3(a);
    const Tensor3 bh = dft3(b);
    Tensor3 ch(a.rows(), b.cols(), a.num_slices(), false);
    for (Eigen::Index k = 0; k < a.num_slices(); ++k) ch.mutable_slice(k) = ah.slice(k) * bh.slice(k);
    return idft3(ch);
}

Tensor3 ttranspose(const Tensor3& a) {
    const Eigen::Index r = a.num_slices();
    std::vector<CMatrix> slices(static_cast<std::size_t>(r));
    slices[0] = a.slice(0).adjoint();
    for (Eigen::Index k = 1; k < r; ++k) slices[static_cast<std::size_t>(k)] = a.slice(r - k).adjoint();
    Tensor3 out = Tensor3::from_complex_slices(std::move(slices));
    if (a.is_real()) out.zero_small_imag(0.0);
    return out;
}

}  // namespace bggan
