#pragma once

#include <Eigen/Dense>
#include <complex>
#include <vector>

namespace bggan {

using Complex = std::complex<double>;
using Matrix = Eigen::MatrixXd;
using CMatrix = Eigen::MatrixXcd;

/// Dense third-order tensor with the slice (modality/frequency) axis last:
/// rows x cols x slices. Frontal slice k is the matrix t.slice(k).
///
/// A tensor flagged real carries every imaginary component equal to zero;
/// complex tensors come out of dft3 and the spectral machinery.
class Tensor3 {
public:
    Tensor3() = default;

    /// Zero tensor of the given shape.
    Tensor3(Eigen::Index rows, Eigen::Index cols, Eigen::Index slices, bool real = true);

    static Tensor3 from_real_slices(std::vector<Matrix> slices);
    static Tensor3 from_complex_slices(std::vector<CMatrix> slices);

    Eigen::Index rows() const { return rows_; }
    Eigen::Index cols() const { return cols_; }
    Eigen::Index num_slices() const { return static_cast<Eigen::Index>(slices_.size()); }

    const CMatrix& slice(Eigen::Index k) const { return slices_.at(static_cast<std::size_t>(k)); }

    /// Writable access; conservatively drops the real flag (re-derive with
    /// zero_small_imag once mutation is done).
    CMatrix& mutable_slice(Eigen::Index k);

    Complex operator()(Eigen::Index i, Eigen::Index j, Eigen::Index k) const {
        return slices_[static_cast<std::size_t>(k)](i, j);
    }

    bool is_real() const { return real_; }

    /// Real parts of every slice; requires the real flag.
    std::vector<Matrix> real_slices() const;
    Matrix real_slice(Eigen::Index k) const;

    /// Largest |imag| over all entries.
    double max_imag() const;

    /// True when slice k == conj(slice (R-k) mod R) for all k, within tol.
    bool conjugate_symmetric(double tol = 1e-10) const;

    /// Zeroes imaginary parts with |imag| < tol and sets the real flag if
    /// none survive. Returns whether the tensor is now flagged real.
    bool zero_small_imag(double tol);

    bool same_shape(const Tensor3& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_ && num_slices() == other.num_slices();
    }

private:
    std::vector<CMatrix> slices_;
    Eigen::Index rows_ = 0;
    Eigen::Index cols_ = 0;
    bool real_ = true;
};

/// Unnormalized forward DFT along the slice axis: out_k = sum_j slice_j w^{jk},
/// w = exp(-2 pi i / R). Naive O(R^2); R is tiny here.
Tensor3 dft3(const Tensor3& t);

/// Inverse of dft3 (divides by R). Conjugate-symmetric input yields a tensor
/// flagged real with imaginary residue below 1e-10 zeroed.
Tensor3 idft3(const Tensor3& t);

/// Stacks slices vertically: [A1; A2; ...; AR], (rows*R) x cols.
CMatrix fold1(const Tensor3& a);

/// Block-circulant matrix whose block (i,j) is slice ((i-j) mod R),
/// (rows*R) x (cols*R).
CMatrix fold2(const Tensor3& b);

/// Splits the first block column of m back into slices. m must have rows*r
/// rows and either cols or cols*r columns; anything else is an error.
Tensor3 unfold(const CMatrix& m, Eigen::Index rows, Eigen::Index cols, Eigen::Index r);

/// t-product a (n1 x n2 x R) with b (n2 x n3 x R): slice-wise product in the
/// Fourier domain followed by idft3. Equals unfold(fold2(a) * fold1(b)).
Tensor3 tprod(const Tensor3& a, const Tensor3& b);

/// t-algebra conjugate transpose: slice 0 is conj-transposed in place, the
/// remaining slices are conj-transposed and order-reversed.
Tensor3 ttranspose(const Tensor3& a);

}  // namespace bggan
