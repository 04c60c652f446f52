#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <utility>
#include <vector>

#include "mtif/errors.hpp"

namespace mtif::linalg {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Floating-point accumulation breaks exact symmetry; assembled symmetric
/// matrices are re-symmetrized as (M + M^T)/2.
inline void symmetrize(MatrixXd& m) { m = 0.5 * (m + m.transpose()).eval(); }

inline bool is_symmetric(const MatrixXd& m, double tol = 1e-12) {
    if (m.rows() != m.cols()) return false;
    return (m - m.transpose()).cwiseAbs().maxCoeff() <= tol;
}

/// Hessian of the joint multitask objective in block form. Task-task
/// off-diagonal blocks are identically zero and never stored:
///
///   [ H_11          H_{1,K+1}   ]
///   [      ...      ...         ]
///   [          H_KK H_{K,K+1}   ]
///   [ H_{K+1,1} ... H_{K+1,K+1} ]
///
/// diag[k] = H_kk (d_k x d_k), cross[k] = H_{k,K+1} (d_k x p),
/// shared = H_{K+1,K+1} (p x p).
struct BlockHessian {
    std::vector<MatrixXd> diag;
    std::vector<MatrixXd> cross;
    MatrixXd shared;

    int task_count() const { return static_cast<int>(diag.size()); }
    int task_dim(int k) const { return static_cast<int>(diag[k].rows()); }
    int shared_dim() const { return static_cast<int>(shared.rows()); }
    int total_dim() const {
        int n = shared_dim();
        for (const auto& d : diag) n += static_cast<int>(d.rows());
        return n;
    }

    void validate(double sym_tol = 1e-12) const {
        if (diag.size() != cross.size()) throw DimMismatch("diag/cross block count mismatch");
        if (diag.empty()) throw DimMismatch("block Hessian needs at least one task");
        const int p = shared_dim();
        if (shared.cols() != p) throw DimMismatch("shared block is not square");
        if (!is_symmetric(shared, sym_tol)) throw DimMismatch("shared block is not symmetric");
        for (int k = 0; k < task_count(); ++k) {
            if (diag[k].rows() != diag[k].cols())
                throw DimMismatch("diag block " + std::to_string(k) + " is not square");
            if (!is_symmetric(diag[k], sym_tol))
                throw DimMismatch("diag block " + std::to_string(k) + " is not symmetric");
            if (cross[k].rows() != diag[k].rows() || cross[k].cols() != p)
                throw DimMismatch("cross block " + std::to_string(k) + " has wrong shape");
        }
    }
};

/// Expands the block structure into one dense symmetric matrix. Testing and
/// small instances only; the solvers below never materialize this.
inline MatrixXd assemble_dense(const BlockHessian& bh) {
    bh.validate();
    const int n = bh.total_dim();
    const int p = bh.shared_dim();
    MatrixXd full = MatrixXd::Zero(n, n);
    int off = 0;
    for (int k = 0; k < bh.task_count(); ++k) {
        const int d = bh.task_dim(k);
        full.block(off, off, d, d) = bh.diag[k];
        full.block(off, n - p, d, p) = bh.cross[k];
        full.block(n - p, off, p, d) = bh.cross[k].transpose();
        off += d;
    }
    full.block(n - p, n - p, p, p) = bh.shared;
    symmetrize(full);
    return full;
}

/// X with m X = rhs, via Cholesky. Explicit inverses stay out of library code.
inline MatrixXd solve_spd(const MatrixXd& m, const MatrixXd& rhs) {
    if (m.rows() != m.cols() || m.rows() != rhs.rows()) throw DimMismatch("solve_spd shapes");
    Eigen::LLT<MatrixXd> llt(m);
    if (llt.info() != Eigen::Success) throw NotPd();
    return llt.solve(rhs);
}

/// Cholesky factorization of a BlockHessian: per-task factors of H_kk plus the
/// factored Schur complement
///
///   N = H_{K+1,K+1} - sum_k H_{K+1,k} H_kk^{-1} H_{k,K+1}.
///
/// All inverse applications go through triangular solves. A failed factor
/// raises BlockNotPd(k) / SchurNotPd; callers decide whether to damp.
class BlockCholesky {
  public:
    explicit BlockCholesky(BlockHessian bh) : bh_(std::move(bh)) {
        bh_.validate();
        const int K = bh_.task_count();
        diag_llt_.reserve(K);
        MatrixXd n = bh_.shared;
        for (int k = 0; k < K; ++k) {
            diag_llt_.emplace_back(bh_.diag[k]);
            if (diag_llt_.back().info() != Eigen::Success) throw BlockNotPd(k);
            n.noalias() -= bh_.cross[k].transpose() * diag_llt_[k].solve(bh_.cross[k]);
        }
        symmetrize(n);
        schur_ = std::move(n);
        schur_llt_.compute(schur_);
        if (schur_llt_.info() != Eigen::Success) throw SchurNotPd();
    }

    const BlockHessian& blocks() const { return bh_; }
    const MatrixXd& schur() const { return schur_; }

    MatrixXd solve_diag(int k, const MatrixXd& rhs) const { return diag_llt_[k].solve(rhs); }
    MatrixXd solve_schur(const MatrixXd& rhs) const { return schur_llt_.solve(rhs); }

    /// In-place solve of H x = b for a joint vector given as per-task blocks
    /// plus the shared block.
    void solve_joint(std::vector<VectorXd>& theta, VectorXd& shared) const {
        const int K = bh_.task_count();
        if (static_cast<int>(theta.size()) != K || shared.size() != bh_.shared_dim())
            throw DimMismatch("solve_joint block shapes");
        std::vector<VectorXd> u(K);
        VectorXd y = shared;
        for (int k = 0; k < K; ++k) {
            u[k] = diag_llt_[k].solve(theta[k]);
            y.noalias() -= bh_.cross[k].transpose() * u[k];
        }
        shared = schur_llt_.solve(y);
        for (int k = 0; k < K; ++k)
            theta[k] = u[k] - diag_llt_[k].solve(bh_.cross[k] * shared);
    }

  private:
    BlockHessian bh_;
    std::vector<Eigen::LLT<MatrixXd>> diag_llt_;
    MatrixXd schur_;
    Eigen::LLT<MatrixXd> schur_llt_;
};

inline MatrixXd schur_complement(const BlockHessian& bh) { return BlockCholesky(bh).schur(); }

/// All blocks of H^{-1} in closed form:
///   [H^-1]_{k,l}     = 1(k=l) H_kk^{-1} + S_k N^{-1} S_l^T   with S_k = H_kk^{-1} H_{k,K+1}
///   [H^-1]_{k,K+1}   = -S_k N^{-1}
///   [H^-1]_{K+1,K+1} = N^{-1}
struct BlockInverse {
    std::vector<std::vector<MatrixXd>> task;  // task[k][l]
    std::vector<MatrixXd> task_shared;        // [H^-1]_{k,K+1}
    MatrixXd shared;                          // [H^-1]_{K+1,K+1}
};

inline BlockInverse block_inverse(const BlockHessian& bh) {
    BlockCholesky fact(bh);
    const int K = bh.task_count();
    const int p = bh.shared_dim();

    std::vector<MatrixXd> s(K);  // S_k = H_kk^{-1} H_{k,K+1}
    for (int k = 0; k < K; ++k) s[k] = fact.solve_diag(k, bh.cross[k]);
    const MatrixXd n_inv = fact.solve_schur(MatrixXd::Identity(p, p));

    BlockInverse out;
    out.shared = n_inv;
    symmetrize(out.shared);
    out.task_shared.resize(K);
    out.task.assign(K, std::vector<MatrixXd>(K));
    for (int k = 0; k < K; ++k) {
        out.task_shared[k] = -s[k] * n_inv;
        for (int l = 0; l < K; ++l) {
            out.task[k][l] = s[k] * n_inv * s[l].transpose();
            if (k == l) {
                out.task[k][l] += fact.solve_diag(k, MatrixXd::Identity(bh.task_dim(k), bh.task_dim(k)));
                symmetrize(out.task[k][l]);
            }
        }
    }
    return out;
}

}  // namespace mtif::linalg

namespace mtif {
using linalg::assemble_dense;
using linalg::block_inverse;
using linalg::BlockCholesky;
using linalg::BlockHessian;
using linalg::BlockInverse;
using linalg::is_symmetric;
using linalg::schur_complement;
using linalg::solve_spd;
using linalg::symmetrize;
}  // namespace mtif
