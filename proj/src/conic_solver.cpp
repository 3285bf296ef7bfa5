// Primal-dual interior-point method for
//
//     minimize    c'x
//     subject to  G x + s = h,  A x = b,  s in K
//
// with K a product of a nonnegative orthant, second-order cones and PSD cones
// (scaled upper-triangular vectorization). The iteration works on the
// homogeneous self-dual embedding so that infeasibility and unboundedness are
// detected from certificates instead of divergence. Each iteration computes
// the Nesterov-Todd scaling W from scratch, W z = W^{-T} s = lambda, and takes
// a Mehrotra predictor-corrector step.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "rmcse/conic.hpp"

namespace rmcse::conic {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using SpMat = Eigen::SparseMatrix<double, Eigen::ColMajor>;
using Triplet = Eigen::Triplet<double>;

constexpr double kInf = std::numeric_limits<double>::infinity();
const double kSqrt2 = std::sqrt(2.0);

struct Layout {
    int l = 0;
    std::vector<int> q, q_off;
    std::vector<int> s, s_off;
    int m = 0;
    int degree = 0;
};

MatrixXd smat(const VectorXd& v, int off, int d) {
    MatrixXd out(d, d);
    for (int j = 0; j < d; ++j) {
        for (int i = 0; i < j; ++i) out(i, j) = out(j, i) = v(off + svec_index(i, j)) / kSqrt2;
        out(j, j) = v(off + svec_index(j, j));
    }
    return out;
}

void svec_into(const MatrixXd& m, VectorXd& v, int off) {
    const int d = static_cast<int>(m.rows());
    for (int j = 0; j < d; ++j) {
        for (int i = 0; i < j; ++i) v(off + svec_index(i, j)) = 0.5 * (m(i, j) + m(j, i)) * kSqrt2;
        v(off + svec_index(j, j)) = m(j, j);
    }
}

VectorXd identity(const Layout& L) {
    VectorXd e = VectorXd::Zero(L.m);
    e.head(L.l).setOnes();
    for (int off : L.q_off) e(off) = 1.0;
    for (std::size_t k = 0; k < L.s.size(); ++k) {
        for (int i = 0; i < L.s[k]; ++i) e(L.s_off[k] + svec_index(i, i)) = 1.0;
    }
    return e;
}

/// Smallest "eigenvalue" of x with respect to the cone: x + t e in K iff t >= -min_eig(x).
double min_eig(const Layout& L, const VectorXd& x) {
    double lo = kInf;
    if (L.l > 0) lo = x.head(L.l).minCoeff();
    for (std::size_t k = 0; k < L.q.size(); ++k) {
        const int off = L.q_off[k], n = L.q[k];
        lo = std::min(lo, x(off) - x.segment(off + 1, n - 1).norm());
    }
    for (std::size_t k = 0; k < L.s.size(); ++k) {
        const MatrixXd m = smat(x, L.s_off[k], L.s[k]);
        lo = std::min(lo, Eigen::SelfAdjointEigenSolver<MatrixXd>(m, Eigen::EigenvaluesOnly).eigenvalues()(0));
    }
    return lo;
}

VectorXd jordan(const Layout& L, const VectorXd& u, const VectorXd& v) {
    VectorXd w(L.m);
    w.head(L.l) = u.head(L.l).cwiseProduct(v.head(L.l));
    for (std::size_t k = 0; k < L.q.size(); ++k) {
        const int off = L.q_off[k], n = L.q[k];
        w(off) = u.segment(off, n).dot(v.segment(off, n));
        w.segment(off + 1, n - 1) = u(off) * v.segment(off + 1, n - 1) + v(off) * u.segment(off + 1, n - 1);
    }
    for (std::size_t k = 0; k < L.s.size(); ++k) {
        const MatrixXd a = smat(u, L.s_off[k], L.s[k]);
        const MatrixXd b = smat(v, L.s_off[k], L.s[k]);
        svec_into(0.5 * (a * b + b * a), w, L.s_off[k]);
    }
    return w;
}

double jnorm(const VectorXd& x, int off, int n) {
    const double tail = x.segment(off + 1, n - 1).norm();
    return std::sqrt(std::max((x(off) - tail) * (x(off) + tail), 0.0));
}

struct Scaling {
    VectorXd d;
    std::vector<double> beta;
    std::vector<VectorXd> v;
    std::vector<MatrixXd> R, Rinv;
    std::vector<VectorXd> lambda_psd;
    VectorXd lambda;
};

enum class Op { W, WT, Winv, WinvT };

VectorXd apply(const Layout& L, const Scaling& S, const VectorXd& u, Op op) {
    VectorXd out(L.m);
    const bool forward = op == Op::W || op == Op::WT;
    if (forward) {
        out.head(L.l) = S.d.cwiseProduct(u.head(L.l));
    } else {
        out.head(L.l) = u.head(L.l).cwiseQuotient(S.d);
    }
    for (std::size_t k = 0; k < L.q.size(); ++k) {
        const int off = L.q_off[k], n = L.q[k];
        const VectorXd& v = S.v[k];
        VectorXd ju = u.segment(off, n);
        ju.tail(n - 1) *= -1.0;
        if (forward) {
            out.segment(off, n) = S.beta[k] * (2.0 * v.dot(u.segment(off, n)) * v - ju);
        } else {
            VectorXd jv = v;
            jv.tail(n - 1) *= -1.0;
            out.segment(off, n) = (2.0 * jv.dot(u.segment(off, n)) * jv - ju) / S.beta[k];
        }
    }
    for (std::size_t k = 0; k < L.s.size(); ++k) {
        const MatrixXd U = smat(u, L.s_off[k], L.s[k]);
        MatrixXd res;
        switch (op) {
            case Op::W: res = S.R[k].transpose() * U * S.R[k]; break;
            case Op::WT: res = S.R[k] * U * S.R[k].transpose(); break;
            case Op::Winv: res = S.Rinv[k].transpose() * U * S.Rinv[k]; break;
            case Op::WinvT: res = S.Rinv[k] * U * S.Rinv[k].transpose(); break;
        }
        svec_into(res, out, L.s_off[k]);
    }
    return out;
}

Scaling nt_scaling(const Layout& L, const VectorXd& s, const VectorXd& z) {
    Scaling S;
    S.d = (s.head(L.l).array() / z.head(L.l).array()).sqrt();
    for (std::size_t k = 0; k < L.q.size(); ++k) {
        const int off = L.q_off[k], n = L.q[k];
        const double aa = jnorm(s, off, n);
        const double bb = jnorm(z, off, n);
        const VectorXd sn = s.segment(off, n) / aa;
        VectorXd jzn = z.segment(off, n) / bb;
        const double cc = std::sqrt((sn.dot(jzn) + 1.0) / 2.0);
        jzn.tail(n - 1) *= -1.0;
        VectorXd v = (sn + jzn) / (2.0 * cc);
        v(0) += 1.0;
        v /= std::sqrt(2.0 * v(0));
        S.beta.push_back(std::sqrt(aa / bb));
        S.v.push_back(std::move(v));
    }
    for (std::size_t k = 0; k < L.s.size(); ++k) {
        const int d = L.s[k];
        auto factor = [&](const VectorXd& x) {
            const Eigen::SelfAdjointEigenSolver<MatrixXd> eig(smat(x, L.s_off[k], d));
            const VectorXd roots = eig.eigenvalues().cwiseMax(std::numeric_limits<double>::min()).cwiseSqrt();
            return MatrixXd(eig.eigenvectors() * roots.asDiagonal());
        };
        const MatrixXd ls = factor(s);
        const MatrixXd lz = factor(z);
        const Eigen::JacobiSVD<MatrixXd> svd(lz.transpose() * ls, Eigen::ComputeFullU | Eigen::ComputeFullV);
        const VectorXd sig = svd.singularValues().cwiseMax(std::numeric_limits<double>::min());
        const VectorXd isq = sig.cwiseSqrt().cwiseInverse();
        S.R.push_back(ls * svd.matrixV() * isq.asDiagonal());
        S.Rinv.push_back(isq.asDiagonal() * svd.matrixU().transpose() * lz.transpose());
        S.lambda_psd.push_back(sig);
    }
    S.lambda = apply(L, S, z, Op::W);
    // The PSD part of lambda is diagonal by construction; store it exactly.
    for (std::size_t k = 0; k < L.s.size(); ++k) {
        S.lambda.segment(L.s_off[k], svec_size(L.s[k])).setZero();
        for (int i = 0; i < L.s[k]; ++i) S.lambda(L.s_off[k] + svec_index(i, i)) = S.lambda_psd[k](i);
    }
    return S;
}

/// Solves lambda o u = v.
VectorXd lambda_solve(const Layout& L, const Scaling& S, const VectorXd& v) {
    VectorXd u(L.m);
    u.head(L.l) = v.head(L.l).cwiseQuotient(S.lambda.head(L.l));
    for (std::size_t k = 0; k < L.q.size(); ++k) {
        const int off = L.q_off[k], n = L.q[k];
        const auto lam = S.lambda.segment(off, n);
        const double tail = lam.tail(n - 1).norm();
        const double det = (lam(0) - tail) * (lam(0) + tail);
        const double u0 = (lam(0) * v(off) - lam.tail(n - 1).dot(v.segment(off + 1, n - 1))) / det;
        u(off) = u0;
        u.segment(off + 1, n - 1) = (v.segment(off + 1, n - 1) - u0 * lam.tail(n - 1)) / lam(0);
    }
    for (std::size_t k = 0; k < L.s.size(); ++k) {
        const int d = L.s[k], off = L.s_off[k];
        const VectorXd& lam = S.lambda_psd[k];
        for (int j = 0; j < d; ++j) {
            for (int i = 0; i <= j; ++i) u(off + svec_index(i, j)) = 2.0 * v(off + svec_index(i, j)) / (lam(i) + lam(j));
        }
    }
    return u;
}

/// Largest step a with lambda + a * dir in K.
double max_step(const Layout& L, const Scaling& S, const VectorXd& dir) {
    double alpha = kInf;
    for (int i = 0; i < L.l; ++i) {
        if (dir(i) < 0.0) alpha = std::min(alpha, -S.lambda(i) / dir(i));
    }
    for (std::size_t k = 0; k < L.q.size(); ++k) {
        const int off = L.q_off[k], n = L.q[k];
        const auto x = S.lambda.segment(off, n);
        const auto d = dir.segment(off, n);
        const double a = d(0) * d(0) - d.tail(n - 1).squaredNorm();
        const double b = 2.0 * (x(0) * d(0) - x.tail(n - 1).dot(d.tail(n - 1)));
        const double c = std::max(x(0) * x(0) - x.tail(n - 1).squaredNorm(), 0.0);
        double root = kInf;
        if (a == 0.0) {
            if (b < 0.0) root = -c / b;
        } else {
            const double disc = b * b - 4.0 * a * c;
            if (disc >= 0.0) {
                const double qq = -0.5 * (b + std::copysign(std::sqrt(disc), b));
                for (double r : {qq / a, qq != 0.0 ? c / qq : kInf}) {
                    if (r > 0.0) root = std::min(root, r);
                }
            }
        }
        alpha = std::min(alpha, root);
    }
    for (std::size_t k = 0; k < L.s.size(); ++k) {
        const VectorXd isq = S.lambda_psd[k].cwiseSqrt().cwiseInverse();
        const MatrixXd m = isq.asDiagonal() * smat(dir, L.s_off[k], L.s[k]) * isq.asDiagonal();
        const double lo = Eigen::SelfAdjointEigenSolver<MatrixXd>(m, Eigen::EigenvaluesOnly).eigenvalues()(0);
        if (lo < 0.0) alpha = std::min(alpha, -1.0 / lo);
    }
    return alpha;
}

// ---------------------------------------------------------------------------

struct Block {
    int off = 0;
    int len = 0;
    std::vector<int> cols;  // base-system indices of the variables in the block
    SpMat g;                // block rows of G (only x_rows for reduced PSD blocks) over `cols`

    // PSD blocks: rows holding a single variable that appears nowhere else.
    // Those variables are eliminated from the base system in closed form.
    std::vector<int> f_rows, f_vars, x_rows;
    VectorXd f_coef;
    std::vector<std::pair<int, int>> ij;

    bool reduced() const noexcept { return !f_rows.empty(); }
};

struct Elimination {
    std::vector<Block> blocks;  // [nonneg], soc..., psd...
    std::vector<int> base_of;   // variable -> base index, -1 when eliminated
    std::vector<int> base_vars;
    SpMat A_base;
};

struct Problem {
    int nv = 0;
    VectorXd c;
    double c0 = 0.0;
    SpMat G, A;
    VectorXd h, b;
    Layout layout;
    Elimination reduced;  // PSD-private variables eliminated
    Elimination full;     // every variable in the base system
};

using RowSpMat = Eigen::SparseMatrix<double, Eigen::RowMajor>;

Block make_block(const RowSpMat& g_rows, const std::vector<int>& base_of, int off, int len,
                 const std::vector<int>& keep_rows) {
    Block blk;
    blk.off = off;
    blk.len = len;
    std::vector<int> col_map(base_of.size(), -1);
    std::vector<Triplet> trips;
    for (std::size_t r = 0; r < keep_rows.size(); ++r) {
        for (RowSpMat::InnerIterator it(g_rows, off + keep_rows[r]); it; ++it) {
            const auto var = static_cast<std::size_t>(it.col());
            if (col_map[var] < 0) {
                col_map[var] = static_cast<int>(blk.cols.size());
                blk.cols.push_back(base_of[var]);
            }
            trips.emplace_back(static_cast<int>(r), col_map[var], it.value());
        }
    }
    blk.g.resize(static_cast<int>(keep_rows.size()), static_cast<int>(blk.cols.size()));
    blk.g.setFromTriplets(trips.begin(), trips.end());
    return blk;
}

Elimination eliminate(const Problem& P, const RowSpMat& g_rows, const std::vector<std::vector<int>>& private_rows) {
    const Layout& L = P.layout;
    Elimination E;
    E.base_of.assign(static_cast<std::size_t>(P.nv), 0);
    for (std::size_t k = 0; k < L.s.size(); ++k) {
        for (int r : private_rows[k]) {
            const int row = L.s_off[k] + r;
            E.base_of[static_cast<std::size_t>(g_rows.innerIndexPtr()[g_rows.outerIndexPtr()[row]])] = -1;
        }
    }
    for (int v = 0; v < P.nv; ++v) {
        if (E.base_of[static_cast<std::size_t>(v)] < 0) continue;
        E.base_of[static_cast<std::size_t>(v)] = static_cast<int>(E.base_vars.size());
        E.base_vars.push_back(v);
    }
    {
        std::vector<Triplet> ab;
        for (int col = 0; col < P.A.outerSize(); ++col) {
            for (SpMat::InnerIterator it(P.A, col); it; ++it) {
                ab.emplace_back(static_cast<int>(it.row()), E.base_of[static_cast<std::size_t>(col)], it.value());
            }
        }
        E.A_base.resize(P.A.rows(), static_cast<int>(E.base_vars.size()));
        E.A_base.setFromTriplets(ab.begin(), ab.end());
    }

    auto all_rows = [](int len) {
        std::vector<int> rows(static_cast<std::size_t>(len));
        for (int i = 0; i < len; ++i) rows[static_cast<std::size_t>(i)] = i;
        return rows;
    };
    if (L.l > 0) E.blocks.push_back(make_block(g_rows, E.base_of, 0, L.l, all_rows(L.l)));
    for (std::size_t k = 0; k < L.q.size(); ++k) {
        E.blocks.push_back(make_block(g_rows, E.base_of, L.q_off[k], L.q[k], all_rows(L.q[k])));
    }
    for (std::size_t k = 0; k < L.s.size(); ++k) {
        const int d = L.s[k];
        const int len = svec_size(d);
        const std::vector<int>& fr = private_rows[k];
        std::vector<int> xr;
        for (int r = 0, next = 0; r < len; ++r) {
            if (next < static_cast<int>(fr.size()) && fr[static_cast<std::size_t>(next)] == r) {
                ++next;
            } else {
                xr.push_back(r);
            }
        }
        Block blk = make_block(g_rows, E.base_of, L.s_off[k], len, fr.empty() ? all_rows(len) : xr);
        if (!fr.empty()) {
            blk.f_rows = fr;
            blk.x_rows = xr;
            blk.f_coef.resize(static_cast<Eigen::Index>(fr.size()));
            for (std::size_t i = 0; i < fr.size(); ++i) {
                const int row = L.s_off[k] + fr[i];
                const int pos = g_rows.outerIndexPtr()[row];
                blk.f_vars.push_back(g_rows.innerIndexPtr()[pos]);
                blk.f_coef(static_cast<Eigen::Index>(i)) = g_rows.valuePtr()[pos];
            }
        }
        blk.ij.resize(static_cast<std::size_t>(len));
        for (int j = 0; j < d; ++j) {
            for (int i = 0; i <= j; ++i) blk.ij[static_cast<std::size_t>(svec_index(i, j))] = {i, j};
        }
        E.blocks.push_back(std::move(blk));
    }
    return E;
}

Problem build_problem(const ConicProgram& program) {
    Problem P;
    P.nv = program.num_vars();
    P.c = VectorXd::Zero(P.nv);
    for (const auto& [v, coef] : program.objective().terms()) P.c(v) += coef;
    P.c0 = program.objective().constant();

    std::vector<const ConeConstraint*> zero, nonneg, soc, psd;
    for (const ConeConstraint& cone : program.constraints()) {
        switch (cone.kind) {
            case ConeKind::zero: zero.push_back(&cone); break;
            case ConeKind::nonnegative: nonneg.push_back(&cone); break;
            case ConeKind::second_order: soc.push_back(&cone); break;
            case ConeKind::psd: psd.push_back(&cone); break;
        }
    }

    std::vector<Triplet> gt, at;
    std::vector<double> h, b;
    auto push_g = [&](const AffineExpr& e) {
        const int row = static_cast<int>(h.size());
        for (const auto& [v, coef] : e.terms()) gt.emplace_back(row, v, -coef);
        h.push_back(e.constant());
    };
    for (const auto* cone : zero) {
        for (const AffineExpr& e : cone->rows) {
            const int row = static_cast<int>(b.size());
            for (const auto& [v, coef] : e.terms()) at.emplace_back(row, v, coef);
            b.push_back(-e.constant());
        }
    }
    Layout& L = P.layout;
    for (const auto* cone : nonneg) {
        for (const AffineExpr& e : cone->rows) push_g(e);
    }
    L.l = static_cast<int>(h.size());
    for (const auto* cone : soc) {
        L.q_off.push_back(static_cast<int>(h.size()));
        L.q.push_back(static_cast<int>(cone->rows.size()));
        for (const AffineExpr& e : cone->rows) push_g(e);
    }
    for (const auto* cone : psd) {
        L.s_off.push_back(static_cast<int>(h.size()));
        L.s.push_back(cone->psd_dim);
        for (const AffineExpr& e : cone->rows) push_g(e);
    }
    L.m = static_cast<int>(h.size());
    L.degree = L.l + static_cast<int>(L.q.size());
    for (int d : L.s) L.degree += d;

    P.G.resize(L.m, P.nv);
    P.G.setFromTriplets(gt.begin(), gt.end());
    P.h = Eigen::Map<const VectorXd>(h.data(), static_cast<Eigen::Index>(h.size()));
    P.A.resize(static_cast<int>(b.size()), P.nv);
    P.A.setFromTriplets(at.begin(), at.end());
    P.b = Eigen::Map<const VectorXd>(b.data(), static_cast<Eigen::Index>(b.size()));

    // Variables used exactly once, in a single-term PSD row, and not in A.
    const RowSpMat g_rows = P.G;
    std::vector<int> uses(static_cast<std::size_t>(P.nv), 0);
    for (int col = 0; col < P.G.outerSize(); ++col) {
        for (SpMat::InnerIterator it(P.G, col); it; ++it) ++uses[static_cast<std::size_t>(col)];
    }
    for (int col = 0; col < P.A.outerSize(); ++col) {
        for (SpMat::InnerIterator it(P.A, col); it; ++it) uses[static_cast<std::size_t>(col)] += 2;
    }
    std::vector<std::vector<int>> private_rows(L.s.size());
    for (std::size_t k = 0; k < L.s.size(); ++k) {
        for (int r = 0; r < svec_size(L.s[k]); ++r) {
            const int row = L.s_off[k] + r;
            if (g_rows.outerIndexPtr()[row + 1] - g_rows.outerIndexPtr()[row] != 1) continue;
            const int var = g_rows.innerIndexPtr()[g_rows.outerIndexPtr()[row]];
            if (uses[static_cast<std::size_t>(var)] == 1) private_rows[k].push_back(r);
        }
    }
    P.reduced = eliminate(P, g_rows, private_rows);
    P.full = eliminate(P, g_rows, std::vector<std::vector<int>>(L.s.size()));
    return P;
}

/// Symmetric Kronecker matrix of `p` in svec coordinates restricted to `rows`:
/// the map u -> svec(P smat(u) P).
MatrixXd skron(const MatrixXd& p, const std::vector<std::pair<int, int>>& ij, const std::vector<int>& rows) {
    const auto n = static_cast<Eigen::Index>(rows.size());
    MatrixXd out(n, n);
    for (Eigen::Index a = 0; a < n; ++a) {
        const auto [i, j] = ij[static_cast<std::size_t>(rows[static_cast<std::size_t>(a)])];
        const double sij = i == j ? 1.0 : kSqrt2;
        for (Eigen::Index b = 0; b <= a; ++b) {
            const auto [k, l] = ij[static_cast<std::size_t>(rows[static_cast<std::size_t>(b)])];
            const double skl = k == l ? 1.0 : kSqrt2;
            out(a, b) = out(b, a) = 0.5 * sij * skl * (p(i, k) * p(j, l) + p(i, l) * p(j, k));
        }
    }
    return out;
}

/// Factorization of the reduced KKT system
///   [ 0   A'  G'    ] [x]   [q1]
///   [ -A  0   0     ] [y] = [q2]
///   [ -G  0   W'W   ] [z]   [q3]
/// through M = G' (W'W)^{-1} G + A'A. Variables private to a PSD block are
/// eliminated with Schur complements of (W'W) restricted to that block.
class Kkt {
public:
    Kkt(const Problem& P, const Scaling& S, const Elimination& E) : P_(P), S_(S), E_(E) {
        const Layout& L = P.layout;
        const auto nb = static_cast<Eigen::Index>(E.base_vars.size());
        MatrixXd H = MatrixXd::Zero(nb, nb);
        std::size_t bi = 0;
        auto scatter = [&](const Block& blk, const MatrixXd& local) {
            for (std::size_t a = 0; a < blk.cols.size(); ++a) {
                for (std::size_t c = 0; c < blk.cols.size(); ++c) {
                    H(blk.cols[a], blk.cols[c]) += local(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(c));
                }
            }
        };
        if (L.l > 0) {
            const Block& blk = E.blocks[bi++];
            const VectorXd phi = S.d.cwiseProduct(S.d).cwiseInverse();
            const SpMat scaled = phi.asDiagonal() * blk.g;
            scatter(blk, MatrixXd(blk.g.transpose() * scaled));
        }
        for (std::size_t k = 0; k < L.q.size(); ++k) {
            const Block& blk = E.blocks[bi++];
            const int n = L.q[k];
            VectorXd jv = S.v[k];
            jv.tail(n - 1) *= -1.0;
            MatrixXd winv = 2.0 * jv * jv.transpose();
            winv.diagonal()(0) -= 1.0;
            winv.diagonal().tail(n - 1).array() += 1.0;
            winv /= S.beta[k];
            const MatrixXd phi = winv * winv;
            const MatrixXd t = phi * blk.g;
            scatter(blk, blk.g.transpose() * t);
        }
        psd_.resize(L.s.size());
        for (std::size_t k = 0; k < L.s.size(); ++k) {
            const Block& blk = E.blocks[bi++];
            PsdPart& part = psd_[k];
            part.block = &blk;
            if (blk.reduced()) {
                part.p = S.R[k] * S.R[k].transpose();
                part.psi_xx.compute(skron(part.p, blk.ij, blk.x_rows));
                if (part.psi_xx.info() != Eigen::Success) return;
                const MatrixXd t = part.psi_xx.matrixL().solve(MatrixXd(blk.g));
                MatrixXd local = MatrixXd::Zero(t.cols(), t.cols());
                local.selfadjointView<Eigen::Lower>().rankUpdate(t.transpose());
                scatter(blk, local.selfadjointView<Eigen::Lower>());
            } else {
                const MatrixXd gm = S.Rinv[k].transpose() * S.Rinv[k];
                std::vector<int> rows(static_cast<std::size_t>(blk.len));
                for (int r = 0; r < blk.len; ++r) rows[static_cast<std::size_t>(r)] = r;
                const MatrixXd t = skron(gm, blk.ij, rows) * blk.g;
                scatter(blk, blk.g.transpose() * t);
            }
        }
        if (P.A.rows() > 0) H += MatrixXd(E.A_base.transpose() * E.A_base);

        double reg = 0.0;
        const double scale = nb > 0 ? std::max(1.0, H.diagonal().cwiseAbs().maxCoeff()) : 1.0;
        for (int attempt = 0; attempt < 8; ++attempt) {
            MatrixXd M = H;
            if (reg > 0.0) M.diagonal().array() += reg;
            llt_.compute(M);
            if (llt_.info() == Eigen::Success) break;
            reg = reg == 0.0 ? 1e-14 * scale : reg * 100.0;
        }
        ok_ = llt_.info() == Eigen::Success;
        if (ok_ && P.A.rows() > 0) {
            ma_.resize(P.nv, P.A.rows());
            const MatrixXd at = MatrixXd(P.A.transpose());
            for (Eigen::Index c = 0; c < at.cols(); ++c) ma_.col(c) = solve_m(at.col(c));
            schur_.compute(P.A * ma_);
            ok_ = schur_.info() == Eigen::Success;
        }
    }

    bool ok() const noexcept { return ok_; }
    /// False once a solve left a relative KKT residual above 1e-8 after refinement.
    bool accurate() const noexcept { return worst_ <= 1e-8; }

    void solve(const VectorXd& q1, const VectorXd& q2, const VectorXd& q3, VectorXd& x, VectorXd& y,
               VectorXd& z) const {
        solve_once(q1, q2, q3, x, y, z);
        const double ref = std::max({1.0, q1.lpNorm<Eigen::Infinity>(), q2.size() ? q2.lpNorm<Eigen::Infinity>() : 0.0,
                                     q3.lpNorm<Eigen::Infinity>()});
        for (int round = 0; round < 3; ++round) {
            const VectorXd e1 = q1 - P_.A.transpose() * y - P_.G.transpose() * z;
            const VectorXd e2 = q2 + P_.A * x;
            const VectorXd wz = apply(P_.layout, S_, apply(P_.layout, S_, z, Op::W), Op::WT);
            const VectorXd e3 = q3 + P_.G * x - wz;
            const double err = std::max({e1.lpNorm<Eigen::Infinity>(), e2.size() ? e2.lpNorm<Eigen::Infinity>() : 0.0,
                                         e3.lpNorm<Eigen::Infinity>()});
            if (!(err > 1e-13 * ref)) break;
            if (round == 2) worst_ = std::max(worst_, std::isfinite(err) ? err / ref : kInf);
            VectorXd dx, dy, dz;
            solve_once(e1, e2, e3, dx, dy, dz);
            x += dx;
            y += dy;
            z += dz;
        }
    }

private:
    struct PsdPart {
        const Block* block = nullptr;
        MatrixXd p;  // R R', so that W'W u = svec(P smat(u) P)
        Eigen::LLT<MatrixXd> psi_xx;
    };

    static VectorXd gather(const VectorXd& v, const std::vector<int>& idx) {
        VectorXd out(static_cast<Eigen::Index>(idx.size()));
        for (std::size_t i = 0; i < idx.size(); ++i) out(static_cast<Eigen::Index>(i)) = v(idx[i]);
        return out;
    }

    /// W'W applied to a block-local svec vector.
    static VectorXd psi(const PsdPart& part, const VectorXd& u) {
        const auto d = static_cast<int>(part.p.rows());
        VectorXd out(u.size());
        svec_into(part.p * smat(u, 0, d) * part.p, out, 0);
        return out;
    }

    VectorXd solve_m(const VectorXd& r) const {
        VectorXd rb = gather(r, E_.base_vars);
        std::vector<VectorXd> yf(psd_.size()), yx(psd_.size());
        for (std::size_t k = 0; k < psd_.size(); ++k) {
            const PsdPart& part = psd_[k];
            const Block& blk = *part.block;
            if (!blk.reduced()) continue;
            VectorXd u = VectorXd::Zero(blk.len);
            const VectorXd v = gather(r, blk.f_vars).cwiseQuotient(blk.f_coef);
            for (std::size_t i = 0; i < blk.f_rows.size(); ++i) u(blk.f_rows[i]) = v(static_cast<Eigen::Index>(i));
            const VectorXd y = psi(part, u);
            yf[k] = gather(y, blk.f_rows);
            yx[k] = gather(y, blk.x_rows);
            const VectorXd w = blk.g.transpose() * part.psi_xx.solve(yx[k]);
            for (std::size_t c = 0; c < blk.cols.size(); ++c) rb(blk.cols[c]) += w(static_cast<Eigen::Index>(c));
        }
        const VectorXd xb = llt_.solve(rb);
        VectorXd x(P_.nv);
        for (std::size_t i = 0; i < E_.base_vars.size(); ++i) x(E_.base_vars[i]) = xb(static_cast<Eigen::Index>(i));
        for (std::size_t k = 0; k < psd_.size(); ++k) {
            const PsdPart& part = psd_[k];
            const Block& blk = *part.block;
            if (!blk.reduced()) continue;
            const VectorXd gx = blk.g * gather(xb, blk.cols);
            const VectorXd t = part.psi_xx.solve(gx - yx[k]);
            VectorXd u = VectorXd::Zero(blk.len);
            for (std::size_t i = 0; i < blk.x_rows.size(); ++i) u(blk.x_rows[i]) = t(static_cast<Eigen::Index>(i));
            const VectorXd xf = (yf[k] + gather(psi(part, u), blk.f_rows)).cwiseQuotient(blk.f_coef);
            for (std::size_t i = 0; i < blk.f_vars.size(); ++i) x(blk.f_vars[i]) = xf(static_cast<Eigen::Index>(i));
        }
        return x;
    }

    VectorXd phi(const VectorXd& u) const {
        return apply(P_.layout, S_, apply(P_.layout, S_, u, Op::WinvT), Op::Winv);
    }

    void solve_once(const VectorXd& q1, const VectorXd& q2, const VectorXd& q3, VectorXd& x, VectorXd& y,
                    VectorXd& z) const {
        const VectorXd f = q1 - P_.G.transpose() * phi(q3);
        if (P_.A.rows() > 0) {
            const VectorXd g = -q2;
            const VectorXd t = solve_m(f + P_.A.transpose() * g);
            y = schur_.solve(P_.A * t - g);
            x = t - ma_ * y;
        } else {
            y = VectorXd(0);
            x = solve_m(f);
        }
        z = phi(q3 + P_.G * x);
    }

    const Problem& P_;
    const Scaling& S_;
    const Elimination& E_;
    std::vector<PsdPart> psd_;
    mutable double worst_ = 0.0;
    Eigen::LLT<MatrixXd> llt_;
    Eigen::LLT<MatrixXd> schur_;
    MatrixXd ma_;
    bool ok_ = false;
};

Scaling identity_scaling(const Layout& L) {
    Scaling S;
    S.d = VectorXd::Ones(L.l);
    for (int n : L.q) {
        S.beta.push_back(1.0);
        VectorXd v = VectorXd::Zero(n);
        v(0) = 1.0;
        S.v.push_back(v);
    }
    for (int d : L.s) {
        S.R.push_back(MatrixXd::Identity(d, d));
        S.Rinv.push_back(MatrixXd::Identity(d, d));
        S.lambda_psd.push_back(VectorXd::Ones(d));
    }
    S.lambda = identity(L);
    return S;
}

ConicSolution trivial_solution(const ConicProgram& program) {
    ConicSolution sol;
    sol.audit = audit_feasibility(program, {});
    sol.status = sol.audit.ok(1e-12) ? SolveStatus::optimal : SolveStatus::infeasible;
    sol.objective_value = program.objective().constant();
    return sol;
}

}  // namespace

ConicSolution solve(const ConicProgram& program, const SolverSettings& settings) {
    if (program.num_vars() == 0) return trivial_solution(program);

    const Problem P = build_problem(program);
    const Layout& L = P.layout;
    const VectorXd e = identity(L);

    const double resx0 = std::max(1.0, P.c.norm());
    const double resy0 = std::max(1.0, P.b.norm());
    const double resz0 = std::max(1.0, P.h.norm());

    VectorXd x, y, z, s;
    double tau = 1.0, kappa = 1.0;
    {
        const Scaling S = identity_scaling(L);
        const Kkt kkt(P, S, P.full);
        VectorXd xd, zp;
        kkt.solve(VectorXd::Zero(P.nv), -P.b, -P.h, x, y, zp);
        s = -zp;
        kkt.solve(-P.c, VectorXd::Zero(P.b.size()), VectorXd::Zero(L.m), xd, y, z);
        if (L.m > 0) {
            const double ts = -min_eig(L, s);
            if (ts >= -1e-8 * std::max(s.norm(), 1.0)) s += (1.0 + ts) * e;
            const double tz = -min_eig(L, z);
            if (tz >= -1e-8 * std::max(z.norm(), 1.0)) z += (1.0 + tz) * e;
        }
    }

    ConicSolution best;
    double best_merit = kInf;
    auto snapshot = [&](SolveStatus status, int iter, double pres, double dres, double gap) {
        ConicSolution sol;
        sol.status = status;
        sol.iterations = iter;
        sol.primal_residual = pres;
        sol.dual_residual = dres;
        sol.gap = gap;
        const VectorXd xp = x / tau;
        sol.primal.assign(xp.data(), xp.data() + xp.size());
        sol.objective_value = P.c.dot(xp) + P.c0;
        return sol;
    };
    auto finish_limit = [&](int iter) {
        ConicSolution sol = best.has_primal() ? best : snapshot(SolveStatus::numerical_limit, iter, kInf, kInf, kInf);
        sol.status = SolveStatus::numerical_limit;
        sol.iterations = iter;
        sol.audit = audit_feasibility(program, sol.primal);
        return sol;
    };

    int stalls = 0;
    bool use_full = P.reduced.base_vars.size() == P.full.base_vars.size();
    for (int iter = 0;; ++iter) {
        const VectorXd aty_gtz = P.A.transpose() * y + P.G.transpose() * z;
        const VectorXd ax = P.A * x;
        const VectorXd gx = P.G * x;
        const VectorXd rx = aty_gtz + P.c * tau;
        const VectorXd ry = P.b * tau - ax;
        const VectorXd rz = P.h * tau - gx - s;
        const double cx = P.c.dot(x), by = P.b.dot(y), hz = P.h.dot(z);
        const double r4 = -cx - by - hz - kappa;
        const double gap = s.dot(z);

        const double pcost = cx / tau, dcost = -(by + hz) / tau;
        const double pres = std::max(ry.norm() / tau / resy0, rz.norm() / tau / resz0);
        const double dres = rx.norm() / tau / resx0;
        const double gapn = gap / (tau * tau);
        double relgap = kInf;
        if (pcost < 0.0) {
            relgap = gapn / -pcost;
        } else if (dcost > 0.0) {
            relgap = gapn / dcost;
        }

        if (!std::isfinite(pres) || !std::isfinite(dres) || !std::isfinite(gapn)) return finish_limit(iter);

        if (pres <= settings.feastol && dres <= settings.feastol &&
            (gapn <= settings.abstol || relgap <= settings.reltol)) {
            ConicSolution sol = snapshot(SolveStatus::optimal, iter, pres, dres, gapn);
            sol.audit = audit_feasibility(program, sol.primal);
            if (!sol.audit.ok(1e-6)) sol.status = SolveStatus::numerical_limit;
            return sol;
        }
        if (by + hz < 0.0 && aty_gtz.norm() / resx0 / -(by + hz) <= settings.feastol) {
            ConicSolution sol;
            sol.status = SolveStatus::infeasible;
            sol.iterations = iter;
            return sol;
        }
        if (cx < 0.0 && std::max(ax.norm() / resy0, (gx + s).norm() / resz0) / -cx <= settings.feastol) {
            ConicSolution sol;
            sol.status = SolveStatus::unbounded;
            sol.iterations = iter;
            return sol;
        }

        const double merit = std::max({pres, dres, std::min(gapn, relgap)});
        if (merit < best_merit) {
            best_merit = merit;
            best = snapshot(SolveStatus::numerical_limit, iter, pres, dres, gapn);
        }
        if (iter >= settings.max_iter) return finish_limit(iter);

        const Scaling S = nt_scaling(L, s, z);
        if (!S.lambda.allFinite()) return finish_limit(iter);
        const double mu = (gap + tau * kappa) / (L.degree + 1);
        const VectorXd lam_sq = jordan(L, S.lambda, S.lambda);

        struct Direction {
            VectorXd dx, dy, dz, ds, ds_scaled, dz_scaled;
            double dtau = 0.0, dkappa = 0.0;
        };
        auto step_limit = [&](const Direction& d) {
            double a = std::min(max_step(L, S, d.ds_scaled), max_step(L, S, d.dz_scaled));
            if (d.dtau < 0.0) a = std::min(a, -tau / d.dtau);
            if (d.dkappa < 0.0) a = std::min(a, -kappa / d.dkappa);
            return a;
        };
        auto predictor_corrector = [&](const Kkt& kkt) {
            VectorXd w_x, w_y, w_z;
            kkt.solve(P.c, P.b, P.h, w_x, w_y, w_z);
            const double w_dot = P.c.dot(w_x) + P.b.dot(w_y) + P.h.dot(w_z) + kappa / tau;
            auto direction = [&](const VectorXd& rc, double rtk) {
                Direction d;
                const VectorXd lrc = lambda_solve(L, S, rc);
                const VectorXd q3 = -rz + apply(L, S, lrc, Op::WT);
                const double q4 = -r4 + rtk / tau;
                VectorXd px, py, pz;
                kkt.solve(-rx, -ry, q3, px, py, pz);
                d.dtau = (q4 + P.c.dot(px) + P.b.dot(py) + P.h.dot(pz)) / w_dot;
                d.dx = px - d.dtau * w_x;
                d.dy = py - d.dtau * w_y;
                d.dz = pz - d.dtau * w_z;
                d.dz_scaled = apply(L, S, d.dz, Op::W);
                d.ds_scaled = lrc - d.dz_scaled;
                d.ds = apply(L, S, d.ds_scaled, Op::WT);
                d.dkappa = (rtk - kappa * d.dtau) / tau;
                return d;
            };
            const Direction aff = direction(-lam_sq, -tau * kappa);
            const double alpha_aff = std::min(1.0, step_limit(aff));
            const double sigma = std::pow(1.0 - alpha_aff, 3);
            const VectorXd rc = -lam_sq - jordan(L, aff.ds_scaled, aff.dz_scaled) + sigma * mu * e;
            const double rtk = -tau * kappa - aff.dtau * aff.dkappa + sigma * mu;
            return direction(rc, rtk);
        };

        // The reduced system is cheaper but loses accuracy once the scaling
        // becomes badly conditioned; from then on the full system is used.
        std::optional<Direction> found;
        if (!use_full) {
            const Kkt kkt(P, S, P.reduced);
            if (kkt.ok()) {
                Direction d = predictor_corrector(kkt);
                if (kkt.accurate()) found = std::move(d);
            }
            if (!found) use_full = true;
        }
        if (!found) {
            const Kkt kkt(P, S, P.full);
            if (!kkt.ok()) return finish_limit(iter);
            found = predictor_corrector(kkt);
        }
        const Direction& dir = *found;
        const double alpha = std::min(1.0, 0.99 * step_limit(dir));
        if (!std::isfinite(alpha) || !dir.dx.allFinite()) return finish_limit(iter);

        stalls = alpha < 1e-10 ? stalls + 1 : 0;
        if (stalls >= 3) return finish_limit(iter);

        x += alpha * dir.dx;
        y += alpha * dir.dy;
        z += alpha * dir.dz;
        s += alpha * dir.ds;
        tau += alpha * dir.dtau;
        kappa += alpha * dir.dkappa;
    }
}

}  // namespace rmcse::conic
