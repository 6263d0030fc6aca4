#include "hkx/volterra.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "hkx/numerics.hpp"

namespace hkx {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Stencil of four grid nodes used to interpolate on interval [j, j+1] of a grid with N+1 nodes.
std::array<int, 4> stencil_for(int j, int N) {
    int s = std::clamp(j - 1, 0, N - 3);
    return {s, s + 1, s + 2, s + 3};
}

// Monomial coefficients (in u) of the Lagrange basis polynomials through nodes u[0..3].
std::array<std::array<double, 4>, 4> lagrange_coeffs(const std::array<double, 4>& u) {
    std::array<std::array<double, 4>, 4> c{};
    for (int l = 0; l < 4; ++l) {
        std::array<double, 4> p{1.0, 0.0, 0.0, 0.0};  // running product, degree grows
        double denom = 1.0;
        int deg = 0;
        for (int m = 0; m < 4; ++m) {
            if (m == l) continue;
            // multiply p by (u - u_m)
            std::array<double, 4> np{};
            for (int d = deg; d >= 0; --d) {
                np[d + 1] += p[d];
                np[d] -= u[m] * p[d];
            }
            p = np;
            ++deg;
            denom *= (u[l] - u[m]);
        }
        for (int d = 0; d < 4; ++d) c[l][d] = p[d] / denom;
    }
    return c;
}

double lagrange_eval(const std::array<double, 4>& u, int l, double x) {
    double v = 1.0;
    for (int m = 0; m < 4; ++m)
        if (m != l) v *= (x - u[m]) / (u[l] - u[m]);
    return v;
}

// M_k = int_0^h e^{-lam u} u^k du for k = 0..3.
std::array<cplx, 4> exp_moments(cplx lam, double h) {
    std::array<cplx, 4> M{};
    const cplx z = lam * h;
    if (std::abs(z) <= 4.0) {
        for (int k = 0; k < 4; ++k) {
            cplx term = 1.0, sum = 0.0;
            for (int m = 0; m < 60; ++m) {
                if (m > 0) term *= -z / static_cast<double>(m);
                const cplx add = term / static_cast<double>(m + k + 1);
                sum += add;
                if (std::abs(add) < 1e-18 * std::abs(sum) && m > 4) break;
            }
            M[k] = std::pow(h, k + 1) * sum;
        }
    } else {
        const cplx ez = std::exp(-z);
        M[0] = (1.0 - ez) / lam;
        double hk = 1.0;
        for (int k = 1; k < 4; ++k) {
            hk *= h;
            M[k] = (static_cast<double>(k) * M[k - 1] - hk * ez) / lam;
        }
    }
    return M;
}

}  // namespace

Kernel Kernel::zero(int n) {
    Kernel k;
    k.kind = Kind::ExpDiagonal;
    k.B = [n](double) { return Mat::Zero(n, n); };
    return k;
}

double op_norm(const Mat& m) {
    if (m.rows() == 1 && m.cols() == 1) return std::abs(m(0, 0));
    if (m.rows() == 2 && m.cols() == 2) {
        const double f2 = m.squaredNorm();
        const double det = std::abs(m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0));
        const double disc = std::max(0.0, f2 * f2 - 4.0 * det * det);
        return std::sqrt(0.5 * (f2 + std::sqrt(disc)));
    }
    Eigen::JacobiSVD<Mat> svd(m);
    return svd.singularValues().size() ? svd.singularValues()(0) : 0.0;
}

Vec GridSolution::at(double s) const {
    if (t.empty()) throw DomainError("empty grid solution");
    if (s < t.front() - 1e-12) throw DomainError("evaluation point before the grid start");
    if (s >= t.back()) return s == t.back() ? x.back() : tail;
    const int N = static_cast<int>(t.size()) - 1;
    if (N < 3) {
        size_t k = std::upper_bound(t.begin(), t.end(), s) - t.begin();
        const double w = (s - t[k - 1]) / (t[k] - t[k - 1]);
        return (1 - w) * x[k - 1] + w * x[k];
    }
    int j = static_cast<int>(std::upper_bound(t.begin(), t.end(), s) - t.begin()) - 1;
    j = std::clamp(j, 0, N - 1);
    auto st = stencil_for(j, N);
    std::array<double, 4> u{};
    for (int l = 0; l < 4; ++l) u[l] = t[st[l]] - t[j];
    Vec v = Vec::Zero(x[0].size());
    for (int l = 0; l < 4; ++l) v += lagrange_eval(u, l, s - t[j]) * x[st[l]];
    return v;
}

double GridSolution::sup_norm() const {
    double m = 0.0;
    for (const auto& v : x) m = std::max(m, v.norm());
    return m;
}

std::vector<double> make_grid(double T, double t_max, const GridSpec& spec) {
    if (!(t_max > T)) throw DomainError("grid end must exceed grid start");
    if (!(spec.h0 > 0.0) || !(spec.growth >= 1.0) || !(spec.h_max > 0.0)) throw DomainError("invalid grid spec");
    std::vector<double> g{T};
    double h = spec.h0;
    while (true) {
        const double he = std::min(h, spec.h_max);
        const double rem = t_max - g.back();
        if (rem <= 1.5 * he) {
            if (rem > he) g.push_back(g.back() + 0.5 * rem);
            g.push_back(t_max);
            break;
        }
        g.push_back(g.back() + he);
        h *= spec.growth;
    }
    // At least three intervals for the cubic stencils.
    while (g.size() < 4) {
        std::vector<double> r{g[0]};
        for (size_t i = 1; i < g.size(); ++i) {
            r.push_back(0.5 * (g[i - 1] + g[i]));
            r.push_back(g[i]);
        }
        g = r;
    }
    return g;
}

double choose_t_max(const IvpAtInfinity& problem, const GridSpec& spec) {
    const double alpha = problem.kernel.kind == Kernel::Kind::General ? problem.kernel.alpha : 1.0;
    auto nb = [&](double s) { return cplx(op_norm(problem.kernel.B(s))); };
    Quadrature q;
    q.abs_tol = 0.1 * spec.eps_tail / std::max(alpha, 1e-300);
    q.rel_tol = 1e-6;
    q.eps_tail = 0.01 * spec.eps_tail / std::max(alpha, 1e-300);
    double D = 1.0;
    for (int it = 0; it < 80; ++it) {
        const double tail = integrate_semi_infinite(nb, problem.T + D, q).value.real();
        if (alpha * tail < spec.eps_tail) return problem.T + D;
        D *= 1.25;
    }
    throw NumericalError("kernel tail does not fall below eps_tail; pass t_max explicitly");
}

VolterraOperator::VolterraOperator(const Kernel& kernel, int n, std::vector<double> grid, int gl_nodes)
    : k_(kernel), n_(n), t_(std::move(grid)) {
    if (!k_.B) throw DomainError("kernel needs B");
    if (k_.kind == Kernel::Kind::General && !k_.A) throw DomainError("general kernel needs A");
    const int N = static_cast<int>(t_.size()) - 1;
    if (N < 3) throw DomainError("grid needs at least three intervals");
    for (int i = 0; i <= N; ++i) {
        B_.push_back(k_.B(t_[i]));
        if (B_.back().rows() != n || B_.back().cols() != n) throw DomainError("B has wrong dimensions");
        if (k_.left) left_.push_back(k_.left(t_[i]));
    }
    std::vector<std::array<double, 4>> U(N);
    stencil_.resize(N);
    for (int j = 0; j < N; ++j) {
        stencil_[j] = stencil_for(j, N);
        for (int l = 0; l < 4; ++l) U[j][l] = t_[stencil_[j][l]] - t_[j];
    }

    if (k_.kind == Kernel::Kind::ExpDiagonal) {
        std::vector<Vec> Ln(N + 1, Vec::Zero(n));
        if (k_.L)
            for (int i = 0; i <= N; ++i) {
                Ln[i] = k_.L(t_[i]);
                if (Ln[i].size() != n) throw DomainError("L has wrong dimension");
            }
        V_.resize(N);
        E_.resize(N);
        std::vector<Vec> P(N, Vec::Zero(n));  // row-norm integrals per interval
        for (int j = 0; j < N; ++j) {
            const double h = t_[j + 1] - t_[j];
            const auto c = lagrange_coeffs(U[j]);
            for (int l = 0; l < 4; ++l) V_[j][l] = Vec::Zero(n);
            E_[j] = (Ln[j] - Ln[j + 1]).array().exp();
            for (int k = 0; k < n; ++k) {
                const cplx lam = (Ln[j + 1](k) - Ln[j](k)) / h;
                const auto M = exp_moments(lam, h);
                const auto Mr = exp_moments(lam.real(), h);
                for (int l = 0; l < 4; ++l) {
                    cplx w = 0.0;
                    double wr = 0.0;
                    for (int p = 0; p < 4; ++p) {
                        w += c[l][p] * M[p];
                        wr += c[l][p] * Mr[p].real();
                    }
                    const int sl = stencil_[j][l];
                    const cplx dev = Ln[sl](k) - Ln[j](k) - lam * U[j][l];
                    V_[j][l](k) = w * std::exp(-dev);
                    P[j](k) += wr * std::exp(-dev.real()) * B_[sl].row(k).norm();
                }
                P[j](k) = std::max(P[j](k).real(), 0.0);
            }
        }
        // lambda via the backward recursion of row-norm integrals.
        Vec Q = Vec::Zero(n);
        double lam_max = 0.0;
        for (int j = N - 1; j >= 0; --j) {
            for (int k = 0; k < n; ++k) Q(k) = P[j](k) + std::abs(E_[j](k)) * Q(k).real();
            double tot = 0.0;
            for (int k = 0; k < n; ++k) tot += Q(k).real();
            if (k_.left) tot *= op_norm(left_[j]);
            lam_max = std::max(lam_max, tot);
        }
        lambda_ = lam_max;
        return;
    }

    // General kernel: dense weights.
    std::vector<double> gx, gw;
    gauss_legendre(gl_nodes, gx, gw);
    W_ = Mat::Zero((N + 1) * n, (N + 1) * n);
    std::vector<std::vector<Mat>> Bg(N);
    for (int j = 0; j < N; ++j) {
        const double h = t_[j + 1] - t_[j];
        for (int m = 0; m < gl_nodes; ++m) Bg[j].push_back(k_.B(t_[j] + 0.5 * h * (1.0 + gx[m])));
    }
    double lam_max = 0.0;
    for (int i = 0; i < N; ++i) {
        double lam_i = 0.0;
        for (int j = i; j < N; ++j) {
            const double h = t_[j + 1] - t_[j];
            for (int m = 0; m < gl_nodes; ++m) {
                const double u = 0.5 * h * (1.0 + gx[m]);
                const double wt = 0.5 * h * gw[m];
                const Mat Ai = k_.A(t_[i], t_[j] + u);
                lam_i += wt * op_norm(Ai * Bg[j][m]);
                for (int l = 0; l < 4; ++l)
                    W_.block(i * n, stencil_[j][l] * n, n, n) += (wt * lagrange_eval(U[j], l, u)) * Ai;
            }
        }
        if (k_.left) lam_i *= op_norm(left_[i]);
        lam_max = std::max(lam_max, lam_i);
    }
    lambda_ = lam_max;
}

std::vector<Vec> VolterraOperator::apply(const std::vector<Vec>& phi) const {
    const int N = static_cast<int>(t_.size()) - 1;
    std::vector<Vec> f(N + 1);
    for (int i = 0; i <= N; ++i) f[i] = B_[i] * phi[i];
    std::vector<Vec> out(N + 1, Vec::Zero(n_));
    if (k_.kind == Kernel::Kind::ExpDiagonal) {
        Vec S = Vec::Zero(n_);
        for (int j = N - 1; j >= 0; --j) {
            Vec J = Vec::Zero(n_);
            for (int l = 0; l < 4; ++l) J += V_[j][l].cwiseProduct(f[stencil_[j][l]]);
            S = J + E_[j].cwiseProduct(S);
            out[j] = S;
        }
    } else {
        Vec F((N + 1) * n_);
        for (int i = 0; i <= N; ++i) F.segment(i * n_, n_) = f[i];
        const Vec G = W_ * F;
        for (int i = 0; i <= N; ++i) out[i] = G.segment(i * n_, n_);
    }
    if (k_.left)
        for (int i = 0; i <= N; ++i) out[i] = left_[i] * out[i];
    return out;
}

namespace {

GridSolution picard(const VolterraOperator& op, const std::vector<Vec>& forcing, std::vector<Vec> phi,
                    const GridSpec& spec, double tail_term) {
    GridSolution sol;
    sol.t = op.grid();
    sol.lambda = op.lambda();
    if (sol.lambda >= 1.0 - spec.margin)
        throw ContractionError("kernel is not a contraction: measured lambda = " + std::to_string(sol.lambda) +
                                   " >= " + std::to_string(1.0 - spec.margin),
                               sol.lambda);
    double diff = kInf;
    int it = 0;
    for (; it < spec.max_iter; ++it) {
        auto I = op.apply(phi);
        diff = 0.0;
        for (size_t i = 0; i < phi.size(); ++i) {
            Vec next = forcing[i] - I[i];
            diff = std::max(diff, (next - phi[i]).norm());
            phi[i] = std::move(next);
        }
        sol.sup_diffs.push_back(diff);
        if (diff < spec.tol) break;
    }
    if (!(diff < spec.tol))
        throw NumericalError("Picard iteration did not converge in " + std::to_string(spec.max_iter) +
                                 " iterations; last sup-difference " + std::to_string(diff),
                             {}, diff);
    sol.iterations = it + 1;
    sol.x = std::move(phi);
    const double lam = sol.lambda;
    sol.err = lam / (1.0 - lam) * diff + tail_term * sol.sup_norm() / (1.0 - lam);
    return sol;
}

void check_problem(const IvpAtInfinity& p) {
    if (p.n < 1) throw DomainError("problem dimension must be >= 1");
    if (!p.a) throw DomainError("problem needs a boundary function a");
    if (!p.kernel.B) throw DomainError("kernel needs B");
    if (p.kernel.kind == Kernel::Kind::General && !(p.kernel.alpha >= 0.0)) throw DomainError("alpha must be >= 0");
}

double tail_of(const IvpAtInfinity& p, const GridSpec& spec) {
    const double alpha = p.kernel.kind == Kernel::Kind::General ? p.kernel.alpha : 1.0;
    if (spec.t_max > 0.0) return alpha * std::max(spec.tail_integral, 0.0);
    return spec.eps_tail;
}

}  // namespace

PicardBound picard_bound(const IvpAtInfinity& problem, const GridSpec& spec) {
    check_problem(problem);
    const double tm = spec.t_max > 0.0 ? spec.t_max : choose_t_max(problem, spec);
    VolterraOperator op(problem.kernel, problem.n, make_grid(problem.T, tm, spec), spec.gl_nodes);
    double anorm = 0.0;
    for (double t : op.grid()) anorm = std::max(anorm, problem.a(t).norm());
    if (problem.a_inf) anorm = std::max(anorm, problem.a_inf->norm());
    const double lam = op.lambda();
    return {lam, lam >= 1.0 ? kInf : anorm / (1.0 - lam)};
}

GridSolution solve_ivp_infinity(const IvpAtInfinity& problem, const GridSpec& spec,
                                const std::function<Vec(double)>& initial) {
    check_problem(problem);
    const double tm = spec.t_max > 0.0 ? spec.t_max : choose_t_max(problem, spec);
    VolterraOperator op(problem.kernel, problem.n, make_grid(problem.T, tm, spec), spec.gl_nodes);
    std::vector<Vec> a, phi;
    for (double t : op.grid()) {
        a.push_back(problem.a(t));
        if (a.back().size() != problem.n) throw DomainError("a has wrong dimension");
        phi.push_back(initial ? initial(t) : a.back());
    }
    GridSolution sol = picard(op, a, std::move(phi), spec, tail_of(problem, spec));
    sol.tail = problem.a_inf ? *problem.a_inf : a.back();
    return sol;
}

GridSolution solve_finite(const Kernel& kernel, int n, double a_end, double b_end, const Vec& x_b,
                          const std::function<Mat(double)>& Phi, const GridSpec& spec) {
    if (!(b_end > a_end)) throw DomainError("finite interval must have b > a");
    if (x_b.size() != n) throw DomainError("terminal value has wrong dimension");
    VolterraOperator op(kernel, n, make_grid(a_end, b_end, spec), spec.gl_nodes);
    std::vector<Vec> a;
    for (double t : op.grid()) a.push_back(Phi ? Vec(Phi(t) * x_b) : x_b);
    GridSolution sol = picard(op, a, a, spec, 0.0);
    sol.tail = sol.x.back();
    return sol;
}

GridSolution solve_derivative(const IvpAtInfinity& problem, const std::function<Vec(double)>& da,
                              const std::vector<Kernel>& pieces, const GridSolution& base, const GridSpec& spec) {
    check_problem(problem);
    if (base.t.size() < 4) throw DomainError("base solution grid too small");
    std::vector<Vec> forcing;
    for (double t : base.t) forcing.push_back(da ? da(t) : Vec(Vec::Zero(problem.n)));
    for (const auto& p : pieces) {
        VolterraOperator dop(p, problem.n, base.t, spec.gl_nodes);
        auto I = dop.apply(base.x);
        for (size_t i = 0; i < forcing.size(); ++i) forcing[i] -= I[i];
    }
    VolterraOperator op(problem.kernel, problem.n, base.t, spec.gl_nodes);
    GridSolution sol = picard(op, forcing, forcing, spec, tail_of(problem, spec));
    sol.tail = forcing.back();
    return sol;
}

}  // namespace hkx
