#pragma once

#include <Eigen/Dense>
#include <array>
#include <functional>
#include <optional>
#include <vector>

#include "hkx/errors.hpp"

namespace hkx {

using Vec = Eigen::VectorXcd;
using Mat = Eigen::MatrixXcd;

// K(t, s) = A(t, s) B(s).
// General: A is an arbitrary bounded matrix function.
// ExpDiagonal: A(t, s) = diag(exp(L_k(t) - L_k(s))), with Re L_k non-decreasing so |A| <= 1.
//   An empty L means L = 0, i.e. A = identity.
// `left`, if set, multiplies the whole integral from the left: M(t) * int K(t,s) x(s) ds.
struct Kernel {
    enum class Kind { General, ExpDiagonal };
    Kind kind = Kind::ExpDiagonal;
    std::function<Mat(double, double)> A;
    std::function<Vec(double)> L;
    std::function<Mat(double)> B;
    double alpha = 1.0;  // sup |A| (General only)
    std::function<Mat(double)> left;

    static Kernel zero(int n);
};

struct IvpAtInfinity {
    int n = 1;
    double T = 0.0;
    std::function<Vec(double)> a;
    std::optional<Vec> a_inf;  // limit of a at infinity; a(T_max) when absent
    Kernel kernel;
};

struct GridSpec {
    double h0 = 0.01;
    double growth = 1.02;
    double h_max = 0.05;
    double t_max = -1.0;          // <= 0: chosen so that alpha * int_{t_max}^inf |B| < eps_tail
    double tail_integral = -1.0;  // known bound on int_{t_max}^inf |B| when t_max is given (< 0: 0)
    double eps_tail = 1e-12;
    double tol = 1e-13;           // Picard stopping threshold on the sup-difference
    int max_iter = 500;
    double margin = 0.05;         // refuse when lambda >= 1 - margin
    int gl_nodes = 4;
};

struct GridSolution {
    std::vector<double> t;
    std::vector<Vec> x;
    Vec tail;                      // value used beyond t.back()
    double err = 0.0;              // iteration bound plus neglected tail
    double lambda = 0.0;
    int iterations = 0;
    std::vector<double> sup_diffs;

    // Cubic interpolation inside the grid, tail beyond it.
    Vec at(double s) const;
    double sup_norm() const;
};

class ContractionError : public NumericalError {
public:
    ContractionError(const std::string& what, double lambda) : NumericalError(what, {}, lambda), lambda_(lambda) {}
    double lambda() const { return lambda_; }

private:
    double lambda_;
};

std::vector<double> make_grid(double T, double t_max, const GridSpec& spec);

// Cutoff where the kernel tail drops below eps_tail.
double choose_t_max(const IvpAtInfinity& problem, const GridSpec& spec);

// Discretized integral operator (I phi)(t_i) = int_{t_i}^{t_N} K(t_i, s) phi(s) ds on a fixed grid.
class VolterraOperator {
public:
    VolterraOperator(const Kernel& kernel, int n, std::vector<double> grid, int gl_nodes = 4);
    std::vector<Vec> apply(const std::vector<Vec>& phi) const;
    // sup_i int_{t_i}^{t_N} |K(t_i, s)| ds (row-sum bound of the 2-norm for diagonal kernels).
    double lambda() const { return lambda_; }
    const std::vector<double>& grid() const { return t_; }

private:
    Kernel k_;
    int n_;
    std::vector<double> t_;
    std::vector<Mat> B_;
    std::vector<Mat> left_;
    // General
    Mat W_;
    // ExpDiagonal: per interval j, 4 stencil indices and per-stencil weight vectors, plus step factors.
    std::vector<std::array<int, 4>> stencil_;
    std::vector<std::array<Vec, 4>> V_;
    std::vector<Vec> E_;
    double lambda_ = 0.0;
};

struct PicardBound {
    double lambda;
    double bound;  // |a|_inf / (1 - lambda), infinite when lambda >= 1
};

PicardBound picard_bound(const IvpAtInfinity& problem, const GridSpec& spec = {});

GridSolution solve_ivp_infinity(const IvpAtInfinity& problem, const GridSpec& spec = {},
                                const std::function<Vec(double)>& initial = nullptr);

// x(t) = Phi(t, b) x_b - int_t^b K(t, s) x(s) ds on [a_end, b_end].
GridSolution solve_finite(const Kernel& kernel, int n, double a_end, double b_end, const Vec& x_b,
                          const std::function<Mat(double)>& Phi, const GridSpec& spec = {});

// dx(t) = [da(t) - sum_p int_t^inf K_p(t, s) x(s) ds] - int_t^inf K(t, s) dx(s) ds,
// with the pieces K_p the product-rule terms of the kernel derivative.
GridSolution solve_derivative(const IvpAtInfinity& problem, const std::function<Vec(double)>& da,
                              const std::vector<Kernel>& pieces, const GridSolution& base, const GridSpec& spec = {});

// 2-norm of a small matrix (closed form for 2x2 and 1x1).
double op_norm(const Mat& m);

}  // namespace hkx
