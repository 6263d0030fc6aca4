#pragma once

#include <complex>
#include <functional>
#include <vector>

#include "hkx/errors.hpp"

namespace hkx {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr cplx kI{0.0, 1.0};

struct Quadrature {
    double abs_tol = 1e-10;
    double rel_tol = 1e-9;
    int max_subdivisions = 2000;
    double eps_tail = 1e-12;  // truncation threshold for [t0, inf)

    void validate() const;
};

struct QuadResult {
    cplx value;
    double err = 0.0;
    int evaluations = 0;
};

using RealIntegrand = std::function<cplx(double)>;

// Adaptive Gauss-Kronrod (7/15) on a finite interval.
QuadResult integrate(const RealIntegrand& f, double a, double b, const Quadrature& quad = {});

// Integral over [t0, inf). The tail beyond the detected cutoff is dropped and
// eps_tail is added to the reported error.
QuadResult integrate_semi_infinite(const RealIntegrand& f, double t0, const Quadrature& quad = {});

// Either a polyline (>= 2 nodes) or a circle. Parametrized by s in [0, 1].
class ContourPath {
public:
    static ContourPath polyline(std::vector<cplx> nodes);
    static ContourPath circle(cplx center, double radius, int orientation = +1);

    bool is_circle() const { return circle_; }
    bool closed() const;
    cplx point(double s) const;
    cplx tangent(double s) const;  // dz/ds
    std::vector<double> breakpoints() const;
    ContourPath reversed() const;

    const std::vector<cplx>& nodes() const { return nodes_; }
    cplx center() const { return center_; }
    double radius() const { return radius_; }
    int orientation() const { return orientation_; }

    // Minimum distance from p to the path.
    double distance_to(cplx p) const;

private:
    bool circle_ = false;
    std::vector<cplx> nodes_;
    cplx center_{};
    double radius_ = 0.0;
    int orientation_ = 1;
};

struct ContourOptions {
    std::vector<cplx> singularities;
    double exclusion_radius = 0.0;
};

// f receives the point z and the path parameter s (so that sheet-tracked
// integrands can look up their branch).
using ContourIntegrand = std::function<cplx(cplx z, double s)>;

QuadResult integrate_contour(const ContourIntegrand& f, const ContourPath& path,
                             const Quadrature& quad = {}, const ContourOptions& opts = {});
QuadResult integrate_contour(const std::function<cplx(cplx)>& f, const ContourPath& path,
                             const Quadrature& quad = {}, const ContourOptions& opts = {});

// Modified Bessel function of the second kind, orders 0 and 1.
double bessel_k(int order, double x);

// (1/zp) (zp + z) / (zp - z)
cplx cauchy_kernel(cplx zp, cplx z);

// Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1].
void gauss_legendre(int n, std::vector<double>& nodes, std::vector<double>& weights);

}  // namespace hkx
