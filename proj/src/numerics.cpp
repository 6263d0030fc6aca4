#include "hkx/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <string>

namespace hkx {

void Quadrature::validate() const {
    if (!(abs_tol > 0.0) || !(rel_tol > 0.0))
        throw DomainError("quadrature tolerances must be > 0");
    if (max_subdivisions < 1) throw DomainError("max_subdivisions must be >= 1");
    if (!(eps_tail > 0.0)) throw DomainError("eps_tail must be > 0");
}

namespace {

// Kronrod 15-point abscissae (non-negative half) and weights, Gauss 7-point weights.
constexpr double kXgk[8] = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
constexpr double kWgk[8] = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
constexpr double kWg[4] = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

struct Panel {
    double a, b;
    cplx value;
    double err;
    bool operator<(const Panel& o) const { return err < o.err; }
};

cplx checked(const RealIntegrand& f, double t) {
    cplx v = f(t);
    if (std::isnan(v.real()) || std::isnan(v.imag()))
        throw NumericalError("NaN in integrand at t = " + std::to_string(t));
    return v;
}

Panel gk15(const RealIntegrand& f, double a, double b) {
    const double c = 0.5 * (a + b), h = 0.5 * (b - a);
    cplx fc = checked(f, c);
    cplx resk = fc * kWgk[7];
    cplx resg = fc * kWg[3];
    double resabs = std::abs(fc) * kWgk[7];
    cplx fv1[7], fv2[7];
    for (int j = 0; j < 7; ++j) {
        const double dx = h * kXgk[j];
        fv1[j] = checked(f, c - dx);
        fv2[j] = checked(f, c + dx);
        resk += kWgk[j] * (fv1[j] + fv2[j]);
        resabs += kWgk[j] * (std::abs(fv1[j]) + std::abs(fv2[j]));
        if (j % 2 == 1) resg += kWg[j / 2] * (fv1[j] + fv2[j]);
    }
    const cplx mean = resk * 0.5;
    double resasc = kWgk[7] * std::abs(fc - mean);
    for (int j = 0; j < 7; ++j)
        resasc += kWgk[j] * (std::abs(fv1[j] - mean) + std::abs(fv2[j] - mean));
    resasc *= std::abs(h);
    resabs *= std::abs(h);
    double err = std::abs((resk - resg) * h);
    if (resasc != 0.0 && err != 0.0) err = resasc * std::min(1.0, std::pow(200.0 * err / resasc, 1.5));
    const double eps50 = 50.0 * std::numeric_limits<double>::epsilon();
    if (resabs > std::numeric_limits<double>::min() / eps50) err = std::max(eps50 * resabs, err);
    return {a, b, resk * h, err};
}

}  // namespace

QuadResult integrate(const RealIntegrand& f, double a, double b, const Quadrature& quad) {
    quad.validate();
    if (a == b) return {};
    std::priority_queue<Panel> open;
    std::vector<Panel> done;
    Panel first = gk15(f, a, b);
    open.push(first);
    int evals = 15, splits = 0;
    auto totals = [&](cplx& v, double& e) {
        v = 0.0;
        e = 0.0;
        auto q = open;
        while (!q.empty()) {
            v += q.top().value;
            e += q.top().err;
            q.pop();
        }
        for (const auto& p : done) {
            v += p.value;
            e += p.err;
        }
    };
    cplx value = first.value;
    double err = first.err;
    while (err > std::max(quad.abs_tol, quad.rel_tol * std::abs(value))) {
        if (open.empty()) break;
        if (splits >= quad.max_subdivisions)
            throw NumericalError("adaptive quadrature did not converge within max subdivisions", value, err);
        Panel p = open.top();
        open.pop();
        const double m = 0.5 * (p.a + p.b);
        const double scale = std::max(std::abs(p.a), std::abs(p.b));
        if (std::abs(p.b - p.a) < 1e-13 * std::max(scale, 1e-300) || m == p.a || m == p.b) {
            done.push_back(p);  // cannot resolve further in double precision
        } else {
            Panel l = gk15(f, p.a, m), r = gk15(f, m, p.b);
            evals += 30;
            ++splits;
            value += l.value + r.value - p.value;
            err += l.err + r.err - p.err;
            open.push(l);
            open.push(r);
        }
        if (splits % 64 == 0) totals(value, err);  // limit drift of running sums
    }
    totals(value, err);
    return {value, err, evals};
}

QuadResult integrate_semi_infinite(const RealIntegrand& f, double t0, const Quadrature& quad) {
    quad.validate();
    // Locate a cutoff beyond which |f| * width stays below eps_tail on doubling windows.
    double cut = t0;
    bool found = false;
    int quiet = 0;
    double prev = t0;
    for (int k = 0; k < 80; ++k) {
        const double t = t0 + (std::ldexp(1.0, k) - 1.0);
        double mx = 0.0;
        for (int j = 1; j <= 4; ++j) {
            const double s = prev + (t - prev) * j / 4.0;
            mx = std::max(mx, std::abs(checked(f, s)));
        }
        const double width = std::max(t - prev, 1.0);
        if (mx * width < quad.eps_tail) {
            if (++quiet == 2) {
                cut = t;
                found = true;
                break;
            }
        } else {
            quiet = 0;
        }
        prev = t;
    }
    if (!found) throw NumericalError("integrand does not decay below eps_tail on [t0, inf)");
    if (cut == t0) return {0.0, quad.eps_tail, 0};
    // u in [0, u_cut) with t = t0 + u / (1 - u).
    const double L = cut - t0;
    const double ucut = L / (1.0 + L);
    auto g = [&](double u) -> cplx {
        const double om = 1.0 - u;
        return f(t0 + u / om) / (om * om);
    };
    QuadResult r = integrate(g, 0.0, ucut, quad);
    r.err += quad.eps_tail;
    return r;
}

ContourPath ContourPath::polyline(std::vector<cplx> nodes) {
    if (nodes.size() < 2) throw DomainError("polyline contour needs at least 2 nodes");
    ContourPath p;
    p.nodes_ = std::move(nodes);
    return p;
}

ContourPath ContourPath::circle(cplx center, double radius, int orientation) {
    if (!(radius > 0.0)) throw DomainError("circle contour needs radius > 0");
    if (orientation != 1 && orientation != -1) throw DomainError("circle orientation must be +1 or -1");
    ContourPath p;
    p.circle_ = true;
    p.center_ = center;
    p.radius_ = radius;
    p.orientation_ = orientation;
    return p;
}

bool ContourPath::closed() const {
    if (circle_) return true;
    return std::abs(nodes_.front() - nodes_.back()) == 0.0;
}

cplx ContourPath::point(double s) const {
    if (circle_) return center_ + radius_ * std::exp(kI * (orientation_ * 2.0 * kPi * s));
    const int m = static_cast<int>(nodes_.size()) - 1;
    double x = std::clamp(s, 0.0, 1.0) * m;
    int k = std::min(static_cast<int>(std::floor(x)), m - 1);
    double f = x - k;
    return nodes_[k] + f * (nodes_[k + 1] - nodes_[k]);
}

cplx ContourPath::tangent(double s) const {
    if (circle_)
        return kI * (orientation_ * 2.0 * kPi) * radius_ * std::exp(kI * (orientation_ * 2.0 * kPi * s));
    const int m = static_cast<int>(nodes_.size()) - 1;
    double x = std::clamp(s, 0.0, 1.0) * m;
    int k = std::min(static_cast<int>(std::floor(x)), m - 1);
    return static_cast<double>(m) * (nodes_[k + 1] - nodes_[k]);
}

std::vector<double> ContourPath::breakpoints() const {
    std::vector<double> b;
    if (circle_) {
        for (int k = 0; k <= 8; ++k) b.push_back(k / 8.0);
        return b;
    }
    const int m = static_cast<int>(nodes_.size()) - 1;
    for (int k = 0; k <= m; ++k) b.push_back(static_cast<double>(k) / m);
    return b;
}

ContourPath ContourPath::reversed() const {
    if (circle_) {
        // Same point set, opposite direction, same starting point.
        ContourPath p = *this;
        p.orientation_ = -orientation_;
        return p;
    }
    std::vector<cplx> r(nodes_.rbegin(), nodes_.rend());
    return polyline(std::move(r));
}

double ContourPath::distance_to(cplx p) const {
    if (circle_) return std::abs(std::abs(p - center_) - radius_);
    double best = std::numeric_limits<double>::infinity();
    for (size_t k = 0; k + 1 < nodes_.size(); ++k) {
        const cplx a = nodes_[k], b = nodes_[k + 1], d = b - a;
        const double len2 = std::norm(d);
        double t = len2 > 0.0 ? std::clamp(std::real((p - a) * std::conj(d)) / len2, 0.0, 1.0) : 0.0;
        best = std::min(best, std::abs(p - (a + t * d)));
    }
    return best;
}

QuadResult integrate_contour(const ContourIntegrand& f, const ContourPath& path, const Quadrature& quad,
                             const ContourOptions& opts) {
    quad.validate();
    for (size_t j = 0; j < opts.singularities.size(); ++j) {
        if (path.distance_to(opts.singularities[j]) < opts.exclusion_radius)
            throw DomainError("contour passes within the exclusion radius of singularity #" + std::to_string(j));
    }
    const auto bp = path.breakpoints();
    Quadrature q = quad;
    q.abs_tol = quad.abs_tol / static_cast<double>(bp.size() - 1);
    QuadResult total;
    for (size_t k = 0; k + 1 < bp.size(); ++k) {
        auto g = [&](double s) { return f(path.point(s), s) * path.tangent(s); };
        QuadResult r = integrate(g, bp[k], bp[k + 1], q);
        total.value += r.value;
        total.err += r.err;
        total.evaluations += r.evaluations;
    }
    return total;
}

QuadResult integrate_contour(const std::function<cplx(cplx)>& f, const ContourPath& path, const Quadrature& quad,
                             const ContourOptions& opts) {
    return integrate_contour([&](cplx z, double) { return f(z); }, path, quad, opts);
}

namespace {

constexpr double kEulerGamma = 0.57721566490153286060651209008240243;

double bessel_k_series(int order, double x) {
    const double y = 0.25 * x * x;
    const double lg = std::log(0.5 * x);
    // psi(k+1) built incrementally from psi(1) = -gamma.
    double term = 1.0;  // y^k / (k! (k+order)!)
    double psi_k1 = -kEulerGamma;               // psi(k+1)
    double psi_kn1 = order == 0 ? psi_k1 : 1.0 - kEulerGamma;  // psi(k+order+1)
    double i_sum = 0.0, s_sum = 0.0;
    if (order == 0) {
        for (int k = 0; k < 60; ++k) {
            i_sum += term;
            s_sum += term * psi_k1;
            const double next = term * y / ((k + 1.0) * (k + 1.0));
            psi_k1 += 1.0 / (k + 1.0);
            term = next;
            if (term < 1e-18 * std::abs(i_sum)) break;
        }
        return -lg * i_sum + s_sum;
    }
    for (int k = 0; k < 60; ++k) {
        i_sum += term;  // I1(x) = (x/2) * sum
        s_sum += term * (psi_k1 + psi_kn1);
        const double next = term * y / ((k + 1.0) * (k + 2.0));
        psi_k1 += 1.0 / (k + 1.0);
        psi_kn1 += 1.0 / (k + 2.0);
        term = next;
        if (term < 1e-18 * std::abs(i_sum)) break;
    }
    const double half = 0.5 * x;
    return 1.0 / x + lg * half * i_sum - 0.5 * half * s_sum;
}

double bessel_k_quadrature(int order, double x) {
    // K_n(x) = e^{-x} * int_0^Y e^{-x (cosh y - 1)} cosh(n y) dy, tail below 1e-17 relative.
    const double Y = std::acosh(1.0 + 40.0 / x);
    Quadrature q;
    q.abs_tol = 1e-300;
    q.rel_tol = 2e-13;
    q.max_subdivisions = 200;
    auto f = [&](double y) -> cplx {
        const double c = std::cosh(y);
        return std::exp(-x * (c - 1.0)) * (order == 0 ? 1.0 : c);
    };
    return std::exp(-x) * integrate(f, 0.0, Y, q).value.real();
}

}  // namespace

double bessel_k(int order, double x) {
    if (order != 0 && order != 1) throw DomainError("bessel_k supports orders 0 and 1 only");
    if (!(x > 0.0)) throw DomainError("bessel_k requires x > 0");
    if (x < 1.0) return bessel_k_series(order, x);
    return bessel_k_quadrature(order, x);
}

cplx cauchy_kernel(cplx zp, cplx z) {
    if (zp == cplx(0.0)) throw DomainError("cauchy_kernel: pole at zeta' = 0");
    if (zp == z) throw DomainError("cauchy_kernel: pole at zeta' = zeta");
    return (zp + z) / ((zp - z) * zp);
}

void gauss_legendre(int n, std::vector<double>& nodes, std::vector<double>& weights) {
    nodes.assign(n, 0.0);
    weights.assign(n, 0.0);
    for (int i = 0; i < (n + 1) / 2; ++i) {
        double x = std::cos(kPi * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = x;
            for (int k = 2; k <= n; ++k) {
                double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            if (n == 1) p0 = 1.0, p1 = x;
            dp = n * (x * p1 - p0) / (x * x - 1.0);
            double dx = p1 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-16) break;
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
}

}  // namespace hkx
