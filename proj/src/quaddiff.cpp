#include "hkx/quaddiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace hkx {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

bool near_equal(cplx a, cplx b) { return std::abs(a - b) <= 1e-12 * std::max(1.0, std::max(std::abs(a), std::abs(b))); }

const std::vector<double>& gl_unit_nodes() {
    static const std::vector<double> nodes = [] {
        std::vector<double> x, w;
        gauss_legendre(10, x, w);
        for (auto& v : x) v = 0.5 * (v + 1.0);
        return x;
    }();
    return nodes;
}

const std::vector<double>& gl_unit_weights() {
    static const std::vector<double> weights = [] {
        std::vector<double> x, w;
        gauss_legendre(10, x, w);
        for (auto& v : w) v *= 0.5;
        return w;
    }();
    return weights;
}

// int_a^b q^{1/2} along the chord, continuing the branch from sa; also returns the branch at b.
cplx chord_integral(const QuadraticDifferential& q, cplx a, cplx sa, cplx b, cplx& sb) {
    const auto& x = gl_unit_nodes();
    const auto& w = gl_unit_weights();
    cplx ref = sa, acc = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        ref = q.sqrt_near(a + x[i] * (b - a), ref);
        acc += w[i] * ref;
    }
    sb = q.sqrt_near(b, ref);
    return acc * (b - a);
}

double segment_distance(cplx p, cplx a, cplx b, double* frac = nullptr) {
    const cplx d = b - a;
    const double len2 = std::norm(d);
    double u = len2 > 0.0 ? std::clamp(std::real((p - a) * std::conj(d)) / len2, 0.0, 1.0) : 0.0;
    if (frac) *frac = u;
    return std::abs(p - (a + u * d));
}

std::pair<cplx, cplx> hermite(double t0, cplx z0, cplx d0, double t1, cplx z1, cplx d1, double s) {
    const double h = t1 - t0, u = (s - t0) / h;
    const double u2 = u * u, u3 = u2 * u;
    const cplx z = (2 * u3 - 3 * u2 + 1) * z0 + (u3 - 2 * u2 + u) * h * d0 + (-2 * u3 + 3 * u2) * z1 +
                   (u3 - u2) * h * d1;
    const cplx dz = ((6 * u2 - 6 * u) * z0 + (3 * u2 - 4 * u + 1) * h * d0 + (-6 * u2 + 6 * u) * z1 +
                     (3 * u2 - 2 * u) * h * d1) /
                    h;
    return {z, dz};
}

// Closest approach of the Hermite segment [k, k+1] of a trajectory to p: (distance, t).
std::pair<double, double> closest_on_segment(const Trajectory& tr, size_t k, cplx p) {
    double best = kInf, bt = tr.t[k];
    const int n = 24;
    for (int i = 0; i <= n; ++i) {
        const double s = tr.t[k] + (tr.t[k + 1] - tr.t[k]) * i / n;
        const double d = std::abs(hermite(tr.t[k], tr.z[k], tr.dz[k], tr.t[k + 1], tr.z[k + 1], tr.dz[k + 1], s).first - p);
        if (d < best) best = d, bt = s;
    }
    // Golden-section polish around the coarse minimum.
    double lo = std::max(tr.t[k], bt - (tr.t[k + 1] - tr.t[k]) / n), hi = std::min(tr.t[k + 1], bt + (tr.t[k + 1] - tr.t[k]) / n);
    const double g = 0.5 * (std::sqrt(5.0) - 1.0);
    auto f = [&](double s) {
        return std::abs(hermite(tr.t[k], tr.z[k], tr.dz[k], tr.t[k + 1], tr.z[k + 1], tr.dz[k + 1], s).first - p);
    };
    for (int it = 0; it < 40; ++it) {
        const double a = hi - g * (hi - lo), b = lo + g * (hi - lo);
        if (f(a) < f(b)) hi = b; else lo = a;
    }
    const double s = 0.5 * (lo + hi);
    if (f(s) < best) best = f(s), bt = s;
    return {best, bt};
}

}  // namespace

QuadraticDifferential::QuadraticDifferential(cplx normalization, std::vector<cplx> zeros, std::vector<cplx> poles)
    : c_(normalization), zeros_(std::move(zeros)), poles_(std::move(poles)) {
    if (c_ == cplx(0.0) || !std::isfinite(c_.real()) || !std::isfinite(c_.imag()))
        throw DomainError("quadratic differential: normalization must be finite and nonzero");
    for (size_t i = 0; i < zeros_.size(); ++i)
        for (size_t j = i + 1; j < zeros_.size(); ++j)
            if (near_equal(zeros_[i], zeros_[j]))
                throw DomainError("quadratic differential: zeros " + std::to_string(i) + " and " + std::to_string(j) +
                                  " coincide (only simple zeros allowed)");
    for (size_t i = 0; i < poles_.size(); ++i) {
        for (size_t j = i + 1; j < poles_.size(); ++j)
            if (near_equal(poles_[i], poles_[j]))
                throw DomainError("quadratic differential: poles " + std::to_string(i) + " and " + std::to_string(j) +
                                  " coincide");
        for (size_t j = 0; j < zeros_.size(); ++j)
            if (near_equal(poles_[i], zeros_[j]))
                throw DomainError("quadratic differential: pole " + std::to_string(i) + " coincides with zero " +
                                  std::to_string(j));
    }
}

QuadraticDifferential QuadraticDifferential::with_sigma(std::vector<cplx> zeros, std::vector<cplx> poles, int index,
                                                        cplx sigma) {
    if (index < 0 || index >= static_cast<int>(poles.size())) throw DomainError("with_sigma: pole index out of range");
    if (sigma == cplx(0.0)) throw DomainError("with_sigma: sigma must be nonzero");
    QuadraticDifferential unit(1.0, zeros, poles);
    return QuadraticDifferential(-sigma * sigma / unit.leading(index), std::move(zeros), std::move(poles));
}

cplx QuadraticDifferential::operator()(cplx z) const {
    cplx num = c_, den = 1.0;
    for (auto zk : zeros_) num *= (z - zk);
    for (auto pj : poles_) den *= (z - pj) * (z - pj);
    return num / den;
}

cplx QuadraticDifferential::log_derivative(cplx z) const {
    cplx s = 0.0;
    for (auto zk : zeros_) s += 1.0 / (z - zk);
    for (auto pj : poles_) s -= 2.0 / (z - pj);
    return s;
}

cplx QuadraticDifferential::derivative(cplx z) const {
    // Product rule form stays finite at the zeros themselves.
    cplx num = 0.0;
    for (size_t k = 0; k < zeros_.size(); ++k) {
        cplx term = c_;
        for (size_t m = 0; m < zeros_.size(); ++m)
            if (m != k) term *= (z - zeros_[m]);
        num += term;
    }
    cplx den = 1.0;
    for (auto pj : poles_) den *= (z - pj) * (z - pj);
    return num / den - 2.0 * (*this)(z) * [&] {
        cplx s = 0.0;
        for (auto pj : poles_) s += 1.0 / (z - pj);
        return s;
    }();
}

cplx QuadraticDifferential::sqrt_near(cplx z, cplx ref) const {
    const cplx r = std::sqrt((*this)(z));
    return std::norm(r - ref) <= std::norm(r + ref) ? r : -r;
}

cplx QuadraticDifferential::leading(int j) const {
    if (j < 0 || j >= static_cast<int>(poles_.size())) throw DomainError("pole index out of range");
    const cplx p = poles_[j];
    cplx v = c_;
    for (auto zk : zeros_) v *= (p - zk);
    for (size_t i = 0; i < poles_.size(); ++i)
        if (static_cast<int>(i) != j) v /= (p - poles_[i]) * (p - poles_[i]);
    return v;
}

cplx QuadraticDifferential::sigma(int j) const { return std::sqrt(-leading(j)); }

int QuadraticDifferential::infinity_order() const {
    return static_cast<int>(zeros_.size()) - 2 * static_cast<int>(poles_.size()) + 4;
}

double QuadraticDifferential::critical_distance(cplx z) const {
    double d = kInf;
    for (auto zk : zeros_) d = std::min(d, std::abs(z - zk));
    for (auto pj : poles_) d = std::min(d, std::abs(z - pj));
    return d;
}

double QuadraticDifferential::critical_spacing() const {
    std::vector<cplx> all(zeros_);
    all.insert(all.end(), poles_.begin(), poles_.end());
    double d = kInf;
    for (size_t i = 0; i < all.size(); ++i)
        for (size_t j = i + 1; j < all.size(); ++j) d = std::min(d, std::abs(all[i] - all[j]));
    return d;
}

double QuadraticDifferential::critical_extent() const {
    double e = 0.0;
    for (auto zk : zeros_) e = std::max(e, std::abs(zk));
    for (auto pj : poles_) e = std::max(e, std::abs(pj));
    return e;
}

namespace {

void check_clearance(const QuadraticDifferential& q, cplx a, cplx b, double radius) {
    for (size_t k = 0; k < q.zeros().size(); ++k)
        if (segment_distance(q.zeros()[k], a, b) < radius)
            throw DomainError("path passes within " + std::to_string(radius) + " of branch point (zero #" +
                              std::to_string(k) + " at " + std::to_string(q.zeros()[k].real()) + "+" +
                              std::to_string(q.zeros()[k].imag()) + "i)");
    for (size_t k = 0; k < q.poles().size(); ++k)
        if (segment_distance(q.poles()[k], a, b) < radius)
            throw DomainError("path passes within " + std::to_string(radius) + " of pole #" + std::to_string(k));
}

// Continue the branch from a to b, subdividing until each sub-step changes q^{1/2} by less than half.
cplx continue_branch(const QuadraticDifferential& q, cplx a, cplx va, cplx b, int depth = 0) {
    const cplx vb = q.sqrt_near(b, va);
    if (std::abs(vb - va) <= 0.5 * std::abs(va)) return vb;
    if (depth > 48) throw NumericalError("branch continuation failed to resolve a step");
    const cplx m = 0.5 * (a + b);
    const cplx vm = continue_branch(q, a, va, m, depth + 1);
    return continue_branch(q, m, vm, b, depth + 1);
}

}  // namespace

std::vector<cplx> sqrt_tracked(const QuadraticDifferential& q, const std::vector<cplx>& path, cplx initial_branch,
                               double exclusion_radius) {
    if (path.empty()) return {};
    const cplx q0 = q(path[0]);
    if (std::abs(initial_branch * initial_branch - q0) > 1e-8 * std::max(std::abs(q0), 1e-300))
        throw DomainError("initial branch does not square to q at the first path point");
    for (size_t i = 0; i < path.size(); ++i)
        check_clearance(q, path[i], i + 1 < path.size() ? path[i + 1] : path[i], exclusion_radius);
    std::vector<cplx> out{initial_branch};
    for (size_t i = 1; i < path.size(); ++i) out.push_back(continue_branch(q, path[i - 1], out.back(), path[i]));
    return out;
}

std::pair<cplx, cplx> Trajectory::at(double s) const {
    if (t.empty() || s < t.front() || s > t.back()) throw DomainError("trajectory parameter out of range");
    size_t k = std::upper_bound(t.begin(), t.end(), s) - t.begin();
    if (k == 0) k = 1;
    if (k >= t.size()) k = t.size() - 1;
    return hermite(t[k - 1], z[k - 1], dz[k - 1], t[k], z[k], dz[k], s);
}

Trajectory Trajectory::reversed() const {
    Trajectory r = *this;
    std::reverse(r.t.begin(), r.t.end());
    std::reverse(r.z.begin(), r.z.end());
    std::reverse(r.dz.begin(), r.dz.end());
    std::reverse(r.sqrtq.begin(), r.sqrtq.end());
    for (auto& v : r.t) v = -v;
    for (auto& v : r.dz) v = -v;
    r.direction = -direction;
    std::swap(r.ends[0], r.ends[1]);
    return r;
}

double Trajectory::max_residual() const {
    const cplx e = static_cast<double>(direction) * std::exp(kI * theta);
    double m = 0.0;
    for (size_t i = 0; i < t.size(); ++i) m = std::max(m, std::abs(sqrtq[i] * dz[i] - e));
    return m;
}

double capture_scale(const QuadraticDifferential& q, cplx z0) {
    const double spacing = q.critical_spacing();
    if (std::isfinite(spacing)) return 1e-3 * spacing;
    const double d = q.critical_distance(z0);
    if (std::isfinite(d) && d > 0.0) return 1e-3 * d;
    return 1e-3 * std::max(1.0, std::abs(z0));
}

Trajectory trace_trajectory(const QuadraticDifferential& q, cplx z0, double theta, int direction,
                            const StopRules& stop, std::optional<cplx> branch) {
    if (direction != 1 && direction != -1) throw DomainError("direction must be +1 or -1");
    if (!(stop.max_length > 0.0) || stop.max_steps < 1 || !(stop.step_fraction > 0.0) || stop.step_fraction > 0.5)
        throw DomainError("invalid stopping rules");
    const cplx q0 = q(z0);
    if (!(q.critical_distance(z0) > 0.0) || q0 == cplx(0.0) || !std::isfinite(std::abs(q0)))
        throw DomainError("trajectory start must be a regular point of q");
    const double cap = capture_scale(q, z0);
    const double pole_cap = stop.pole_capture > 0.0 ? stop.pole_capture : cap;
    const double zero_cap = stop.zero_capture > 0.0 ? stop.zero_capture : cap;
    const double escape = stop.escape_radius > 0.0 ? stop.escape_radius : 20.0 * std::max(1.0, q.critical_extent());
    // Below this distance the step control would underflow; treat it as capture regardless of the rules.
    const double floor_cap = 1e-8 * std::max(1.0, q.critical_extent());
    const cplx e = static_cast<double>(direction) * std::exp(kI * theta);

    cplx s = std::sqrt(q0);
    if (branch) {
        if (std::abs(*branch * *branch - q0) > 1e-8 * std::abs(q0)) throw DomainError("initial branch does not square to q(z0)");
        s = *branch;
    }
    Trajectory tr;
    tr.theta = theta;
    tr.direction = direction;
    tr.t.push_back(0.0);
    tr.z.push_back(z0);
    tr.dz.push_back(e / s);
    tr.sqrtq.push_back(s);
    const cplx dz0 = e / s;

    double t = 0.0;
    cplx z = z0;
    bool left_start = false;
    int steps = 0;
    while (true) {
        if (t >= stop.max_length || steps >= stop.max_steps) {
            tr.ends[1] = {EndKind::Open, -1};
            break;
        }
        ++steps;
        const double dcrit = std::min(q.critical_distance(z), std::max(1.0, std::abs(z)));
        double h = std::min(stop.step_fraction * dcrit * std::abs(s), stop.max_length - t);
        cplx z1, s1;
        while (true) {
            if (h < 1e-14 * std::max(1.0, std::abs(t)))
                throw TraceError("trajectory step underflow near z = " + std::to_string(z.real()) + "+" +
                                     std::to_string(z.imag()) + "i",
                                 tr);
            // RK4 predictor for dz/dt = e / q^{1/2}(z).
            const cplx k1 = e / s;
            const cplx sa = q.sqrt_near(z + 0.5 * h * k1, s);
            const cplx k2 = e / sa;
            const cplx sb = q.sqrt_near(z + 0.5 * h * k2, sa);
            const cplx k3 = e / sb;
            const cplx sc = q.sqrt_near(z + h * k3, sb);
            const cplx k4 = e / sc;
            z1 = z + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            // Rectify: the flat coordinate must advance by exactly e h.
            bool ok = false;
            const double roundoff = 1e-15 * (h + std::abs(s) * std::abs(z));
            for (int it = 0; it < 12; ++it) {
                const cplx F = chord_integral(q, z, s, z1, s1) - e * h;
                z1 -= F / s1;
                if (std::abs(F) <= 1e-10 * h + 10.0 * roundoff) ok = true;
                if (std::abs(F) <= roundoff) break;
            }
            chord_integral(q, z, s, z1, s1);
            const bool finite = std::isfinite(std::abs(z1)) && std::isfinite(std::abs(s1));
            if (ok && finite && std::abs(s1 - s) <= 0.5 * std::abs(s) && std::abs(z1 - z) <= 0.5 * dcrit) break;
            h *= 0.5;
        }
        const double t1 = t + h;
        tr.t.push_back(t1);
        tr.z.push_back(z1);
        tr.dz.push_back(e / s1);
        tr.sqrtq.push_back(s1);

        if (stop.detect_closure) {
            if (!left_start && std::abs(z1 - z0) > std::max(10.0 * cap, 2.0 * std::abs(z1 - z))) left_start = true;
            if (left_start && segment_distance(z0, z, z1) < std::abs(z1 - z) + cap) {
                const size_t k = tr.size() - 2;
                auto [d, tc] = closest_on_segment(tr, k, z0);
                const cplx dzc = tr.at(tc).second;
                const double align = std::real(dzc * std::conj(dz0)) / (std::abs(dzc) * std::abs(dz0));
                if (d < cap && align > 0.999) {
                    tr.t.back() = tc;
                    tr.z.back() = z0;
                    tr.sqrtq.back() = q.sqrt_near(z0, s1);
                    tr.dz.back() = e / tr.sqrtq.back();
                    tr.periodic = true;
                    tr.ends[1] = {EndKind::Open, -1};
                    break;
                }
            }
        }
        t = t1;
        z = z1;
        s = s1;
        bool captured = false;
        for (size_t j = 0; j < q.poles().size() && !captured; ++j)
            if (std::abs(z - q.poles()[j]) < std::max(pole_cap, floor_cap)) tr.ends[1] = {EndKind::Pole, static_cast<int>(j)}, captured = true;
        for (size_t j = 0; j < q.zeros().size() && !captured; ++j)
            if (std::abs(z - q.zeros()[j]) < std::max(zero_cap, floor_cap)) tr.ends[1] = {EndKind::Zero, static_cast<int>(j)}, captured = true;
        if (!captured && std::abs(z) > escape) tr.ends[1] = {EndKind::Infinity, -1}, captured = true;
        if (captured) break;
    }
    return tr;
}

Trajectory trace_full(const QuadraticDifferential& q, cplx z0, double theta, const StopRules& stop) {
    Trajectory fwd = trace_trajectory(q, z0, theta, +1, stop);
    if (fwd.periodic) return fwd;
    Trajectory bwd = trace_trajectory(q, z0, theta, -1, stop, fwd.sqrtq.front());
    Trajectory r = bwd.reversed();  // runs into z0 with direction +1
    r.t.pop_back();
    r.z.pop_back();
    r.dz.pop_back();
    r.sqrtq.pop_back();
    r.t.insert(r.t.end(), fwd.t.begin(), fwd.t.end());
    r.z.insert(r.z.end(), fwd.z.begin(), fwd.z.end());
    r.dz.insert(r.dz.end(), fwd.dz.begin(), fwd.dz.end());
    r.sqrtq.insert(r.sqrtq.end(), fwd.sqrtq.begin(), fwd.sqrtq.end());
    r.direction = 1;
    r.ends[1] = fwd.ends[1];
    return r;
}

namespace {

// W(z) = int_{z0}^{z} q^{1/2} on the straight segment, with z - z0 = tau^2 d. Returns W and the branch at z.
cplx zero_primitive(const QuadraticDifferential& q, cplx z0, cplx g0root, cplx z, cplx& s_end) {
    const cplx d = z - z0;
    const cplx sd = std::sqrt(d);
    std::vector<double> x, w;
    gauss_legendre(16, x, w);
    // g(zeta) = q(zeta)/(zeta - z0) is analytic and nonzero near z0.
    auto g = [&](cplx zeta) {
        if (zeta == z0) return q.derivative(z0);
        return q(zeta) / (zeta - z0);
    };
    cplx ref = g0root, acc = 0.0;
    std::vector<std::pair<double, int>> order;
    for (int i = 0; i < 16; ++i) order.push_back({0.5 * (x[i] + 1.0), i});
    std::sort(order.begin(), order.end());
    for (auto [tau, i] : order) {
        const cplx zeta = z0 + tau * tau * d;
        const cplx gv = std::sqrt(g(zeta));
        ref = std::norm(gv - ref) <= std::norm(gv + ref) ? gv : -gv;
        acc += 0.5 * w[i] * ref * (tau * sd) * (2.0 * tau * d);
    }
    const cplx gv = std::sqrt(g(z));
    const cplx gz = std::norm(gv - ref) <= std::norm(gv + ref) ? gv : -gv;
    s_end = gz * sd;
    return acc;
}

}  // namespace

Separatrices separatrices(const QuadraticDifferential& q, int zero_index, double theta, const StopRules& stop) {
    if (zero_index < 0 || zero_index >= static_cast<int>(q.zeros().size()))
        throw DomainError("separatrices: zero index out of range");
    const cplx z0 = q.zeros()[zero_index];
    const cplx qp = q.derivative(z0);
    if (std::abs(qp) == 0.0) throw DomainError("separatrices: zero is not simple");
    double dnear = kInf;
    for (size_t k = 0; k < q.zeros().size(); ++k)
        if (static_cast<int>(k) != zero_index) dnear = std::min(dnear, std::abs(q.zeros()[k] - z0));
    for (auto p : q.poles()) dnear = std::min(dnear, std::abs(p - z0));
    const double rho = std::isfinite(dnear) ? 0.02 * dnear : 0.02;
    const cplx groot = std::sqrt(qp);

    Separatrices out;
    for (int k = 0; k < 3; ++k) {
        const double phi0 = (2.0 / 3.0) * (theta - 0.5 * std::arg(qp)) + 2.0 * kPi * k / 3.0;
        out.directions[k] = std::remainder(phi0, 2.0 * kPi);
        if (out.directions[k] < 0) out.directions[k] += 2.0 * kPi;
        // Newton on phi: Im(e^{-i theta} W(z0 + rho e^{i phi})) = 0.
        double phi = phi0;
        cplx W, s;
        for (int it = 0; it < 30; ++it) {
            const cplx zs = z0 + rho * std::exp(kI * phi);
            W = zero_primitive(q, z0, groot, zs, s);
            const double G = std::imag(std::exp(-kI * theta) * W);
            const double dG = std::imag(std::exp(-kI * theta) * s * kI * rho * std::exp(kI * phi));
            const double step = G / dG;
            phi -= step;
            if (std::abs(step) < 1e-15) break;
        }
        const cplx zs = z0 + rho * std::exp(kI * phi);
        W = zero_primitive(q, z0, groot, zs, s);
        if (std::real(std::exp(-kI * theta) * W) < 0.0) {
            W = -W;
            s = -s;
        }
        StopRules st = stop;
        Trajectory tr = trace_trajectory(q, zs, theta, +1, st, s);
        const double t0 = std::abs(W);
        for (auto& tv : tr.t) tv += t0;
        tr.ends[0] = {EndKind::Zero, zero_index};
        out.curves[k] = std::move(tr);
    }
    // Collision: a curve running within the capture scale of another away from the common zero.
    const double cap = capture_scale(q, z0 + rho);
    for (int a = 0; a < 3 && !out.collision; ++a)
        for (int b = a + 1; b < 3 && !out.collision; ++b) {
            const auto& A = out.curves[a];
            const auto& B = out.curves[b];
            for (size_t i = 0; i < A.size() && !out.collision; ++i) {
                if (std::abs(A.z[i] - z0) < 10.0 * rho) continue;
                // curves spiralling into the same pole approach each other there without colliding
                bool near_pole = false;
                for (auto p : q.poles()) near_pole = near_pole || std::abs(A.z[i] - p) < 0.05 * dnear;
                if (near_pole) continue;
                for (size_t j = 0; j + 1 < B.size(); ++j)
                    if (segment_distance(A.z[i], B.z[j], B.z[j + 1]) < cap) {
                        out.collision = true;
                        break;
                    }
            }
        }
    return out;
}

TrajectoryClass classify(const Trajectory& traj) {
    if (traj.periodic) return TrajectoryClass::Periodic;
    auto kind = [](const TrajectoryEnd& e) {
        if (e.kind == EndKind::Pole || e.kind == EndKind::Infinity) return 1;
        if (e.kind == EndKind::Zero) return 2;
        return 0;
    };
    const int a = kind(traj.ends[0]), b = kind(traj.ends[1]);
    if (a == 0 || b == 0) return TrajectoryClass::Divergent;
    if (a == 1 && b == 1) return TrajectoryClass::Generic;
    if (a == 2 && b == 2) return TrajectoryClass::Saddle;
    return TrajectoryClass::Separating;
}

const char* to_string(TrajectoryClass c) {
    switch (c) {
        case TrajectoryClass::Generic: return "generic";
        case TrajectoryClass::Separating: return "separating";
        case TrajectoryClass::Saddle: return "saddle";
        case TrajectoryClass::Periodic: return "periodic";
        case TrajectoryClass::Divergent: return "divergent";
    }
    return "unknown";
}

BranchTrack::BranchTrack(const QuadraticDifferential& q, const ContourPath& path, cplx branch_seed,
                         double exclusion_radius)
    : q_(&q) {
    const cplx zs = path.point(0.0);
    const cplx q0 = q(zs);
    if (std::abs(branch_seed * branch_seed - q0) > 1e-8 * std::max(std::abs(q0), 1e-300))
        throw DomainError("branch seed does not square to q at the cycle start");
    for (size_t k = 0; k < q.zeros().size(); ++k)
        if (path.distance_to(q.zeros()[k]) < exclusion_radius)
            throw DomainError("cycle passes within " + std::to_string(exclusion_radius) + " of branch point (zero #" +
                              std::to_string(k) + ")");
    for (size_t k = 0; k < q.poles().size(); ++k)
        if (path.distance_to(q.poles()[k]) < exclusion_radius)
            throw DomainError("cycle passes within " + std::to_string(exclusion_radius) + " of pole #" + std::to_string(k));
    // Recursive refinement so that consecutive stored values differ by at most 10%.
    s_.push_back(0.0);
    v_.push_back(branch_seed);
    auto bp = path.breakpoints();
    for (size_t b = 0; b + 1 < bp.size(); ++b) {
        const int n = 64;
        for (int i = 1; i <= n; ++i) {
            const double s0 = s_.back(), s1 = bp[b] + (bp[b + 1] - bp[b]) * i / n;
            std::vector<std::pair<double, double>> stack{{s0, s1}};
            while (!stack.empty()) {
                auto [a, c] = stack.back();
                const cplx va = v_.back();
                const cplx vc = q.sqrt_near(path.point(c), va);
                if (std::abs(vc - va) > 0.1 * std::abs(va) && c - a > 1e-15) {
                    stack.back() = {0.5 * (a + c), c};
                    stack.push_back({a, 0.5 * (a + c)});
                    continue;
                }
                stack.pop_back();
                s_.push_back(c);
                v_.push_back(vc);
            }
        }
    }
}

cplx BranchTrack::operator()(cplx z, double s) const {
    size_t k = std::lower_bound(s_.begin(), s_.end(), s) - s_.begin();
    if (k >= s_.size()) k = s_.size() - 1;
    if (k > 0 && std::abs(s_[k - 1] - s) < std::abs(s_[k] - s)) --k;
    return q_->sqrt_near(z, v_[k]);
}

cplx period(const QuadraticDifferential& q, const ContourPath& cycle, cplx branch_seed, const Quadrature& quad) {
    const double spacing = q.critical_spacing();
    const double excl = 1e-9 * (std::isfinite(spacing) ? spacing : 1.0);
    BranchTrack br(q, cycle, branch_seed, excl);
    auto r = integrate_contour([&](cplx z, double s) { return br(z, s); }, cycle, quad);
    return r.value / kPi;
}

ContourPath thin_cycle(const Trajectory& connection, double eps) {
    if (connection.size() < 2 || !(eps > 0.0)) throw DomainError("thin_cycle needs a traced connection and eps > 0");
    // Thin out samples closer than eps/4 so offsets stay ordered.
    std::vector<cplx> p{connection.z.front()};
    std::vector<cplx> tang{connection.dz.front()};
    for (size_t i = 1; i < connection.size(); ++i)
        if (std::abs(connection.z[i] - p.back()) > 0.25 * eps || i + 1 == connection.size()) {
            p.push_back(connection.z[i]);
            tang.push_back(connection.dz[i]);
        }
    std::vector<cplx> left, right;
    for (size_t i = 0; i < p.size(); ++i) {
        const cplx u = tang[i] / std::abs(tang[i]);
        left.push_back(p[i] + eps * kI * u);
        right.push_back(p[i] - eps * kI * u);
    }
    std::vector<cplx> nodes(left);
    const int nc = 16;
    const double ae = std::arg(tang.back());
    for (int k = 1; k < nc; ++k) nodes.push_back(p.back() + eps * std::exp(kI * (ae + kPi / 2 - kPi * k / nc)));
    nodes.insert(nodes.end(), right.rbegin(), right.rend());
    const double as = std::arg(tang.front());
    for (int k = 1; k < nc; ++k) nodes.push_back(p.front() + eps * std::exp(kI * (as - kPi / 2 - kPi * k / nc)));
    nodes.push_back(nodes.front());
    return ContourPath::polyline(std::move(nodes));
}

namespace {

// Signed distance of zero m from the trajectory at closest approach; positive when m lies to the left.
double signed_miss(const QuadraticDifferential& q, const Trajectory& tr, int m) {
    const cplx zm = q.zeros()[m];
    if (tr.ends[1].kind == EndKind::Zero && tr.ends[1].index == m) return 0.0;
    size_t kbest = 0;
    double dbest = kInf;
    for (size_t k = 0; k + 1 < tr.size(); ++k) {
        const double d = segment_distance(zm, tr.z[k], tr.z[k + 1]);
        if (d < dbest) dbest = d, kbest = k;
    }
    auto [d, tc] = closest_on_segment(tr, kbest, zm);
    auto [zc, dzc] = tr.at(tc);
    const double side = std::imag(std::conj(dzc) * (zm - zc));
    return side >= 0 ? d : -d;
}

}  // namespace

std::vector<SaddleEvent> find_saddles(const QuadraticDifferential& q, const std::vector<double>& theta_grid,
                                      const SaddleOptions& opts) {
    std::vector<SaddleEvent> events;
    const int nz = static_cast<int>(q.zeros().size());
    if (nz < 2 || theta_grid.size() < 2) return events;
    for (size_t i = 1; i < theta_grid.size(); ++i)
        if (!(theta_grid[i] > theta_grid[i - 1])) throw DomainError("theta grid must be strictly increasing");
    const double spacing = q.critical_spacing();
    StopRules pass = opts.stop;
    pass.zero_capture = 1e-12 * spacing;  // let near misses run past so the miss stays signed
    pass.detect_closure = false;

    for (int j = 0; j < nz; ++j) {
        std::vector<std::array<Trajectory, 3>> fan;
        for (double th : theta_grid) fan.push_back(separatrices(q, j, th, pass).curves);
        for (int k = 0; k < 3; ++k) {
            for (int m = 0; m < nz; ++m) {
                if (m == j) continue;
                const double dist = std::abs(q.zeros()[m] - q.zeros()[j]);
                std::vector<double> miss;
                for (size_t g = 0; g < theta_grid.size(); ++g) miss.push_back(signed_miss(q, fan[g][k], m));
                for (size_t g = 0; g + 1 < theta_grid.size(); ++g) {
                    if (!(miss[g] == 0.0 || miss[g] * miss[g + 1] < 0.0)) continue;
                    if (std::min(std::abs(miss[g]), std::abs(miss[g + 1])) > 0.5 * dist) continue;
                    double lo = theta_grid[g], hi = theta_grid[g + 1], flo = miss[g];
                    double fmid = flo;
                    int it = 0;
                    double mid = lo;
                    for (; it < opts.max_bisections && hi - lo > opts.tol; ++it) {
                        mid = 0.5 * (lo + hi);
                        fmid = signed_miss(q, separatrices(q, j, mid, pass).curves[k], m);
                        if (fmid == 0.0) break;
                        if ((fmid < 0) == (flo < 0)) lo = mid, flo = fmid;
                        else hi = mid;
                    }
                    const double th = fmid == 0.0 ? mid : 0.5 * (lo + hi);
                    SaddleEvent ev;
                    ev.theta = th;
                    ev.zero_from = j;
                    ev.zero_to = m;
                    ev.bracket = hi - lo;
                    ev.miss = std::abs(signed_miss(q, separatrices(q, j, th, pass).curves[k], m));
                    if (ev.miss > 1e-3 * dist) continue;  // a jump of the closest point, not a crossing
                    ev.low_confidence = it >= opts.max_bisections && hi - lo > opts.tol;
                    ev.connection = separatrices(q, j, th, opts.stop).curves[k];
                    if (ev.connection.ends[1].kind != EndKind::Zero || ev.connection.ends[1].index != m)
                        ev.low_confidence = true;
                    // Dedupe: the same connection is found from both of its zeros.
                    bool dup = false;
                    for (const auto& o : events) {
                        const bool same_pair = (o.zero_from == j && o.zero_to == m) || (o.zero_from == m && o.zero_to == j);
                        const double dth = std::abs(std::remainder(o.theta - th, kPi));
                        if (same_pair && dth < std::max(1e3 * opts.tol, 1e-6)) dup = true;
                    }
                    if (dup) continue;
                    const double eps = 0.1 * std::min(spacing, dist);
                    ContourPath cyc = thin_cycle(ev.connection, eps);
                    const cplx z = cyc.point(0.0);
                    Quadrature qd;
                    qd.abs_tol = 1e-12;
                    qd.rel_tol = 1e-11;
                    cplx Z = period(q, cyc, std::sqrt(q(z)), qd);
                    if (std::real(std::exp(-kI * th) * Z) < 0) Z = -Z;
                    ev.period = Z;
                    if (std::abs(std::imag(std::exp(-kI * th) * Z)) > 1e-4 * std::abs(Z)) ev.low_confidence = true;
                    events.push_back(std::move(ev));
                }
            }
        }
    }
    std::sort(events.begin(), events.end(), [](const SaddleEvent& a, const SaddleEvent& b) { return a.theta < b.theta; });
    return events;
}

}  // namespace hkx
