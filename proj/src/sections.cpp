#include "hkx/sections.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include <fmt/format.h>

namespace hkx {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::uint64_t splitmix(std::uint64_t& s) {
    std::uint64_t z = (s += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

double unit(std::uint64_t& s) { return static_cast<double>(splitmix(s) >> 11) * 0x1.0p-53; }

// exp(i (phi + Re(c z))) with phi, c drawn from (seed, channel).
cplx seeded_phase(std::uint64_t seed, int channel, cplx z) {
    std::uint64_t s = seed * 0x2545F4914F6CDD1Dull + static_cast<std::uint64_t>(channel + 1) * 0x9E3779B97F4A7C15ull;
    const double phi = 2.0 * kPi * unit(s);
    const double r = unit(s);
    const double a = 2.0 * kPi * unit(s);
    const cplx c = r * std::exp(kI * a);
    return std::exp(kI * (phi + std::real(c * z)));
}

std::pair<cplx, cplx> hermite(double t0, cplx z0, cplx d0, double t1, cplx z1, cplx d1, double s) {
    const double h = t1 - t0, x = (s - t0) / h;
    const double x2 = x * x, x3 = x2 * x;
    const cplx z = (2 * x3 - 3 * x2 + 1) * z0 + (x3 - 2 * x2 + x) * h * d0 + (-2 * x3 + 3 * x2) * z1 +
                   (x3 - x2) * h * d1;
    const cplx dz = ((6 * x2 - 6 * x) / h) * z0 + (3 * x2 - 4 * x + 1) * d0 + ((6 * x - 6 * x2) / h) * z1 +
                    (3 * x2 - 2 * x) * d1;
    return {z, dz};
}

cplx nearest_root(cplx w, cplx ref) {
    const cplx s = std::sqrt(w);
    return std::norm(s - ref) <= std::norm(s + ref) ? s : -s;
}

// (z - p_j)^2 q(z): regular and nonzero at p_j.
cplx reduced_q(const QuadraticDifferential& q, int j, cplx z) {
    cplx r = q.normalization();
    for (const cplx& zk : q.zeros()) r *= z - zk;
    for (size_t l = 0; l < q.poles().size(); ++l) {
        if (static_cast<int>(l) == j) continue;
        const cplx d = z - q.poles()[l];
        r /= d * d;
    }
    return r;
}

double chart_radius(const QuadraticDifferential& q, int j) {
    const cplx p = q.poles()[j];
    double d = kInf;
    for (const cplx& zk : q.zeros()) d = std::min(d, std::abs(zk - p));
    for (size_t l = 0; l < q.poles().size(); ++l)
        if (static_cast<int>(l) != j) d = std::min(d, std::abs(q.poles()[l] - p));
    return std::isfinite(d) ? 0.3 * d : 1.0;
}

const std::vector<std::pair<double, double>>& gl16() {
    static const std::vector<std::pair<double, double>> nodes = [] {
        std::vector<double> x, w;
        gauss_legendre(16, x, w);
        std::vector<std::pair<double, double>> r;
        for (size_t i = 0; i < x.size(); ++i) r.emplace_back(0.5 * (x[i] + 1.0), 0.5 * w[i]);
        std::sort(r.begin(), r.end());
        return r;
    }();
    return nodes;
}

// Point whose flat coordinate differs from that of z0 by dw, found by Newton along straight chords, in z or (near
// pole `pole`) in v = log(z - p). Returns the point and g there, continued from g0.
std::pair<cplx, cplx> flat_solve(const QuadraticDifferential& q, int pole, cplx z0, cplx g0, cplx dw) {
    if (dw == cplx(0.0)) return {z0, g0};
    const cplx c = pole >= 0 ? q.poles()[pole] : cplx(0.0);
    const cplx x0 = pole >= 0 ? std::log(z0 - c) : z0;
    const cplx G0 = pole >= 0 ? g0 * (z0 - c) : g0;
    auto G = [&](cplx x, cplx ref) {
        return pole >= 0 ? nearest_root(reduced_q(q, pole, c + std::exp(x)), ref) : q.sqrt_near(x, ref);
    };
    cplx x = x0 + dw / G0, Gx = G0;
    const double scale = std::abs(dw) + 1e-300;
    for (int it = 0; it < 40; ++it) {
        cplx acc = 0.0, ref = G0;
        for (const auto& [s, w] : gl16()) {
            ref = G(x0 + s * (x - x0), ref);
            acc += w * ref;
        }
        acc *= x - x0;
        Gx = G(x, ref);
        const cplx F = acc - dw;
        const cplx step = F / Gx;
        x -= step;
        if (std::abs(F) <= 1e-14 * scale || std::abs(step) <= 1e-15 * (1.0 + std::abs(x))) break;
        if (it == 39 && std::abs(F) > 1e-10 * scale)
            throw NumericalError("flat coordinate solve did not converge", x, std::abs(F));
    }
    Gx = G(x, Gx);
    if (pole < 0) return {x, Gx};
    const cplx e = std::exp(x);
    return {c + e, Gx / e};
}

double winding(const std::vector<cplx>& poly, cplx c) {
    double w = 0.0;
    for (size_t i = 0; i < poly.size(); ++i) {
        const cplx a = poly[i] - c, b = poly[(i + 1) % poly.size()] - c;
        w += std::arg(b / a);
    }
    return w / (2.0 * kPi);
}

std::vector<cplx> centers_of(const HiggsLocalModel& m) {
    std::vector<cplx> c;
    for (const auto* a : {&m.a1, &m.a2})
        for (const auto& p : a->poles)
            if (std::none_of(c.begin(), c.end(), [&](cplx x) { return std::abs(x - p.center) <= 1e-14 * (1 + std::abs(x)); }))
                c.push_back(p.center);
    return c;
}

struct PathPoint {
    cplx z, dz;
    int chart = -1;  // end index whose log chart was used
    cplx v;          // log(z - center) in that chart (unlifted)
    cplx dv;         // dv/du in that chart
    size_t node = 0; // nearest node
};

PathPoint eval_path(const FlatPath& p, double s) {
    const size_t n = p.u.size();
    PathPoint r;
    if (s <= p.u.front() || s >= p.u.back()) {
        const int e = s <= p.u.front() ? 0 : 1;
        const size_t k = e == 0 ? 0 : n - 1;
        if (s == p.u[k] || !p.infinite[e]) {
            if (s != p.u[k]) throw DomainError(fmt::format("path parameter {} outside [{}, {}]", s, p.u.front(), p.u.back()));
            r.z = p.z[k];
            r.dz = p.dz[k];
            r.node = k;
            return r;
        }
        const cplx c = p.chart[e].center;
        const cplx vk = std::log(p.z[k] - c);
        r.v = vk + p.rate[e] * (s - p.u[k]);
        const cplx ev = std::exp(r.v);
        r.z = c + ev;
        r.dz = ev * p.rate[e];
        r.dv = p.rate[e];
        r.chart = e;
        r.node = k;
        return r;
    }
    const size_t k = static_cast<size_t>(std::upper_bound(p.u.begin(), p.u.end(), s) - p.u.begin());
    const size_t a = k - 1, b = k;
    r.node = (s - p.u[a] <= p.u[b] - s) ? a : b;
    for (int e = 0; e < 2; ++e) {
        const PoleChart& ch = p.chart[e];
        if (ch.pole < 0) continue;
        const cplx za = p.z[a] - ch.center, zb = p.z[b] - ch.center;
        if (std::abs(za) >= ch.radius || std::abs(zb) >= ch.radius) continue;
        const cplx va = std::log(za);
        const cplx vb = va + std::log(zb / za);
        const auto [v, dv] = hermite(p.u[a], va, p.dz[a] / za, p.u[b], vb, p.dz[b] / zb, s);
        const cplx ev = std::exp(v);
        r.z = ch.center + ev;
        r.dz = ev * dv;
        r.chart = e;
        r.v = v;
        r.dv = dv;
        return r;
    }
    const auto [z, dz] = hermite(p.u[a], p.z[a], p.dz[a], p.u[b], p.z[b], p.dz[b], s);
    r.z = z;
    r.dz = dz;
    return r;
}

// a(z) dz/du, with the residue at the chart center taken from dv/du (z - center underflows there).
cplx a_dz(const ConnectionCoefficient& a, const FlatPath& p, const PathPoint& r) {
    cplx s = a.constant * r.dz;
    for (const auto& pp : a.poles) {
        if (r.chart >= 0 && std::abs(pp.center - p.chart[r.chart].center) <= 1e-14 * (1.0 + std::abs(pp.center)))
            s += pp.residue * r.dv;
        else
            s += pp.residue * r.dz / (r.z - pp.center);
    }
    return s;
}

cplx lift(cplx v, cplx ref) { return v + kI * (2.0 * kPi * std::round(std::imag(ref - v) / (2.0 * kPi))); }

// Chart pole at node k, or -1.
int node_chart(const FlatPath& p, size_t k) {
    for (int e = 0; e < 2; ++e) {
        const PoleChart& ch = p.chart[e];
        if (ch.pole >= 0 && std::abs(p.z[k] - ch.center) < ch.radius) return ch.pole;
    }
    return -1;
}

// Exact point (z, g) at parameter s, solved from the nearest node.
std::pair<cplx, cplx> exact_point(const QuadraticDifferential& q, const FlatPath& p, double s) {
    size_t k;
    if (s <= p.u.front()) k = 0;
    else if (s >= p.u.back()) k = p.u.size() - 1;
    else {
        const size_t b = static_cast<size_t>(std::upper_bound(p.u.begin(), p.u.end(), s) - p.u.begin());
        k = (s - p.u[b - 1] <= p.u[b] - s) ? b - 1 : b;
    }
    return flat_solve(q, node_chart(p, k), p.z[k], p.kappa / p.dz[k], p.kappa * (s - p.u[k]));
}

// Parameter where |z - c| = d, walking in from end e.
double param_at_depth(const FlatPath& p, int e, cplx c, double d) {
    const size_t n = p.u.size();
    const size_t k = e == 1 ? n - 1 : 0;
    const double rk = std::abs(p.z[k] - c);
    if (d < rk) {
        if (!p.infinite[e]) throw DomainError("requested depth lies beyond the end of the path");
        return p.u[k] + (std::log(d) - std::log(rk)) / std::real(p.rate[e]);
    }
    // bracket
    size_t i = k;
    while (true) {
        const size_t j = e == 1 ? i - 1 : i + 1;
        if ((e == 1 && i == 0) || (e == 0 && i == n - 1)) throw DomainError("path never reaches the requested depth");
        if (std::abs(p.z[j] - c) >= d) {
            double lo = p.u[std::min(i, j)], hi = p.u[std::max(i, j)];
            // f(deep end) < 0
            const bool deep_lo = std::abs(p.z[std::min(i, j)] - c) < d;
            for (int it = 0; it < 80; ++it) {
                const double mid = 0.5 * (lo + hi);
                const bool deep = std::abs(eval_path(p, mid).z - c) < d;
                if (deep == deep_lo) lo = mid;
                else hi = mid;
            }
            return 0.5 * (lo + hi);
        }
        i = j;
    }
}

}  // namespace

// ---------------------------------------------------------------------------------------------------------------

cplx ConnectionCoefficient::operator()(cplx z) const {
    cplx r = constant;
    for (const auto& p : poles) r += p.residue / (z - p.center);
    return r;
}

const char* to_string(ErrorProfile p) {
    switch (p) {
        case ErrorProfile::Phase: return "phase";
        case ErrorProfile::Structured: return "structured";
        case ErrorProfile::Unitary: return "unitary";
    }
    return "?";
}

ErrorProfile error_profile_from_string(const std::string& s) {
    if (s == "phase") return ErrorProfile::Phase;
    if (s == "structured") return ErrorProfile::Structured;
    if (s == "unitary") return ErrorProfile::Unitary;
    throw DomainError("unknown error profile '" + s + "' (phase, structured, unitary)");
}

void HiggsLocalModel::validate() const {
    if (!(R > 0.0) || !std::isfinite(R)) throw DomainError("R must be positive");
    if (!(std::abs(zeta) > 0.0) || !std::isfinite(std::abs(zeta))) throw DomainError("zeta must be nonzero");
    if (!in_half_plane(theta))
        throw DomainError(fmt::format("zeta = ({}, {}) is not in the half-plane centred on e^(i theta), theta = {}",
                                      zeta.real(), zeta.imag(), theta));
    if (!(error.mu > 0.0)) throw DomainError("mu must be positive");
    if (!(error.delta > 0.0)) throw DomainError("delta must be positive");
    if (!(error.C >= 0.0)) throw DomainError("C must be non-negative");
    if (branch != 1 && branch != -1) throw DomainError("branch must be +1 or -1");
}

bool HiggsLocalModel::in_half_plane(double angle) const {
    return std::real(zeta * std::exp(-kI * angle)) > 0.0;
}

double HiggsLocalModel::pole_distance(cplx z) const {
    double s = 0.0;
    for (const cplx& p : q.poles()) s += 1.0 / std::norm(z - p);
    return s > 0.0 ? 1.0 / std::sqrt(s) : 1.0;
}

std::array<cplx, 2> HiggsLocalModel::leading(cplx z, cplx dz, cplx k) const {
    const cplx rz = R / zeta, rc = R * zeta;
    const cplx b1 = a1(z) * dz, b2 = a2(z) * dz;
    return {-rz * k - rc * std::conj(k) + b1 - std::conj(b1), rz * k + rc * std::conj(k) + b2 - std::conj(b2)};
}

Mat HiggsLocalModel::error_matrix(cplx z, cplx dz, cplx k) const {
    Mat E = Mat::Zero(2, 2);
    if (error.C == 0.0) return E;
    const double amp = error.C * std::exp(-error.delta * R);
    const double rho = pole_distance(z);
    if (rho == 0.0) return E;  // z has merged with a pole in floating point; every profile vanishes there
    const double rmu = std::pow(rho, error.mu);
    const std::uint64_t seed = error.seed;
    cplx e1, e2, e3;
    switch (error.profile) {
        case ErrorProfile::Phase: {
            const cplx f = amp * rmu * (-k * std::exp(-kI * theta));
            e1 = f * seeded_phase(seed, 0, z);
            e2 = f * seeded_phase(seed, 1, z);
            e3 = f * seeded_phase(seed, 2, z);
            break;
        }
        case ErrorProfile::Structured: {
            const double rm1 = std::pow(rho, error.mu - 1.0);
            const cplx da = (a2(z) - a1(z)) * dz;
            const cplx rk = R * zeta * std::conj(k);
            e1 = (da - 2.0 * rk) * amp * rmu * seeded_phase(seed, 0, z) + amp * rm1 * seeded_phase(seed, 3, z) * dz;
            e2 = (da - 2.0 * rk) * amp * rmu * seeded_phase(seed, 1, z) + amp * rm1 * seeded_phase(seed, 4, z) * dz;
            e3 = (da + 2.0 * rk) * amp * rmu * seeded_phase(seed, 2, z) + amp * rm1 * seeded_phase(seed, 5, z) * dz;
            break;
        }
        case ErrorProfile::Unitary: {
            const double a = 0.5 * amp * rmu;
            const cplx q1 = a * seeded_phase(seed, 0, z), q2 = a * seeded_phase(seed, 1, z),
                       q3 = a * seeded_phase(seed, 2, z);
            // E = Q k - Q^dagger conj(k), Q = [[q1, q2], [q3, -q1]]
            const cplx kc = std::conj(k);
            e1 = q1 * k - std::conj(q1) * kc;
            e2 = q2 * k - std::conj(q3) * kc;
            e3 = q3 * k - std::conj(q2) * kc;
            break;
        }
    }
    E(0, 0) = e1;
    E(0, 1) = e2;
    E(1, 0) = e3;
    E(1, 1) = -e1;
    return E;
}

double HiggsLocalModel::error_bound(cplx z, cplx dz, cplx k) const {
    const Mat E = error_matrix(z, dz, k);
    return std::max({std::abs(E(0, 0)), std::abs(E(0, 1)), std::abs(E(1, 0))});
}

// ---------------------------------------------------------------------------------------------------------------

double FlatPath::u_begin() const { return infinite[0] ? -kInf : u.front(); }
double FlatPath::u_end() const { return infinite[1] ? kInf : u.back(); }

std::pair<cplx, cplx> FlatPath::at(double s) const {
    const PathPoint r = eval_path(*this, s);
    return {r.z, r.dz};
}

int FlatPath::chart_of(size_t k) const { return node_chart(*this, k); }

cplx FlatPath::log_at(cplx center, double s) const {
    size_t m = centers.size();
    for (size_t i = 0; i < centers.size(); ++i)
        if (std::abs(centers[i] - center) <= 1e-14 * (1.0 + std::abs(center))) m = i;
    if (m == centers.size()) throw DomainError("log_at: center not registered on this path");
    const PathPoint r = eval_path(*this, s);
    const cplx ref = log_node(m, r.node);
    if (r.chart >= 0 && std::abs(chart[r.chart].center - center) <= 1e-14 * (1.0 + std::abs(center))) {
        if (s < u.front() || s > u.back()) return ref + rate[r.chart] * (s - u[r.node]);
        return lift(r.v, ref);
    }
    return lift(std::log(r.z - center), ref);
}

cplx FlatPath::antiderivative(const ConnectionCoefficient& a, double s) const {
    const PathPoint r = eval_path(*this, s);
    cplx A = a.constant * r.z;
    for (const auto& p : a.poles) A += p.residue * log_at(p.center, s);
    return A;
}

void FlatPath::set_centers(const std::vector<cplx>& c) {
    centers = c;
    logs.assign(c.size(), std::vector<cplx>(z.size()));
    for (size_t m = 0; m < c.size(); ++m) {
        logs[m][0] = std::log(z[0] - c[m]);
        for (size_t k = 1; k < z.size(); ++k) logs[m][k] = logs[m][k - 1] + std::log((z[k] - c[m]) / (z[k - 1] - c[m]));
    }
}

FlatPath FlatPath::reversed() const {
    FlatPath r = *this;
    std::reverse(r.u.begin(), r.u.end());
    std::reverse(r.z.begin(), r.z.end());
    std::reverse(r.dz.begin(), r.dz.end());
    for (auto& x : r.u) x = -x;
    for (auto& x : r.dz) x = -x;
    r.kappa = -kappa;
    r.chart = {chart[1], chart[0]};
    r.infinite = {infinite[1], infinite[0]};
    r.rate = {-rate[1], -rate[0]};
    for (auto& l : r.logs) std::reverse(l.begin(), l.end());
    return r;
}

std::array<cplx, 2> Primitive::operator()(const HiggsLocalModel& m, const FlatPath& p, double s) const {
    const cplx dw = p.kappa * (s - anchor);
    const cplx A1 = p.antiderivative(m.a1, s) - p.antiderivative(m.a1, anchor);
    const cplx A2 = p.antiderivative(m.a2, s) - p.antiderivative(m.a2, anchor);
    const cplx rz = m.R / m.zeta, rc = m.R * m.zeta;
    const cplx f = rz * dw + rc * std::conj(dw);
    return {offset[0] - f + A1 - std::conj(A1), offset[1] + f + A2 - std::conj(A2)};
}

LeadingTerms leading_terms(const HiggsLocalModel& model, const Trajectory& traj, double t_ref) {
    model.validate();
    if (traj.size() < 2) throw DomainError("trajectory needs at least two nodes");
    if (t_ref < traj.t.front() || t_ref > traj.t.back()) throw DomainError("t_ref outside the trajectory");
    const cplx k = -std::exp(kI * traj.theta);
    // log-chart interpolation keeps the integrand regular next to the poles
    const FlatPath fp = flat_path(model, traj, -traj.direction, 0);
    const cplx rz = model.R / model.zeta, rc = model.R * model.zeta;
    auto lam = [&](double s) {
        const PathPoint r = eval_path(fp, s);
        const cplx b1 = a_dz(model.a1, fp, r), b2 = a_dz(model.a2, fp, r);
        return std::array<cplx, 2>{-rz * k - rc * std::conj(k) + b1 - std::conj(b1),
                                   rz * k + rc * std::conj(k) + b2 - std::conj(b2)};
    };
    LeadingTerms L;
    const size_t n = traj.size();
    L.t = traj.t;
    L.lambda1.resize(n);
    L.lambda2.resize(n);
    L.Lambda1.assign(n, 0.0);
    L.Lambda2.assign(n, 0.0);
    Quadrature quad;
    quad.abs_tol = 1e-12;
    quad.rel_tol = 1e-12;
    for (size_t i = 0; i < n; ++i) {
        const auto d = model.leading(traj.z[i], traj.dz[i], k);
        L.lambda1[i] = d[0];
        L.lambda2[i] = -d[1];
        if (i > 0) {
            L.Lambda1[i] = L.Lambda1[i - 1] +
                           integrate([&](double s) { return lam(s)[0]; }, traj.t[i - 1], traj.t[i], quad).value;
            L.Lambda2[i] = L.Lambda2[i - 1] -
                           integrate([&](double s) { return lam(s)[1]; }, traj.t[i - 1], traj.t[i], quad).value;
        }
    }
    const size_t b = std::min<size_t>(n - 1, std::upper_bound(traj.t.begin(), traj.t.end(), t_ref) - traj.t.begin());
    const size_t a = b - 1;
    const cplx r1 = L.Lambda1[a] + integrate([&](double s) { return lam(s)[0]; }, traj.t[a], t_ref, quad).value;
    const cplx r2 = L.Lambda2[a] - integrate([&](double s) { return lam(s)[1]; }, traj.t[a], t_ref, quad).value;
    for (size_t i = 0; i < n; ++i) {
        L.Lambda1[i] -= r1;
        L.Lambda2[i] -= r2;
    }
    return L;
}

FlatPath flat_path(const HiggsLocalModel& model, const Trajectory& traj, int sign, int refine) {
    const auto& q = model.q;
    const size_t n = traj.size();
    if (n < 2) throw DomainError("trajectory needs at least two nodes");
    if (sign != 1 && sign != -1) throw DomainError("sign must be +1 or -1");
    if (refine < 0) throw DomainError("refine must be non-negative");
    FlatPath p;
    p.kappa = static_cast<double>(sign) * traj.sqrtq[0] * traj.dz[0];
    for (int e = 0; e < 2; ++e) {
        if (traj.ends[e].kind == EndKind::Pole) {
            const int j = traj.ends[e].index;
            p.chart[e] = {j, q.poles()[j], chart_radius(q, j)};
            p.infinite[e] = true;
        }
    }
    auto chart_at = [&](cplx z) {
        for (int e = 0; e < 2; ++e)
            if (p.chart[e].pole >= 0 && std::abs(z - p.chart[e].center) < p.chart[e].radius) return p.chart[e].pole;
        return -1;
    };
    for (size_t k = 0; k + 1 < n; ++k) {
        const cplx gk = static_cast<double>(sign) * traj.sqrtq[k];
        p.u.push_back(traj.t[k]);
        p.z.push_back(traj.z[k]);
        p.dz.push_back(p.kappa / gk);
        const int pole = chart_at(traj.z[k]);
        for (int i = 1; i <= refine; ++i) {
            const double s = traj.t[k] + (traj.t[k + 1] - traj.t[k]) * i / (refine + 1);
            const auto [z, g] = flat_solve(q, pole, traj.z[k], gk, p.kappa * (s - traj.t[k]));
            p.u.push_back(s);
            p.z.push_back(z);
            p.dz.push_back(p.kappa / g);
        }
    }
    p.u.push_back(traj.t[n - 1]);
    p.z.push_back(traj.z[n - 1]);
    p.dz.push_back(p.kappa / (static_cast<double>(sign) * traj.sqrtq[n - 1]));
    for (int e = 0; e < 2; ++e) {
        if (!p.infinite[e]) continue;
        const size_t k = e == 0 ? 0 : p.u.size() - 1;
        const int j = p.chart[e].pole;
        const cplx G = (p.kappa / p.dz[k]) * (p.z[k] - p.chart[e].center);
        p.rate[e] = p.kappa / nearest_root(q.leading(j), G);
    }
    p.set_centers(centers_of(model));
    return p;
}

// ---------------------------------------------------------------------------------------------------------------

namespace {

IvpAtInfinity make_problem(const SmallFlatSection& S, double u_from) {
    const int k = S.small_index, j = 1 - k;
    IvpAtInfinity pr;
    pr.n = 2;
    pr.T = u_from;
    Vec ek = Vec::Zero(2);
    ek(k) = 1.0;
    pr.a = [ek](double) { return ek; };
    pr.a_inf = ek;
    if (S.model->error.C == 0.0) {
        pr.kernel = Kernel::zero(2);
        return pr;
    }
    auto path = std::make_shared<const FlatPath>(S.path);
    const auto model = S.model;
    const Primitive prim = S.primitive;
    pr.kernel.kind = Kernel::Kind::ExpDiagonal;
    pr.kernel.L = [path, model, prim, k, j](double s) {
        const auto P = prim(*model, *path, s);
        Vec v = Vec::Zero(2);
        v(j) = P[j] - P[k];
        return v;
    };
    pr.kernel.B = [path, model](double s) {
        const auto [z, dz] = path->at(s);
        return model->error_matrix(z, dz, path->kappa);
    };
    return pr;
}

}  // namespace

std::pair<cplx, Vec> SmallFlatSection::at(double s) const {
    const auto P = primitive(*model, path, s);
    return {log_scale + P[small_index], x.at(s)};
}

Vec SmallFlatSection::value(double s) const {
    const auto [c, v] = at(s);
    return std::exp(c) * v;
}

IvpAtInfinity SmallFlatSection::problem() const {
    if (x.t.empty()) throw DomainError("section has not been solved");
    return make_problem(*this, x.t.front());
}

SmallFlatSection solve_on_path(const HiggsLocalModel& model, const FlatPath& path, const Primitive& prim,
                               double u_from, const GridSpec& grid) {
    model.validate();
    if (!path.infinite[1]) throw DomainError("section path must run into a pole at u = +inf");
    SmallFlatSection S;
    S.model = std::make_shared<const HiggsLocalModel>(model);
    S.path = path;
    S.primitive = prim;
    const auto [z0, dz0] = path.at(u_from);
    const auto d = model.leading(z0, dz0, path.kappa);
    S.small_index = std::real(d[0] - d[1]) > 0.0 ? 1 : 0;
    const IvpAtInfinity pr = make_problem(S, u_from);
    try {
        S.x = solve_ivp_infinity(pr, grid);
    } catch (const ContractionError& e) {
        throw ContractionError(fmt::format("small flat section: Picard iteration does not contract "
                                           "(lambda = {:.3g}); increase R",
                                           e.lambda()),
                               e.lambda());
    }
    Vec ek = Vec::Zero(2);
    ek(S.small_index) = 1.0;
    for (const Vec& v : S.x.x) S.sup_remainder = std::max(S.sup_remainder, (v - ek).norm());
    S.kernel_bound = S.x.lambda;
    return S;
}

SmallFlatSection small_flat_section(const HiggsLocalModel& model, const Trajectory& traj, int into_end,
                                    const SectionOptions& opts, double t_from, double t_anchor) {
    if (into_end != 1 && into_end != -1) throw DomainError("into_end must be +1 or -1");
    const int e = into_end == 1 ? 1 : 0;
    if (traj.ends[e].kind != EndKind::Pole) throw DomainError("trajectory does not end at a pole on that side");
    FlatPath p = flat_path(model, traj, -traj.direction, opts.refine);
    if (into_end == 1) {
        SmallFlatSection S = solve_on_path(model, p, Primitive{t_anchor, {}}, t_from, opts.grid);
        S.orientation = 1;
        return S;
    }
    SmallFlatSection S = solve_on_path(model, p.reversed(), Primitive{-t_anchor, {}}, -t_from, opts.grid);
    S.orientation = -1;
    return S;
}

WedgeValue wedge(const std::pair<cplx, Vec>& s1, int k1, const std::pair<cplx, Vec>& s2, int k2) {
    if (k1 == k2) throw DomainError("wedge of two sections with the same leading vector");
    const Vec& x = s1.second;
    const Vec& y = s2.second;
    const cplx det = x(0) * y(1) - x(1) * y(0);
    if (!(std::abs(det) > 1e-12 * x.norm() * y.norm()))
        throw NumericalError("degenerate wedge: sections are linearly dependent (wrong decoration pairing?)");
    const cplx lead = k1 == 0 ? 1.0 : -1.0;
    WedgeValue w;
    w.log_leading = s1.first + s2.first + std::log(lead);
    w.log_value = w.log_leading + std::log(det / lead);
    w.r = det / lead - 1.0;
    Vec e1 = Vec::Zero(2), e2 = Vec::Zero(2);
    e1(k1) = 1.0;
    e2(k2) = 1.0;
    const double rx = (x - e1).norm(), ry = (y - e2).norm();
    w.bound = rx + ry + rx * ry;
    return w;
}

WedgeValue wedge(const SmallFlatSection& s1, double u1, const SmallFlatSection& s2, double u2) {
    return wedge(s1.at(u1), s1.small_index, s2.at(u2), s2.small_index);
}

cplx liouville_log(const HiggsLocalModel& m, const FlatPath& p, double u_from, double u_to) {
    const cplx dA = p.antiderivative(m.a1, u_to) - p.antiderivative(m.a1, u_from) + p.antiderivative(m.a2, u_to) -
                    p.antiderivative(m.a2, u_from);
    return dA - std::conj(dA);
}

// ---------------------------------------------------------------------------------------------------------------

namespace {

int sgn(double x) { return x > 0.0 ? 1 : -1; }

double loop_sign(int label) { return label % 2 == 0 ? 1.0 : -1.0; }

}  // namespace

QuadrilateralModel build_quadrilateral(const HiggsLocalModel& model, const QuadrilateralOptions& opts) {
    model.validate();
    const auto& q = model.q;
    const int nz = static_cast<int>(q.zeros().size());
    if (opts.zero_a < 0 || opts.zero_a >= nz || opts.zero_b < 0 || opts.zero_b >= nz || opts.zero_a == opts.zero_b)
        throw DomainError("zero_a and zero_b must be two distinct zero indices");
    if (q.poles().size() < 4) throw DomainError("a quadrilateral needs at least four double poles");
    if (!(opts.seed_radius > 0.0 && opts.seed_radius < 1.0)) throw DomainError("seed_radius must lie in (0, 1)");
    if (!(opts.connector_depth > 0.0 && opts.connector_depth < 0.3)) throw DomainError("connector_depth must lie in (0, 0.3)");
    if (!(opts.connector_angle > 0.0 && opts.connector_angle < kPi / 2)) throw DomainError("connector_angle must lie in (0, pi/2)");
    const double spacing = q.critical_spacing();
    StopRules sr;
    sr.pole_capture = opts.section.pole_capture * spacing;

    struct Sector {
        std::pair<int, int> key;
        Trajectory tr;
    };
    auto key = [](int a, int b) { return std::make_pair(std::min(a, b), std::max(a, b)); };
    std::array<std::vector<Sector>, 2> sectors;
    const int zi[2] = {opts.zero_a, opts.zero_b};
    for (int w = 0; w < 2; ++w) {
        const cplx z0 = q.zeros()[zi[w]];
        const Separatrices S = separatrices(q, zi[w], model.theta, sr);
        if (S.collision)
            throw DomainError(fmt::format("separatrices of zero {} collide: saddle connection at theta = {}", zi[w], model.theta));
        for (int k = 0; k < 3; ++k)
            if (S.curves[k].ends[1].kind != EndKind::Pole)
                throw DomainError(fmt::format("separatrix {} of zero {} does not end at a double pole", k, zi[w]));
        std::array<int, 3> ord{0, 1, 2};
        std::sort(ord.begin(), ord.end(), [&](int a, int b) { return S.directions[a] < S.directions[b]; });
        double dnear = kInf;
        for (int k = 0; k < nz; ++k)
            if (k != zi[w]) dnear = std::min(dnear, std::abs(q.zeros()[k] - z0));
        for (const cplx& p : q.poles()) dnear = std::min(dnear, std::abs(p - z0));
        for (int s = 0; s < 3; ++s) {
            const int k0 = ord[s], k1 = ord[(s + 1) % 3];
            const double a0 = S.directions[k0];
            double a1 = S.directions[k1];
            if (a1 <= a0) a1 += 2.0 * kPi;
            const double bis = 0.5 * (a0 + a1);
            const int P0 = S.curves[k0].ends[1].index, P1 = S.curves[k1].ends[1].index;
            if (P0 == P1) throw DomainError(fmt::format("two separatrices of zero {} end at the same pole", zi[w]));
            double rho = opts.seed_radius * dnear;
            bool ok = false;
            Trajectory tr;
            for (int attempt = 0; attempt < 5 && !ok; ++attempt, rho *= 0.5) {
                try {
                    tr = trace_full(q, z0 + rho * std::exp(kI * bis), model.theta, sr);
                } catch (const TraceError&) {
                    continue;
                }
                ok = tr.ends[0].kind == EndKind::Pole && tr.ends[1].kind == EndKind::Pole &&
                     key(tr.ends[0].index, tr.ends[1].index) == key(P0, P1);
            }
            if (!ok) throw NumericalError(fmt::format("sector trajectory of zero {} does not join poles {} and {}", zi[w], P0, P1));
            sectors[w].push_back({key(P0, P1), tr});
        }
    }
    std::pair<int, int> edge{-1, -1};
    int shared = 0;
    for (const auto& A : sectors[0])
        for (const auto& B : sectors[1])
            if (A.key == B.key) {
                edge = A.key;
                ++shared;
            }
    if (shared != 1) throw DomainError("the two zeros must be adjacent, sharing exactly one edge");
    std::vector<Trajectory> tr;
    for (const auto& list : sectors)
        for (const auto& s : list)
            if (s.key != edge) tr.push_back(s.tr);
    std::set<int> verts;
    for (const auto& t : tr) verts.insert({t.ends[0].index, t.ends[1].index});
    if (tr.size() != 4 || verts.size() != 4) throw DomainError("quadrilateral degenerates: fewer than four distinct vertices");

    // global branch of g on the boundary
    auto touches = [](const Trajectory& t, int p) { return t.ends[0].index == p || t.ends[1].index == p; };
    auto end_factor = [&](const Trajectory& t, int p) {
        const size_t k = t.ends[1].index == p ? t.size() - 1 : 0;
        return (t.z[k] - q.poles()[p]) * t.sqrtq[k];
    };
    std::array<int, 4> sg{};
    const int ref = *verts.begin();
    const cplx target = static_cast<double>(model.branch) * kI * q.sigma(ref);
    for (int i = 0; i < 4; ++i)
        if (touches(tr[i], ref)) {
            sg[i] = sgn(std::real(end_factor(tr[i], ref) * std::conj(target)));
            break;
        }
    for (int pass = 0; pass < 4; ++pass)
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) {
                if (sg[i] != 0 || sg[j] == 0) continue;
                for (int e = 0; e < 2; ++e) {
                    const int p = tr[i].ends[e].index;
                    if (sg[i] == 0 && touches(tr[j], p))
                        sg[i] = sg[j] * sgn(std::real(end_factor(tr[j], p) * std::conj(end_factor(tr[i], p))));
                }
            }
    for (int i = 0; i < 4; ++i) {
        if (sg[i] == 0) throw DomainError("quadrilateral sides are not connected");
        for (int j = i + 1; j < 4; ++j)
            for (int e = 0; e < 2; ++e) {
                const int p = tr[i].ends[e].index;
                if (touches(tr[j], p) &&
                    sg[i] * sg[j] * std::real(end_factor(tr[j], p) * std::conj(end_factor(tr[i], p))) <= 0.0)
                    throw NumericalError("inconsistent branch of q^(1/2) around the quadrilateral");
            }
    }

    QuadrilateralModel Q;
    std::array<Side, 4> raw;
    const cplx kref = -std::exp(kI * model.theta);
    for (int i = 0; i < 4; ++i) {
        const Trajectory t = sg[i] * tr[i].direction == 1 ? tr[i].reversed() : tr[i];
        raw[i].path = flat_path(model, t, sg[i], opts.section.refine);
        if (std::abs(raw[i].path.kappa - kref) > 1e-6) throw NumericalError("side orientation check failed");
        raw[i].from = t.ends[0].index;
        raw[i].to = t.ends[1].index;
        raw[i].id = i;
    }
    std::set<int> in, out;
    for (const auto& s : raw) {
        in.insert(s.to);
        out.insert(s.from);
    }
    if (in.size() != 2 || out.size() != 2) throw DomainError("sides do not alternate in orientation around the quadrilateral");
    int p1 = *in.begin(), p3 = *in.rbegin(), p2 = *out.begin(), p4 = *out.rbegin();
    auto find = [&](int from, int to) -> const Side& {
        for (const auto& s : raw)
            if (s.from == from && s.to == to) return s;
        throw DomainError("quadrilateral side missing");
    };
    for (int attempt = 0;; ++attempt) {
        Q.sides = {find(p4, p1), find(p2, p1), find(p2, p3), find(p4, p3)};
        Q.boundary.clear();
        for (int l = 0; l < 4; ++l) {
            const auto& z = Q.sides[l].path.z;
            if (l % 2 == 0) Q.boundary.insert(Q.boundary.end(), z.begin(), z.end());
            else Q.boundary.insert(Q.boundary.end(), z.rbegin(), z.rend());
        }
        const long wa = std::lround(winding(Q.boundary, q.zeros()[opts.zero_a]));
        const long wb = std::lround(winding(Q.boundary, q.zeros()[opts.zero_b]));
        if (wa == -1 && wb == -1) break;
        if (attempt > 0 || wa != wb) throw DomainError(fmt::format("quadrilateral boundary does not wind once around both zeros ({}, {})", wa, wb));
        std::swap(p2, p4);
    }
    for (int k = 0; k < nz; ++k)
        if (k != opts.zero_a && k != opts.zero_b && std::lround(winding(Q.boundary, q.zeros()[k])) != 0)
            throw DomainError(fmt::format("zero {} lies inside the quadrilateral", k));
    for (int j = 0; j < static_cast<int>(q.poles().size()); ++j)
        if (!verts.count(j) && std::lround(winding(Q.boundary, q.poles()[j])) != 0)
            throw DomainError(fmt::format("pole {} lies inside the quadrilateral", j));
    for (int l = 0; l < 4; ++l) {
        Side& s = Q.sides[l];
        s.eval = opts.eval_shift[l];
        if (s.eval <= s.path.u.front() || s.eval >= s.path.u.back()) throw DomainError("eval_shift moves z_i off its side");
    }
    Q.vertices = {p1, p2, p3, p4};
    Q.zero_a = opts.zero_a;
    Q.zero_b = opts.zero_b;
    Q.edge_from = edge.first;
    Q.edge_to = edge.second;
    Q.connector_depth = opts.connector_depth;
    Q.connector_angle = opts.connector_angle;
    Q.section = opts.section;
    for (int v = 0; v < 4; ++v) Q.connectors[v] = build_connector(model, Q, v, opts.connector_depth, opts.connector_angle);
    return Q;
}

Connector build_connector(const HiggsLocalModel& model, const QuadrilateralModel& quad, int v, double depth,
                          double angle) {
    if (v < 0 || v > 3) throw DomainError("vertex index must be 0..3");
    const auto& q = model.q;
    const int tl = (v + 1) % 4;
    const Side& T = quad.sides[tl];
    const Side& N = quad.sides[v];
    const int pj = quad.vertices[v];
    const cplx c = q.poles()[pj];
    const bool incoming = v % 2 == 0;
    const int end = incoming ? 1 : 0;
    const double rad = chart_radius(q, pj);
    const double d = depth * q.critical_spacing();
    if (!(d > 0.0 && d < rad)) throw DomainError("connector depth outside the vertex chart");

    // The section small at the vertex has to decay from T to N along the connector. That fixes the sign of
    // kappa_c relative to the sides and, with the interior normal, the sign of the rotation.
    const double s = incoming ? 1.0 : -1.0;
    const double sgn_delta = -s * loop_sign(tl);
    const double phi = std::arg(model.zeta * std::exp(-kI * model.theta));
    const double limit = sgn_delta > 0 ? phi + kPi / 2 : kPi / 2 - phi;
    const double delta = sgn_delta * std::min(angle, 0.8 * limit);
    const cplx kc = s * std::exp(kI * delta) * T.path.kappa;

    auto G_at = [&](cplx vv, cplx ref) { return nearest_root(reduced_q(q, pj, c + std::exp(vv)), ref); };

    // reference node on N near the requested depth
    size_t kN = 0;
    double best = kInf;
    for (size_t k = 0; k < N.path.z.size(); ++k) {
        const double r = std::abs(N.path.z[k] - c);
        if (r >= rad) continue;
        const double m = std::abs(std::log(r / d));
        if (m < best) {
            best = m;
            kN = k;
        }
    }
    if (!std::isfinite(best)) throw NumericalError("native side never enters the vertex chart");
    const cplx vN = std::log(N.path.z[kN] - c);
    const cplx dN = N.path.dz[kN] / (N.path.z[kN] - c);

    double u_y = 0.0, L = 0.0, tN = 0.0;
    cplx z_y, G_y, v_y;
    double dy = d;
    for (int pass = 0; pass < 2; ++pass) {
        u_y = param_at_depth(T.path, end, c, dy);
        const auto [zy, gy] = exact_point(q, T.path, u_y);
        z_y = zy;
        G_y = gy * (zy - c);
        v_y = std::log(zy - c);
        const cplx df = T.path.kappa / G_y;
        const cplx n = -kI * loop_sign(tl) * df / std::abs(df);
        const cplx dir = kc / G_y;
        if (std::real(std::conj(n) * dir) <= 0.0) throw NumericalError("connector does not point into the quadrilateral");
        const double P = std::real(std::conj(n) * cplx(0.0, 2.0 * kPi));
        if (std::abs(P) < 1e-12) throw NumericalError("sides do not spiral into the vertex");
        const double sep0 = std::real(std::conj(n) * (vN - v_y));
        double sep = sep0 - std::abs(P) * std::floor(sep0 / std::abs(P));
        if (sep <= 0.0) sep = std::abs(P);
        const double m = std::round((sep - sep0) / P);
        // v_y + dir L = vN + 2 pi i m + dN tau
        const cplx rhs = vN + cplx(0.0, 2.0 * kPi * m) - v_y;
        Eigen::Matrix2d A;
        A << dir.real(), -dN.real(), dir.imag(), -dN.imag();
        const Eigen::Vector2d sol = A.colPivHouseholderQr().solve(Eigen::Vector2d(rhs.real(), rhs.imag()));
        L = sol(0);
        tN = N.path.u[kN] + sol(1);
        const double rise = std::real(dir) * L;
        if (pass == 0 && rise > 0.0) dy = d * std::exp(-rise);
        else break;
    }
    if (!(L > 0.0)) throw NumericalError("connector length prediction failed");

    std::vector<double> us;
    std::vector<cplx> vs, Gs;
    auto trace = [&](double len) {
        const int steps = std::max(64, static_cast<int>(std::ceil(std::abs(kc / G_y) * len / 0.01)));
        const double h = len / steps;
        us.assign(1, 0.0);
        vs.assign(1, v_y);
        Gs.assign(1, G_y);
        cplx vv = v_y, G = G_y;
        for (int i = 0; i < steps; ++i) {
            const cplx G1 = G_at(vv, G);
            const cplx k1 = kc / G1;
            const cplx G2 = G_at(vv + 0.5 * h * k1, G1);
            const cplx k2 = kc / G2;
            const cplx G3 = G_at(vv + 0.5 * h * k2, G2);
            const cplx k3 = kc / G3;
            const cplx G4 = G_at(vv + h * k3, G3);
            const cplx k4 = kc / G4;
            vv += h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0;
            G = G_at(vv, G4);
            us.push_back((i + 1) * h);
            vs.push_back(vv);
            Gs.push_back(G);
        }
    };
    const cplx kN_ = N.path.kappa;
    bool converged = false;
    for (int it = 0; it < 12; ++it) {
        trace(L);
        const cplx ve = vs.back(), Ge = Gs.back();
        const auto [zn, gn] = exact_point(q, N.path, tN);
        const cplx vn = lift(std::log(zn - c), ve);
        const cplx Gn = gn * (zn - c);
        if (std::abs(Gn - Ge) > 0.5 * std::abs(Ge)) throw NumericalError("branch mismatch where the connector meets the native side");
        cplx dw = 0.0, ref = Gn;
        for (const auto& [x, w] : gl16()) {
            ref = G_at(vn + x * (ve - vn), ref);
            dw += w * ref;
        }
        dw *= ve - vn;
        if (std::abs(dw) < 1e-13 * std::abs(Ge)) {
            converged = true;
            break;
        }
        Eigen::Matrix2d A;
        A << kc.real(), -kN_.real(), kc.imag(), -kN_.imag();
        const Eigen::Vector2d del = A.colPivHouseholderQr().solve(Eigen::Vector2d(-dw.real(), -dw.imag()));
        L += del(0);
        tN += del(1);
    }
    if (!converged) throw NumericalError(fmt::format("connector at vertex {} did not close onto the native side", v));

    Connector C;
    C.vertex = v;
    C.target = tl;
    C.native = v;
    C.u_target = u_y;
    C.u_native = tN;
    C.length = L;
    C.theta = model.theta + delta;
    FlatPath& p = C.path;
    p.kappa = kc;
    p.chart[0] = p.chart[1] = PoleChart{pj, c, rad};
    for (size_t i = 0; i < us.size(); ++i) {
        const cplx e = std::exp(vs[i]);
        if (std::abs(e) >= rad) throw DomainError(fmt::format("connector at vertex {} leaves the vertex chart", v));
        p.u.push_back(us[i]);
        p.z.push_back(c + e);
        p.dz.push_back(e * kc / Gs[i]);
    }
    p.z.front() = z_y;
    p.set_centers(centers_of(model));
    return C;
}

SmallFlatSection side_section(const HiggsLocalModel& model, const QuadrilateralModel& quad, int label, bool to_end,
                              double u_from) {
    if (label < 0 || label > 3) throw DomainError("side label must be 0..3");
    const Side& S = quad.sides[label];
    SmallFlatSection sec = to_end
        ? solve_on_path(model, S.path, Primitive{S.eval, {}}, u_from, quad.section.grid)
        : solve_on_path(model, S.path.reversed(), Primitive{-S.eval, {}}, -u_from, quad.section.grid);
    sec.orientation = to_end ? 1 : -1;
    return sec;
}

Transport transport_section(const HiggsLocalModel& model, const QuadrilateralModel& quad, int v,
                            const SmallFlatSection& native, const SmallFlatSection& next) {
    const Connector& C = quad.connectors[v];
    const double un = native.orientation * C.u_native;
    const auto [cN, xN] = native.at(un);
    const auto PN = native.primitive(*native.model, native.path, un);
    const int k = native.small_index, j = 1 - k;
    auto path = std::make_shared<const FlatPath>(C.path);
    auto mp = std::make_shared<const HiggsLocalModel>(model);
    const Primitive pc{C.length, PN};
    auto Lj = [path, mp, pc, k, j](double s) {
        const auto P = pc(*mp, *path, s);
        return P[j] - P[k];
    };
    Kernel K = Kernel::zero(2);
    if (model.error.C != 0.0) {
        K.kind = Kernel::Kind::ExpDiagonal;
        K.L = [Lj, j](double s) {
            Vec r = Vec::Zero(2);
            r(j) = Lj(s);
            return r;
        };
        K.B = [path, mp](double s) {
            const auto [z, dz] = path->at(s);
            return mp->error_matrix(z, dz, path->kappa);
        };
    }
    const cplx Lend = Lj(C.length);
    auto Phi = [Lj, Lend, j](double t) {
        Mat M = Mat::Identity(2, 2);
        M(j, j) = std::exp(Lj(t) - Lend);
        return M;
    };
    Transport tr;
    tr.vertex = v;
    tr.small_index = k;
    tr.finite = solve_finite(K, 2, 0.0, C.length, xN, Phi, quad.section.grid);
    tr.kernel_bound = tr.finite.lambda;
    const cplx cy = native.log_scale + pc(model, C.path, 0.0)[k];
    tr.at_target = {cy, tr.finite.at(0.0)};

    const int tl = (v + 1) % 4;
    tr.target = side_section(model, quad, tl, v % 2 == 0, C.u_target);
    const double uy = tr.target.orientation * C.u_target;
    const auto [cS, xS] = tr.target.at(uy);
    const auto [cn, xn] = next.at(next.orientation * C.u_target);
    auto det = [](const Vec& a, const Vec& b) { return a(0) * b(1) - a(1) * b(0); };
    const cplx ratio = det(tr.at_target.second, xn) / det(xS, xn);
    tr.epsilon = ratio - 1.0;
    tr.target.log_scale = std::log(ratio) + cy - (cS - tr.target.log_scale);
    return tr;
}

cplx log_x_leading(double R, cplx zeta, cplx Z, double theta_angle) {
    if (zeta == cplx(0.0)) throw DomainError("zeta must be nonzero");
    return kI * kPi + (R / zeta) * kPi * Z + R * zeta * kPi * std::conj(Z) + kI * theta_angle;
}

cplx XResult::value() const { return std::exp(log_x); }

XResult x_coordinate(const HiggsLocalModel& model, const QuadrilateralModel& quad,
                     const std::array<cplx, 4>& log_rescale) {
    model.validate();
    const auto& q = model.q;
    XResult X;
    std::array<SmallFlatSection, 4> native;
    for (int v = 0; v < 4; ++v) {
        native[v] = side_section(model, quad, v, v % 2 == 0, quad.connectors[(v + 3) % 4].u_target);
        native[v].log_scale = log_rescale[v];
        X.sup_remainder[v] = native[v].sup_remainder;
        X.kernel_bound = std::max(X.kernel_bound, native[v].kernel_bound);
    }
    for (int v = 0; v < 4; ++v) {
        X.transports[v] = transport_section(model, quad, v, native[v], native[(v + 1) % 4]);
        X.kernel_bound = std::max({X.kernel_bound, X.transports[v].kernel_bound, X.transports[v].target.kernel_bound});
    }
    for (int v = 0; v < 4; ++v) {
        const int tl = (v + 1) % 4;
        const Connector& C = quad.connectors[v];
        const SmallFlatSection& nx = native[tl];
        WedgeValue w = wedge(X.transports[v].at_target, X.transports[v].small_index,
                             nx.at(nx.orientation * C.u_target), nx.small_index);
        const cplx shift = liouville_log(model, quad.sides[tl].path, C.u_target, quad.sides[tl].eval);
        w.log_value += shift;
        w.log_leading += shift;
        X.wedges[v] = w;
    }
    auto tail = [&](int v) {
        const Connector& C = quad.connectors[v];
        const Side& N = quad.sides[v];
        const Side& T = quad.sides[(v + 1) % 4];
        return liouville_log(model, N.path, N.eval, C.u_native) + liouville_log(model, C.path, C.length, 0.0) +
               liouville_log(model, T.path, C.u_target, T.eval);
    };
    const cplx T1 = tail(0), T3 = tail(2);
    X.log_x = kI * kPi + X.wedges[0].log_value + X.wedges[2].log_value - X.wedges[3].log_value -
              X.wedges[1].log_value - T1 - T3;

    // clockwise transport loop: side v+1 from the target end of connector v to the native end of connector v+1,
    // then across connector v+1
    cplx wsum = 0.0, asum = 0.0;
    for (int v = 0; v < 4; ++v) {
        const int s = (v + 1) % 4;
        const Connector& C0 = quad.connectors[v];
        const Connector& C1 = quad.connectors[s];
        const FlatPath& P = quad.sides[s].path;
        wsum += P.kappa * (C1.u_native - C0.u_target) + C1.path.kappa * (0.0 - C1.length);
        asum += P.antiderivative(model.a1, C1.u_native) - P.antiderivative(model.a1, C0.u_target) +
                C1.path.antiderivative(model.a1, 0.0) - C1.path.antiderivative(model.a1, C1.length);
    }
    X.Z = wsum / kPi;
    const cplx itheta = std::conj(asum) - asum;
    X.theta_angle = std::imag(itheta);
    X.log_leading = log_x_leading(model.R, model.zeta, X.Z, X.theta_angle);
    X.r_q = std::exp(X.log_x - X.log_leading) - 1.0;

    const double b12 = X.wedges[0].bound, b23 = X.wedges[1].bound, b34 = X.wedges[2].bound, b41 = X.wedges[3].bound;
    X.r_bound = (b41 < 1.0 && b23 < 1.0) ? (1 + b12) * (1 + b34) / ((1 - b41) * (1 - b23)) - 1.0 : kInf;

    // independent period over an ellipse around the two zeros
    const cplx za = q.zeros()[quad.zero_a], zb = q.zeros()[quad.zero_b];
    double r = kInf;
    for (const cplx& zk : q.zeros())
        if (zk != za && zk != zb) r = std::min({r, std::abs(zk - za), std::abs(zk - zb)});
    for (const cplx& p : q.poles()) r = std::min({r, std::abs(p - za), std::abs(p - zb)});
    r *= 0.4;
    const cplx mid = 0.5 * (za + zb), rot = (zb - za) / std::abs(zb - za);
    const double A = 0.5 * std::abs(zb - za) + r;
    std::vector<cplx> ell;
    const int ne = 256;
    for (int i = 0; i <= ne; ++i) {
        const double t = 2.0 * kPi * (i % ne) / ne;
        ell.push_back(mid + rot * cplx(A * std::cos(t), -r * std::sin(t)));
    }
    const Side& g1 = quad.sides[0];
    const auto [ze, dze] = g1.path.at(g1.eval);
    size_t kst = 0;
    for (size_t i = 0; i < ell.size() - 1; ++i)
        if (std::abs(ell[i] - ze) < std::abs(ell[kst] - ze)) kst = i;
    std::vector<cplx> seg;
    for (int i = 0; i <= 200; ++i) seg.push_back(ze + (ell[kst] - ze) * (i / 200.0));
    const cplx seed = sqrt_tracked(q, seg, q.sqrt_near(ze, g1.path.kappa / dze)).back();
    std::vector<cplx> cyc(ell.begin() + kst, ell.end() - 1);
    cyc.insert(cyc.end(), ell.begin(), ell.begin() + kst + 1);
    try {
        X.Z_ellipse = period(q, ContourPath::polyline(cyc), seed);
    } catch (const NumericalError&) {
        X.Z_ellipse = cplx(std::nan(""), std::nan(""));
    }
    return X;
}

XResult x_coordinate(const HiggsLocalModel& model, const QuadrilateralOptions& opts) {
    return x_coordinate(model, build_quadrilateral(model, opts));
}

double check_reality(const HiggsLocalModel& model, const QuadrilateralOptions& opts) {
    const XResult X1 = x_coordinate(model, opts);
    HiggsLocalModel m2 = model;
    m2.theta = model.theta + kPi;
    m2.zeta = -1.0 / std::conj(model.zeta);
    const XResult X2 = x_coordinate(m2, opts);
    return std::abs(1.0 - std::exp(-(X1.log_x + std::conj(X2.log_x))));
}

cplx zeta_dlogx_dscale(const HiggsLocalModel& model, const QuadrilateralOptions& opts, double h) {
    if (!(h > 0.0 && h < 0.1)) throw DomainError("step must lie in (0, 0.1)");
    auto scaled = [&](double f) {
        HiggsLocalModel m = model;
        m.q = QuadraticDifferential(model.q.normalization() * f, model.q.zeros(), model.q.poles());
        return x_coordinate(m, opts).log_x;
    };
    const cplx d = std::log(std::exp(scaled(1.0 + h) - scaled(1.0 - h)));
    return model.zeta * d / (2.0 * h);
}

}  // namespace hkx
