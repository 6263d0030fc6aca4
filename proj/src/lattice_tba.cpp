#include "hkx/lattice_tba.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <thread>

#include "hkx/numerics.hpp"
#include "hkx/volterra.hpp"

namespace hkx {

namespace {

std::string charge_str(const Charge& c) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < c.size(); ++i) os << (i ? "," : "") << c[i];
    os << ")";
    return os.str();
}

double wrap_angle(double a) {
    a = std::remainder(a, 2.0 * kPi);
    return a <= -kPi ? a + 2.0 * kPi : a;
}

// e^f - 1 and log(1 + z) without cancellation for small arguments.
cplx expm1c(cplx f) {
    double a = f.real(), b = f.imag();
    double s = std::sin(0.5 * b);
    return {std::expm1(a) * std::cos(b) - 2.0 * s * s, std::exp(a) * std::sin(b)};
}

cplx log1pc(cplx z) {
    double re = 0.5 * std::log1p(2.0 * z.real() + std::norm(z));
    return {re, std::atan2(z.imag(), 1.0 + z.real())};
}

cplx kernel(cplx zp, cplx z) { return (zp + z) / (zp - z); }

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
    if (threads <= 0) threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    threads = std::min(threads, n);
    if (threads <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t)
        pool.emplace_back([&, t] {
            for (int i = t; i < n; i += threads) fn(i);
        });
    for (auto& th : pool) th.join();
}

}  // namespace

// --- lattice ---------------------------------------------------------------

void ChargeLattice::validate() const {
    if (rank < 1) throw DomainError("lattice rank must be >= 1");
    if (static_cast<int>(pairing.size()) != rank) throw DomainError("pairing must be rank x rank");
    for (int i = 0; i < rank; ++i) {
        if (static_cast<int>(pairing[i].size()) != rank) throw DomainError("pairing must be rank x rank");
        for (int j = 0; j < rank; ++j)
            if (pairing[i][j] != -pairing[j][i])
                throw DomainError("pairing not antisymmetric at (" + std::to_string(i) + "," + std::to_string(j) + ")");
    }
    if (!labels.empty() && static_cast<int>(labels.size()) != rank) throw DomainError("one label per generator");
}

int ChargeLattice::pair(const Charge& a, const Charge& b) const {
    if (static_cast<int>(a.size()) != rank || static_cast<int>(b.size()) != rank)
        throw DomainError("charge has wrong rank");
    long s = 0;
    for (int i = 0; i < rank; ++i)
        for (int j = 0; j < rank; ++j) s += static_cast<long>(a[i]) * pairing[i][j] * b[j];
    return static_cast<int>(s);
}

Charge ChargeLattice::generator(int i) const {
    Charge c(rank, 0);
    c.at(i) = 1;
    return c;
}

Charge operator+(const Charge& a, const Charge& b) {
    if (a.size() != b.size()) throw DomainError("charge rank mismatch");
    Charge c(a);
    for (std::size_t i = 0; i < c.size(); ++i) c[i] += b[i];
    return c;
}

Charge operator-(const Charge& a) {
    Charge c(a);
    for (auto& v : c) v = -v;
    return c;
}

Charge operator*(int m, const Charge& a) {
    Charge c(a);
    for (auto& v : c) v *= m;
    return c;
}

int sigma_extend(const ChargeLattice& lattice, const std::vector<int>& sigma_gens, const Charge& c) {
    if (static_cast<int>(sigma_gens.size()) != lattice.rank) throw DomainError("one sigma per generator");
    if (static_cast<int>(c.size()) != lattice.rank) throw DomainError("charge has wrong rank");
    int s = 1;
    for (int i = 0; i < lattice.rank; ++i) {
        if (sigma_gens[i] != 1 && sigma_gens[i] != -1)
            throw DomainError("sigma on generator " + std::to_string(i) + " must be +1 or -1");
        if (sigma_gens[i] == -1 && (c[i] % 2 != 0)) s = -s;
    }
    long q = 0;
    for (int i = 0; i < lattice.rank; ++i)
        for (int j = i + 1; j < lattice.rank; ++j) q += static_cast<long>(c[i]) * c[j] * lattice.pairing[i][j];
    if (q % 2 != 0) s = -s;
    return s;
}

// --- spectrum --------------------------------------------------------------

SpectrumData SpectrumData::make(ChargeLattice lattice, std::vector<cplx> Z, std::vector<double> theta,
                                std::vector<int> sigma) {
    SpectrumData s;
    s.lattice = std::move(lattice);
    s.Z = std::move(Z);
    s.theta = std::move(theta);
    s.sigma = std::move(sigma);
    s.validate();
    return s;
}

void SpectrumData::validate() const {
    lattice.validate();
    auto n = static_cast<std::size_t>(lattice.rank);
    if (Z.size() != n || theta.size() != n || sigma.size() != n)
        throw DomainError("Z, theta and sigma need one entry per generator");
    for (double t : theta)
        if (!std::isfinite(t)) throw DomainError("theta must be finite");
    for (cplx z : Z)
        if (!std::isfinite(z.real()) || !std::isfinite(z.imag())) throw DomainError("Z must be finite");
    for (int v : sigma)
        if (v != 1 && v != -1) throw DomainError("sigma must be +1 or -1");
    for (const auto& [c, w] : omega) {
        if (c.size() != n) throw DomainError("Omega support charge " + charge_str(c) + " has wrong rank");
        if (c == lattice.zero()) throw DomainError("Omega must vanish on the zero charge");
    }
    for (const auto& [c, v] : sigma_given) {
        if (c.size() != n) throw DomainError("sigma entry " + charge_str(c) + " has wrong rank");
        if (v != sigma_extend(lattice, sigma, c))
            throw DomainError("quadratic refinement violated: sigma" + charge_str(c) + " = " + std::to_string(v) +
                              " is inconsistent with the generator values");
    }
    for (const auto& t : towers) {
        if (t.base.size() != n || t.step.size() != n) throw DomainError("tower charge has wrong rank");
        if (t.step == lattice.zero()) throw DomainError("tower step must be nonzero");
        if (t.m_max < 0) throw DomainError("tower m_max must be >= 0");
    }
}

void SpectrumData::set_omega(const Charge& c, int value) {
    if (value == 0)
        omega.erase(c);
    else
        omega[c] = value;
}

int SpectrumData::omega_of(const Charge& c) const {
    auto it = omega.find(c);
    return it == omega.end() ? 0 : it->second;
}

cplx SpectrumData::central_charge(const Charge& c) const {
    if (c.size() != Z.size()) throw DomainError("charge has wrong rank");
    cplx z = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) z += static_cast<double>(c[i]) * Z[i];
    return z;
}

double SpectrumData::theta_of(const Charge& c) const {
    if (c.size() != theta.size()) throw DomainError("charge has wrong rank");
    double t = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) t += c[i] * theta[i];
    return t;
}

int SpectrumData::sigma_of(const Charge& c) const { return sigma_extend(lattice, sigma, c); }

std::vector<std::pair<Charge, int>> SpectrumData::active() const {
    std::map<Charge, int> all = omega;
    for (const auto& t : towers)
        for (int m = 0; m <= t.m_max; ++m) all[t.base + m * t.step] += t.omega;
    std::vector<std::pair<Charge, int>> out;
    for (const auto& [c, w] : all)
        if (w != 0) out.emplace_back(c, w);
    return out;
}

double SpectrumData::tower_tail(double R) const {
    double tail = 0.0;
    for (const auto& t : towers) {
        double q = std::exp(-R * std::abs(central_charge(t.step)));
        tail += std::abs(t.omega) * std::pow(q, t.m_max + 1) / (1.0 - q);
    }
    return tail;
}

// --- semiflat and jumps ----------------------------------------------------

cplx log_x_semiflat(const SpectrumData& s, const Charge& c, cplx zeta, double R) {
    if (zeta == 0.0) throw DomainError("zeta must be nonzero");
    cplx Z = s.central_charge(c);
    return kPi * R * Z / zeta + kI * s.theta_of(c) + kPi * R * zeta * std::conj(Z);
}

cplx x_semiflat(const SpectrumData& s, const Charge& c, cplx zeta, double R) {
    return -std::exp(log_x_semiflat(s, c, zeta, R));
}

cplx jump_term(int pairing, int omega, int sigma, cplx x) {
    if (pairing == 0 || omega == 0) return 1.0;
    if (std::abs(x) >= 1.0)
        throw DomainError("|X| >= 1 on a BPS ray: the logarithm branch is undefined; increase R");
    return std::exp(static_cast<double>(pairing) * omega * log1pc(-static_cast<double>(sigma) * x));
}

double ray_angle(cplx Z) {
    if (Z == 0.0) throw DomainError("central charge vanishes; no ray");
    return std::arg(-Z);
}

cplx jump_factor(const SpectrumData& s, double ray, const Charge& c, const std::map<Charge, cplx>& x_values) {
    cplx out = 1.0;
    for (const auto& [b, w] : s.active()) {
        if (std::abs(wrap_angle(ray_angle(s.central_charge(b)) - ray)) > 1e-9) continue;
        int p = s.lattice.pair(c, b);
        if (p == 0) continue;
        auto it = x_values.find(b);
        if (it == x_values.end()) throw DomainError("no X value supplied for charge " + charge_str(b));
        out *= jump_term(p, w, s.sigma_of(b), it->second);
    }
    return out;
}

// --- ray tables ------------------------------------------------------------

cplx RayTable::point(double yy) const { return -(Z / std::abs(Z)) * std::exp(yy); }

cplx RayTable::x_at(int i) const { return -static_cast<double>(sigma) * expm1c(f[i]); }

cplx TbaSolution::ray_integral(int r, cplx zeta, int depth) const {
    const RayTable& T = rays.at(r);
    cplx sum = 0.0;
    for (std::size_t i = 0; i < T.y.size(); ++i) {
        double wgt = (i == 0 || i + 1 == T.y.size()) ? 0.5 : 1.0;
        sum += wgt * kernel(T.point(T.y[i]), zeta) * T.f[i];
    }
    sum *= T.h;
    // Trapezoid error from the kernel pole at zeta'(w) = zeta: residue 2 f(w).
    cplx w = std::log(-zeta / (T.Z / std::abs(T.Z)));
    double t = kPi * w.imag() / T.h;
    if (std::abs(t) < 20.0) {
        if (depth <= 0) throw NumericalError("ray integral needs X off its table at too deep a level");
        cplx xw = std::exp(log_x_direct(T.beta, zeta, depth - 1));
        cplx fw = log1pc(-static_cast<double>(T.sigma) * xw);
        cplx a = kPi * (T.y.front() - w) / T.h;
        double sgn = w.imag() > 0 ? 1.0 : (w.imag() < 0 ? -1.0 : 0.0);
        sum += 2.0 * fw * (kI * kPi * sgn - kPi * std::cos(a) / std::sin(a));
    }
    return sum;
}

cplx TbaSolution::log_x_direct(const Charge& c, cplx zeta, int depth) const {
    cplx v = log_x_semiflat(spectrum, c, zeta, R);
    for (std::size_t r = 0; r < rays.size(); ++r) {
        int p = spectrum.lattice.pair(c, rays[r].beta);
        if (p == 0) continue;
        v += -static_cast<double>(rays[r].omega * p) / (4.0 * kPi * kI) * ray_integral(static_cast<int>(r), zeta, depth);
    }
    return v;
}

cplx TbaSolution::log_x(const Charge& c, cplx zeta, RaySide side) const {
    if (zeta == 0.0) throw DomainError("zeta must be nonzero");
    const double rho = std::abs(zeta);
    double near_ray = 0.0;
    bool near = false;
    for (const auto& T : rays) {
        if (spectrum.lattice.pair(c, T.beta) == 0) continue;
        double ray = ray_angle(T.Z);
        double d = wrap_angle(std::arg(zeta) - ray);
        if (std::abs(d) < 0.5 * kPi && std::abs(std::sin(d)) < 1e-6) {
            near = true;
            near_ray = ray;
        }
    }
    if (!near) return log_x_direct(c, zeta, 2);
    if (side == RaySide::None)
        throw DomainError("zeta lies on an active BPS ray; a side (clockwise or counter-clockwise) is required");
    double s = side == RaySide::CounterClockwise ? 1.0 : -1.0;
    const double delta = 1e-4;
    cplx l1 = log_x_direct(c, std::polar(rho, near_ray + s * delta), 2);
    cplx l2 = log_x_direct(c, std::polar(rho, near_ray + s * 2.0 * delta), 2);
    cplx l4 = log_x_direct(c, std::polar(rho, near_ray + s * 4.0 * delta), 2);
    return (8.0 * l1 - 6.0 * l2 + l4) / 3.0;
}

cplx TbaSolution::correction(const Charge& c, cplx zeta, RaySide side) const {
    return log_x(c, zeta, side) - log_x_semiflat(spectrum, c, zeta, R);
}

cplx evaluate_x(const TbaSolution& sol, const Charge& c, cplx zeta, RaySide side) {
    return -std::exp(sol.log_x(c, zeta, side));
}

// --- solver ----------------------------------------------------------------

TbaSolution tba_solve(const SpectrumData& s, double R, const TbaOptions& opts) {
    s.validate();
    if (!(R > 0.0)) throw DomainError("R must be positive");
    if (!(opts.h > 0.0) || !(opts.eps_tail > 0.0 && opts.eps_tail < 1.0) || opts.max_iter < 1 || !(opts.tol > 0.0))
        throw DomainError("invalid TBA options");

    TbaSolution sol;
    sol.spectrum = s;
    sol.R = R;
    sol.options = opts;
    sol.tail_bound = s.tower_tail(R);

    for (const auto& [b, w] : s.active()) {
        RayTable T;
        T.beta = b;
        T.omega = w;
        T.sigma = s.sigma_of(b);
        T.Z = s.central_charge(b);
        if (std::abs(T.Z) == 0.0) throw DomainError("active charge " + charge_str(b) + " has Z = 0");
        sol.rays.push_back(std::move(T));
    }
    const int nr = static_cast<int>(sol.rays.size());

    // Partners and spacing: the integrand on ray r is analytic in a strip of half-width
    // min(pi/2, angular distance to every partner ray).
    std::vector<std::vector<int>> partners(nr);
    for (int r = 0; r < nr; ++r) {
        double d = 0.5 * kPi;
        for (int p = 0; p < nr; ++p) {
            if (p == r || s.lattice.pair(sol.rays[r].beta, sol.rays[p].beta) == 0) continue;
            partners[r].push_back(p);
            double sep = std::abs(wrap_angle(ray_angle(sol.rays[r].Z) - ray_angle(sol.rays[p].Z)));
            if (sep < 1e-9)
                throw DomainError("charges " + charge_str(sol.rays[r].beta) + " and " + charge_str(sol.rays[p].beta) +
                                  " pair nontrivially but share a BPS ray");
            d = std::min(d, sep);
        }
        double h = std::min(opts.h, d / 8.0);
        if (h < opts.h_min)
            throw DomainError("BPS rays too close: rapidity spacing " + std::to_string(h) + " below h_min");
        RayTable& T = sol.rays[r];
        double arg = std::log(1.0 / opts.eps_tail) / (2.0 * kPi * R * std::abs(T.Z));
        T.Y = std::acosh(std::max(1.0, arg)) + 1.0;
        int n = static_cast<int>(std::ceil(T.Y / h));
        T.h = T.Y / n;
        T.y.resize(2 * n + 1);
        for (int k = 0; k <= 2 * n; ++k) T.y[k] = -T.Y + k * T.h;
    }

    auto sf_log = [&](const RayTable& T, double yy) {
        return cplx(-2.0 * kPi * R * std::abs(T.Z) * std::cosh(yy), s.theta_of(T.beta));
    };
    auto to_f = [&](const RayTable& T, cplx x) {
        if (std::abs(x) >= 1.0)
            throw NumericalError("|X| >= 1 on the ray of " + charge_str(T.beta) + "; increase R", x, std::abs(x));
        return log1pc(-static_cast<double>(T.sigma) * x);
    };

    for (auto& T : sol.rays) {
        T.f.resize(T.y.size());
        for (std::size_t i = 0; i < T.y.size(); ++i)
            T.f[i] = to_f(T, std::exp(sf_log(T, T.y[i])) * (1.0 + opts.init_perturbation));
    }
    sol.iterations = 1;
    sol.sup_change = 0.0;
    if (nr == 0) return sol;

    // M[r][j] maps the table of partner j to the correction at the nodes of r.
    std::vector<std::vector<Mat>> M(nr);
    for (int r = 0; r < nr; ++r) {
        const RayTable& T = sol.rays[r];
        for (int p : partners[r]) {
            const RayTable& P = sol.rays[p];
            cplx coef = -static_cast<double>(P.omega * s.lattice.pair(T.beta, P.beta)) / (4.0 * kPi * kI);
            Mat m(T.y.size(), P.y.size());
            for (std::size_t i = 0; i < T.y.size(); ++i) {
                cplx z = T.point(T.y[i]);
                for (std::size_t k = 0; k < P.y.size(); ++k) {
                    double wgt = (k == 0 || k + 1 == P.y.size()) ? 0.5 : 1.0;
                    m(i, k) = coef * wgt * P.h * kernel(P.point(P.y[k]), z);
                }
            }
            M[r].push_back(std::move(m));
        }
    }

    int stalled = 0;
    double prev = std::numeric_limits<double>::infinity();
    for (;;) {
        std::vector<std::vector<cplx>> next(nr);
        std::vector<double> change(nr, 0.0);
        parallel_for(nr, opts.threads, [&](int r) {
            const RayTable& T = sol.rays[r];
            Vec corr = Vec::Zero(T.y.size());
            for (std::size_t j = 0; j < partners[r].size(); ++j) {
                const RayTable& P = sol.rays[partners[r][j]];
                Vec fp = Eigen::Map<const Vec>(P.f.data(), P.f.size());
                corr += M[r][j] * fp;
            }
            next[r].resize(T.y.size());
            for (std::size_t i = 0; i < T.y.size(); ++i) {
                next[r][i] = to_f(T, std::exp(sf_log(T, T.y[i]) + corr(i)));
                change[r] = std::max(change[r], std::abs(next[r][i] - T.f[i]));
            }
        });
        double sup = *std::max_element(change.begin(), change.end());
        for (int r = 0; r < nr; ++r) sol.rays[r].f = std::move(next[r]);
        sol.iterations++;
        sol.sup_change = sup;
        sol.history.push_back(sup);
        if (sup < opts.tol) break;
        stalled = sup >= prev ? stalled + 1 : 0;
        prev = sup;
        if (stalled >= 5 || sol.iterations >= opts.max_iter) {
            std::ostringstream os;
            os << "TBA iteration does not contract (" << sol.iterations << " iterations, sup-change history:";
            for (std::size_t k = sol.history.size() > 6 ? sol.history.size() - 6 : 0; k < sol.history.size(); ++k)
                os << " " << sol.history[k];
            os << "); increase R";
            throw NumericalError(os.str(), {}, sup);
        }
    }
    return sol;
}

// --- diagnostics -----------------------------------------------------------

CorrectionBound correction_bound(const TbaSolution& sol, const Charge& c, cplx zeta) {
    CorrectionBound out;
    for (std::size_t r = 0; r < sol.rays.size(); ++r) {
        const RayTable& T = sol.rays[r];
        int p = sol.spectrum.lattice.pair(c, T.beta);
        if (p == 0) continue;
        RayBound rb;
        rb.beta = T.beta;
        double aZ = std::abs(T.Z);
        for (std::size_t i = 0; i < T.y.size(); ++i) {
            rb.a = std::max(rb.a, 2.0 * std::abs(kernel(T.point(T.y[i]), zeta)));
            double lsf = -2.0 * kPi * sol.R * aZ * std::cosh(T.y[i]);
            rb.b = std::max(rb.b, std::abs(T.x_at(static_cast<int>(i))) * std::exp(-lsf));
        }
        for (int n = 1; n < 200; ++n) {
            double term = rb.a * std::pow(rb.b, n) / n * bessel_k(0, 2.0 * n * kPi * sol.R * aZ);
            rb.bessel_sum += term;
            if (term < 1e-30 * rb.bessel_sum) break;
        }
        rb.measured = std::abs(sol.ray_integral(static_cast<int>(r), zeta));
        out.bound += std::abs(T.omega * p) / (4.0 * kPi) * rb.bessel_sum;
        out.rays.push_back(rb);
    }
    out.measured = std::abs(sol.correction(c, zeta));
    return out;
}

cplx measure_a_gamma(const TbaSolution& sol, const Charge& c, cplx zeta) {
    const SpectrumData& s = sol.spectrum;
    // Group the contributing rays by angle.
    std::vector<double> angles;
    for (const auto& T : sol.rays) {
        if (s.lattice.pair(c, T.beta) == 0) continue;
        double a = ray_angle(T.Z);
        bool seen = false;
        for (double b : angles) seen = seen || std::abs(wrap_angle(a - b)) < 1e-9;
        if (!seen) angles.push_back(a);
    }
    Quadrature quad;
    quad.abs_tol = 1e-14;
    quad.rel_tol = 1e-12;
    cplx logY = log_x_semiflat(s, c, zeta, sol.R);
    for (double ang : angles) {
        double Y = 0.0;
        std::vector<Charge> on;
        for (const auto& T : sol.rays)
            if (std::abs(wrap_angle(ray_angle(T.Z) - ang)) < 1e-9) {
                Y = std::max(Y, T.Y);
                on.push_back(T.beta);
            }
        auto integrand = [&](double yy) {
            cplx zp = std::polar(std::exp(yy), ang);
            std::map<Charge, cplx> xs;
            for (const auto& b : on) xs[b] = std::exp(sol.log_x(b, zp));
            cplx S = jump_factor(s, ang, c, xs);
            return kernel(zp, zeta) * std::log(S);
        };
        QuadResult q = integrate(integrand, -Y, Y, quad);
        logY += -q.value / (4.0 * kPi * kI);
    }
    return std::exp(sol.log_x(c, zeta) - logY);
}

}  // namespace hkx
