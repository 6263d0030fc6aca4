#include "doctest.h"

#include <chrono>
#include <cmath>
#include <random>

#include "hkx/lattice_tba.hpp"
#include "hkx/numerics.hpp"

using namespace hkx;

namespace {

ChargeLattice rank2() {
    ChargeLattice L;
    L.rank = 2;
    L.pairing = {{0, 1}, {-1, 0}};
    L.labels = {"e", "m"};
    return L;
}

const Charge ge{1, 0};
const Charge gm{0, 1};

// Omega(+-e) = 1 only.
SpectrumData one_ray(cplx Ze = kI, int sigma_e = 1) {
    auto s = SpectrumData::make(rank2(), {Ze, cplx(1.3, 0.4)}, {0.3, -0.7}, {sigma_e, 1});
    s.set_omega(ge, 1);
    s.set_omega(-ge, 1);
    return s;
}

// Omega(+-e) = Omega(+-m) = 1: four rays, mutually nonlocal.
SpectrumData four_rays() {
    auto s = SpectrumData::make(rank2(), {cplx(0.2, 1.0), cplx(0.9, -0.3)}, {0.3, -0.7}, {1, -1});
    for (const auto& c : {ge, -ge, gm, -gm}) s.set_omega(c, 1);
    return s;
}

// -(1/4 pi i) sum_beta Omega <c, beta> int_0^inf ds/s (z'+z)/(z'-z) log(1 - sigma X^sf_beta(z')), z' = -Z_beta s.
cplx first_correction_oracle(const SpectrumData& s, const Charge& c, cplx zeta, double R) {
    Quadrature quad;
    quad.abs_tol = 1e-15;
    quad.rel_tol = 1e-13;
    cplx total = 0.0;
    for (const auto& [b, w] : s.active()) {
        int p = s.lattice.pair(c, b);
        if (p == 0) continue;
        cplx Zb = s.central_charge(b);
        int sg = s.sigma_of(b);
        auto f = [&](double sv) -> cplx {
            cplx zp = -Zb * sv;
            cplx x = std::exp(kPi * R * Zb / zp + kI * s.theta_of(b) + kPi * R * zp * std::conj(Zb));
            return (zp + zeta) / (zp - zeta) * std::log(1.0 - static_cast<double>(sg) * x) / sv;
        };
        cplx I = integrate(f, 0.0, 1.0, quad).value + integrate_semi_infinite(f, 1.0, quad).value;
        total += -static_cast<double>(w * p) / (4.0 * kPi * kI) * I;
    }
    return total;
}

double rel(cplx a, cplx b) { return std::abs(a - b) / std::abs(b); }

}  // namespace

TEST_CASE("sigma refinement examples") {
    auto L = rank2();
    CHECK(sigma_extend(L, {-1, 1}, {1, 1}) == 1);
    CHECK(sigma_extend(L, {-1, 1}, {0, 0}) == 1);
    CHECK(sigma_extend(L, {-1, 1}, {1, 0}) == -1);
    CHECK(sigma_extend(L, {-1, 1}, {-1, 0}) == -1);
    CHECK_THROWS_AS(sigma_extend(L, {0, 1}, {1, 0}), DomainError);

    auto s = one_ray();
    s.sigma_given[{1, 1}] = 1;  // sigma(e+m) = 1 * 1 * (-1)^1 = -1
    CHECK_THROWS_AS(s.validate(), DomainError);
    s.sigma_given[{1, 1}] = -1;
    CHECK_NOTHROW(s.validate());
}

TEST_CASE("sigma is independent of the decomposition path") {
    std::mt19937 rng(11);
    std::uniform_int_distribution<int> pd(-2, 2), sd(0, 1);
    for (int trial = 0; trial < 20; ++trial) {
        ChargeLattice L;
        L.rank = 3;
        L.pairing.assign(3, std::vector<int>(3, 0));
        for (int i = 0; i < 3; ++i)
            for (int j = i + 1; j < 3; ++j) {
                L.pairing[i][j] = pd(rng);
                L.pairing[j][i] = -L.pairing[i][j];
            }
        std::vector<int> sg(3);
        for (auto& v : sg) v = sd(rng) ? 1 : -1;
        // Walk every sequence of +-generators of length <= 4, applying the refinement identity one step at a time.
        std::vector<Charge> steps;
        for (int i = 0; i < 3; ++i) {
            steps.push_back(L.generator(i));
            steps.push_back(-L.generator(i));
        }
        int checked = 0;
        std::function<void(const Charge&, int, int)> walk = [&](const Charge& g, int sigma_g, int depth) {
            CHECK(sigma_g == sigma_extend(L, sg, g));
            ++checked;
            if (depth == 4) return;
            for (const auto& e : steps) {
                int se = sg[std::abs(e[0]) ? 0 : (std::abs(e[1]) ? 1 : 2)];
                int sign = (L.pair(g, e) % 2 == 0) ? 1 : -1;
                walk(g + e, sigma_g * se * sign, depth + 1);
            }
        };
        walk(L.zero(), 1, 0);
        CHECK(checked == 1 + 6 + 36 + 216 + 1296);
    }
}

TEST_CASE("semiflat coordinate") {
    auto s = SpectrumData::make(rank2(), {kI, cplx(1.3, 0.4)}, {0.0, 0.5}, {1, 1});
    CHECK(std::abs(x_semiflat(s, ge, -1.0, 1.0) - cplx(-1.0, 0.0)) < 1e-15);

    auto t = SpectrumData::make(rank2(), {cplx(-0.7, 0.2), kI}, {0.1, 0.0}, {1, 1});
    double prev = 1.0;
    for (double r : {1e-1, 1e-2, 1e-3}) {
        double m = std::abs(x_semiflat(t, ge, r, 1.0));
        CHECK(m < prev);
        prev = m;
    }
    CHECK(prev < 1e-300);

    std::mt19937 rng(3);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    for (int k = 0; k < 20; ++k) {
        cplx z(u(rng), u(rng));
        Charge c{static_cast<int>(std::lround(u(rng))), static_cast<int>(std::lround(u(rng)))};
        double R = 0.5 + std::abs(u(rng));
        cplx a = x_semiflat(s, c, z, R);
        cplx b = std::conj(x_semiflat(s, -c, -1.0 / std::conj(z), R));
        CHECK(std::abs(a - b) <= 1e-12 * std::abs(a));
    }
}

TEST_CASE("jump terms") {
    CHECK(std::abs(jump_term(1, 1, 1, 0.1) - 0.9) < 1e-15);
    CHECK(jump_term(0, 1, 1, 0.1) == cplx(1.0));
    CHECK(std::abs(jump_term(1, -2, 1, 0.1) - 1.0 / 0.81) < 1e-14);
    CHECK(std::abs(jump_term(1, -2, 1, 0.1) - 1.2345679) < 1e-7);
    CHECK_THROWS_AS(jump_term(1, 1, 1, 1.0), DomainError);

    auto s = one_ray();
    double ray = ray_angle(kI);
    CHECK(std::abs(jump_factor(s, ray, gm, {{ge, 0.1}}) - cplx(1.0 / 0.9)) < 1e-15);  // <m, e> = -1
    CHECK(jump_factor(s, ray, ge, {{ge, 0.1}}) == cplx(1.0));
}

TEST_CASE("empty spectrum is fixed in one iteration") {
    auto s = SpectrumData::make(rank2(), {kI, cplx(1.3, 0.4)}, {0.3, -0.7}, {1, 1});
    auto sol = tba_solve(s, 1.0);
    CHECK(sol.iterations == 1);
    CHECK(sol.sup_change == 0.0);
    CHECK(sol.rays.empty());
    for (cplx z : {cplx(-1.0, 0.0), cplx(0.3, 0.8), cplx(-0.01, 2.0)}) {
        CHECK(evaluate_x(sol, gm, z) == x_semiflat(s, gm, z, 1.0));
        CHECK(correction_bound(sol, gm, z).bound == 0.0);
        CHECK(correction_bound(sol, gm, z).measured == 0.0);
    }
}

TEST_CASE("one-ray spectrum: first correction against dense quadrature") {
    for (int sg : {1, -1}) {
        auto s = one_ray(kI, sg);
        auto sol = tba_solve(s, 1.0);
        CHECK(sol.iterations == 2);
        REQUIRE(sol.history.size() == 1);
        CHECK(sol.history[0] < 1e-12);
        CHECK(sol.correction(ge, -1.0) == cplx(0.0));
        cplx oracle = first_correction_oracle(s, gm, -1.0, 1.0);
        CHECK(std::abs(oracle) > 1e-4);
        CHECK(std::abs(sol.correction(gm, -1.0) - oracle) < 1e-8);
        for (cplx z : {cplx(0.4, 0.3), cplx(-2.0, 0.7), cplx(0.05, -0.02)})
            CHECK(std::abs(sol.correction(gm, z) - first_correction_oracle(s, gm, z, 1.0)) < 1e-8);
    }
}

TEST_CASE("rapidity tables") {
    auto sol = tba_solve(four_rays(), 0.5);
    CHECK(sol.rays.size() == 4);
    for (const auto& T : sol.rays) {
        REQUIRE(T.y.size() % 2 == 1);
        for (std::size_t i = 0; i < T.y.size(); ++i) {
            CHECK(std::abs(T.y[i] + T.y[T.y.size() - 1 - i]) < 1e-12);
            CHECK(std::isfinite(std::abs(T.f[i])));
            CHECK(std::abs(T.x_at(static_cast<int>(i))) < 1.0);
        }
        double tail = std::exp(-2.0 * kPi * 0.5 * std::abs(T.Z) * std::cosh(T.Y));
        CHECK(tail <= 1e-16);
    }
    CHECK(sol.sup_change < 1e-14);
    for (std::size_t k = 1; k < sol.history.size(); ++k) CHECK(sol.history[k] < sol.history[k - 1]);
}

TEST_CASE("jump across the rays") {
    for (double R : {0.5, 1.0}) {
        auto sol = tba_solve(four_rays(), R);
        for (const auto& T : sol.rays) {
            double ray = ray_angle(T.Z);
            for (double rho : {0.2, 0.5, 1.0, 2.0, 6.0}) {
                cplx z0 = std::polar(rho, ray);
                for (const Charge& c : {ge, gm, Charge{1, 1}}) {
                    cplx xp = evaluate_x(sol, c, z0, RaySide::CounterClockwise);
                    cplx xm = evaluate_x(sol, c, z0, RaySide::Clockwise);
                    std::map<Charge, cplx> xs{{T.beta, std::exp(sol.log_x(T.beta, z0))}};
                    cplx S = jump_factor(sol.spectrum, ray, c, xs);
                    CHECK(std::abs(xp * S - xm) / std::abs(xm) < 1e-6);
                }
            }
        }
    }
}

TEST_CASE("pole guard") {
    auto sol = tba_solve(one_ray(), 1.0);
    double ray = ray_angle(kI);
    CHECK_THROWS_AS(evaluate_x(sol, gm, std::polar(1.0, ray)), DomainError);
    CHECK_THROWS_AS(evaluate_x(sol, gm, std::polar(1.0, ray + 1e-7)), DomainError);
    CHECK_NOTHROW(evaluate_x(sol, gm, std::polar(1.0, ray + 1e-5)));
    // e does not jump on its own ray.
    CHECK_NOTHROW(evaluate_x(sol, ge, std::polar(1.0, ray)));
    // Just off the ray the direct evaluation matches the one-sided limit.
    cplx lim = evaluate_x(sol, gm, std::polar(1.0, ray), RaySide::CounterClockwise);
    cplx l1 = sol.log_x(gm, std::polar(1.0, ray + 1e-5)), l2 = sol.log_x(gm, std::polar(1.0, ray + 2e-5));
    CHECK(std::abs(l1 - std::log(-lim)) < 1e-3);
    CHECK(rel(-std::exp(2.0 * l1 - l2), lim) < 1e-8);
}

TEST_CASE("uniqueness up to a constant") {
    TbaOptions a, b;
    b.init_perturbation = 0.01;
    b.h = 0.03;
    auto s1 = tba_solve(four_rays(), 0.5, a);
    auto s2 = tba_solve(four_rays(), 0.5, b);
    cplx ref(-1.0, 0.2);
    std::mt19937 rng(5);
    std::uniform_real_distribution<double> ang(-kPi, kPi), lr(-1.5, 1.5);
    for (const Charge& c : {ge, gm}) {
        cplx n1 = evaluate_x(s1, c, ref), n2 = evaluate_x(s2, c, ref);
        for (int k = 0; k < 10; ++k) {
            cplx z = std::polar(std::exp(lr(rng)), ang(rng));
            CHECK(std::abs(evaluate_x(s1, c, z) / n1 - evaluate_x(s2, c, z) / n2) < 1e-8 * std::abs(evaluate_x(s1, c, z) / n1));
        }
    }
}

TEST_CASE("A_gamma is independent of zeta") {
    auto sol = tba_solve(four_rays(), 0.5);
    std::mt19937 rng(9);
    std::uniform_real_distribution<double> ang(-kPi, kPi), lr(-1.0, 1.0);
    for (const Charge& c : {ge, gm}) {
        std::vector<cplx> A;
        while (A.size() < 10) {
            cplx z = std::polar(std::exp(lr(rng)), ang(rng));
            bool clear = true;
            for (const auto& T : sol.rays) clear = clear && std::abs(std::sin(std::arg(z) - ray_angle(T.Z))) > 0.1;
            if (clear) A.push_back(measure_a_gamma(sol, c, z));
        }
        for (cplx a : A) CHECK(std::abs(a - A[0]) < 1e-8);
        MESSAGE("A = " << A[0]);
    }
}

TEST_CASE("multiplicativity and reality") {
    auto sol = tba_solve(four_rays(), 0.5);
    std::mt19937 rng(13);
    std::uniform_real_distribution<double> ang(-kPi, kPi), lr(-1.0, 1.0);
    for (int k = 0; k < 10; ++k) {
        cplx z = std::polar(std::exp(lr(rng)), ang(rng));
        cplx xe = evaluate_x(sol, ge, z), xm = evaluate_x(sol, gm, z);
        CHECK(rel(evaluate_x(sol, Charge{1, 1}, z), -xe * xm) < 1e-8);
        CHECK(rel(evaluate_x(sol, Charge{2, -1}, z), xe * xe / xm) < 1e-8);
        for (const Charge& c : {ge, gm, Charge{1, 1}}) {
            cplx a = evaluate_x(sol, c, z);
            cplx b = std::conj(evaluate_x(sol, -c, -1.0 / std::conj(z)));
            CHECK(rel(a, b) < 1e-8);
        }
    }
}

TEST_CASE("correction bound") {
    auto s = one_ray();
    auto sol = tba_solve(s, 2.0);
    auto cb = correction_bound(sol, gm, -1.0);
    CHECK(cb.measured > 0.0);
    CHECK(cb.measured <= cb.bound);
    REQUIRE(cb.rays.size() == 2);
    for (const auto& rb : cb.rays) {
        double ref = rb.a * rb.b * bessel_k(0, 4.0 * kPi);
        CHECK(rb.measured <= rb.bessel_sum);
        CHECK(rb.measured > ref / 3.0);
        CHECK(rb.bessel_sum < ref * 3.0);
        CHECK(rb.bessel_sum > ref / 3.0);
    }
    for (double R : {0.5, 1.0, 3.0}) {
        auto so = tba_solve(four_rays(), R);
        for (cplx z : {cplx(-1.0, 0.0), cplx(0.3, 1.1), cplx(2.0, -0.5)})
            for (const Charge& c : {ge, gm}) {
                auto b = correction_bound(so, c, z);
                CHECK(b.measured <= b.bound);
            }
    }
}

TEST_CASE("correction decays at the rate 2 pi |Z|") {
    auto s = one_ray();
    std::vector<double> Rs{1, 2, 3, 4}, lg;
    for (double R : Rs) lg.push_back(std::log(std::abs(tba_solve(s, R).correction(gm, -1.0))));
    double mr = 2.5, ml = 0.0;
    for (double v : lg) ml += v / 4.0;
    double num = 0.0, den = 0.0;
    for (int i = 0; i < 4; ++i) {
        num += (Rs[i] - mr) * (lg[i] - ml);
        den += (Rs[i] - mr) * (Rs[i] - mr);
    }
    double slope = num / den;
    MESSAGE("slope " << slope);
    CHECK(std::abs(slope / (-2.0 * kPi) - 1.0) < 0.05);
}

TEST_CASE("towers and refused inputs") {
    auto s = one_ray();
    s.towers.push_back({gm, ge, 1, 3});
    CHECK(s.active().size() == 2 + 4);
    double q = std::exp(-2.0);
    CHECK(std::abs(s.tower_tail(2.0) - std::pow(q, 4) / (1.0 - q)) < 1e-15);

    auto bad = one_ray();
    bad.set_omega(Charge{2, 0}, 1);  // same ray as e but <e, 2e> = 0: allowed
    CHECK_NOTHROW(tba_solve(bad, 1.0));
    auto clash = SpectrumData::make(rank2(), {kI, 2.0 * kI}, {0.0, 0.0}, {1, 1});
    clash.set_omega(ge, 1);
    clash.set_omega(gm, 1);
    CHECK_THROWS_AS(tba_solve(clash, 1.0), DomainError);
    CHECK_THROWS_AS(tba_solve(one_ray(), -1.0), DomainError);
    CHECK_THROWS_AS(tba_solve(one_ray(0.0), 1.0), DomainError);
}

TEST_CASE("non-contraction is reported") {
    auto s = SpectrumData::make(rank2(), {cplx(0.2, 1.0), cplx(0.9, -0.3)}, {0.3, -0.7}, {1, 1});
    for (const auto& c : {ge, -ge, gm, -gm}) s.set_omega(c, 40);
    CHECK_THROWS_AS(tba_solve(s, 0.02), NumericalError);
}

TEST_CASE("threads do not change the result") {
    TbaOptions a, b;
    b.threads = 4;
    auto s1 = tba_solve(four_rays(), 0.5, a);
    auto s2 = tba_solve(four_rays(), 0.5, b);
    for (std::size_t r = 0; r < s1.rays.size(); ++r) CHECK(s1.rays[r].f == s2.rays[r].f);
}
