#include "doctest.h"

#include <chrono>
#include <cmath>

#include "hkx/sections.hpp"

using namespace hkx;

namespace {

// Four double poles, four simple zeros, regular at infinity. Zeros 0 and 1 sit inside a standard quadrilateral
// for theta in roughly (0.1, 0.35) and (0.5, 2.4).
QuadraticDifferential test_q() {
    const double sc = 0.25;
    std::vector<cplx> zeros{{0.4, 0.1}, {-0.35, -0.15}, {0.1, 1.9}, {-0.2, -2.1}};
    std::vector<cplx> poles{{1.6, 0.2}, {0.1, 1.2}, {-1.5, -0.1}, {0.2, -1.3}};
    for (auto& z : zeros) z *= sc;
    for (auto& p : poles) p *= sc;
    return QuadraticDifferential::with_sigma(zeros, poles, 0, 1.0);
}

HiggsLocalModel test_model(double theta, double R, double C, ErrorProfile prof = ErrorProfile::Phase,
                           bool residues = true) {
    HiggsLocalModel m(test_q());
    m.theta = theta;
    m.zeta = 0.8 * std::exp(kI * (theta + 0.4));
    m.R = R;
    if (residues) {
        const auto& p = m.q.poles();
        m.a1.constant = cplx(1.2, -0.8);
        m.a2.constant = cplx(-0.4, 1.0);
        m.a1.poles = {{p[0], {0.2, 0.1}}, {p[2], {-0.1, 0.05}}};
        m.a2.poles = {{p[0], {-0.2, 0.0}}, {p[1], {0.15, 0.1}}};
    }
    m.error.C = C;
    m.error.mu = 1.0;
    m.error.delta = 0.5;
    m.error.profile = prof;
    m.error.seed = 7;
    return m;
}

// Trajectory between two poles through the sector of zero 0 that faces zero 1.
Trajectory pole_to_pole(const HiggsLocalModel& m) {
    StopRules sr;
    sr.pole_capture = 1e-7 * m.q.critical_spacing();
    const cplx z0 = m.q.zeros()[0], z1 = m.q.zeros()[1];
    for (double phi : {0.0, 2.1, 4.2}) {
        const cplx seed = z0 + 0.3 * std::abs(z1 - z0) * std::exp(kI * (std::arg(z1 - z0) + phi + 0.5));
        Trajectory t = trace_full(m.q, seed, m.theta, sr);
        if (t.ends[0].kind == EndKind::Pole && t.ends[1].kind == EndKind::Pole) return t;
    }
    throw std::runtime_error("no pole-to-pole trajectory");
}

double det2(const Vec& a, const Vec& b) { return std::abs(a(0) * b(1) - a(1) * b(0)); }

}  // namespace

TEST_CASE("leading terms: unit zeta, no connection") {
    HiggsLocalModel m = test_model(0.3, 3.0, 0.0, ErrorProfile::Phase, false);
    m.zeta = std::exp(kI * m.theta);
    const Trajectory t = pole_to_pole(m);
    const LeadingTerms L = leading_terms(m, t, 0.0);
    for (size_t i = 0; i < L.t.size(); i += 7) {
        CHECK(std::abs(L.lambda1[i] - 6.0) < 1e-9);
        CHECK(std::abs(L.lambda2[i] - 6.0) < 1e-9);
        CHECK(std::abs(L.Lambda1[i] - 6.0 * L.t[i]) < 1e-8 * (1 + std::abs(L.t[i])));
        CHECK(std::abs(L.Lambda2[i] - 6.0 * L.t[i]) < 1e-8 * (1 + std::abs(L.t[i])));
    }
}

TEST_CASE("leading terms: |zeta| != 1 exceeds 2R") {
    HiggsLocalModel m = test_model(0.3, 2.0, 0.0, ErrorProfile::Phase, false);
    const Trajectory t = pole_to_pole(m);
    for (double rho : {0.3, 0.7, 2.5}) {
        m.zeta = rho * std::exp(kI * m.theta);
        const LeadingTerms L = leading_terms(m, t, 0.0);
        const double expect = 2.0 * (1.0 / rho + rho);
        CHECK(std::abs(L.lambda1[3] - expect) < 1e-9);
        CHECK(std::abs(L.lambda2[3] - expect) < 1e-9);
        CHECK(expect > 4.0);
    }
}

TEST_CASE("leading terms: Im(a1 z') constant on the log-spiral") {
    // single double pole at 0: q = -sigma^2/z^2, trajectories are log-spirals z' = -(e^{i theta}/m) z
    const cplx sigma(0.8, 0.3);
    QuadraticDifferential q(-sigma * sigma, {}, {cplx(0.0)});
    HiggsLocalModel m(q);
    m.theta = 0.7;
    m.zeta = std::exp(kI * 0.5);
    m.a1.poles = {{0.0, 1.0}};
    StopRules sr;
    sr.max_length = 6.0;
    const Trajectory t = trace_trajectory(q, cplx(0.5, 0.2), m.theta, 1, sr);
    // a1 z' = z'/z is constant; compare with the imaginary part of d1 - real leading part
    const cplx k = -std::exp(kI * m.theta);
    const cplx first = t.dz[0] / t.z[0];
    for (size_t i = 0; i < t.size(); ++i) {
        const cplx r = t.dz[i] / t.z[i];
        CHECK(std::abs(std::imag(r) - std::imag(first)) < 1e-9);
        const auto d = m.leading(t.z[i], t.dz[i], k);
        const cplx lead = -(m.R / m.zeta) * k - m.R * m.zeta * std::conj(k);
        CHECK(std::abs(d[0] - lead - 2.0 * kI * std::imag(first)) < 1e-8);
    }
    // z'/z = e^{i theta} direction / (sqrt q z) = +-e^{i theta}/(i sigma): constant modulus 1/|sigma|
    CHECK(std::abs(std::abs(first) - 1.0 / std::abs(sigma)) < 1e-9);
}

TEST_CASE("leading terms: Re Lambda increasing for zeta in the half-plane") {
    HiggsLocalModel m = test_model(0.3, 4.0, 0.0);
    const Trajectory t = pole_to_pole(m);
    for (double off : {-1.4, -0.7, 0.0, 0.9, 1.5})
        for (double rho : {0.05, 1.0, 8.0}) {
            m.zeta = rho * std::exp(kI * (m.theta + off));
            const LeadingTerms L = leading_terms(m, t, 0.0);
            for (size_t i = 1; i < L.t.size(); ++i) {
                CHECK(std::real(L.Lambda1[i]) > std::real(L.Lambda1[i - 1]));
                CHECK(std::real(L.Lambda2[i]) > std::real(L.Lambda2[i - 1]));
            }
        }
}

TEST_CASE("zeta outside the half-plane is refused") {
    HiggsLocalModel m = test_model(0.3, 4.0, 0.0);
    const Trajectory t = pole_to_pole(m);
    m.zeta = std::exp(kI * (m.theta + 1.7));
    CHECK_THROWS_AS(leading_terms(m, t), DomainError);
    CHECK_THROWS_AS(small_flat_section(m, t, 1), DomainError);
}

TEST_CASE("error profiles respect their declared shape") {
    for (auto prof : {ErrorProfile::Phase, ErrorProfile::Structured, ErrorProfile::Unitary}) {
        HiggsLocalModel m = test_model(0.3, 6.0, 1.3, prof);
        CHECK(error_profile_from_string(to_string(prof)) == prof);
        const double amp = 1.3 * std::exp(-0.5 * 6.0);
        const cplx k = -std::exp(kI * m.theta);
        for (int i = 0; i < 40; ++i) {
            const cplx z = cplx(-0.45 + 0.023 * i, 0.31 - 0.017 * i);
            const cplx dz = std::exp(kI * (0.3 * i));
            const Mat E = m.error_matrix(z, dz, k);
            const double rho = m.pole_distance(z);
            CHECK(std::abs(E(0, 0) + E(1, 1)) == 0.0);
            CHECK(m.error_bound(z, dz, k) >= std::abs(E(0, 1)));
            if (prof == ErrorProfile::Phase)
                for (auto e : {E(0, 0), E(0, 1), E(1, 0)}) CHECK(std::abs(std::abs(e) - amp * rho) < 1e-14);
            if (prof == ErrorProfile::Unitary) CHECK((E + E.adjoint()).norm() < 1e-15);
            if (prof == ErrorProfile::Structured) {
                // e = ((a2 - a1) z' - 2 R zeta conj(k)) beta + h z' with |beta| <= amp rho^mu, |h| <= amp rho^(mu-1)
                const cplx f = (m.a2(z) - m.a1(z)) * dz - 2.0 * m.R * m.zeta * std::conj(k);
                CHECK(std::abs(E(0, 1)) <= std::abs(f) * amp * rho + amp * std::abs(dz) + 1e-15);
            }
        }
    }
    CHECK_THROWS_AS(error_profile_from_string("gaussian"), DomainError);
}

TEST_CASE("small flat section: zero error gives x = e_2 exactly") {
    HiggsLocalModel m = test_model(0.3, 5.0, 0.0);
    const Trajectory t = pole_to_pole(m);
    const SmallFlatSection S = small_flat_section(m, t, 1, {}, t.t.front() + 1.0);
    CHECK(S.small_index == 1);
    CHECK(S.sup_remainder == 0.0);
    CHECK(S.kernel_bound == 0.0);
    // s = e^{-Lambda_2} x with Lambda_2 from the independent quadrature of lambda_2
    const LeadingTerms L = leading_terms(m, t, 0.0);
    for (size_t i = 5; i + 5 < t.size(); i += 11) {
        if (t.t[i] < t.t.front() + 1.0) continue;
        const auto [c, x] = S.at(t.t[i]);
        CHECK(std::abs(c + L.Lambda2[i]) < 1e-8 * (1.0 + std::abs(L.Lambda2[i])));
    }
}

TEST_CASE("small flat section: remainder ratio between R = 10 and R = 20") {
    HiggsLocalModel m = test_model(0.3, 10.0, 1.0);
    const Trajectory t = pole_to_pole(m);
    const double t0 = t.t.front() + 2.0;
    const SmallFlatSection a = small_flat_section(m, t, 1, {}, t0);
    m.R = 20.0;
    const SmallFlatSection b = small_flat_section(m, t, 1, {}, t0);
    CHECK(a.sup_remainder > 0.0);
    CHECK(b.sup_remainder / a.sup_remainder <= std::exp(-0.5 * 10.0) * 1.05);
    // dense Picard solve as oracle
    SectionOptions dense;
    dense.grid.h_max = 0.005;
    dense.grid.h0 = 0.001;
    const SmallFlatSection c = small_flat_section(m, t, 1, dense, t0);
    for (double s = t0; s < t.t.back(); s += 0.37) CHECK((c.x.at(s) - b.x.at(s)).norm() < 1e-9);
}

TEST_CASE("small flat section: flipped orientation is the big solution") {
    HiggsLocalModel m = test_model(0.3, 6.0, 1.0);
    const Trajectory t = pole_to_pole(m);
    const SmallFlatSection S = small_flat_section(m, t, -1, {}, t.t.back() - 1.0);
    CHECK(S.small_index == 0);
    CHECK(S.orientation == -1);
    Vec e1 = Vec::Zero(2);
    e1(0) = 1.0;
    CHECK((S.x.at(-t.t.front() + 50.0) - e1).norm() < 1e-10);
    // s = e^{Lambda_1} x grows in the forward direction
    const LeadingTerms L = leading_terms(m, t, 0.0);
    double prev = -1e300;
    for (size_t i = 0; i < t.size(); i += 5) {
        if (t.t[i] > t.t.back() - 1.0) break;
        const auto [c, x] = S.at(-t.t[i]);
        CHECK(std::abs(c - L.Lambda1[i]) < 1e-8 * (1.0 + std::abs(L.Lambda1[i])));
        CHECK(std::real(c) > prev);
        prev = std::real(c);
    }
}

TEST_CASE("small flat section: non-contraction advises a larger R") {
    HiggsLocalModel m = test_model(0.3, 0.5, 40.0);
    const Trajectory t = pole_to_pole(m);
    try {
        small_flat_section(m, t, 1, {}, t.t.front() + 0.5);
        FAIL("expected ContractionError");
    } catch (const ContractionError& e) {
        CHECK(std::string(e.what()).find("increase R") != std::string::npos);
        CHECK(e.lambda() >= 0.95);
    }
}

TEST_CASE("wedge: exact for zero error, bounded pointwise otherwise") {
    for (double C : {0.0, 1.0}) {
        HiggsLocalModel m = test_model(0.3, 10.0, C);
        const Trajectory t = pole_to_pole(m);
        const double lo = t.t.front() + 1.0, hi = t.t.back() - 1.0;
        const SmallFlatSection sp = small_flat_section(m, t, 1, {}, lo);
        const SmallFlatSection sm = small_flat_section(m, t, -1, {}, hi);
        for (double s = lo; s < hi; s += 0.5) {
            const WedgeValue w = wedge(sm, -s, sp, s);
            if (C == 0.0) {
                CHECK(std::abs(w.r) < 1e-15);
                CHECK(std::abs(w.log_value - w.log_leading) < 1e-15);
            } else {
                CHECK(std::abs(w.r) <= w.bound * (1 + 1e-12));
                CHECK(std::abs(w.r) > 0.0);
            }
            // leading: e^{Lambda_1 - Lambda_2} (det[e1, e2] = 1)
            CHECK(std::abs(std::exp(w.log_leading - sm.at(-s).first - sp.at(s).first) - 1.0) < 1e-12);
        }
    }
    HiggsLocalModel m = test_model(0.3, 10.0, 0.0);
    Vec x(2);
    x << 1.0, 2.0;
    CHECK_THROWS_AS(wedge({0.0, x}, 0, {0.0, Vec(2.0 * x)}, 1), NumericalError);
}

TEST_CASE("wedge transport: Liouville factor") {
    HiggsLocalModel m = test_model(0.3, 4.0, 0.0);
    const Trajectory t = pole_to_pole(m);
    const FlatPath p = flat_path(m, t, -t.direction);
    // d/du log(s ^ s') = tr(D) for two exact sections
    const double lo = t.t.front() + 1.0, hi = t.t.back() - 1.0;
    const SmallFlatSection sp = small_flat_section(m, t, 1, {}, lo);
    const SmallFlatSection sm = small_flat_section(m, t, -1, {}, hi);
    const cplx w0 = wedge(sm, -lo, sp, lo).log_value, w1 = wedge(sm, -hi, sp, hi).log_value;
    CHECK(std::abs(w1 - w0 - liouville_log(m, p, lo, hi)) < 1e-9);
    // traceless connection: factor 1
    m.a2.constant = -m.a1.constant;
    m.a2.poles = m.a1.poles;
    for (auto& pp : m.a2.poles) pp.residue = -pp.residue;
    CHECK(std::abs(liouville_log(m, p, lo, hi)) < 1e-14);
}

TEST_CASE("quadrilateral: labels, orientation and connectors") {
    HiggsLocalModel m = test_model(0.3, 5.0, 0.0);
    const QuadrilateralModel Q = build_quadrilateral(m);
    const auto& v = Q.vertices;
    CHECK(Q.sides[0].from == v[3]);
    CHECK(Q.sides[0].to == v[0]);
    CHECK(Q.sides[1].from == v[1]);
    CHECK(Q.sides[1].to == v[0]);
    CHECK(Q.sides[2].from == v[1]);
    CHECK(Q.sides[2].to == v[2]);
    CHECK(Q.sides[3].from == v[3]);
    CHECK(Q.sides[3].to == v[2]);
    for (const Side& s : Q.sides) CHECK(std::abs(s.path.kappa + std::exp(kI * m.theta)) < 1e-9);
    for (const Connector& c : Q.connectors) {
        CHECK(c.length > 0.0);
        CHECK(m.in_half_plane(c.theta));
        // the connector ends lie on their sides
        CHECK(std::abs(c.path.z.front() - Q.sides[c.target].path.at(c.u_target).first) < 1e-9 * Q.connector_depth);
        CHECK(std::abs(c.path.z.back() - Q.sides[c.native].path.at(c.u_native).first) < 1e-9 * Q.connector_depth);
    }
}

TEST_CASE("connectors: parallel connectors have the same length and side offset") {
    HiggsLocalModel m = test_model(0.3, 5.0, 0.0);
    const QuadrilateralModel Q = build_quadrilateral(m);
    for (int v = 0; v < 4; ++v) {
        const Connector a = build_connector(m, Q, v, 1e-2, Q.connector_angle);
        for (double d : {4e-3, 1.5e-3}) {
            const Connector b = build_connector(m, Q, v, d, Q.connector_angle);
            CHECK(std::abs(b.length - a.length) < 1e-6);
            CHECK(std::abs((b.u_target - b.u_native) - (a.u_target - a.u_native)) < 1e-6);
        }
    }
}

TEST_CASE("transport: zero error is exact, small error decays with R") {
    {
        HiggsLocalModel m = test_model(0.3, 5.0, 0.0);
        const XResult X = x_coordinate(m);
        for (const Transport& t : X.transports) CHECK(t.epsilon == cplx(0.0));
    }
    auto eps = [](double R) {
        HiggsLocalModel m = test_model(0.3, R, 1.0);
        return x_coordinate(m);
    };
    const XResult a = eps(5.0), b = eps(10.0);
    for (int v = 0; v < 4; ++v) {
        const Transport& t = b.transports[v];
        const int k = t.small_index;
        Vec ek = Vec::Zero(2);
        ek(k) = 1.0;
        // |eps| from the determinant expansion of the three remainders that enter it
        const double by = (t.at_target.second - ek).norm();
        const double bs = t.target.sup_remainder;
        const double bn = b.sup_remainder[(v + 1) % 4];
        CHECK(std::abs(t.epsilon) <= (1 + by) * (1 + bn) / ((1 - bs) * (1 - bn)) - 1.0);
        CHECK(std::abs(t.epsilon) > 0.0);
        CHECK(std::abs(b.transports[v].epsilon) / std::abs(a.transports[v].epsilon) <= std::exp(-0.5 * 5.0) * 1.1);
    }
}

TEST_CASE("X-coordinate: zero error reproduces the leading exponential") {
    for (double theta : {0.2, 0.3, 0.8, 1.2, 2.0}) {
        HiggsLocalModel m = test_model(theta, 5.0, 0.0);
        const XResult X = x_coordinate(m);
        CHECK(std::abs(X.r_q) < 1e-6);
        CHECK(std::abs(X.Z - X.Z_ellipse) < 1e-8);
        CHECK(X.r_bound == 0.0);
    }
    // Z = i, theta = 0, R = 1, zeta = -1: exponent -pi i + pi i cancels
    CHECK(std::abs(std::exp(log_x_leading(1.0, -1.0, kI, 0.0)) + 1.0) < 1e-15);
}

TEST_CASE("X-coordinate: invariant under rescaling and moving the evaluation points") {
    HiggsLocalModel m = test_model(0.3, 8.0, 1.0);
    const QuadrilateralModel Q = build_quadrilateral(m);
    const XResult X = x_coordinate(m, Q);
    const XResult Xs = x_coordinate(m, Q, {cplx(0.7, -2.0), cplx(-3.0, 1.0), cplx(0.0, 5.0), cplx(2.5, 0.3)});
    CHECK(std::abs(Xs.value() / X.value() - 1.0) < 1e-8);
    QuadrilateralOptions o;
    o.eval_shift = {0.8, -0.6, 1.1, -0.4};
    const XResult Xe = x_coordinate(m, o);
    CHECK(std::abs(Xe.value() / X.value() - 1.0) < 1e-7);
}

TEST_CASE("X-coordinate: r_q decays like e^{-delta R}") {
    const auto start = std::chrono::steady_clock::now();
    std::vector<double> Rs{5, 10, 15, 20}, lr;
    for (double R : Rs) {
        const XResult X = x_coordinate(test_model(0.3, R, 1.0));
        CHECK(std::abs(X.r_q) <= X.r_bound);
        lr.push_back(std::log(std::abs(X.r_q)));
    }
    double mr = 0, ml = 0;
    for (size_t i = 0; i < Rs.size(); ++i) {
        mr += Rs[i] / Rs.size();
        ml += lr[i] / Rs.size();
    }
    double sxy = 0, sxx = 0;
    for (size_t i = 0; i < Rs.size(); ++i) {
        sxy += (Rs[i] - mr) * (lr[i] - ml);
        sxx += (Rs[i] - mr) * (Rs[i] - mr);
    }
    const double slope = sxy / sxx;
    CHECK(std::abs(slope + 0.5) < 0.05);
    CHECK(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() < 30.0);
}

TEST_CASE("reality condition") {
    CHECK(check_reality(test_model(0.3, 5.0, 0.0)) < 1e-10);
    CHECK(check_reality(test_model(1.2, 5.0, 0.0)) < 1e-10);
    // antihermitian errors respect the conjugation symmetry of the flatness equation
    CHECK(check_reality(test_model(0.3, 5.0, 1.0, ErrorProfile::Unitary)) < 1e-6);
    CHECK(check_reality(test_model(1.2, 8.0, 1.0, ErrorProfile::Unitary)) < 1e-6);
    // generic errors on the ray arg zeta = theta, |zeta| = 0.1
    HiggsLocalModel m = test_model(0.3, 10.0, 1.0);
    m.zeta = 0.1 * std::exp(kI * m.theta);
    const XResult X = x_coordinate(m);
    HiggsLocalModel m2 = m;
    m2.theta += kPi;
    m2.zeta = -1.0 / std::conj(m.zeta);
    const XResult X2 = x_coordinate(m2);
    const double res = check_reality(m);
    CHECK(res <= X.r_bound + X2.r_bound + X.r_bound * X2.r_bound);
}

TEST_CASE("zeta d/deps log X has at most a simple pole at zeta = 0") {
    // q -> (1 + eps) q scales Z by sqrt(1 + eps), so the leading part gives R pi (Z + zeta^2 conj Z) / 2
    for (double C : {0.0, 1.0}) {
        HiggsLocalModel m = test_model(0.3, 10.0, C);
        const XResult X = x_coordinate(m);
        std::vector<double> dev;
        for (double r : {1e-1, 1e-2, 1e-3}) {
            m.zeta = r * std::exp(kI * m.theta);
            const cplx d = zeta_dlogx_dscale(m, {}, 1e-6);
            const cplx exact = 0.5 * m.R * kPi * (X.Z + m.zeta * m.zeta * std::conj(X.Z));
            CHECK(std::abs(d) < 2.0 * std::abs(exact));
            dev.push_back(std::abs(d - exact));
            if (C == 0.0) CHECK(dev.back() < 1e-6 * std::abs(exact));
        }
        // the remainder contributes O(|zeta|)
        if (C > 0.0) {
            CHECK(dev[1] < 0.2 * dev[0]);
            CHECK(dev[2] < 0.2 * dev[1]);
        }
    }
}

TEST_CASE("d/deps of the remainder wedge is exponentially suppressed") {
    // eps scales the error matrix: E -> (1 + eps) E
    auto dwedge = [](double R, double& fd) {
        HiggsLocalModel m = test_model(0.3, R, 1.0);
        const Trajectory t = pole_to_pole(m);
        const double lo = t.t.front() + 1.0, hi = t.t.back() - 1.0, s = 0.5 * (lo + hi);
        auto pair = [&](double C, Vec& x, Vec& y) {
            HiggsLocalModel mm = m;
            mm.error.C = C;
            const SmallFlatSection a = small_flat_section(mm, t, 1, {}, lo);
            const SmallFlatSection b = small_flat_section(mm, t, -1, {}, hi);
            x = a.x.at(s);
            y = b.x.at(-s);
            return std::make_pair(a, b);
        };
        Vec x, y;
        const auto [a, b] = pair(1.0, x, y);
        auto deriv = [](const SmallFlatSection& S) {
            const IvpAtInfinity pr = S.problem();
            return solve_derivative(pr, [](double) { return Vec(Vec::Zero(2)); }, {pr.kernel}, S.x);
        };
        const GridSolution dx = deriv(a), dy = deriv(b);
        auto det = [](const Vec& u, const Vec& w) { return u(0) * w(1) - u(1) * w(0); };
        const cplx d = det(dx.at(s), y) + det(x, dy.at(-s));
        const double h = 1e-4;
        Vec xp, yp, xm, ym;
        pair(1.0 + h, xp, yp);
        pair(1.0 - h, xm, ym);
        fd = std::abs((det(xp, yp) - det(xm, ym)) / (2 * h) - d) / std::abs(d);
        return std::abs(d);
    };
    double fd1 = 0, fd2 = 0;
    const double d1 = dwedge(10.0, fd1), d2 = dwedge(20.0, fd2);
    CHECK(fd1 < 1e-6);
    CHECK(fd2 < 1e-6);
    CHECK(d2 / d1 <= std::exp(-0.5 * 10.0) * 1.05);
}

TEST_CASE("quadrilateral construction refuses bad input") {
    HiggsLocalModel m = test_model(0.3, 5.0, 0.0);
    QuadrilateralOptions o;
    o.zero_b = 0;
    CHECK_THROWS_AS(build_quadrilateral(m, o), DomainError);
    o.zero_b = 1;
    o.eval_shift[0] = 1e3;
    CHECK_THROWS_AS(build_quadrilateral(m, o), DomainError);
    // zeros 0 and 2 are not adjacent
    o = {};
    o.zero_b = 2;
    CHECK_THROWS_AS(build_quadrilateral(m, o), DomainError);
}
