#pragma once

#include <map>
#include <string>
#include <vector>

#include "hkx/errors.hpp"

namespace hkx {

using Charge = std::vector<int>;

struct ChargeLattice {
    int rank = 0;
    std::vector<std::vector<int>> pairing;
    std::vector<std::string> labels;

    // Integer antisymmetric pairing of the right size.
    void validate() const;
    int pair(const Charge& a, const Charge& b) const;
    Charge generator(int i) const;
    Charge zero() const { return Charge(rank, 0); }
};

Charge operator+(const Charge& a, const Charge& b);
Charge operator-(const Charge& a);
Charge operator*(int m, const Charge& a);

// Infinite tower base + m step (m >= 0) of one Omega value, truncated at m_max.
struct ChargeTower {
    Charge base;
    Charge step;
    int omega = 0;
    int m_max = 10;
};

struct SpectrumData {
    ChargeLattice lattice;
    std::vector<cplx> Z;          // per generator
    std::vector<double> theta;    // per generator
    std::vector<int> sigma;       // per generator, +-1
    std::map<Charge, int> omega;  // finite support, zero entries dropped
    std::map<Charge, int> sigma_given;  // optional explicit values on non-generators, checked on validate
    std::vector<ChargeTower> towers;

    static SpectrumData make(ChargeLattice lattice, std::vector<cplx> Z, std::vector<double> theta,
                             std::vector<int> sigma);

    void validate() const;
    void set_omega(const Charge& c, int value);
    int omega_of(const Charge& c) const;
    cplx central_charge(const Charge& c) const;
    double theta_of(const Charge& c) const;
    int sigma_of(const Charge& c) const;
    // Support of Omega with the towers expanded.
    std::vector<std::pair<Charge, int>> active() const;
    // Sum over towers of the neglected geometric tail sum_{m > m_max} e^{-m R |Z_step|}.
    double tower_tail(double R) const;
};

// Quadratic refinement on a general charge from its generator values:
//   sigma(sum c_i e_i) = prod sigma_i^{c_i} (-1)^{sum_{i<j} c_i c_j <e_i, e_j>}.
int sigma_extend(const ChargeLattice& lattice, const std::vector<int>& sigma_gens, const Charge& c);

// Paper normalization, with the global minus sign: -exp(pi R Z / zeta + i theta + pi R zeta conj(Z)).
cplx x_semiflat(const SpectrumData& s, const Charge& c, cplx zeta, double R);
// Logarithm of the sign-stripped semiflat coordinate (multiplicative in c).
cplx log_x_semiflat(const SpectrumData& s, const Charge& c, cplx zeta, double R);

// One factor (1 - sigma X)^{pairing * omega}; |X| >= 1 is refused.
cplx jump_term(int pairing, int omega, int sigma, cplx x);

// The ray l_c = Z_c R_-, as the angle of -Z_c in (-pi, pi].
double ray_angle(cplx Z);

enum class RaySide { None, Clockwise, CounterClockwise };

struct TbaOptions {
    double h = 0.05;            // rapidity spacing (reduced automatically when rays are close)
    double h_min = 1e-3;
    double eps_tail = 1e-16;
    int max_iter = 200;
    double tol = 1e-14;
    double init_perturbation = 0.0;  // start from X^sf (1 + p)
    int threads = 1;
};

// Samples of f = log(1 - sigma X_beta) on the ray of beta, zeta' = -u e^y, u = Z_beta / |Z_beta|.
struct RayTable {
    Charge beta;
    int omega = 0;
    int sigma = 1;
    cplx Z;
    double Y = 0.0;
    double h = 0.0;
    std::vector<double> y;
    std::vector<cplx> f;

    cplx point(double yy) const;
    // Sign-stripped X_beta at node i, recovered from f.
    cplx x_at(int i) const;
};

class TbaSolution {
public:
    SpectrumData spectrum;
    double R = 1.0;
    TbaOptions options;
    std::vector<RayTable> rays;
    int iterations = 0;
    double sup_change = 0.0;
    std::vector<double> history;  // sup-change per update
    double tail_bound = 0.0;      // neglected tower tail

    // log of the sign-stripped X_c(zeta). Within 1e-6 |zeta| of a contributing ray a side is required.
    cplx log_x(const Charge& c, cplx zeta, RaySide side = RaySide::None) const;
    // Instanton part log(X / X^sf).
    cplx correction(const Charge& c, cplx zeta, RaySide side = RaySide::None) const;

    // Integral J_beta(zeta) = int_{l_beta} dzeta'/zeta' (zeta'+zeta)/(zeta'-zeta) f_beta over the table of ray r.
    cplx ray_integral(int r, cplx zeta, int depth = 2) const;

private:
    cplx log_x_direct(const Charge& c, cplx zeta, int depth) const;
};

TbaSolution tba_solve(const SpectrumData& s, double R, const TbaOptions& opts = {});

// Signed X_c(zeta) (paper normalization). Ray limits with a side hint are Richardson-extrapolated
// from the angular offsets 1e-4, 2e-4 and 4e-4 (error O(offset^3)).
cplx evaluate_x(const TbaSolution& sol, const Charge& c, cplx zeta, RaySide side = RaySide::None);

// Product of jump terms over the active charges whose ray is l (angle), evaluated with the given X's.
cplx jump_factor(const SpectrumData& s, double ray, const Charge& c,
                 const std::map<Charge, cplx>& x_values);

struct RayBound {
    Charge beta;
    double a = 0.0;        // 2 sup |Cauchy factor| over the ray
    double b = 0.0;        // sup |X_beta / X_beta^sf| over the ray
    double bessel_sum = 0.0;  // sum_n a b^n / n K0(2 n pi R |Z_beta|)
    double measured = 0.0;    // |J_beta(zeta)|
};

struct CorrectionBound {
    double bound = 0.0;     // sum_beta |Omega <c, beta>| / (4 pi) * bessel_sum
    double measured = 0.0;  // |log(X_c / X_c^sf)|
    std::vector<RayBound> rays;
};

CorrectionBound correction_bound(const TbaSolution& sol, const Charge& c, cplx zeta);

// X_c(zeta) / Y_c(zeta), where Y_c is rebuilt from the jump factors S_l evaluated with the solution's own
// X_beta along each ray and integrated adaptively in the ray variable.
cplx measure_a_gamma(const TbaSolution& sol, const Charge& c, cplx zeta);

}  // namespace hkx
