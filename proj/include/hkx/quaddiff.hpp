#pragma once

#include <array>
#include <optional>
#include <vector>

#include "hkx/numerics.hpp"

namespace hkx {

// q(z) dz^2 with q(z) = c * prod(z - z_k) / prod(z - p_j)^2.
// Near p_j the local form is -sigma_j^2 dz^2 / (z - p_j)^2.
class QuadraticDifferential {
public:
    QuadraticDifferential(cplx normalization, std::vector<cplx> zeros, std::vector<cplx> poles);

    // Picks the normalization so that pole `index` carries the residue coefficient sigma.
    static QuadraticDifferential with_sigma(std::vector<cplx> zeros, std::vector<cplx> poles, int index, cplx sigma);

    cplx operator()(cplx z) const;
    cplx derivative(cplx z) const;
    cplx log_derivative(cplx z) const;  // q'/q

    // Root of q(z) closest to ref.
    cplx sqrt_near(cplx z, cplx ref) const;

    cplx normalization() const { return c_; }
    const std::vector<cplx>& zeros() const { return zeros_; }
    const std::vector<cplx>& poles() const { return poles_; }
    // lim (z - p)^2 q(z) at pole j, and sigma_j with -sigma_j^2 equal to it.
    cplx leading(int j) const;
    cplx sigma(int j) const;
    // Order of the pole at infinity (<= 0 means regular or a zero there).
    int infinity_order() const;

    // Distance from z to the nearest finite zero or pole.
    double critical_distance(cplx z) const;
    // Minimum pairwise distance among finite critical points (inf if fewer than 2).
    double critical_spacing() const;
    // Largest modulus among finite critical points.
    double critical_extent() const;

private:
    cplx c_;
    std::vector<cplx> zeros_, poles_;
};

std::vector<cplx> sqrt_tracked(const QuadraticDifferential& q, const std::vector<cplx>& path, cplx initial_branch,
                               double exclusion_radius = 1e-9);

enum class EndKind { Open, Pole, Zero, Infinity };

struct TrajectoryEnd {
    EndKind kind = EndKind::Open;
    int index = -1;
};

struct Trajectory {
    std::vector<double> t;
    std::vector<cplx> z;
    std::vector<cplx> dz;     // dz/dt
    std::vector<cplx> sqrtq;  // tracked branch of q^{1/2}
    double theta = 0.0;
    int direction = 1;         // dz/dt = direction * e^{i theta} / q^{1/2}
    TrajectoryEnd ends[2];     // [0] at the smallest t, [1] at the largest t
    bool periodic = false;

    size_t size() const { return t.size(); }
    // Hermite interpolation of (z, dz/dt) at parameter s.
    std::pair<cplx, cplx> at(double s) const;
    // Same curve traversed the other way, t -> -t.
    Trajectory reversed() const;
    double max_residual() const;  // sup |q^{1/2} dz/dt - direction e^{i theta}|
};

struct StopRules {
    double max_length = 1e4;        // budget in the flat parameter t
    int max_steps = 100000;
    double pole_capture = -1.0;     // <= 0: 1e-3 * critical scale
    double zero_capture = -1.0;
    double escape_radius = -1.0;    // <= 0: 20 * max(1, extent)
    bool detect_closure = true;
    double step_fraction = 0.1;     // chord <= step_fraction * distance to the nearest critical point
};

class TraceError : public NumericalError {
public:
    TraceError(const std::string& what, Trajectory partial)
        : NumericalError(what), partial_(std::move(partial)) {}
    const Trajectory& partial() const { return partial_; }

private:
    Trajectory partial_;
};

// Capture radius actually used for a trace starting at z0.
double capture_scale(const QuadraticDifferential& q, cplx z0);

Trajectory trace_trajectory(const QuadraticDifferential& q, cplx z0, double theta, int direction,
                            const StopRules& stop = {}, std::optional<cplx> branch = std::nullopt);

// Both directions, glued at z0 (t = 0 there).
Trajectory trace_full(const QuadraticDifferential& q, cplx z0, double theta, const StopRules& stop = {});

struct Separatrices {
    std::array<Trajectory, 3> curves;
    std::array<double, 3> directions;  // departure angles arg(z - z0)
    bool collision = false;
};

Separatrices separatrices(const QuadraticDifferential& q, int zero_index, double theta, const StopRules& stop = {});

enum class TrajectoryClass { Generic, Separating, Saddle, Periodic, Divergent };
TrajectoryClass classify(const Trajectory& traj);
const char* to_string(TrajectoryClass c);

// (1/pi) times the contour integral of the tracked q^{1/2}.
cplx period(const QuadraticDifferential& q, const ContourPath& cycle, cplx branch_seed, const Quadrature& quad = {});

// Tracked branch of q^{1/2} along a path, queried by (z, s).
class BranchTrack {
public:
    BranchTrack(const QuadraticDifferential& q, const ContourPath& path, cplx branch_seed, double exclusion_radius);
    cplx operator()(cplx z, double s) const;

private:
    const QuadraticDifferential* q_;
    std::vector<double> s_;
    std::vector<cplx> v_;
};

struct SaddleEvent {
    double theta = 0.0;
    int zero_from = -1, zero_to = -1;
    cplx period;
    double miss = 0.0;        // final |signed miss distance|
    double bracket = 0.0;     // final bracket width in theta
    bool low_confidence = false;
    Trajectory connection;
};

struct SaddleOptions {
    double tol = 1e-6;        // bracket width target in theta
    int max_bisections = 60;
    StopRules stop{};
};

std::vector<SaddleEvent> find_saddles(const QuadraticDifferential& q, const std::vector<double>& theta_grid,
                                      const SaddleOptions& opts = {});

// Thin closed polyline around a saddle connection; passes on both sides at offset eps.
ContourPath thin_cycle(const Trajectory& connection, double eps);

}  // namespace hkx
