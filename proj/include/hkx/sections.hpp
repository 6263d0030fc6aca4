#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "hkx/quaddiff.hpp"
#include "hkx/volterra.hpp"

namespace hkx {

// a(z) = constant + sum_m residue_m / (z - center_m); meromorphic, so a dz is closed away from the centers.
struct PolePart {
    cplx center;
    cplx residue;
};

struct ConnectionCoefficient {
    cplx constant{0.0, 0.0};
    std::vector<PolePart> poles;

    cplx operator()(cplx z) const;
};

enum class ErrorProfile { Phase, Structured, Unitary };
const char* to_string(ErrorProfile p);
ErrorProfile error_profile_from_string(const std::string& s);

struct ErrorModel {
    double mu = 1.0;
    double delta = 0.5;
    double C = 0.0;
    ErrorProfile profile = ErrorProfile::Phase;
    std::uint64_t seed = 1;
};

// Synthetic limiting configuration plus error model along which flat sections are computed.
// Leading connection along a path z(u), with g the global branch of q^{1/2} and k = g dz/du:
//   d1 = -(R/zeta) k - R zeta conj(k) + a1 z' - conj(a1 z')       (= lambda_1)
//   d2 =  (R/zeta) k + R zeta conj(k) + a2 z' - conj(a2 z')       (= -lambda_2)
// On a trajectory in standard parametrization k = -e^{i theta}.
struct HiggsLocalModel {
    QuadraticDifferential q;
    ConnectionCoefficient a1, a2;
    ErrorModel error;
    double R = 10.0;
    cplx zeta{1.0, 0.0};
    double theta = 0.0;
    int branch = 1;  // lim (z - p) g = branch * i * sigma_p at the lowest-index vertex

    explicit HiggsLocalModel(QuadraticDifferential qd) : q(std::move(qd)) {}

    // zeta in the open half-plane around e^{i theta}, R, mu, delta > 0, C >= 0.
    void validate() const;
    bool in_half_plane(double angle) const;

    // (sum_j |z - p_j|^{-2})^{-1/2}: smooth stand-in for the distance to the poles.
    double pole_distance(cplx z) const;
    // Error matrix along a path with tangent dz and k = g dz.
    Mat error_matrix(cplx z, cplx dz, cplx k) const;
    // Declared bound for max_k |e_k| at that point.
    double error_bound(cplx z, cplx dz, cplx k) const;
    std::array<cplx, 2> leading(cplx z, cplx dz, cplx k) const;
};

// Log chart z = center + exp(v) near a double pole.
struct PoleChart {
    int pole = -1;
    cplx center;
    double radius = 0.0;
};

// Oriented path with Hermite interpolation (in the log chart near poles), optional log-spiral extensions to
// u = -inf / +inf into a double pole, and continuous logarithms log(z - c) for the connection centers.
// Along the path g dz/du = kappa is constant, so the flat coordinate is affine in u.
class FlatPath {
public:
    std::vector<double> u;
    std::vector<cplx> z, dz;
    cplx kappa;
    std::array<PoleChart, 2> chart;   // [0] near u.front(), [1] near u.back()
    std::array<bool, 2> infinite{};   // extension beyond the end node
    std::array<cplx, 2> rate{};       // dv/du of the extension
    std::vector<cplx> centers;
    std::vector<std::vector<cplx>> logs;  // [center][node]

    double u_begin() const;
    double u_end() const;
    std::pair<cplx, cplx> at(double s) const;
    // Continuous log(z - center) at s; the center must have been registered.
    cplx log_at(cplx center, double s) const;
    // Antiderivative of a dz along the path with continuous branches.
    cplx antiderivative(const ConnectionCoefficient& a, double s) const;
    void set_centers(const std::vector<cplx>& c);
    FlatPath reversed() const;

private:
    int chart_of(size_t k) const;
    cplx log_node(size_t m, size_t k) const { return logs[m][k]; }
};

// Primitives of d1, d2 along a path, anchored at u = anchor with the given values there.
struct Primitive {
    double anchor = 0.0;
    std::array<cplx, 2> offset{};
    std::array<cplx, 2> operator()(const HiggsLocalModel& m, const FlatPath& p, double s) const;
};

struct LeadingTerms {
    std::vector<double> t;
    std::vector<cplx> lambda1, lambda2, Lambda1, Lambda2;  // primitives vanish at t_ref
};

// Trajectory as returned by the tracer; g is taken as -direction * sqrtq so that g z' = -e^{i theta}.
// Lambda_j are integrated numerically from t_ref.
LeadingTerms leading_terms(const HiggsLocalModel& model, const Trajectory& traj, double t_ref = 0.0);

// FlatPath through the nodes of a trajectory (densified by exact flat-coordinate solves), with g = sign * sqrtq.
// Ends captured at a pole get a log chart and a spiral extension.
FlatPath flat_path(const HiggsLocalModel& model, const Trajectory& traj, int sign, int refine = 3);

struct SmallFlatSection {
    FlatPath path;         // oriented into the pole where the section is small
    Primitive primitive;
    int small_index = 1;   // 0 or 1; x -> e_k
    GridSolution x;
    double sup_remainder = 0.0;  // sup |x - e_k| on the grid
    double kernel_bound = 0.0;   // Picard lambda
    cplx log_scale{0.0, 0.0};    // s = exp(log_scale + P_k) x
    int orientation = 1;         // path parameter = orientation * parameter of the underlying side
    std::shared_ptr<const HiggsLocalModel> model;

    // (log prefactor, x) at path parameter s.
    std::pair<cplx, Vec> at(double s) const;
    Vec value(double s) const;
    // Volterra problem whose solution is x (for derivative checks).
    IvpAtInfinity problem() const;
};

// Finer default grid than the bare solver: the remainder is resolved to ~1e-10 absolute.
inline GridSpec section_grid() {
    GridSpec g;
    g.h0 = 0.004;
    g.h_max = 0.02;
    return g;
}

struct SectionOptions {
    GridSpec grid = section_grid();
    double pole_capture = 1e-7;  // relative to the critical spacing
    int refine = 3;
};

// Small flat section on an oriented path that runs into a pole at u = +inf, computed on [u_from, inf).
SmallFlatSection solve_on_path(const HiggsLocalModel& model, const FlatPath& path, const Primitive& prim,
                               double u_from, const GridSpec& grid = {});

// Small flat section along a trajectory traced by the module's tracer. into_end = +1: small at t -> +inf,
// s = e^{-Lambda_2} x with x -> (0, 1); into_end = -1: small at t -> -inf, s = e^{Lambda_1} x, x -> (1, 0)
// (the big solution in the forward direction). Primitives vanish at t = t_anchor.
SmallFlatSection small_flat_section(const HiggsLocalModel& model, const Trajectory& traj, int into_end,
                                    const SectionOptions& opts = {}, double t_from = 0.0, double t_anchor = 0.0);

// Wedge of two section values given as (log prefactor, vector).
struct WedgeValue {
    cplx log_value;    // log(s1 ^ s2)
    cplx log_leading;  // same with x replaced by the leading vectors
    cplx r;            // value / leading - 1
    double bound;      // |x^r| + |y^r| + |x^r||y^r|
};
WedgeValue wedge(const std::pair<cplx, Vec>& s1, int k1, const std::pair<cplx, Vec>& s2, int k2);
WedgeValue wedge(const SmallFlatSection& s1, double u1, const SmallFlatSection& s2, double u2);

// int (a1 + a2) dz - conj((a1 + a2) dz) along a path between two parameters.
cplx liouville_log(const HiggsLocalModel& m, const FlatPath& p, double u_from, double u_to);

struct QuadrilateralOptions {
    int zero_a = 0, zero_b = 1;
    double seed_radius = 0.3;       // fraction of the distance to the nearest other critical point
    double connector_depth = 1e-2;  // relative to the critical spacing
    double connector_angle = 0.8;
    SectionOptions section{};
    std::array<double, 4> eval_shift{};  // moves z_i along its side by this flat length
};

struct Side {
    FlatPath path;   // forward orientation, g dz/dt = -e^{i theta}, t = 0 at the construction seed
    int from = -1, to = -1;  // pole indices
    int id = -1;             // construction index, independent of the orientation
    double eval = 0.0;       // parameter of the evaluation point
};

// theta~-trajectory segment near a vertex from the target side (u = 0) to the native side (u = length).
// It runs deeper into the vertex, so the section small there grows along the reversed direction.
struct Connector {
    FlatPath path;
    int vertex = -1;                     // 0..3 for p_1..p_4
    int target = -1, native = -1;        // label indices 0..3 of gamma_1..gamma_4
    double u_target = 0, u_native = 0;   // parameters of the end points on the respective sides
    double length = 0;
    double theta = 0;                    // angle of the connector foliation
};

struct QuadrilateralModel {
    std::array<Side, 4> sides;       // gamma_1 = p4 -> p1, gamma_2 = p2 -> p1, gamma_3 = p2 -> p3, gamma_4 = p4 -> p3
    std::array<int, 4> vertices{};   // p_1..p_4
    std::array<Connector, 4> connectors;  // at p_1..p_4
    std::vector<cplx> boundary;      // polygon p4 -> p1 -> p2 -> p3 -> p4, clockwise around the zeros
    int zero_a = 0, zero_b = 1;
    int edge_from = -1, edge_to = -1;
    double connector_depth = 1e-2, connector_angle = 0.8;
    SectionOptions section{};
};

QuadrilateralModel build_quadrilateral(const HiggsLocalModel& model, const QuadrilateralOptions& opts = {});

// Connector at vertex index v starting on the target side at |z - p| = depth * critical spacing.
Connector build_connector(const HiggsLocalModel& model, const QuadrilateralModel& quad, int v, double depth,
                          double angle);

// Small flat section of side `label` that is small at its vertex `to_end ? to : from`, valid from side
// parameter u_from towards that vertex; primitives anchored at the evaluation point.
SmallFlatSection side_section(const HiggsLocalModel& model, const QuadrilateralModel& quad, int label, bool to_end,
                              double u_from);

struct Transport {
    int vertex = 0;                  // 0..3
    std::pair<cplx, Vec> at_target;  // transported section at the connector end on the target side
    int small_index = 0;
    cplx epsilon;                    // limit along the target side is e_k (1 + epsilon)
    SmallFlatSection target;         // target side section small at the vertex, rescaled by (1 + epsilon)
    double kernel_bound = 0.0;
    GridSolution finite;
};

// Carries the native section of vertex v across its connector. `next` is the native section of vertex v+1,
// used to project out the big solution on the target side.
Transport transport_section(const HiggsLocalModel& model, const QuadrilateralModel& quad, int v,
                            const SmallFlatSection& native, const SmallFlatSection& next);

struct XResult {
    cplx log_x;          // log X_E (imaginary part mod 2 pi)
    cplx log_leading;    // log of -exp((R/zeta) pi Z + R zeta pi conj(Z) + i theta)
    cplx Z;              // (1/pi) int g dz over the clockwise transport loop
    cplx Z_ellipse;      // same over an ellipse around the two zeros (independent check)
    double theta_angle;  // i theta = loop integral of conj(a1) dz-bar - a1 dz
    cplx r_q;            // X / X_leading - 1
    double r_bound;      // ((1+b12)(1+b34))/((1-b41)(1-b23)) - 1
    std::array<WedgeValue, 4> wedges;  // (s_i ^ s_{i+1}) at z_{i+1}
    std::array<Transport, 4> transports;
    std::array<double, 4> sup_remainder;
    double kernel_bound = 0.0;
    cplx value() const;
};

// log(-exp((R/zeta) pi Z + R zeta pi conj(Z) + i theta)), principal branch of the -1.
cplx log_x_leading(double R, cplx zeta, cplx Z, double theta_angle);

// Optional per-section rescaling (s_i -> c_i s_i), for invariance checks.
XResult x_coordinate(const HiggsLocalModel& model, const QuadrilateralModel& quad,
                     const std::array<cplx, 4>& log_rescale = {});
XResult x_coordinate(const HiggsLocalModel& model, const QuadrilateralOptions& opts = {});

// |X^theta(zeta) - conj(X^{theta+pi}(-1/conj zeta))^{-1}| / |X^theta(zeta)|; the theta+pi coordinate is
// computed with the labels that the reversed orientation induces, which inverts the cross-ratio.
double check_reality(const HiggsLocalModel& model, const QuadrilateralOptions& opts = {});

// zeta d/d eps log X_E for q -> (1 + eps) q, by central differences.
cplx zeta_dlogx_dscale(const HiggsLocalModel& model, const QuadrilateralOptions& opts = {}, double h = 1e-5);

}  // namespace hkx
