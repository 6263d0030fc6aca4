#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

#include "hkx/lattice_tba.hpp"
#include "hkx/volterra.hpp"

namespace hkx {

// Local patch of the integrable system: base coordinates u in C^r, periods Z_i(u) of the lattice generators
// (holomorphic, closed form) and fiber angles theta_i. Real coordinates are ordered
// (Re u_1, Im u_1, ..., Re u_r, Im u_r, theta_1, ..., theta_n).
struct ModuliPatch {
    SpectrumData spectrum;  // lattice, Omega and sigma; Z and theta are replaced per point
    int base_dim = 1;
    std::function<std::vector<cplx>(const std::vector<cplx>&)> Z;

    int dim() const { return 2 * base_dim + spectrum.lattice.rank; }
    std::vector<std::string> labels() const;
    // eps^{ij} (the pairing) and its inverse eps_{ij}.
    Eigen::MatrixXd eps_upper() const;
    Eigen::MatrixXd eps_lower() const;
    void validate() const;

    // Z_i = sum_m coeffs[i][m] u^m on a one-dimensional base.
    static ModuliPatch polynomial(SpectrumData s, std::vector<std::vector<cplx>> coeffs);
};

struct PatchPoint {
    std::vector<cplx> u;
    std::vector<double> theta;
};

SpectrumData spectrum_at(const ModuliPatch& patch, const PatchPoint& p);

// Antisymmetric form stored as its strict upper triangle.
class TwoForm {
public:
    TwoForm() = default;
    explicit TwoForm(int dim, std::vector<std::string> labels = {});
    static TwoForm from_matrix(const Mat& m);  // keeps the upper triangle

    int dim() const { return dim_; }
    cplx operator()(int a, int b) const;
    void set(int a, int b, cplx v);  // a < b
    Mat matrix() const;
    const std::vector<std::string>& labels() const { return labels_; }

private:
    int dim_ = 0;
    std::vector<cplx> upper_;
    std::vector<std::string> labels_;
};

// dZ_i in the real coordinate directions, by Richardson-refined central differences of the supplied Z.
Mat period_gradient(const ModuliPatch& patch, const PatchPoint& p);

// max |sum eps_ij dZ_i ^ dZ_j| over coordinate pairs; the patch must be Lagrangian.
double lagrangian_residual(const ModuliPatch& patch, const PatchPoint& p);

enum class FdMode {
    Full,   // central differences of log X from the TBA solution
    Split,  // exact semiflat part plus central differences of the (small) instanton correction
};

struct VarpiOptions {
    double R = 1.0;
    double h = 1e-4;  // relative to the coordinate scale max(1, |u|)
    FdMode mode = FdMode::Full;
    TbaOptions tba;
};

// varpi(zeta) = (1/(8 pi^2 R)) sum eps_ij dlogX_i ^ dlogX_j, one form per requested zeta.
std::vector<TwoForm> varpi(const ModuliPatch& patch, const PatchPoint& p, const std::vector<cplx>& zetas,
                           const VarpiOptions& opts);
// Closed form from X^sf.
std::vector<TwoForm> varpi_semiflat(const ModuliPatch& patch, const PatchPoint& p, const std::vector<cplx>& zetas,
                                    double R);

// sum eps_ij [(R/4) dZ_i ^ dconj(Z_j) - (1/(8 pi^2 R)) dtheta_i ^ dtheta_j]
TwoForm omega_i_semiflat(const ModuliPatch& patch, const PatchPoint& p, double R);

struct MetricResult {
    Eigen::MatrixXd g;  // symmetrized
    Eigen::MatrixXd omega_I, omega_J, omega_K, I;
    double asymmetry = 0.0;          // |g - g^T| / |g| before symmetrizing
    double i_squared_residual = 0.0; // max |I^2 + id|
    double reality_residual = 0.0;   // imaginary parts discarded when forming omega_{I,J,K}
    double min_eigenvalue = 0.0;
    int calibration = 1;
};

// omega_I = Re varpi(-1), omega_J = Re (varpi(-1) - varpi(1)) / 2i, omega_K = Re i (varpi(i) - omega_I),
// I = s (-omega_J^{-1} omega_K), g = omega_I(., I .).
MetricResult metric_from_forms(const TwoForm& at_minus1, const TwoForm& at_1, const TwoForm& at_i, int calibration);

// Sign s making the semiflat I act as multiplication by i on the first base coordinate.
int calibrate_complex_structure(const ModuliPatch& patch, const PatchPoint& p, double R);

MetricResult semiflat_metric(const ModuliPatch& patch, const PatchPoint& p, double R);
MetricResult extract_metric(const ModuliPatch& patch, const PatchPoint& p, const VarpiOptions& opts);

struct DecayResult {
    std::vector<double> R;
    std::vector<double> diff;      // |g_twist - g_sf|_F
    std::vector<double> envelope;  // K0(2 pi R |Z_min|) + K1(2 pi R |Z_min|)
    std::vector<double> skipped;
    std::vector<std::string> warnings;
    double z_min = 0.0;
    double slope = 0.0;  // least squares of log diff vs R
    double target = 0.0; // -2 pi |Z_min|
    double C = 0.0;      // smallest constant with diff <= C envelope
    double ratio_spread = 0.0;  // max / min of diff / envelope
    bool slope_defined = false;
};

DecayResult decay_sweep(const ModuliPatch& patch, const PatchPoint& p, const std::vector<double>& Rs,
                        const VarpiOptions& opts);

}  // namespace hkx
