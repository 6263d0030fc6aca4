#include "hkx/metric.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "hkx/numerics.hpp"
#include "hkx/volterra.hpp"

namespace hkx {

namespace {

double wrap_angle(double a) {
    a = std::remainder(a, 2.0 * kPi);
    return a <= -kPi ? a + 2.0 * kPi : a;
}

// Signed angular offsets of zeta from each active ray (only meaningful within pi/2).
std::vector<double> ray_offsets(const SpectrumData& s, cplx zeta) {
    std::vector<double> out;
    for (const auto& [b, w] : s.active()) out.push_back(wrap_angle(std::arg(zeta) - ray_angle(s.central_charge(b))));
    return out;
}

void check_same_side(const std::vector<double>& base, const std::vector<double>& moved) {
    for (std::size_t k = 0; k < base.size(); ++k) {
        if (std::abs(base[k]) >= 0.5 * kPi) continue;
        if (std::abs(std::sin(base[k])) < 1e-6) throw DomainError("zeta lies on an active BPS ray");
        if ((base[k] > 0) != (moved[k] > 0) || std::abs(std::sin(moved[k])) < 1e-6)
            throw DomainError("a finite-difference displacement crosses a BPS ray; use a smaller h or another zeta");
    }
}

PatchPoint shifted(const ModuliPatch& patch, const PatchPoint& p, int a, double d) {
    PatchPoint q = p;
    if (a < 2 * patch.base_dim)
        q.u[a / 2] += (a % 2 == 0) ? cplx(d, 0.0) : cplx(0.0, d);
    else
        q.theta[a - 2 * patch.base_dim] += d;  // unwrapped lift
    return q;
}

double step_for(const ModuliPatch& patch, const PatchPoint& p, int a, double h) {
    if (a < 2 * patch.base_dim) return h * std::max(1.0, std::abs(p.u[a / 2]));
    return h;
}

// dlogX^sf_i / dx_a from the period gradient.
Mat semiflat_gradient(const ModuliPatch& patch, const Mat& G, cplx zeta, double R) {
    const int n = patch.spectrum.lattice.rank, dim = patch.dim();
    Mat D(n, dim);
    for (int i = 0; i < n; ++i)
        for (int a = 0; a < dim; ++a) {
            cplx v = kPi * R * G(i, a) / zeta + kPi * R * zeta * std::conj(G(i, a));
            if (a == 2 * patch.base_dim + i) v += kI;
            D(i, a) = v;
        }
    return D;
}

TwoForm assemble(const ModuliPatch& patch, const Mat& D, double R) {
    Mat E = patch.eps_lower().cast<cplx>();
    Mat M = D.transpose() * E * D;
    Mat W = (M - M.transpose()) / (8.0 * kPi * kPi * R);
    TwoForm out(static_cast<int>(W.rows()), patch.labels());
    for (int a = 0; a < out.dim(); ++a)
        for (int b = a + 1; b < out.dim(); ++b) out.set(a, b, W(a, b));
    return out;
}

}  // namespace

// --- patch -----------------------------------------------------------------

std::vector<std::string> ModuliPatch::labels() const {
    std::vector<std::string> out;
    for (int k = 0; k < base_dim; ++k) {
        std::string s = base_dim == 1 ? "" : std::to_string(k + 1);
        out.push_back("Re u" + s);
        out.push_back("Im u" + s);
    }
    for (int i = 0; i < spectrum.lattice.rank; ++i) {
        const auto& L = spectrum.lattice.labels;
        out.push_back("theta_" + (L.empty() ? std::to_string(i + 1) : L[i]));
    }
    return out;
}

Eigen::MatrixXd ModuliPatch::eps_upper() const {
    const int n = spectrum.lattice.rank;
    Eigen::MatrixXd e(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) e(i, j) = spectrum.lattice.pairing[i][j];
    return e;
}

Eigen::MatrixXd ModuliPatch::eps_lower() const { return eps_upper().inverse(); }

void ModuliPatch::validate() const {
    spectrum.lattice.validate();
    if (base_dim < 1) throw DomainError("patch base dimension must be >= 1");
    if (!Z) throw DomainError("patch has no period functions");
    Eigen::FullPivLU<Eigen::MatrixXd> lu(eps_upper());
    if (!lu.isInvertible()) throw DomainError("pairing must be invertible on the patch lattice");
}

ModuliPatch ModuliPatch::polynomial(SpectrumData s, std::vector<std::vector<cplx>> coeffs) {
    if (static_cast<int>(coeffs.size()) != s.lattice.rank) throw DomainError("one period polynomial per generator");
    ModuliPatch p;
    p.spectrum = std::move(s);
    p.base_dim = 1;
    p.Z = [coeffs](const std::vector<cplx>& u) {
        std::vector<cplx> z;
        for (const auto& c : coeffs) {
            cplx v = 0.0;
            for (auto it = c.rbegin(); it != c.rend(); ++it) v = v * u.at(0) + *it;
            z.push_back(v);
        }
        return z;
    };
    p.validate();
    return p;
}

SpectrumData spectrum_at(const ModuliPatch& patch, const PatchPoint& p) {
    if (static_cast<int>(p.u.size()) != patch.base_dim) throw DomainError("patch point has wrong base dimension");
    if (static_cast<int>(p.theta.size()) != patch.spectrum.lattice.rank)
        throw DomainError("patch point needs one theta per generator");
    SpectrumData s = patch.spectrum;
    s.Z = patch.Z(p.u);
    s.theta = p.theta;
    s.validate();
    return s;
}

// --- two-forms -------------------------------------------------------------

TwoForm::TwoForm(int dim, std::vector<std::string> labels)
    : dim_(dim), upper_(static_cast<std::size_t>(dim * (dim - 1) / 2)), labels_(std::move(labels)) {}

TwoForm TwoForm::from_matrix(const Mat& m) {
    TwoForm w(static_cast<int>(m.rows()));
    for (int a = 0; a < w.dim_; ++a)
        for (int b = a + 1; b < w.dim_; ++b) w.set(a, b, m(a, b));
    return w;
}

cplx TwoForm::operator()(int a, int b) const {
    if (a == b) return 0.0;
    if (a > b) return -(*this)(b, a);
    return upper_[static_cast<std::size_t>(a * dim_ - a * (a + 1) / 2 + (b - a - 1))];
}

void TwoForm::set(int a, int b, cplx v) {
    if (!(a < b)) throw DomainError("TwoForm::set needs a < b");
    upper_[static_cast<std::size_t>(a * dim_ - a * (a + 1) / 2 + (b - a - 1))] = v;
}

Mat TwoForm::matrix() const {
    Mat m(dim_, dim_);
    for (int a = 0; a < dim_; ++a)
        for (int b = 0; b < dim_; ++b) m(a, b) = (*this)(a, b);
    return m;
}

// --- periods ---------------------------------------------------------------

Mat period_gradient(const ModuliPatch& patch, const PatchPoint& p) {
    const int n = patch.spectrum.lattice.rank;
    Mat G = Mat::Zero(n, patch.dim());
    for (int a = 0; a < 2 * patch.base_dim; ++a) {
        double h = 1e-3 * std::max(1.0, std::abs(p.u[a / 2]));
        auto diff = [&](double hh) {
            auto zp = patch.Z(shifted(patch, p, a, hh).u), zm = patch.Z(shifted(patch, p, a, -hh).u);
            Vec d(n);
            for (int i = 0; i < n; ++i) d(i) = (zp.at(i) - zm.at(i)) / (2.0 * hh);
            return d;
        };
        G.col(a) = (4.0 * diff(h) - diff(2.0 * h)) / 3.0;
    }
    return G;
}

double lagrangian_residual(const ModuliPatch& patch, const PatchPoint& p) {
    Mat G = period_gradient(patch, p);
    Mat E = patch.eps_lower().cast<cplx>();
    Mat M = G.transpose() * E * G;
    return (M - M.transpose()).cwiseAbs().maxCoeff();
}

// --- varpi -----------------------------------------------------------------

std::vector<TwoForm> varpi_semiflat(const ModuliPatch& patch, const PatchPoint& p, const std::vector<cplx>& zetas,
                                    double R) {
    patch.validate();
    Mat G = period_gradient(patch, p);
    std::vector<TwoForm> out;
    for (cplx z : zetas) {
        if (z == 0.0) throw DomainError("zeta must be nonzero");
        out.push_back(assemble(patch, semiflat_gradient(patch, G, z, R), R));
    }
    return out;
}

std::vector<TwoForm> varpi(const ModuliPatch& patch, const PatchPoint& p, const std::vector<cplx>& zetas,
                           const VarpiOptions& opts) {
    patch.validate();
    if (!(opts.R > 0.0) || !(opts.h > 0.0)) throw DomainError("R and h must be positive");
    const int n = patch.spectrum.lattice.rank, dim = patch.dim();
    const double R = opts.R;
    SpectrumData s0 = spectrum_at(patch, p);
    double lag = lagrangian_residual(patch, p);
    if (lag > 1e-8 * (1.0 + period_gradient(patch, p).squaredNorm()))
        throw DomainError("patch violates the Lagrangian condition sum eps_ij dZ_i ^ dZ_j = 0");

    std::vector<std::vector<double>> base_off;
    for (cplx z : zetas) {
        if (z == 0.0) throw DomainError("zeta must be nonzero");
        base_off.push_back(ray_offsets(s0, z));
        check_same_side(base_off.back(), base_off.back());
    }

    // values[a][k][z](i) for displacement k in {+h, -h, +2h, -2h}
    auto sample = [&](const PatchPoint& q) {
        SpectrumData s = spectrum_at(patch, q);
        for (std::size_t z = 0; z < zetas.size(); ++z) check_same_side(base_off[z], ray_offsets(s, zetas[z]));
        TbaSolution sol = tba_solve(s, R, opts.tba);
        std::vector<Vec> v(zetas.size(), Vec(n));
        for (std::size_t z = 0; z < zetas.size(); ++z)
            for (int i = 0; i < n; ++i) {
                Charge e = s.lattice.generator(i);
                v[z](i) = opts.mode == FdMode::Full ? sol.log_x(e, zetas[z]) : sol.correction(e, zetas[z]);
            }
        return v;
    };

    std::vector<Mat> D(zetas.size(), Mat(n, dim));
    for (int a = 0; a < dim; ++a) {
        double h = step_for(patch, p, a, opts.h);
        auto vp1 = sample(shifted(patch, p, a, h)), vm1 = sample(shifted(patch, p, a, -h));
        auto vp2 = sample(shifted(patch, p, a, 2 * h)), vm2 = sample(shifted(patch, p, a, -2 * h));
        for (std::size_t z = 0; z < zetas.size(); ++z) {
            Vec d1 = (vp1[z] - vm1[z]) / (2.0 * h), d2 = (vp2[z] - vm2[z]) / (4.0 * h);
            D[z].col(a) = (4.0 * d1 - d2) / 3.0;
        }
    }
    std::vector<TwoForm> out;
    Mat G = opts.mode == FdMode::Split ? period_gradient(patch, p) : Mat();
    for (std::size_t z = 0; z < zetas.size(); ++z) {
        if (opts.mode == FdMode::Split) D[z] += semiflat_gradient(patch, G, zetas[z], R);
        out.push_back(assemble(patch, D[z], R));
    }
    return out;
}

TwoForm omega_i_semiflat(const ModuliPatch& patch, const PatchPoint& p, double R) {
    patch.validate();
    const int n = patch.spectrum.lattice.rank, dim = patch.dim();
    Mat G = period_gradient(patch, p);
    Eigen::MatrixXd E = patch.eps_lower();
    TwoForm w(dim, patch.labels());
    for (int a = 0; a < dim; ++a)
        for (int b = a + 1; b < dim; ++b) {
            cplx v = 0.0;
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) {
                    double th = (a == 2 * patch.base_dim + i && b == 2 * patch.base_dim + j ? 1.0 : 0.0) -
                                (b == 2 * patch.base_dim + i && a == 2 * patch.base_dim + j ? 1.0 : 0.0);
                    v += E(i, j) * (R / 4.0 * (G(i, a) * std::conj(G(j, b)) - G(i, b) * std::conj(G(j, a))) -
                                    th / (8.0 * kPi * kPi * R));
                }
            w.set(a, b, v);
        }
    return w;
}

// --- metric ----------------------------------------------------------------

MetricResult metric_from_forms(const TwoForm& at_minus1, const TwoForm& at_1, const TwoForm& at_i, int calibration) {
    Mat wm = at_minus1.matrix(), wp = at_1.matrix(), wi = at_i.matrix();
    Mat oI = wm.real().cast<cplx>();
    Mat oJ = (wm - wp) / (2.0 * kI);
    Mat oK = kI * (wi - oI);
    MetricResult r;
    r.calibration = calibration;
    r.omega_I = oI.real();
    r.omega_J = oJ.real();
    r.omega_K = oK.real();
    r.reality_residual = std::max({((wm + wp) / 2.0 - oI).cwiseAbs().maxCoeff(), oJ.imag().cwiseAbs().maxCoeff(),
                                   oK.imag().cwiseAbs().maxCoeff()});
    Eigen::FullPivLU<Eigen::MatrixXd> lu(r.omega_J);
    lu.setThreshold(1e-10);
    if (!lu.isInvertible()) throw DomainError("omega_J is singular at this patch point");
    r.I = -calibration * lu.solve(r.omega_K);
    const auto id = Eigen::MatrixXd::Identity(r.I.rows(), r.I.cols());
    r.i_squared_residual = (r.I * r.I + id).cwiseAbs().maxCoeff();
    Eigen::MatrixXd g = r.omega_I * r.I;
    r.asymmetry = (g - g.transpose()).norm() / g.norm();
    r.g = 0.5 * (g + g.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(r.g);
    r.min_eigenvalue = es.eigenvalues().minCoeff();
    return r;
}

int calibrate_complex_structure(const ModuliPatch& patch, const PatchPoint& p, double R) {
    auto f = varpi_semiflat(patch, p, {-1.0, 1.0, kI}, R);
    MetricResult m = metric_from_forms(f[0], f[1], f[2], 1);
    return m.I(1, 0) > 0.0 ? 1 : -1;
}

MetricResult semiflat_metric(const ModuliPatch& patch, const PatchPoint& p, double R) {
    auto f = varpi_semiflat(patch, p, {-1.0, 1.0, kI}, R);
    MetricResult m = metric_from_forms(f[0], f[1], f[2], 1);
    return m.I(1, 0) > 0.0 ? m : metric_from_forms(f[0], f[1], f[2], -1);
}

MetricResult extract_metric(const ModuliPatch& patch, const PatchPoint& p, const VarpiOptions& opts) {
    int s = calibrate_complex_structure(patch, p, opts.R);
    auto f = varpi(patch, p, {-1.0, 1.0, kI}, opts);
    return metric_from_forms(f[0], f[1], f[2], s);
}

DecayResult decay_sweep(const ModuliPatch& patch, const PatchPoint& p, const std::vector<double>& Rs,
                        const VarpiOptions& opts) {
    DecayResult out;
    out.target = 0.0;
    SpectrumData s0 = spectrum_at(patch, p);
    auto act = s0.active();
    out.z_min = std::numeric_limits<double>::infinity();
    for (const auto& [b, w] : act) out.z_min = std::min(out.z_min, std::abs(s0.central_charge(b)));
    if (act.empty()) out.z_min = 0.0;
    out.target = -2.0 * kPi * out.z_min;
    for (double R : Rs) {
        VarpiOptions o = opts;
        o.R = R;
        try {
            MetricResult tw = extract_metric(patch, p, o);
            MetricResult sf = semiflat_metric(patch, p, R);
            out.R.push_back(R);
            out.diff.push_back((tw.g - sf.g).norm());
            double x = 2.0 * kPi * R * out.z_min;
            out.envelope.push_back(act.empty() ? 0.0 : bessel_k(0, x) + bessel_k(1, x));
        } catch (const NumericalError& e) {
            out.skipped.push_back(R);
            out.warnings.push_back("R = " + std::to_string(R) + " skipped: " + e.what());
        }
    }
    bool positive = !out.diff.empty() && !act.empty();
    for (double d : out.diff) positive = positive && d > 0.0;
    out.slope_defined = positive && out.diff.size() >= 2;
    if (out.slope_defined) {
        const std::size_t m = out.R.size();
        double mr = 0.0, ml = 0.0;
        for (std::size_t k = 0; k < m; ++k) {
            mr += out.R[k] / m;
            ml += std::log(out.diff[k]) / m;
        }
        double num = 0.0, den = 0.0;
        for (std::size_t k = 0; k < m; ++k) {
            num += (out.R[k] - mr) * (std::log(out.diff[k]) - ml);
            den += (out.R[k] - mr) * (out.R[k] - mr);
        }
        out.slope = num / den;
        double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
        for (std::size_t k = 0; k < m; ++k) {
            double q = out.diff[k] / out.envelope[k];
            lo = std::min(lo, q);
            hi = std::max(hi, q);
        }
        out.C = hi;
        out.ratio_spread = hi / lo;
    }
    return out;
}

}  // namespace hkx
