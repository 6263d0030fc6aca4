#include "hkx/cli_io.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "hkx/lattice_tba.hpp"
#include "hkx/metric.hpp"
#include "hkx/numerics.hpp"
#include "hkx/quaddiff.hpp"
#include "hkx/sections.hpp"
#include "hkx/volterra.hpp"

namespace hkx {

std::string csv_number(double x) { return fmt::format("{:.17g}", x); }

CsvTable::CsvTable(std::vector<std::string> header) : cols_(header.size()) {
    for (std::size_t k = 0; k < header.size(); ++k) body_ += (k ? "," : "") + header[k];
    body_ += "\n";
}

void CsvTable::row(const std::vector<double>& values) { row({}, values); }

void CsvTable::row(const std::vector<std::string>& text, const std::vector<double>& values) {
    if (text.size() + values.size() != cols_) throw DomainError("csv row has the wrong number of cells");
    std::string line;
    for (const auto& t : text) line += (line.empty() ? "" : ",") + t;
    for (std::size_t k = 0; k < values.size(); ++k) line += (line.empty() && k == 0 ? "" : ",") + csv_number(values[k]);
    body_ += line + "\n";
    ++rows_;
}

std::string CsvTable::str() const { return body_; }

// ---------------------------------------------------------------------------------------------------- svg

namespace {

std::string px(double v) { return fmt::format("{:.3f}", v); }

}  // namespace

std::string export_svg(const SvgScene& scene, const SvgStyle& style) {
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    auto grow = [&](cplx z) {
        if (!std::isfinite(z.real()) || !std::isfinite(z.imag())) return;
        x0 = std::min(x0, z.real());
        x1 = std::max(x1, z.real());
        y0 = std::min(y0, z.imag());
        y1 = std::max(y1, z.imag());
    };
    for (const auto& l : scene.lines)
        for (cplx z : l.points) grow(z);
    for (cplx z : scene.zeros) grow(z);
    for (cplx z : scene.poles) grow(z);
    if (!scene.rays.empty()) {
        grow({-1.0, -1.0});
        grow({1.0, 1.0});
    }

    std::string s = fmt::format(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\">\n",
        style.width, style.height);
    s += fmt::format("<rect width=\"{}\" height=\"{}\" fill=\"white\"/>\n", style.width, style.height);
    if (!(x0 <= x1)) return s + "</svg>\n";

    double span = std::max({x1 - x0, y1 - y0, 1e-12});
    double scale = std::min(style.width, style.height) - 2.0 * style.margin;
    scale /= span;
    double cx = 0.5 * (x0 + x1), cy = 0.5 * (y0 + y1);
    auto X = [&](cplx z) { return 0.5 * style.width + scale * (z.real() - cx); };
    auto Y = [&](cplx z) { return 0.5 * style.height - scale * (z.imag() - cy); };

    for (const auto& l : scene.lines) {
        if (l.points.empty()) continue;
        std::string pts;
        for (cplx z : l.points) {
            if (!std::isfinite(z.real()) || !std::isfinite(z.imag())) continue;
            pts += (pts.empty() ? "" : " ") + px(X(z)) + "," + px(Y(z));
        }
        s += fmt::format("<{} points=\"{}\" fill=\"none\" stroke=\"black\" stroke-width=\"{}\"/>\n",
                         l.closed ? "polygon" : "polyline", pts, px(style.stroke));
    }
    if (!scene.rays.empty()) {
        double reach = span;
        for (const auto& r : scene.rays) {
            cplx end = std::polar(reach, r.angle), lab = std::polar(0.8 * reach, r.angle);
            s += fmt::format("<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"blue\" stroke-width=\"{}\"/>\n",
                             px(X(0.0)), px(Y(0.0)), px(X(end)), px(Y(end)), px(style.stroke));
            if (!r.label.empty())
                s += fmt::format("<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"blue\">{}</text>\n", px(X(lab)),
                                 px(Y(lab)), r.label);
        }
    }
    const double m = style.marker;
    for (cplx z : scene.zeros) {
        double a = X(z), b = Y(z);
        s += fmt::format("<path d=\"M {} {} L {} {} M {} {} L {} {}\" stroke=\"red\" stroke-width=\"{}\"/>\n",
                         px(a - m), px(b - m), px(a + m), px(b + m), px(a - m), px(b + m), px(a + m), px(b - m),
                         px(style.stroke));
    }
    for (cplx z : scene.poles)
        s += fmt::format("<circle cx=\"{}\" cy=\"{}\" r=\"{}\" fill=\"none\" stroke=\"green\" stroke-width=\"{}\"/>\n",
                         px(X(z)), px(Y(z)), px(m), px(style.stroke));
    return s + "</svg>\n";
}

// ---------------------------------------------------------------------------------------------------- config

void ConfigNode::fail(const std::string& msg) const { throw DomainError((path_.empty() ? "<root>" : path_) + ": " + msg); }

bool ConfigNode::has(const std::string& key) const { return j_->is_object() && j_->contains(key); }

ConfigNode ConfigNode::at(const std::string& key) const {
    if (!j_->is_object()) fail("expected an object");
    auto it = j_->find(key);
    std::string p = path_.empty() ? key : path_ + "." + key;
    if (it == j_->end()) throw DomainError(p + ": required field missing");
    return ConfigNode(*it, p);
}

ConfigNode ConfigNode::at(std::size_t i) const {
    if (!j_->is_array()) fail("expected an array");
    if (i >= j_->size()) fail("index " + std::to_string(i) + " out of range");
    return ConfigNode((*j_)[i], path_ + "[" + std::to_string(i) + "]");
}

std::size_t ConfigNode::size() const {
    if (!j_->is_array()) fail("expected an array");
    return j_->size();
}

double ConfigNode::number() const {
    if (!j_->is_number()) fail("expected a number");
    double v = j_->get<double>();
    if (!std::isfinite(v)) fail("expected a finite number");
    return v;
}

int ConfigNode::integer() const {
    if (!j_->is_number_integer()) fail("expected an integer");
    return j_->get<int>();
}

bool ConfigNode::boolean() const {
    if (!j_->is_boolean()) fail("expected true or false");
    return j_->get<bool>();
}

std::string ConfigNode::string() const {
    if (!j_->is_string()) fail("expected a string");
    return j_->get<std::string>();
}

cplx ConfigNode::complex() const {
    if (j_->is_number()) return number();
    if (!j_->is_array() || j_->size() != 2) fail("expected [re, im]");
    return {at(0).number(), at(1).number()};
}

std::vector<double> ConfigNode::numbers() const {
    std::vector<double> v;
    for (std::size_t i = 0; i < size(); ++i) v.push_back(at(i).number());
    return v;
}

std::vector<int> ConfigNode::integers() const {
    std::vector<int> v;
    for (std::size_t i = 0; i < size(); ++i) v.push_back(at(i).integer());
    return v;
}

std::vector<cplx> ConfigNode::complexes() const {
    std::vector<cplx> v;
    for (std::size_t i = 0; i < size(); ++i) v.push_back(at(i).complex());
    return v;
}

double ConfigNode::number_or(const std::string& key, double fallback) const {
    return has(key) ? at(key).number() : fallback;
}
int ConfigNode::integer_or(const std::string& key, int fallback) const {
    return has(key) ? at(key).integer() : fallback;
}
cplx ConfigNode::complex_or(const std::string& key, cplx fallback) const {
    return has(key) ? at(key).complex() : fallback;
}
std::string ConfigNode::string_or(const std::string& key, const std::string& fallback) const {
    return has(key) ? at(key).string() : fallback;
}

// ---------------------------------------------------------------------------------------------------- commands

namespace {

const json kEmpty = json::object();

json cjson(cplx z) { return json::array({z.real(), z.imag()}); }

std::string charge_label(const Charge& c) {
    std::string s = "(";
    for (std::size_t i = 0; i < c.size(); ++i) s += (i ? " " : "") + std::to_string(c[i]);
    return s + ")";
}

struct Ctx {
    const json& config;
    RunOptions opts;
    std::ostream& out;
    std::ostream& err;

    ConfigNode root() const { return ConfigNode(config, ""); }
    ConfigNode block(const std::string& key) const {
        return root().has(key) ? root().at(key) : ConfigNode(kEmpty, key);
    }

    void write(const std::string& name, const std::string& content) const {
        std::filesystem::path p = opts.out / name;
        std::ofstream f(p, std::ios::binary);
        if (!f) throw DomainError("cannot write " + p.string());
        f << content;
        if (!f) throw DomainError("cannot write " + p.string());
        if (opts.verbose) err << "wrote " << p.string() << "\n";
    }
    void write_json(const std::string& name, const json& j) const { write(name, j.dump(2) + "\n"); }
    void summary(const std::string& line) const { out << line << "\n"; }
};

QuadraticDifferential parse_quaddiff(const ConfigNode& n) {
    std::vector<cplx> zeros = n.has("zeros") ? n.at("zeros").complexes() : std::vector<cplx>{};
    std::vector<cplx> poles = n.has("poles") ? n.at("poles").complexes() : std::vector<cplx>{};
    if (n.has("sigma")) {
        auto s = n.at("sigma");
        int idx = s.integer_or("pole", 0);
        if (idx < 0 || idx >= static_cast<int>(poles.size())) s.at("pole").fail("no such pole");
        return QuadraticDifferential::with_sigma(zeros, poles, idx, s.at("value").complex());
    }
    return QuadraticDifferential(n.complex_or("normalization", 1.0), zeros, poles);
}

StopRules parse_stop(const ConfigNode& n) {
    StopRules r;
    r.max_length = n.number_or("max_length", r.max_length);
    r.max_steps = n.integer_or("max_steps", r.max_steps);
    r.pole_capture = n.number_or("pole_capture", r.pole_capture);
    r.zero_capture = n.number_or("zero_capture", r.zero_capture);
    r.escape_radius = n.number_or("escape_radius", r.escape_radius);
    return r;
}

const char* end_name(EndKind k) {
    switch (k) {
        case EndKind::Pole: return "pole";
        case EndKind::Zero: return "zero";
        case EndKind::Infinity: return "infinity";
        default: return "open";
    }
}

CsvTable trajectory_csv(const Trajectory& tr) {
    CsvTable t({"t", "re_z", "im_z"});
    for (std::size_t i = 0; i < tr.size(); ++i) t.row({tr.t[i], tr.z[i].real(), tr.z[i].imag()});
    return t;
}

SvgScene critical_scene(const QuadraticDifferential& q) {
    SvgScene sc;
    sc.zeros = q.zeros();
    sc.poles = q.poles();
    return sc;
}

int cmd_trace(const Ctx& c) {
    auto q = parse_quaddiff(c.root().at("quaddiff"));
    auto n = c.block("trace");
    cplx z0 = n.at("z0").complex();
    double theta = n.number_or("theta", 0.0);
    StopRules stop = parse_stop(n);
    std::string dir = n.has("direction") && n.at("direction").raw().is_string() ? n.at("direction").string() : "";
    Trajectory tr;
    if (!n.has("direction") || dir == "both") {
        tr = trace_full(q, z0, theta, stop);
    } else {
        int d = n.at("direction").integer();
        if (d != 1 && d != -1) n.at("direction").fail("expected 1, -1 or \"both\"");
        tr = trace_trajectory(q, z0, theta, d, stop);
    }
    c.write("trajectory.csv", trajectory_csv(tr).str());
    SvgScene sc = critical_scene(q);
    sc.lines.push_back({tr.z, tr.periodic});
    c.write("trajectory.svg", export_svg(sc));
    json s = {{"points", tr.size()},
              {"class", to_string(classify(tr))},
              {"ends", {end_name(tr.ends[0].kind), end_name(tr.ends[1].kind)}},
              {"periodic", tr.periodic},
              {"max_residual", tr.max_residual()}};
    c.write_json("trace.json", s);
    c.summary(fmt::format("trace: {} points, class {}, ends {}/{}", tr.size(), to_string(classify(tr)),
                          end_name(tr.ends[0].kind), end_name(tr.ends[1].kind)));
    return 0;
}

int cmd_separatrices(const Ctx& c) {
    auto q = parse_quaddiff(c.root().at("quaddiff"));
    auto n = c.block("separatrices");
    int zero = n.integer_or("zero", 0);
    double theta = n.number_or("theta", 0.0);
    Separatrices s = separatrices(q, zero, theta, parse_stop(n));
    SvgScene sc = critical_scene(q);
    json dirs = json::array();
    for (int k = 0; k < 3; ++k) {
        c.write(fmt::format("separatrix_{}.csv", k), trajectory_csv(s.curves[k]).str());
        sc.lines.push_back({s.curves[k].z, false});
        dirs.push_back(s.directions[k]);
    }
    c.write("separatrices.svg", export_svg(sc));
    c.write_json("separatrices.json", {{"zero", zero}, {"theta", theta}, {"directions", dirs}, {"collision", s.collision}});
    c.summary(fmt::format("separatrices: zero {} at theta {:.6f}, directions {:.6f} {:.6f} {:.6f}", zero, theta,
                          s.directions[0], s.directions[1], s.directions[2]));
    return 0;
}

std::vector<double> parse_theta_grid(const ConfigNode& n) {
    if (n.raw().is_array()) return n.numbers();
    int count = n.integer_or("count", 32);
    double a = n.number_or("from", 0.0), b = n.number_or("to", kPi);
    if (count < 2) n.at("count").fail("need at least 2 points");
    std::vector<double> g;
    for (int k = 0; k < count; ++k) g.push_back(a + (b - a) * k / count);
    return g;
}

int cmd_saddles(const Ctx& c) {
    auto q = parse_quaddiff(c.root().at("quaddiff"));
    auto n = c.block("saddles");
    std::vector<double> grid = parse_theta_grid(n.has("theta_grid") ? n.at("theta_grid") : ConfigNode(kEmpty, "saddles.theta_grid"));
    SaddleOptions o;
    o.tol = n.number_or("tol", o.tol);
    o.stop = parse_stop(n);
    auto ev = find_saddles(q, grid, o);
    json events = json::array();
    SvgScene sc = critical_scene(q);
    for (std::size_t k = 0; k < ev.size(); ++k) {
        const auto& e = ev[k];
        events.push_back({{"theta", e.theta},
                          {"zero_from", e.zero_from},
                          {"zero_to", e.zero_to},
                          {"period", cjson(e.period)},
                          {"miss", e.miss},
                          {"bracket", e.bracket},
                          {"low_confidence", e.low_confidence}});
        c.write(fmt::format("saddle_{}.csv", k), trajectory_csv(e.connection).str());
        sc.lines.push_back({e.connection.z, false});
    }
    c.write_json("saddles.json", {{"events", events}});
    c.write("saddles.svg", export_svg(sc));
    std::string line = fmt::format("saddles: {} event{}", ev.size(), ev.size() == 1 ? "" : "s");
    for (const auto& e : ev) line += fmt::format(", theta_c {:.9f}", e.theta);
    c.summary(line);
    return 0;
}

int cmd_periods(const Ctx& c) {
    auto q = parse_quaddiff(c.root().at("quaddiff"));
    auto cycles = c.root().at("periods").at("cycles");
    CsvTable t({"cycle", "re_Z", "im_Z"});
    json list = json::array();
    for (std::size_t k = 0; k < cycles.size(); ++k) {
        auto cy = cycles.at(k);
        ContourPath path = ContourPath::polyline({0.0, 1.0});
        if (cy.has("circle")) {
            auto ci = cy.at("circle");
            path = ContourPath::circle(ci.at("center").complex(), ci.at("radius").number(), ci.integer_or("orientation", 1));
        } else if (cy.has("polyline")) {
            path = ContourPath::polyline(cy.at("polyline").complexes());
        } else {
            cy.fail("expected \"circle\" or \"polyline\"");
        }
        cplx seed = cy.has("branch_seed") ? cy.at("branch_seed").complex() : std::sqrt(q(path.point(0.0)));
        cplx Z = period(q, path, seed);
        t.row({static_cast<double>(k), Z.real(), Z.imag()});
        list.push_back(cjson(Z));
    }
    c.write("periods.csv", t.str());
    c.write_json("periods.json", {{"periods", list}});
    std::string line = "periods:";
    for (const auto& z : list) line += fmt::format(" ({:.9f}, {:.9f})", z[0].get<double>(), z[1].get<double>());
    c.summary(line);
    return 0;
}

// Scalar x(t) = a - int_t^inf c e^{-r s} x(s) ds, exact solution a exp(-(c/r) e^{-r t}).
struct VolterraRun {
    GridSolution sol;
    double max_error = 0.0;
    double bound = 0.0;
    CsvTable table{{"t", "re_x", "im_x", "re_exact", "im_exact"}};
};

VolterraRun volterra_closed_form(cplx scale, double rate, cplx a, double T, double t_end, int samples) {
    if (!(rate > 0)) throw DomainError("volterra.kernel.rate: must be positive");
    if (samples < 2) throw DomainError("volterra.samples: need at least 2");
    IvpAtInfinity p;
    p.n = 1;
    p.T = T;
    Vec av(1);
    av(0) = a;
    p.a = [av](double) { return av; };
    p.a_inf = av;
    p.kernel.B = [scale, rate](double s) {
        Mat m(1, 1);
        m(0, 0) = scale * std::exp(-rate * s);
        return m;
    };
    VolterraRun r;
    r.bound = picard_bound(p).bound;
    r.sol = solve_ivp_infinity(p);
    for (int k = 0; k < samples; ++k) {
        double t = T + (t_end - T) * k / (samples - 1);
        cplx x = r.sol.at(t)(0), ex = a * std::exp(-(scale / rate) * std::exp(-rate * t));
        r.max_error = std::max(r.max_error, std::abs(x - ex));
        r.table.row({t, x.real(), x.imag(), ex.real(), ex.imag()});
    }
    return r;
}

int cmd_volterra(const Ctx& c) {
    auto n = c.block("volterra");
    auto k = n.has("kernel") ? n.at("kernel") : ConfigNode(kEmpty, "volterra.kernel");
    double T = n.number_or("T", 0.0);
    auto r = volterra_closed_form(k.complex_or("scale", 0.5), k.number_or("rate", 1.0), n.complex_or("a", 1.0), T,
                                  n.number_or("t_end", T + 10.0), n.integer_or("samples", 201));
    c.write("volterra.csv", r.table.str());
    c.write_json("volterra.json", {{"max_error", r.max_error},
                                   {"picard_bound", r.bound},
                                   {"sup_norm", r.sol.sup_norm()},
                                   {"lambda", r.sol.lambda},
                                   {"iterations", r.sol.iterations},
                                   {"err", r.sol.err}});
    c.summary(fmt::format("volterra: {} iterations, lambda {:.6g}, max error vs closed form {:.3e}, |x| <= {:.6g}",
                          r.sol.iterations, r.sol.lambda, r.max_error, r.bound));
    return 0;
}

ConnectionCoefficient parse_connection(const ConfigNode& n, const QuadraticDifferential& q) {
    ConnectionCoefficient a;
    a.constant = n.complex_or("constant", 0.0);
    if (n.has("poles")) {
        auto ps = n.at("poles");
        for (std::size_t k = 0; k < ps.size(); ++k) {
            auto p = ps.at(k);
            int idx = p.at("pole").integer();
            if (idx < 0 || idx >= static_cast<int>(q.poles().size())) p.at("pole").fail("no such pole");
            a.poles.push_back({q.poles()[idx], p.at("residue").complex()});
        }
    }
    return a;
}

HiggsLocalModel parse_model(const Ctx& c) {
    auto q = parse_quaddiff(c.root().at("quaddiff"));
    auto n = c.root().at("model");
    HiggsLocalModel m(q);
    m.R = n.number_or("R", m.R);
    m.theta = n.number_or("theta", m.theta);
    m.zeta = n.complex_or("zeta", std::polar(0.8, m.theta + 0.4));
    m.branch = n.integer_or("branch", m.branch);
    if (n.has("a1")) m.a1 = parse_connection(n.at("a1"), q);
    if (n.has("a2")) m.a2 = parse_connection(n.at("a2"), q);
    if (n.has("error")) {
        auto e = n.at("error");
        m.error.mu = e.number_or("mu", m.error.mu);
        m.error.delta = e.number_or("delta", m.error.delta);
        m.error.C = e.number_or("C", m.error.C);
        if (e.has("profile")) {
            try {
                m.error.profile = error_profile_from_string(e.at("profile").string());
            } catch (const DomainError& ex) {
                e.at("profile").fail(ex.what());
            }
        }
    }
    m.error.seed = c.opts.seed;
    m.validate();
    return m;
}

QuadrilateralOptions parse_quad_options(const Ctx& c) {
    QuadrilateralOptions o;
    auto n = c.root().at("model");
    if (n.has("quadrilateral")) {
        auto qn = n.at("quadrilateral");
        o.zero_a = qn.integer_or("zero_a", o.zero_a);
        o.zero_b = qn.integer_or("zero_b", o.zero_b);
    }
    return o;
}

int cmd_sections(const Ctx& c) {
    HiggsLocalModel m = parse_model(c);
    QuadrilateralOptions o = parse_quad_options(c);
    QuadrilateralModel Q = build_quadrilateral(m, o);
    XResult X = x_coordinate(m, Q);
    CsvTable sides({"side", "pole_from", "pole_to", "sup_remainder"});
    SvgScene sc = critical_scene(m.q);
    for (int k = 0; k < 4; ++k) {
        sides.row({static_cast<double>(k + 1), static_cast<double>(Q.sides[k].from), static_cast<double>(Q.sides[k].to),
                   X.sup_remainder[k]});
        sc.lines.push_back({Q.sides[k].path.z, false});
    }
    sc.lines.push_back({Q.boundary, true});
    CsvTable wedges({"wedge", "re_log_value", "im_log_value", "re_log_leading", "im_log_leading", "abs_r", "bound"});
    for (int k = 0; k < 4; ++k) {
        const auto& w = X.wedges[k];
        wedges.row({static_cast<double>(k + 1), w.log_value.real(), w.log_value.imag(), w.log_leading.real(),
                    w.log_leading.imag(), std::abs(w.r), w.bound});
    }
    CsvTable tr({"vertex", "re_epsilon", "im_epsilon", "kernel_bound"});
    for (int k = 0; k < 4; ++k)
        tr.row({static_cast<double>(k + 1), X.transports[k].epsilon.real(), X.transports[k].epsilon.imag(),
                X.transports[k].kernel_bound});
    c.write("sections.csv", sides.str());
    c.write("wedges.csv", wedges.str());
    c.write("transports.csv", tr.str());
    c.write("quadrilateral.svg", export_svg(sc));
    double worst = *std::max_element(X.sup_remainder.begin(), X.sup_remainder.end());
    c.summary(fmt::format("sections: 4 sides, max sup remainder {:.3e}, kernel bound {:.3e}", worst, X.kernel_bound));
    return 0;
}

double fit_slope(const std::vector<double>& x, const std::vector<double>& y) {
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i] / x.size();
        my += y[i] / y.size();
    }
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
    }
    return sxy / sxx;
}

int cmd_xcoord(const Ctx& c) {
    HiggsLocalModel m = parse_model(c);
    QuadrilateralOptions o = parse_quad_options(c);
    std::vector<double> Rs{m.R};
    if (c.root().has("sweep") && c.root().at("sweep").has("R")) Rs = c.root().at("sweep").at("R").numbers();
    bool reality = c.block("xcoord").has("reality") && c.block("xcoord").at("reality").boolean();
    CsvTable t({"R", "re_log_x", "im_log_x", "re_log_leading", "im_log_leading", "re_r_q", "im_r_q", "abs_r_q",
                "r_bound", "reality_residual"});
    std::vector<double> fitR, fitL;
    cplx Z = 0.0;
    for (double R : Rs) {
        HiggsLocalModel mr = m;
        mr.R = R;
        mr.validate();
        XResult X = x_coordinate(mr, o);
        Z = X.Z;
        double res = reality ? check_reality(mr, o) : std::numeric_limits<double>::quiet_NaN();
        t.row({R, X.log_x.real(), X.log_x.imag(), X.log_leading.real(), X.log_leading.imag(), X.r_q.real(),
               X.r_q.imag(), std::abs(X.r_q), X.r_bound, res});
        if (std::abs(X.r_q) > 0) {
            fitR.push_back(R);
            fitL.push_back(std::log(std::abs(X.r_q)));
        }
        if (c.opts.verbose) c.err << fmt::format("xcoord: R {} |r_q| {:.3e}\n", R, std::abs(X.r_q));
    }
    c.write("xcoord.csv", t.str());
    json s = {{"Z", cjson(Z)}, {"R", Rs}};
    std::string line = fmt::format("xcoord: {} R value{}, Z = ({:.9f}, {:.9f})", Rs.size(), Rs.size() == 1 ? "" : "s",
                                   Z.real(), Z.imag());
    if (fitR.size() >= 2) {
        double slope = fit_slope(fitR, fitL);
        s["slope"] = slope;
        s["target"] = -m.error.delta;
        line += fmt::format(", log|r_q| slope {:.4f} (target {:.4f})", slope, -m.error.delta);
    }
    c.write_json("xcoord.json", s);
    c.summary(line);
    return 0;
}

SpectrumData parse_spectrum(const ConfigNode& n) {
    ChargeLattice L;
    L.rank = n.at("rank").integer();
    if (L.rank < 1) n.at("rank").fail("must be positive");
    auto pn = n.at("pairing");
    if (pn.size() != static_cast<std::size_t>(L.rank)) pn.fail("expected rank rows");
    for (int i = 0; i < L.rank; ++i) {
        L.pairing.push_back(pn.at(i).integers());
        if (L.pairing.back().size() != static_cast<std::size_t>(L.rank)) pn.at(i).fail("expected rank entries");
    }
    if (n.has("labels")) {
        auto ln = n.at("labels");
        for (std::size_t i = 0; i < ln.size(); ++i) L.labels.push_back(ln.at(i).string());
    }
    try {
        L.validate();
    } catch (const DomainError& e) {
        pn.fail(e.what());
    }
    auto gn = n.at("generators");
    if (gn.size() != static_cast<std::size_t>(L.rank)) gn.fail("expected one entry per generator");
    std::vector<cplx> Z;
    std::vector<double> theta;
    std::vector<int> sigma;
    std::vector<int> omega;
    for (int i = 0; i < L.rank; ++i) {
        auto g = gn.at(i);
        Z.push_back(g.at("Z").complex());
        theta.push_back(g.number_or("theta", 0.0));
        sigma.push_back(g.integer_or("sigma", 1));
        if (sigma.back() != 1 && sigma.back() != -1) g.at("sigma").fail("expected +1 or -1");
        omega.push_back(g.integer_or("Omega", 0));
    }
    SpectrumData s = SpectrumData::make(L, Z, theta, sigma);
    for (int i = 0; i < L.rank; ++i)
        if (omega[i] != 0) {
            s.set_omega(L.generator(i), omega[i]);
            s.set_omega(-L.generator(i), omega[i]);
        }
    if (n.has("support")) {
        auto sn = n.at("support");
        for (std::size_t k = 0; k < sn.size(); ++k) {
            auto e = sn.at(k);
            Charge ch = e.at("charge").integers();
            if (ch.size() != static_cast<std::size_t>(L.rank)) e.at("charge").fail("expected rank entries");
            s.set_omega(ch, e.at("Omega").integer());
            if (e.has("sigma")) s.sigma_given[ch] = e.at("sigma").integer();
        }
    }
    if (n.has("towers")) {
        auto tn = n.at("towers");
        for (std::size_t k = 0; k < tn.size(); ++k) {
            auto e = tn.at(k);
            ChargeTower t;
            t.base = e.at("base").integers();
            t.step = e.at("step").integers();
            t.omega = e.at("Omega").integer();
            t.m_max = e.integer_or("m_max", t.m_max);
            s.towers.push_back(t);
        }
    }
    try {
        s.validate();
    } catch (const DomainError& e) {
        n.fail(e.what());
    }
    return s;
}

TbaOptions parse_tba_options(const ConfigNode& n, const RunOptions& ro) {
    TbaOptions o;
    o.h = n.number_or("h", o.h);
    o.h_min = n.number_or("h_min", o.h_min);
    o.eps_tail = n.number_or("eps_tail", o.eps_tail);
    o.max_iter = n.integer_or("max_iter", o.max_iter);
    o.tol = n.number_or("tol", o.tol);
    o.init_perturbation = n.number_or("init_perturbation", o.init_perturbation);
    o.threads = ro.threads;
    return o;
}

SvgScene ray_scene(const SpectrumData& s) {
    SvgScene sc;
    for (const auto& [ch, om] : s.active()) sc.rays.push_back({ray_angle(s.central_charge(ch)), charge_label(ch)});
    return sc;
}

int cmd_tba(const Ctx& c) {
    SpectrumData s = parse_spectrum(c.root().at("spectrum"));
    auto n = c.block("tba");
    double R = n.number_or("R", 1.0);
    TbaOptions o = parse_tba_options(n, c.opts);
    std::vector<cplx> zetas = n.has("zeta") ? n.at("zeta").complexes() : std::vector<cplx>{std::polar(1.0, 0.123)};
    TbaSolution sol = tba_solve(s, R, o);

    CsvTable rays({"ray", "charge", "y", "re_f", "im_f"});
    for (std::size_t r = 0; r < sol.rays.size(); ++r)
        for (std::size_t i = 0; i < sol.rays[r].y.size(); ++i)
            rays.row({std::to_string(r), charge_label(sol.rays[r].beta)},
                     {sol.rays[r].y[i], sol.rays[r].f[i].real(), sol.rays[r].f[i].imag()});
    CsvTable xs({"charge", "re_zeta", "im_zeta", "re_x", "im_x", "re_x_sf", "im_x_sf", "re_correction",
                 "im_correction"});
    double norm = 0.0;
    for (cplx z : zetas)
        for (int i = 0; i < s.lattice.rank; ++i) {
            Charge g = s.lattice.generator(i);
            cplx x = evaluate_x(sol, g, z), xsf = x_semiflat(s, g, z, R), corr = sol.correction(g, z);
            norm = std::max(norm, std::abs(corr));
            xs.row({charge_label(g)}, {z.real(), z.imag(), x.real(), x.imag(), xsf.real(), xsf.imag(), corr.real(),
                                       corr.imag()});
        }
    c.write("tba_rays.csv", rays.str());
    c.write("tba_x.csv", xs.str());
    c.write("rays.svg", export_svg(ray_scene(s)));
    c.write_json("tba.json", {{"R", R},
                              {"iterations", sol.iterations},
                              {"sup_change", sol.sup_change},
                              {"history", sol.history},
                              {"rays", sol.rays.size()},
                              {"tail_bound", sol.tail_bound},
                              {"correction_norm", norm}});
    c.summary(fmt::format("tba: converged in {} iteration{}, {} rays, correction norm {}", sol.iterations,
                          sol.iterations == 1 ? "" : "s", sol.rays.size(), norm == 0.0 ? "0" : fmt::format("{:.3e}", norm)));
    return 0;
}

ModuliPatch parse_patch(const SpectrumData& s, const ConfigNode& n, PatchPoint& p) {
    auto pn = n.at("periods");
    if (pn.size() != static_cast<std::size_t>(s.lattice.rank)) pn.fail("expected one polynomial per generator");
    std::vector<std::vector<cplx>> coeffs;
    for (int i = 0; i < s.lattice.rank; ++i) coeffs.push_back(pn.at(i).complexes());
    ModuliPatch patch = ModuliPatch::polynomial(s, coeffs);
    p.u = {n.at("u").complex()};
    p.theta = n.has("theta") ? n.at("theta").numbers() : s.theta;
    if (p.theta.size() != static_cast<std::size_t>(s.lattice.rank)) n.at("theta").fail("expected rank entries");
    return patch;
}

VarpiOptions parse_varpi(const ConfigNode& n, const RunOptions& ro) {
    VarpiOptions o;
    o.R = n.number_or("R", o.R);
    o.h = n.number_or("h", o.h);
    std::string mode = n.string_or("mode", "split");
    if (mode == "full")
        o.mode = FdMode::Full;
    else if (mode == "split")
        o.mode = FdMode::Split;
    else
        n.at("mode").fail("expected \"full\" or \"split\"");
    o.tba = parse_tba_options(n, ro);
    return o;
}

std::string matrix_csv(const Eigen::MatrixXd& m, const std::vector<std::string>& labels) {
    std::vector<std::string> head{"row"};
    head.insert(head.end(), labels.begin(), labels.end());
    CsvTable t(head);
    for (int i = 0; i < m.rows(); ++i) {
        std::vector<double> r(m.cols());
        for (int j = 0; j < m.cols(); ++j) r[j] = m(i, j);
        t.row({labels[i]}, r);
    }
    return t.str();
}

json metric_json(const MetricResult& m) {
    return {{"asymmetry", m.asymmetry},
            {"i_squared_residual", m.i_squared_residual},
            {"reality_residual", m.reality_residual},
            {"min_eigenvalue", m.min_eigenvalue},
            {"calibration", m.calibration}};
}

int cmd_metric(const Ctx& c) {
    SpectrumData s = parse_spectrum(c.root().at("spectrum"));
    PatchPoint p;
    ModuliPatch patch = parse_patch(s, c.root().at("patch"), p);
    VarpiOptions o = parse_varpi(c.block("metric"), c.opts);
    MetricResult tw = extract_metric(patch, p, o);
    MetricResult sf = semiflat_metric(patch, p, o.R);
    double rel = (tw.g - sf.g).norm() / sf.g.norm();
    auto labels = patch.labels();
    c.write("metric.csv", matrix_csv(tw.g, labels));
    c.write("metric_semiflat.csv", matrix_csv(sf.g, labels));
    c.write("complex_structure.csv", matrix_csv(tw.I, labels));
    c.write_json("metric.json", {{"R", o.R}, {"twisted", metric_json(tw)}, {"semiflat", metric_json(sf)},
                                 {"relative_difference", rel}});
    c.summary(fmt::format("metric: R {}, |g - g_sf|/|g_sf| {:.3e}, |I^2 + 1| {:.3e}, min eigenvalue {:.6g}", o.R, rel,
                          tw.i_squared_residual, tw.min_eigenvalue));
    return 0;
}

int cmd_decay(const Ctx& c) {
    SpectrumData s = parse_spectrum(c.root().at("spectrum"));
    PatchPoint p;
    ModuliPatch patch = parse_patch(s, c.root().at("patch"), p);
    VarpiOptions o = parse_varpi(c.block("metric"), c.opts);
    std::vector<double> Rs = c.root().at("sweep").at("R").numbers();
    DecayResult d = decay_sweep(patch, p, Rs, o);
    CsvTable t({"R", "diff", "envelope", "ratio"});
    for (std::size_t k = 0; k < d.R.size(); ++k) t.row({d.R[k], d.diff[k], d.envelope[k], d.diff[k] / d.envelope[k]});
    c.write("decay.csv", t.str());
    c.write_json("decay.json", {{"slope", d.slope_defined ? json(d.slope) : json(nullptr)},
                                {"target", d.target},
                                {"z_min", d.z_min},
                                {"C", d.C},
                                {"ratio_spread", d.ratio_spread},
                                {"skipped", d.skipped},
                                {"warnings", d.warnings}});
    for (const auto& w : d.warnings) c.err << "warning: " << w << "\n";
    if (d.slope_defined)
        c.summary(fmt::format("decay-sweep: {} R values, slope {:.4f} (target {:.4f}), C {:.4g}", d.R.size(), d.slope,
                              d.target, d.C));
    else
        c.summary(fmt::format("decay-sweep: {} R values, slope undefined", d.R.size()));
    return 0;
}

// ---------------------------------------------------------------------------------------------------- selftest

struct Check {
    std::string name;
    double value;
    double limit;
    bool pass;
};

int cmd_selftest(const Ctx& c) {
    std::vector<Check> checks;
    auto below = [&](const std::string& name, double v, double lim) { checks.push_back({name, v, lim, v < lim}); };

    // volterra closed form
    auto vr = volterra_closed_form(0.5, 1.0, 1.0, 0.0, 10.0, 201);
    c.write("volterra.csv", vr.table.str());
    below("volterra_closed_form", vr.max_error, 1e-8);
    below("volterra_picard_bound", vr.sol.sup_norm(), vr.bound * (1 + 1e-12));

    // log spiral into a double pole
    const cplx m(1.0, 0.5);
    QuadraticDifferential qs(m * m, {}, {cplx(0.0)});
    Trajectory sp = trace_trajectory(qs, 1.0, 0.3, -1, {}, m);
    double e2 = 0;
    for (std::size_t i = 0; i < sp.size(); ++i)
        e2 = std::max(e2, std::abs(sp.z[i] - std::exp(-(std::exp(kI * 0.3) / m) * sp.t[i])));
    c.write("spiral.csv", trajectory_csv(sp).str());
    below("log_spiral", e2, 1e-6);

    // separatrices of q = z
    QuadraticDifferential qz(1.0, {cplx(0.0)}, {});
    Separatrices sep = separatrices(qz, 0, 0.0);
    double spacing = 0;
    for (int k = 0; k < 3; ++k) {
        double d = std::remainder(sep.directions[(k + 1) % 3] - sep.directions[k], 2 * kPi);
        spacing = std::max(spacing, std::abs(std::abs(d) - 2 * kPi / 3));
    }
    SvgScene sc = critical_scene(qz);
    for (const auto& cv : sep.curves) sc.lines.push_back({cv.z, false});
    c.write("separatrices.svg", export_svg(sc));
    below("separatrix_spacing", spacing, 1e-3);

    // saddle of z^2 - 1 and periods
    QuadraticDifferential q2(1.0, {cplx(-1, 0), cplx(1, 0)}, {});
    std::vector<double> grid;
    for (int k = 0; k < 32; ++k) grid.push_back(kPi * k / 32.0);
    auto ev = find_saddles(q2, grid);
    below("saddle_count", std::abs(static_cast<double>(ev.size()) - 1.0), 0.5);
    below("saddle_angle", ev.empty() ? 1.0 : std::abs(ev[0].theta - kPi / 2), 1e-3);
    QuadraticDifferential qp(1.0, {}, {cplx(0.0)});
    below("double_pole_period", std::abs(period(qp, ContourPath::circle(0.0, 1.0), 1.0) - cplx(0, 2)), 1e-6);
    auto c2 = ContourPath::circle(0.0, 2.0);
    cplx Zb = period(q2, c2, std::sqrt(q2(c2.point(0.0))));
    below("branch_cut_period", std::min(std::abs(Zb - kI), std::abs(Zb + kI)), 1e-6);

    // Bessel values
    below("bessel_k0_1", std::abs(bessel_k(0, 1.0) - 0.42102443824070834), 1e-8);
    below("bessel_k1_1", std::abs(bessel_k(1, 1.0) - 0.60190723019723457), 1e-8);

    // zero-error X-coordinate
    {
        std::vector<cplx> zeros{{0.4, 0.1}, {-0.35, -0.15}, {0.1, 1.9}, {-0.2, -2.1}};
        std::vector<cplx> poles{{1.6, 0.2}, {0.1, 1.2}, {-1.5, -0.1}, {0.2, -1.3}};
        for (auto& z : zeros) z *= 0.25;
        for (auto& p : poles) p *= 0.25;
        HiggsLocalModel hm(QuadraticDifferential::with_sigma(zeros, poles, 0, 1.0));
        hm.theta = 0.3;
        hm.zeta = std::polar(0.8, 0.7);
        hm.R = 5.0;
        hm.a1.constant = cplx(1.2, -0.8);
        hm.a2.constant = cplx(-0.4, 1.0);
        hm.error.seed = c.opts.seed;
        XResult X = x_coordinate(hm);
        CsvTable t({"R", "re_log_x", "im_log_x", "re_log_leading", "im_log_leading", "abs_r_q"});
        t.row({hm.R, X.log_x.real(), X.log_x.imag(), X.log_leading.real(), X.log_leading.imag(), std::abs(X.r_q)});
        c.write("xcoord.csv", t.str());
        below("xcoord_zero_error", std::abs(X.r_q), 1e-6);
        below("xcoord_reality", check_reality(hm), 1e-6);
    }

    // TBA
    ChargeLattice L;
    L.rank = 2;
    L.pairing = {{0, 1}, {-1, 0}};
    L.labels = {"e", "m"};
    SpectrumData empty = SpectrumData::make(L, {1.0, cplx(0.2, 1.0)}, {0.4, -1.1}, {1, 1});
    TbaOptions to;
    to.threads = c.opts.threads;
    TbaSolution s0 = tba_solve(empty, 1.0, to);
    below("tba_empty_iterations", std::abs(s0.iterations - 1.0), 0.5);
    SpectrumData one = empty;
    one.set_omega({1, 0}, 1);
    one.set_omega({-1, 0}, 1);
    TbaSolution s1 = tba_solve(one, 1.0, to);
    CsvTable rays({"ray", "y", "re_f", "im_f"});
    for (std::size_t r = 0; r < s1.rays.size(); ++r)
        for (std::size_t i = 0; i < s1.rays[r].y.size(); ++i)
            rays.row({static_cast<double>(r), s1.rays[r].y[i], s1.rays[r].f[i].real(), s1.rays[r].f[i].imag()});
    c.write("tba_rays.csv", rays.str());
    double jump = 0.0;
    for (const auto& T : s1.rays) {
        double ray = ray_angle(T.Z);
        for (double rho : {0.5, 1.0, 2.0}) {
            cplx z0 = std::polar(rho, ray);
            Charge mm{0, 1};
            cplx xp = evaluate_x(s1, mm, z0, RaySide::CounterClockwise), xm = evaluate_x(s1, mm, z0, RaySide::Clockwise);
            cplx S = jump_factor(s1.spectrum, ray, mm, {{T.beta, std::exp(s1.log_x(T.beta, z0))}});
            jump = std::max(jump, std::abs(xp * S - xm) / std::abs(xm));
        }
    }
    below("tba_jump_residual", jump, 1e-6);

    // metric
    ModuliPatch pe = ModuliPatch::polynomial(empty, {{0.0, 1.0}, {0.2, cplx(0.3, 1.1)}});
    ModuliPatch p1 = ModuliPatch::polynomial(one, {{0.0, 1.0}, {0.2, cplx(0.3, 1.1)}});
    PatchPoint pt{{std::polar(1.0, 0.3)}, {0.4, -1.1}};
    VarpiOptions vo;
    vo.mode = FdMode::Split;
    vo.tba = to;
    VarpiOptions full = vo;
    full.mode = FdMode::Full;  // Split would make this comparison exact by construction
    MetricResult tw = extract_metric(pe, pt, full), sf = semiflat_metric(pe, pt, 1.0);
    below("metric_empty_vs_semiflat", (tw.g - sf.g).norm() / sf.g.norm(), 1e-5);
    MetricResult t1 = extract_metric(p1, pt, vo);
    below("metric_i_squared", t1.i_squared_residual, 1e-6);
    below("metric_asymmetry", t1.asymmetry, 1e-6);
    checks.push_back({"metric_positive", t1.min_eigenvalue, 0.0, t1.min_eigenvalue > 0.0});
    c.write("metric.csv", matrix_csv(t1.g, p1.labels()));
    DecayResult d = decay_sweep(p1, pt, {1.0, 1.5, 2.0, 2.5, 3.0}, vo);
    CsvTable dt({"R", "diff", "envelope"});
    for (std::size_t k = 0; k < d.R.size(); ++k) dt.row({d.R[k], d.diff[k], d.envelope[k]});
    c.write("decay.csv", dt.str());
    below("decay_slope", d.slope_defined ? std::abs(d.slope / d.target - 1.0) : 1.0, 0.10);

    CsvTable out({"check", "value", "limit", "pass"});
    int failed = 0;
    for (const auto& ch : checks) {
        out.row({ch.name}, {ch.value, ch.limit, ch.pass ? 1.0 : 0.0});
        failed += !ch.pass;
        if (c.opts.verbose || !ch.pass)
            c.err << fmt::format("{} {} {:.3e} (limit {:.3e})\n", ch.pass ? "ok  " : "FAIL", ch.name, ch.value, ch.limit);
    }
    c.write("selftest.csv", out.str());
    c.summary(fmt::format("selftest: {} of {} checks passed", checks.size() - failed, checks.size()));
    return failed ? 3 : 0;
}

std::string usage() {
    std::string s = "usage: hkx <command> [--config PATH] [--out DIR] [--seed N] [--threads N] [--verbose]\ncommands:";
    for (const auto& c : cli_commands()) s += " " + c;
    return s + "\n";
}

}  // namespace

const std::vector<std::string>& cli_commands() {
    static const std::vector<std::string> c{"trace",    "separatrices", "saddles", "periods", "volterra",    "sections",
                                            "xcoord",   "tba",          "metric",  "decay-sweep", "selftest"};
    return c;
}

int run_command(const std::string& command, const json& config, const RunOptions& opts, std::ostream& out,
                std::ostream& err) {
    static const std::map<std::string, int (*)(const Ctx&)> table{
        {"trace", cmd_trace},     {"separatrices", cmd_separatrices}, {"saddles", cmd_saddles},
        {"periods", cmd_periods}, {"volterra", cmd_volterra},         {"sections", cmd_sections},
        {"xcoord", cmd_xcoord},   {"tba", cmd_tba},                   {"metric", cmd_metric},
        {"decay-sweep", cmd_decay}, {"selftest", cmd_selftest}};
    auto it = table.find(command);
    if (it == table.end()) {
        err << "unknown command '" << command << "'\n" << usage();
        return 64;
    }
    try {
        if (!config.is_object()) throw DomainError("<root>: expected an object");
        RunOptions o = opts;
        if (o.threads == 0) o.threads = std::max(1u, std::thread::hardware_concurrency());
        std::error_code ec;
        std::filesystem::create_directories(o.out, ec);
        if (ec || !std::filesystem::is_directory(o.out)) throw DomainError("cannot create output directory " + o.out.string());
        Ctx ctx{config, o, out, err};
        return it->second(ctx);
    } catch (const DomainError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const NumericalError& e) {
        err << "numerical failure: " << e.what() << "\n";
        return 3;
    }
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"hkx"};
    std::string command, config_path, out_dir;
    std::int64_t seed = -1;
    int threads = -1;
    bool verbose = false;
    app.add_option("command", command, "command to run");
    app.add_option("--config", config_path, "JSON configuration");
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--seed", seed, "random seed");
    app.add_option("--threads", threads, "worker threads (0 = auto)");
    app.add_flag("--verbose", verbose, "progress on stderr");
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << usage();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << e.what() << "\n" << usage();
        return 64;
    }

    json config = json::object();
    if (!config_path.empty()) {
        std::ifstream f(config_path);
        if (!f) {
            err << "error: cannot read " << config_path << "\n";
            return 2;
        }
        try {
            config = json::parse(f);
        } catch (const json::parse_error& e) {
            err << "error: " << config_path << ": " << e.what() << "\n";
            return 2;
        }
    }
    if (command.empty() && config.is_object() && config.contains("command") && config["command"].is_string())
        command = config["command"].get<std::string>();
    if (command.empty()) {
        err << usage();
        return 64;
    }

    RunOptions o;
    try {
        ConfigNode root(config, "");
        if (root.has("out")) o.out = root.at("out").string();
        if (root.has("seed")) o.seed = static_cast<std::uint64_t>(root.at("seed").integer());
        if (root.has("threads")) o.threads = root.at("threads").integer();
    } catch (const DomainError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
    if (!out_dir.empty()) o.out = out_dir;
    if (seed >= 0) o.seed = static_cast<std::uint64_t>(seed);
    if (threads >= 0) o.threads = threads;
    o.verbose = verbose;
    return run_command(command, config, o, out, err);
}

}  // namespace hkx
