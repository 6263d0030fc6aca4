#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"

#include "hkx/errors.hpp"

namespace hkx {

using json = nlohmann::json;

// 17 significant digits, enough to round-trip a double.
std::string csv_number(double x);

// Tabular writer; every numeric cell goes through csv_number.
class CsvTable {
public:
    explicit CsvTable(std::vector<std::string> header);
    void row(const std::vector<double>& values);
    // Leading text cells followed by numbers.
    void row(const std::vector<std::string>& text, const std::vector<double>& values);
    std::string str() const;
    std::size_t rows() const { return rows_; }

private:
    std::size_t cols_;
    std::size_t rows_ = 0;
    std::string body_;
};

struct SvgScene {
    struct Line {
        std::vector<cplx> points;
        bool closed = false;
    };
    struct Ray {
        double angle = 0.0;
        std::string label;
    };
    std::vector<Line> lines;
    std::vector<cplx> zeros;  // cross markers
    std::vector<cplx> poles;  // circle markers
    std::vector<Ray> rays;    // from the origin
};

struct SvgStyle {
    int width = 600;
    int height = 600;
    double margin = 24.0;
    double stroke = 1.2;
    double marker = 5.0;
};

// Deterministic document; an empty scene gives a blank canvas of the same size.
std::string export_svg(const SvgScene& scene, const SvgStyle& style = {});

// Config node that remembers where it sits in the document, so schema errors name the offending path.
class ConfigNode {
public:
    ConfigNode(const json& j, std::string path) : j_(&j), path_(std::move(path)) {}

    const std::string& path() const { return path_; }
    const json& raw() const { return *j_; }
    bool has(const std::string& key) const;
    ConfigNode at(const std::string& key) const;  // required member
    ConfigNode at(std::size_t i) const;
    std::size_t size() const;  // array length

    double number() const;
    int integer() const;
    bool boolean() const;
    std::string string() const;
    cplx complex() const;  // [re, im] or a real number
    std::vector<double> numbers() const;
    std::vector<int> integers() const;
    std::vector<cplx> complexes() const;

    double number_or(const std::string& key, double fallback) const;
    int integer_or(const std::string& key, int fallback) const;
    cplx complex_or(const std::string& key, cplx fallback) const;
    std::string string_or(const std::string& key, const std::string& fallback) const;

    [[noreturn]] void fail(const std::string& msg) const;

private:
    const json* j_;
    std::string path_;
};

struct RunOptions {
    std::filesystem::path out = "hkx_out";
    std::uint64_t seed = 1;
    int threads = 1;
    bool verbose = false;
};

const std::vector<std::string>& cli_commands();

// Runs one command; returns the exit code (0 ok, 2 validation, 3 numerical, 64 unknown command).
int run_command(const std::string& command, const json& config, const RunOptions& opts, std::ostream& out,
                std::ostream& err);

// Full driver: `hkx <command> [--config PATH] [--out DIR] [--seed N] [--threads N] [--verbose]`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace hkx
