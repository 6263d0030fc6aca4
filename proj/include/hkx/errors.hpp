#pragma once

#include <complex>
#include <stdexcept>
#include <string>

namespace hkx {

using cplx = std::complex<double>;

// Bad input or a violated precondition. The CLI maps this to exit code 2.
class DomainError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Non-convergence, non-contraction, step underflow. Exit code 3.
class NumericalError : public std::runtime_error {
public:
    NumericalError(const std::string& what, cplx best = {}, double err = 0.0)
        : std::runtime_error(what), best_(best), err_(err) {}
    cplx best() const { return best_; }
    double err() const { return err_; }

private:
    cplx best_;
    double err_;
};

}  // namespace hkx
