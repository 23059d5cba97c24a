#pragma once

#include <stdexcept>
#include <string>

namespace tercast {

// Base class for all library errors. Subcategories let callers distinguish
// bad inputs (files, geometry) from configuration and numerical problems.
class error : public std::runtime_error {
public:
    explicit error(const std::string& msg) : std::runtime_error(msg) {}
};

class parse_error : public error {
public:
    parse_error(const std::string& file, long line, const std::string& msg)
        : error(file + ":" + std::to_string(line) + ": " + msg) {}
    explicit parse_error(const std::string& msg) : error(msg) {}
};

class grid_mismatch_error : public error {
public:
    using error::error;
};

class duplication_error : public error {
public:
    using error::error;
};

class geometry_error : public error {
public:
    using error::error;
};

class config_error : public error {
public:
    using error::error;
};

class validation_error : public error {
public:
    using error::error;
};

class numerical_error : public error {
public:
    using error::error;
};

class convergence_error : public error {
public:
    convergence_error(const std::string& msg, double residual)
        : error(msg), residual_(residual) {}
    double residual() const { return residual_; }

private:
    double residual_;
};

class domain_error : public error {
public:
    using error::error;
};

}  // namespace tercast
