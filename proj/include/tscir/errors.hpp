#pragma once

#include <stdexcept>
#include <string>

namespace tscir {

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

struct ArgumentError : std::runtime_error {
    explicit ArgumentError(const std::string& msg) : std::runtime_error("argument error: " + msg) {}
};

struct StateError : std::runtime_error {
    explicit StateError(const std::string& msg) : std::runtime_error("state error: " + msg) {}
};

struct IntegrityError : std::runtime_error {
    explicit IntegrityError(const std::string& msg) : std::runtime_error("integrity error: " + msg) {}
};

struct ContractViolation : std::runtime_error {
    explicit ContractViolation(const std::string& msg)
        : std::runtime_error("contract violation: " + msg) {}
};

}  // namespace tscir
