#pragma once

#include <stdexcept>
#include <string>

namespace bar {

/// Bad command line, unreadable config, unknown/missing keys. Exit code 1.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Corrupt or mismatched binary artifacts (magic, CRC, truncation). Exit code 2.
struct IntegrityError : std::runtime_error {
    explicit IntegrityError(const std::string& what) : std::runtime_error(what) {}
};

/// A finished pruning run whose hard metric exceeds its budget. Exit code 3.
struct BudgetError : std::runtime_error {
    explicit BudgetError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace bar
