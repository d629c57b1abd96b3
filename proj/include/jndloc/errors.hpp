#pragma once

#include <stdexcept>
#include <string>

namespace jndloc {

// Precondition on a numeric argument or level was violated.
class DomainError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// File or subprocess failure; the message carries the path.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class LadderBuildError : public std::runtime_error {
public:
    LadderBuildError(int level, const std::string& what)
        : std::runtime_error("ladder build failed at level " + std::to_string(level) + ": " + what),
          level_(level) {}

    int level() const noexcept { return level_; }

private:
    int level_;
};

class SelectionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class StateError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

} // namespace jndloc
