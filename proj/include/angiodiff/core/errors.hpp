#pragma once

#include <stdexcept>
#include <string>

namespace angiodiff {

// Error taxonomy mirrored by the CLI exit codes: invalid input -> 2,
// missing prerequisite -> 3, non-finite numerics -> 4.

class InvalidArgument : public std::invalid_argument {
public:
    explicit InvalidArgument(const std::string& msg) : std::invalid_argument(msg) {}
};

class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

class MissingPrerequisite : public std::runtime_error {
public:
    explicit MissingPrerequisite(const std::string& msg) : std::runtime_error(msg) {}
};

class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace angiodiff
