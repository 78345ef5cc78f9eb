#pragma once

#include <stdexcept>
#include <string>

namespace promptseg {

// Bad input data: malformed manifests, conflicting dictionaries, shape
// mismatches. The CLI maps these to exit code 2.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Unparseable file content; carries the offending line when known.
class ParseError : public std::runtime_error {
public:
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem / codec failures. Exit code 1.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace promptseg
