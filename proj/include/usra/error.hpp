#pragma once

#include <stdexcept>
#include <string>

namespace usra {

enum class ErrorKind {
    logic,             // contract violation inside the library
    config,            // bad config file / flag value
    filesystem,        // unwritable or missing path
    missing_artifact,  // required checkpoint or input file absent
    corrupt_artifact,  // checkpoint fails integrity checks
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void raise(ErrorKind kind, const std::string& msg) { throw Error(kind, msg); }

}  // namespace usra
