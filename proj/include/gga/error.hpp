#pragma once

#include <stdexcept>
#include <string>

namespace gga {

enum class ErrorKind { Usage, Data, Numerical };

// Every failure raised by the library carries a kind so the CLI can map it
// onto an exit code (usage 1, data 2, numerical 3).
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

inline Error usage_error(const std::string& what) { return {ErrorKind::Usage, what}; }
inline Error data_error(const std::string& what) { return {ErrorKind::Data, what}; }
inline Error numerical_error(const std::string& what) { return {ErrorKind::Numerical, what}; }

}  // namespace gga
