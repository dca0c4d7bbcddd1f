#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace g2v {

// Thrown for contract violations (bad shapes, empty batches, stepping a
// finished episode) and for I/O failures. Messages carry enough context to
// identify the offending call site.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {
inline void format_into(std::ostringstream&) {}

template <typename T, typename... Rest>
void format_into(std::ostringstream& os, const T& head, const Rest&... rest) {
    os << head;
    format_into(os, rest...);
}
}  // namespace detail

template <typename... Args>
std::string strcat_all(const Args&... args) {
    std::ostringstream os;
    detail::format_into(os, args...);
    return os.str();
}

template <typename... Args>
[[noreturn]] void fail(const Args&... args) {
    throw Error(strcat_all(args...));
}

template <typename... Args>
void require(bool cond, const Args&... args) {
    if (!cond) fail(args...);
}

}  // namespace g2v
