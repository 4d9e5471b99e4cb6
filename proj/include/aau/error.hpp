#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace aau {

// Exception carrying a short stable error code ("shape-mismatch", "bad-magic", ...)
// alongside a human-readable message. Callers that care about the failure mode
// match on code(), not on the message text.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& what)
        : std::runtime_error(code + ": " + what), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

[[noreturn]] inline void fail(const std::string& code, const std::string& what) {
    throw Error(code, what);
}

inline void require(bool cond, const std::string& code, const std::string& what) {
    if (!cond) fail(code, what);
}

} // namespace aau
