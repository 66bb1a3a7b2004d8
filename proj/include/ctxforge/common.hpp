#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ctxforge {

enum class ErrorKind { Io, Parse, Validation, State };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg)
        : std::runtime_error(msg), kind_(kind) {}

    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) {
    throw Error(kind, msg);
}

// FNV-1a 64-bit. Used for embedding buckets and content digests.
constexpr uint64_t kFnvOffset = 14695981039346656037ULL;
constexpr uint64_t kFnvPrime = 1099511628211ULL;

inline uint64_t fnv1a64(std::string_view data, uint64_t seed = kFnvOffset) {
    uint64_t h = seed;
    for (unsigned char c : data) {
        h ^= static_cast<uint64_t>(c);
        h *= kFnvPrime;
    }
    return h;
}

std::string to_hex(uint64_t value);

// Leveled stderr logging gated by CTXFORGE_LOG=debug|info|warn|error
// (default warn), read once at first use.
enum class LogLevel { Debug = 0, Info = 1, Warn = 2, Error = 3 };

bool log_enabled(LogLevel level);
void log_line(LogLevel level, const std::string& msg);

inline double clamp01(double x) {
    if (x < 0.0) return 0.0;
    if (x > 1.0) return 1.0;
    return x;
}

// Canonical uniform draw in [0,1) from a raw 64-bit PRNG word. Both the
// engine and the test oracles sample through this so seeded choices match.
inline double unit_double(uint64_t word) {
    return static_cast<double>(word >> 11) * 0x1.0p-53;
}

}  // namespace ctxforge
