#include "ctxforge/common.hpp"

#include <array>
#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace ctxforge {

std::string to_hex(uint64_t value) {
    static constexpr char digits[] = "0123456789abcdef";
    std::array<char, 16> buf{};
    for (int i = 15; i >= 0; --i) {
        buf[static_cast<size_t>(i)] = digits[value & 0xF];
        value >>= 4;
    }
    return std::string(buf.data(), buf.size());
}

namespace {

LogLevel active_log_level() {
    static const LogLevel level = [] {
        const char* env = std::getenv("CTXFORGE_LOG");
        if (env == nullptr) return LogLevel::Warn;
        if (std::strcmp(env, "debug") == 0) return LogLevel::Debug;
        if (std::strcmp(env, "info") == 0) return LogLevel::Info;
        if (std::strcmp(env, "error") == 0) return LogLevel::Error;
        return LogLevel::Warn;
    }();
    return level;
}

const char* level_tag(LogLevel level) {
    switch (level) {
        case LogLevel::Debug: return "debug";
        case LogLevel::Info: return "info";
        case LogLevel::Warn: return "warn";
        case LogLevel::Error: return "error";
    }
    return "?";
}

}  // namespace

bool log_enabled(LogLevel level) {
    return static_cast<int>(level) >= static_cast<int>(active_log_level());
}

void log_line(LogLevel level, const std::string& msg) {
    if (!log_enabled(level)) return;
    std::fprintf(stderr, "[%s] %s\n", level_tag(level), msg.c_str());
}

}  // namespace ctxforge
