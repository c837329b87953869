#pragma once

#include <iostream>
#include <mutex>
#include <string_view>

namespace nodule::log {

enum class Level { debug = 0, info = 1, warn = 2, error = 3, off = 4 };

inline Level& threshold() {
    static Level level = Level::warn;
    return level;
}

inline std::mutex& sink_mutex() {
    static std::mutex m;
    return m;
}

inline void write(Level level, std::string_view msg) {
    if (level < threshold()) {
        return;
    }
    static constexpr const char* kTags[] = {"debug", "info", "warn", "error"};
    std::lock_guard lock(sink_mutex());
    std::cerr << "[" << kTags[static_cast<int>(level)] << "] " << msg << '\n';
}

inline void debug(std::string_view msg) { write(Level::debug, msg); }
inline void info(std::string_view msg) { write(Level::info, msg); }
inline void warn(std::string_view msg) { write(Level::warn, msg); }
inline void error(std::string_view msg) { write(Level::error, msg); }

}  // namespace nodule::log
