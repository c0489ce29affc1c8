#pragma once

#include <functional>
#include <iostream>
#include <mutex>
#include <string>
#include <utility>

namespace hgmm {

using LogSink = std::function<void(const std::string&)>;

namespace detail {
inline std::mutex& log_mutex() {
    static std::mutex m;
    return m;
}
inline LogSink& log_sink() {
    static LogSink sink = [](const std::string& msg) { std::cerr << "[hgmm] warning: " << msg << '\n'; };
    return sink;
}
} // namespace detail

/// Replace the warning sink (pass an empty function to silence warnings). Returns the previous sink.
inline LogSink set_log_sink(LogSink sink) {
    std::lock_guard lock(detail::log_mutex());
    return std::exchange(detail::log_sink(), std::move(sink));
}

inline void log_warning(const std::string& msg) {
    std::lock_guard lock(detail::log_mutex());
    if (detail::log_sink()) detail::log_sink()(msg);
}

} // namespace hgmm
