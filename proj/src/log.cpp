#include "asyncdiff/log.hpp"

#include <cstdlib>
#include <iostream>
#include <mutex>

namespace asyncdiff {

namespace {

LogLevel parse_level(const char* s) {
    if (!s) return LogLevel::Warn;
    std::string v(s);
    if (v == "debug") return LogLevel::Debug;
    if (v == "info") return LogLevel::Info;
    if (v == "warn") return LogLevel::Warn;
    if (v == "error") return LogLevel::Error;
    if (v == "off") return LogLevel::Off;
    return LogLevel::Warn;
}

std::mutex log_mu;

void emit(LogLevel lvl, const char* tag, const std::string& msg) {
    if (lvl < log_level()) return;
    std::lock_guard<std::mutex> lk(log_mu);
    std::cerr << "[asyncdiff " << tag << "] " << msg << "\n";
}

}  // namespace

LogLevel log_level() {
    static LogLevel lvl = parse_level(std::getenv("ASYNCDIFF_LOG"));
    return lvl;
}

void log_debug(const std::string& msg) { emit(LogLevel::Debug, "debug", msg); }
void log_info(const std::string& msg) { emit(LogLevel::Info, "info", msg); }
void log_warn(const std::string& msg) { emit(LogLevel::Warn, "warn", msg); }
void log_error(const std::string& msg) { emit(LogLevel::Error, "error", msg); }

}  // namespace asyncdiff
