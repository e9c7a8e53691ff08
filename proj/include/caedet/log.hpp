#pragma once

#include <functional>
#include <iostream>
#include <string>
#include <utility>

namespace caedet::log {

enum class Level { Info, Warning };

using Sink = std::function<void(Level, const std::string&)>;

inline Sink& sink() {
  static Sink s = [](Level level, const std::string& msg) {
    std::clog << (level == Level::Warning ? "warning: " : "") << msg << '\n';
  };
  return s;
}

/// Replaces the sink; returns the previous one so callers can restore it.
inline Sink set_sink(Sink s) { return std::exchange(sink(), std::move(s)); }

inline void info(const std::string& msg) { sink()(Level::Info, msg); }
inline void warn(const std::string& msg) { sink()(Level::Warning, msg); }

}  // namespace caedet::log
