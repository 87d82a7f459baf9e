// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iostream>
#include <sstream>
#include <string_view>

namespace vqpl::log {

enum class Level { error = 0, warn = 1, info = 2, debug = 3 };

/// Verbosity from the VQPL_LOG environment variable (error|warn|info|debug),
/// read once. Defaults to warn.
Level threshold();

template <class... Args>
void write(Level level, std::string_view tag, const Args&... args) {
  if (static_cast<int>(level) > static_cast<int>(threshold())) return;
  std::ostringstream os;
  os << '[' << tag << "] ";
  (os << ... << args);
  os << '\n';
  std::cerr << os.str();
}

template <class... Args>
void warn(const Args&... args) { write(Level::warn, "warn", args...); }
template <class... Args>
void info(const Args&... args) { write(Level::info, "info", args...); }
template <class... Args>
void debug(const Args&... args) { write(Level::debug, "debug", args...); }

}  // namespace vqpl::log
