// SPDX-License-Identifier: Apache-2.0
#include "vqpl/log.hpp"

#include <cstdlib>
#include <string_view>

namespace vqpl::log {

Level threshold() {
  static const Level level = [] {
    const char* env = std::getenv("VQPL_LOG");
    const std::string_view v = env == nullptr ? "" : env;
    if (v == "error") return Level::error;
    if (v == "info") return Level::info;
    if (v == "debug") return Level::debug;
    return Level::warn;
  }();
  return level;
}

}  // namespace vqpl::log
