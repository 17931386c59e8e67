#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <string_view>
#include <vector>

namespace stegolm {

// Default scalar for the operational pipeline. Checkpoints always store
// 32-bit floats; tests may instantiate the numeric core with double.
using Real = float;

using TokenId = int32_t;
using TokenIds = std::vector<TokenId>;

// Bumped whenever the checkpoint or report layout changes. Loaders refuse
// mismatched versions instead of migrating.
inline constexpr int kCheckpointFormatVersion = 1;
inline constexpr int kReportSchemaVersion = 1;

enum class LogLevel { quiet = 0, info = 1, debug = 2 };

// Verbosity comes from STEGOLM_LOG (quiet|info|debug); default info.
inline LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("STEGOLM_LOG");
    if (!env) return LogLevel::info;
    std::string_view v{env};
    if (v == "quiet") return LogLevel::quiet;
    if (v == "debug") return LogLevel::debug;
    return LogLevel::info;
  }();
  return level;
}

// Progress goes to stderr so report files stay byte-stable.
inline void log_info(const std::string& msg) {
  if (log_level() >= LogLevel::info) std::fputs((msg + "\n").c_str(), stderr);
}

inline void log_debug(const std::string& msg) {
  if (log_level() >= LogLevel::debug) std::fputs((msg + "\n").c_str(), stderr);
}

}  // namespace stegolm
