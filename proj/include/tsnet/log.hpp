#pragma once

#include <string_view>

namespace tsnet::log {

enum class Level { kDebug = 0, kInfo = 1, kWarning = 2, kError = 3 };

void set_level(Level level);
Level level();

void info(std::string_view message);
void warning(std::string_view message);
void error(std::string_view message);

/// Number of warnings emitted since process start. Tests use it to observe fallbacks.
long warning_count();

}  // namespace tsnet::log
