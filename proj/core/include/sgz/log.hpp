#pragma once

#include <functional>
#include <string>
#include <string_view>

namespace sgz::log {

enum class Level { Info, Warning };

using Sink = std::function<void(Level, std::string_view)>;

// Replaces the process-wide sink; the default writes warnings to stderr and
// drops info messages. Returns the previous sink.
Sink set_sink(Sink sink);

void info(std::string_view message);
void warn(std::string_view message);

}  // namespace sgz::log
