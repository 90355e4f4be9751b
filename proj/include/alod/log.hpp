#pragma once

#include <functional>
#include <string>

namespace alod {

using LogSink = std::function<void(const std::string&)>;

/// Replaces the warning sink (default: std::clog). Returns the previous sink.
LogSink set_warning_sink(LogSink sink);
void log_warning(const std::string& message);

}  // namespace alod
