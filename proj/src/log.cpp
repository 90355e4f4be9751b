#include "alod/log.hpp"

#include <iostream>
#include <mutex>

namespace alod {

namespace {
std::mutex sink_mutex;
LogSink& sink() {
    static LogSink s = [](const std::string& m) { std::clog << "warning: " << m << '\n'; };
    return s;
}
}  // namespace

LogSink set_warning_sink(LogSink next) {
    std::lock_guard lock(sink_mutex);
    auto previous = std::move(sink());
    sink() = std::move(next);
    return previous;
}

void log_warning(const std::string& message) {
    std::lock_guard lock(sink_mutex);
    if (sink()) sink()(message);
}

}  // namespace alod
