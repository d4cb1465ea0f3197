#include "datamanip/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace datamanip {

namespace {

std::mutex g_mutex;
std::atomic<std::size_t> g_count{0};

WarningSink& sink() {
  static WarningSink s = [](const std::string& m) {
    std::cerr << "warning: " << m << '\n';
  };
  return s;
}

}  // namespace

void warn(const std::string& message) {
  ++g_count;
  std::lock_guard lock(g_mutex);
  if (sink()) sink()(message);
}

WarningSink set_warning_sink(WarningSink s) {
  std::lock_guard lock(g_mutex);
  WarningSink old = std::move(sink());
  sink() = std::move(s);
  return old;
}

std::size_t warning_count() { return g_count.load(); }

}  // namespace datamanip
