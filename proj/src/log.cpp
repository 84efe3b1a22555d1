#include "t1map/log.hpp"

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <string>

namespace t1map::log {

namespace {

Level from_env() {
  const char *env = std::getenv("T1MAP_LOG");
  if (!env) {
    return Level::Warn;
  }
  const std::string v(env);
  if (v == "error") {
    return Level::Error;
  }
  if (v == "info") {
    return Level::Info;
  }
  if (v == "debug") {
    return Level::Debug;
  }
  return Level::Warn;
}

std::atomic<int> &level_storage() {
  static std::atomic<int> level{static_cast<int>(from_env())};
  return level;
}

constexpr const char *kNames[] = {"error", "warn", "info", "debug"};

} // namespace

Level threshold() { return static_cast<Level>(level_storage().load()); }

void set_threshold(Level level) { level_storage().store(static_cast<int>(level)); }

void write(Level level, std::string_view message) {
  if (static_cast<int>(level) > level_storage().load()) {
    return;
  }
  static std::mutex mu;
  std::lock_guard lock(mu);
  std::cerr << "[t1map " << kNames[static_cast<int>(level)] << "] " << message << '\n';
}

} // namespace t1map::log
