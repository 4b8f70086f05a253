// logging.hpp
#pragma once

#include <cstdlib>
#include <stdexcept>
#include <string>

#include <spdlog/spdlog.h>

namespace genxfer {

/// Sets the global log level from GENXFER_LOG (error, warn, info, debug).
/// Unset means warn.
inline void init_logging_from_env() {
  const char* env = std::getenv("GENXFER_LOG");
  const std::string level = env ? env : "warn";
  if (level == "error") spdlog::set_level(spdlog::level::err);
  else if (level == "warn") spdlog::set_level(spdlog::level::warn);
  else if (level == "info") spdlog::set_level(spdlog::level::info);
  else if (level == "debug") spdlog::set_level(spdlog::level::debug);
  else throw std::invalid_argument("GENXFER_LOG must be one of error, warn, info, debug");
}

}  // namespace genxfer
