// Copyright 2026 The tpd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace tpd {

// Contract-violation errors carry the failing expression and a message.
class CheckError : public std::runtime_error {
 public:
  explicit CheckError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {
inline void check_fail(const char* expr, const char* file, int line, const std::string& msg) {
  std::ostringstream os;
  os << "check failed: (" << expr << ") at " << file << ":" << line;
  if (!msg.empty()) os << " — " << msg;
  throw CheckError(os.str());
}
}  // namespace detail

#define TPD_CHECK(cond)                                                  \
  do {                                                                   \
    if (!(cond)) ::tpd::detail::check_fail(#cond, __FILE__, __LINE__, ""); \
  } while (0)

#define TPD_CHECK_MSG(cond, msg)                                           \
  do {                                                                     \
    if (!(cond)) {                                                         \
      std::ostringstream os_;                                              \
      os_ << msg;                                                          \
      ::tpd::detail::check_fail(#cond, __FILE__, __LINE__, os_.str());     \
    }                                                                      \
  } while (0)

}  // namespace tpd
