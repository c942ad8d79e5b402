#pragma once

#include <atomic>
#include <functional>
#include <string>

namespace cmota {

// Lightweight diagnostics channel. Degenerate numerical events (fully masked
// attention rows, covariance shrinkage) are counted so tests can assert on
// them, and forwarded to a warn hook for visibility.

struct Diagnostics {
  static std::atomic<uint64_t>& degenerate_softmax_rows() {
    static std::atomic<uint64_t> n{0};
    return n;
  }
  static std::atomic<uint64_t>& covariance_shrinkage_events() {
    static std::atomic<uint64_t> n{0};
    return n;
  }
  static void reset() {
    degenerate_softmax_rows() = 0;
    covariance_shrinkage_events() = 0;
  }
};

using WarnHook = std::function<void(const std::string&)>;

inline WarnHook& warn_hook() {
  static WarnHook hook;  // default: silent
  return hook;
}

inline void warn(const std::string& msg) {
  if (warn_hook()) warn_hook()(msg);
}

}  // namespace cmota
