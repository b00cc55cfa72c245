// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>

namespace unsuid {

struct WindowSpec {
  std::string backing;
  uint64_t offset = 0;
  uint64_t size = 0;
  bool writable = false;
  std::string mountpoint;
};

inline constexpr char kWindowFileName[] = "part";

/// Pure I/O translation: window position -> backing position, with the
/// length clamped to the window end. Out-of-window positions clamp to 0.
std::pair<uint64_t, uint64_t> translate_io(uint64_t window_position,
                                           uint64_t length,
                                           const WindowSpec &spec);

class WindowHandle {
public:
  WindowHandle();
  WindowHandle(WindowHandle &&) noexcept;
  WindowHandle &operator=(WindowHandle &&) noexcept;
  WindowHandle(const WindowHandle &) = delete;
  WindowHandle &operator=(const WindowHandle &) = delete;
  ~WindowHandle();

  /// Path of the exposed file (mountpoint + "/part").
  std::string part_path() const;
  const WindowSpec &spec() const;

  /// Unmounts and stops the service; idempotent, callable from any thread.
  void shutdown();

private:
  friend WindowHandle serve_window(const WindowSpec &spec);
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Mounts a one-file FUSE filesystem at spec.mountpoint exposing bytes
/// [offset, offset+size) of the backing file as `part`.
WindowHandle serve_window(const WindowSpec &spec);

} // namespace unsuid
