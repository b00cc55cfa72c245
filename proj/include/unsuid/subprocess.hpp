// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <sys/types.h>

namespace unsuid {

struct SpawnOptions {
  /// Runs in the child after fork, before exec.
  std::function<void()> pre_exec;
  /// Capture stderr into RunResult::err instead of inheriting it.
  bool capture_stderr = false;
  bool capture_stdout = false;
  /// Replacement environment; inherits when empty.
  std::vector<std::string> env;
};

struct RunResult {
  int exit_code = -1;      // -1 when killed by signal
  int term_signal = 0;     // nonzero when killed by signal
  std::string out;
  std::string err;

  bool ok() const { return exit_code == 0; }
};

/// Forks and execs argv[0] with the given arguments, waits for completion.
RunResult run_command(const std::vector<std::string> &argv,
                      const SpawnOptions &opts = {});

/// Forks and execs without waiting. Returns the child pid.
pid_t spawn_command(const std::vector<std::string> &argv,
                    const SpawnOptions &opts = {});

/// Waits for a pid; returns its exit code, or 128+signal when killed.
int wait_exit_code(pid_t pid);

/// Raw wait (exit code / term signal pair).
RunResult wait_result(pid_t pid);

} // namespace unsuid
