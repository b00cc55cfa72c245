// SPDX-License-Identifier: Apache-2.0

#include "unsuid/subprocess.hpp"

#include <cerrno>
#include <cstdlib>
#include <cstring>

#include <fcntl.h>
#include <sys/wait.h>
#include <unistd.h>

#include <fmt/format.h>

#include "unsuid/errors.hpp"
#include "unsuid/util.hpp"

namespace unsuid {

namespace {

std::string drain_fd(int fd) {
  std::string out;
  char buf[4096];
  for (;;) {
    ssize_t n = ::read(fd, buf, sizeof(buf));
    if (n < 0) {
      if (errno == EINTR)
        continue;
      break;
    }
    if (n == 0)
      break;
    out.append(buf, static_cast<size_t>(n));
  }
  return out;
}

struct Pipe {
  Fd rd, wr;
};

Pipe make_pipe() {
  int fds[2];
  if (::pipe2(fds, O_CLOEXEC) != 0)
    raise_errno(Errc::Io, "pipe2");
  return {Fd(fds[0]), Fd(fds[1])};
}

[[noreturn]] void exec_child(const std::vector<std::string> &argv,
                             const SpawnOptions &opts, int out_fd, int err_fd) {
  if (opts.pre_exec)
    opts.pre_exec();
  if (out_fd >= 0)
    ::dup2(out_fd, STDOUT_FILENO);
  if (err_fd >= 0)
    ::dup2(err_fd, STDERR_FILENO);

  std::vector<char *> cargv;
  cargv.reserve(argv.size() + 1);
  for (const auto &a : argv)
    cargv.push_back(const_cast<char *>(a.c_str()));
  cargv.push_back(nullptr);

  if (opts.env.empty()) {
    ::execvp(cargv[0], cargv.data());
  } else {
    std::vector<char *> cenv;
    cenv.reserve(opts.env.size() + 1);
    for (const auto &e : opts.env)
      cenv.push_back(const_cast<char *>(e.c_str()));
    cenv.push_back(nullptr);
    ::execvpe(cargv[0], cargv.data(), cenv.data());
  }
  int code = (errno == ENOENT) ? 127 : 126;
  fmt::print(stderr, "exec {}: {}\n", argv[0], std::strerror(errno));
  ::_exit(code);
}

} // namespace

pid_t spawn_command(const std::vector<std::string> &argv,
                    const SpawnOptions &opts) {
  if (argv.empty())
    raise(Errc::Io, "spawn with empty argv");
  pid_t pid = ::fork();
  if (pid < 0)
    raise_errno(Errc::Io, "fork");
  if (pid == 0)
    exec_child(argv, opts, -1, -1);
  return pid;
}

RunResult run_command(const std::vector<std::string> &argv,
                      const SpawnOptions &opts) {
  if (argv.empty())
    raise(Errc::Io, "run with empty argv");

  Pipe out_pipe, err_pipe;
  if (opts.capture_stdout)
    out_pipe = make_pipe();
  if (opts.capture_stderr)
    err_pipe = make_pipe();

  pid_t pid = ::fork();
  if (pid < 0)
    raise_errno(Errc::Io, "fork");
  if (pid == 0) {
    out_pipe.rd.reset();
    err_pipe.rd.reset();
    exec_child(argv, opts, out_pipe.wr.get(), err_pipe.wr.get());
  }

  out_pipe.wr.reset();
  err_pipe.wr.reset();

  RunResult result;
  if (out_pipe.rd.valid())
    result.out = drain_fd(out_pipe.rd.get());
  if (err_pipe.rd.valid())
    result.err = drain_fd(err_pipe.rd.get());

  RunResult waited = wait_result(pid);
  result.exit_code = waited.exit_code;
  result.term_signal = waited.term_signal;
  return result;
}

int wait_exit_code(pid_t pid) {
  RunResult r = wait_result(pid);
  if (r.term_signal != 0)
    return 128 + r.term_signal;
  return r.exit_code;
}

RunResult wait_result(pid_t pid) {
  int status = 0;
  for (;;) {
    if (::waitpid(pid, &status, 0) < 0) {
      if (errno == EINTR)
        continue;
      raise_errno(Errc::Io, fmt::format("waitpid {}", pid));
    }
    break;
  }
  RunResult r;
  if (WIFEXITED(status))
    r.exit_code = WEXITSTATUS(status);
  else if (WIFSIGNALED(status))
    r.term_signal = WTERMSIG(status);
  return r;
}

} // namespace unsuid
