// SPDX-License-Identifier: Apache-2.0

#include "unsuid/nsexec.hpp"

#include <cerrno>
#include <cstdio>
#include <cstring>

#include <fcntl.h>
#include <sched.h>
#include <sys/mount.h>
#include <sys/prctl.h>
#include <sys/syscall.h>
#include <sys/wait.h>
#include <unistd.h>

#include "unsuid/errors.hpp"
#include "unsuid/subprocess.hpp"
#include "unsuid/util.hpp"

namespace unsuid {

namespace {

bool needs_helpers(const std::vector<IdMapEntry> &map) {
  if (map.size() > 1)
    return true;
  for (const auto &entry : map)
    if (entry.count > 1)
      return true;
  return false;
}

std::string map_text(const std::vector<IdMapEntry> &map) {
  std::string text;
  for (const auto &entry : map) {
    text += std::to_string(entry.inside) + " " + std::to_string(entry.outside) +
            " " + std::to_string(entry.count) + "\n";
  }
  return text;
}

void write_proc_file(const std::string &path, const std::string &content) {
  int fd = ::open(path.c_str(), O_WRONLY | O_CLOEXEC);
  if (fd < 0)
    raise_errno(Errc::IdMapWriteFailed, "open " + path);
  ssize_t n = ::write(fd, content.data(), content.size());
  int saved = errno;
  ::close(fd);
  if (n != static_cast<ssize_t>(content.size())) {
    errno = saved;
    raise_errno(Errc::IdMapWriteFailed, "write " + path);
  }
}

std::vector<std::string> idmap_argv(const std::string &helper, pid_t pid,
                                    const std::vector<IdMapEntry> &map) {
  std::vector<std::string> argv = {helper, std::to_string(pid)};
  for (const auto &entry : map) {
    argv.push_back(std::to_string(entry.inside));
    argv.push_back(std::to_string(entry.outside));
    argv.push_back(std::to_string(entry.count));
  }
  return argv;
}

void unshare_user_mount() {
  if (::unshare(CLONE_NEWUSER | CLONE_NEWNS) != 0)
    raise_errno(Errc::UsernsDenied,
                "cannot create user+mount namespaces (unshare)");
}

/// Our mounts must never propagate back to the host namespace.
void privatize_mounts() {
  if (::mount(nullptr, "/", nullptr, MS_REC | MS_PRIVATE, nullptr) != 0)
    raise_errno(Errc::MountFailed, "cannot make / mount-private");
}

} // namespace

NamespaceSetup namespace_setup_for(const IdentityPlan &identity,
                                   const HostProfile &profile) {
  if (identity.mode == IdentityMode::FakerootCmdOnly ||
      identity.requires_setuid_host)
    raise(Errc::ModeRequiresSetuidHost,
          "identity mode " + std::string(to_string(identity.mode)) +
              " needs a setuid-root installation, which this runtime never "
              "uses");

  NamespaceSetup setup;
  setup.uid_map_entries = identity.uid_map_entries;
  setup.gid_map_entries = identity.gid_map_entries;
  setup.use_newidmap_helpers = needs_helpers(identity.uid_map_entries) ||
                               needs_helpers(identity.gid_map_entries);
  setup.deny_setgroups = !setup.use_newidmap_helpers;
  if (setup.use_newidmap_helpers) {
    auto uid_helper = profile.helper("newuidmap");
    auto gid_helper = profile.helper("newgidmap");
    if (!uid_helper || !gid_helper)
      raise(Errc::ModeRequiresSetuidHost,
            "multi-id mapping needs newuidmap/newgidmap, which were not "
            "found");
    setup.newuidmap_path = *uid_helper;
    setup.newgidmap_path = *gid_helper;
  }
  return setup;
}

void enter_namespaces(const NamespaceSetup &setup) {
  if (setup.use_newidmap_helpers) {
    pid_t self = ::getpid();
    int ready[2];
    int done[2];
    if (::pipe2(ready, O_CLOEXEC) != 0 || ::pipe2(done, O_CLOEXEC) != 0)
      raise_errno(Errc::UsernsDenied, "pipe for id-map helper runner");

    // The runner is forked before unshare so it keeps the original
    // namespace and credentials the setuid helpers expect.
    pid_t runner = ::fork();
    if (runner < 0)
      raise_errno(Errc::UsernsDenied, "fork id-map helper runner");
    if (runner == 0) {
      ::close(ready[1]);
      ::close(done[0]);
      char go = 0;
      if (::read(ready[0], &go, 1) != 1)
        ::_exit(1); // parent died before unsharing
      auto report = [&](const std::string &text) {
        ssize_t rc = ::write(done[1], text.data(), text.size());
        (void)rc;
      };
      SpawnOptions capture;
      capture.capture_stderr = true;
      auto uid_result = run_command(
          idmap_argv(setup.newuidmap_path, self, setup.uid_map_entries),
          capture);
      if (!uid_result.ok()) {
        report(std::string(trim(uid_result.err)).empty()
                   ? "newuidmap failed"
                   : "newuidmap: " + std::string(trim(uid_result.err)));
        ::_exit(1);
      }
      auto gid_result = run_command(
          idmap_argv(setup.newgidmap_path, self, setup.gid_map_entries),
          capture);
      if (!gid_result.ok()) {
        report(std::string(trim(gid_result.err)).empty()
                   ? "newgidmap failed"
                   : "newgidmap: " + std::string(trim(gid_result.err)));
        ::_exit(1);
      }
      ::_exit(0);
    }
    ::close(ready[0]);
    ::close(done[1]);

    try {
      unshare_user_mount();
    } catch (...) {
      ::close(ready[1]); // EOF tells the runner to give up
      ::close(done[0]);
      int status = 0;
      ::waitpid(runner, &status, 0);
      throw;
    }
    char go = 1;
    if (::write(ready[1], &go, 1) != 1) {
      ::close(ready[1]);
      ::close(done[0]);
      ::waitpid(runner, nullptr, 0);
      raise(Errc::HelperIdMapFailed, "id-map helper runner vanished");
    }
    ::close(ready[1]);

    std::string err_text;
    char buf[512];
    ssize_t n;
    while ((n = ::read(done[0], buf, sizeof buf)) > 0)
      err_text.append(buf, static_cast<size_t>(n));
    ::close(done[0]);
    int status = 0;
    ::waitpid(runner, &status, 0);
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0)
      raise(Errc::HelperIdMapFailed,
            err_text.empty() ? "newuidmap/newgidmap failed" : err_text);
  } else {
    unshare_user_mount();
    // Kernel-required order: setgroups deny, then gid map, then uid map.
    if (setup.deny_setgroups)
      write_proc_file("/proc/self/setgroups", "deny");
    write_proc_file("/proc/self/gid_map", map_text(setup.gid_map_entries));
    write_proc_file("/proc/self/uid_map", map_text(setup.uid_map_entries));
  }

  privatize_mounts();
  if (setup.no_new_privs)
    apply_no_new_privs();
}

void apply_no_new_privs() {
  if (::prctl(PR_SET_NO_NEW_PRIVS, 1, 0, 0, 0) != 0)
    raise_errno(Errc::PrctlFailed, "prctl(PR_SET_NO_NEW_PRIVS)");
}

void pivot_into(const std::string &root, std::vector<std::string> *warnings) {
  // pivot-root needs the new root to be a mount point.
  if (::mount(root.c_str(), root.c_str(), nullptr, MS_BIND | MS_REC,
              nullptr) != 0)
    raise_errno(Errc::PivotFailed, "bind " + root + " onto itself");
  if (::chdir(root.c_str()) != 0)
    raise_errno(Errc::PivotFailed, "chdir " + root);

  // Stack the old root on top of the new one, then drop it.
  if (::syscall(SYS_pivot_root, ".", ".") == 0) {
    if (::umount2(".", MNT_DETACH) != 0)
      raise_errno(Errc::PivotFailed, "detach old root");
    if (::chdir("/") != 0)
      raise_errno(Errc::PivotFailed, "chdir /");
    return;
  }
  if (errno != EINVAL && errno != ENOSYS)
    raise_errno(Errc::PivotFailed, "pivot-root into " + root);

  if (::chroot(".") != 0)
    raise_errno(Errc::PivotFailed, "chroot fallback into " + root);
  if (::chdir("/") != 0)
    raise_errno(Errc::PivotFailed, "chdir / after chroot");
  if (warnings != nullptr)
    warnings->push_back("pivot-root unsupported on the scratch filesystem; "
                        "fell back to chroot entry");
}

std::vector<std::string> container_environment(
    const std::map<std::string, std::string> &extra) {
  std::map<std::string, std::string> env;
  env["PATH"] = getenv_or(
      "PATH", "/usr/local/sbin:/usr/local/bin:/usr/sbin:/usr/bin:/sbin:/bin");
  for (const char *name : {"HOME", "TERM"}) {
    const char *value = ::getenv(name);
    if (value != nullptr)
      env[name] = value;
  }
  for (const auto &[name, value] : extra)
    env[name] = value;

  std::vector<std::string> out;
  out.reserve(env.size());
  for (const auto &[name, value] : env)
    out.push_back(name + "=" + value);
  return out;
}

void exec_in_container(const ExecSpec &spec) {
  if (spec.argv.empty())
    raise(Errc::ExecFailed, "empty command");
  std::vector<std::string> argv;
  if (spec.fakeroot_wrap.has_value())
    argv.push_back(*spec.fakeroot_wrap);
  argv.insert(argv.end(), spec.argv.begin(), spec.argv.end());

  auto env = container_environment(spec.env);
  std::string path_list = "/usr/local/sbin:/usr/local/bin:/usr/sbin:/usr/bin:"
                          "/sbin:/bin";
  for (const auto &entry : env)
    if (starts_with(entry, "PATH="))
      path_list = entry.substr(5);

  if (!spec.working_dir.empty() && ::chdir(spec.working_dir.c_str()) != 0)
    raise_errno(Errc::ExecFailed, "chdir " + spec.working_dir);

  std::vector<char *> cargv;
  for (const auto &arg : argv)
    cargv.push_back(const_cast<char *>(arg.c_str()));
  cargv.push_back(nullptr);
  std::vector<char *> cenv;
  for (const auto &entry : env)
    cenv.push_back(const_cast<char *>(entry.c_str()));
  cenv.push_back(nullptr);

  // Manual PATH search so the not-found convention is exact.
  int exec_errno = ENOENT;
  if (argv[0].find('/') != std::string::npos) {
    ::execve(argv[0].c_str(), cargv.data(), cenv.data());
    exec_errno = errno;
  } else {
    for (const auto &dir : split(path_list, ':')) {
      if (dir.empty())
        continue;
      std::string candidate = dir + "/" + argv[0];
      ::execve(candidate.c_str(), cargv.data(), cenv.data());
      if (errno != ENOENT && errno != ENOTDIR)
        exec_errno = errno;
    }
  }
  if (exec_errno == ENOENT || exec_errno == ENOTDIR) {
    std::fprintf(stderr, "unsuid: %s: command not found\n",
                 argv[0].c_str());
    ::_exit(127);
  }
  errno = exec_errno;
  raise_errno(Errc::ExecFailed, "exec " + argv[0]);
}

} // namespace unsuid
