// SPDX-License-Identifier: Apache-2.0

#include "unsuid/mounter.hpp"

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <climits>
#include <cstring>
#include <map>
#include <set>
#include <thread>

#include <dirent.h>
#include <fcntl.h>
#include <linux/capability.h>
#include <signal.h>
#include <sys/mount.h>
#include <sys/prctl.h>
#include <sys/stat.h>
#include <sys/syscall.h>
#include <sys/wait.h>
#include <unistd.h>

#include "unsuid/errors.hpp"
#include "unsuid/hostprobe.hpp"
#include "unsuid/nsexec.hpp"
#include "unsuid/subprocess.hpp"
#include "unsuid/util.hpp"

namespace unsuid {

namespace {

std::string join_image_path(const std::string &dir, const std::string &name) {
  return dir.empty() ? name : dir + "/" + name;
}

std::string parent_of(const std::string &path) {
  auto pos = path.find_last_of('/');
  if (pos == std::string::npos || pos == 0)
    return "/";
  return path.substr(0, pos);
}

void make_file(const std::string &path) {
  make_dirs(parent_of(path));
  int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_CLOEXEC, 0644);
  if (fd < 0)
    raise_errno(Errc::Io, "create " + path);
  ::close(fd);
}

// Destination tree built from bind and standard-mount targets.
struct DestNode {
  std::map<std::string, DestNode> children;
  const UnderlayBind *bind = nullptr;
  bool standard_target = false;
};

void insert_destination(DestNode &root, const std::string &destination,
                        const UnderlayBind *bind) {
  auto components = path_components(destination);
  if (destination.empty() || destination[0] != '/' || components.empty())
    raise(Errc::BindDestinationConflict,
          "destination must be absolute and nonempty: " + destination);
  DestNode *node = &root;
  for (size_t i = 0; i < components.size(); ++i) {
    if (node->bind != nullptr)
      raise(Errc::BindDestinationConflict,
            "destination " + destination + " is nested inside another bind");
    node = &node->children[components[i]];
  }
  if (bind != nullptr) {
    if (node->bind != nullptr || node->standard_target ||
        !node->children.empty())
      raise(Errc::BindDestinationConflict,
            "duplicate or overlapping destination: " + destination);
    node->bind = bind;
  } else {
    if (node->bind != nullptr)
      raise(Errc::BindDestinationConflict,
            "standard mount target shadowed by a bind: " + destination);
    node->standard_target = true;
  }
}

void emit_level(const std::string &image_dir, const std::string &dest_prefix,
                const DestNode &node,
                const std::function<UnderlayProbe(const std::string &)> &probe,
                std::vector<UnderlayAction> &out) {
  UnderlayProbe info = probe(image_dir);
  if (info.type == UnderlayProbe::Type::File)
    raise(Errc::DestinationInsideFile,
          "bind destination descends through image file /" + image_dir);

  std::vector<std::string> names = info.children;
  std::sort(names.begin(), names.end());
  for (const auto &name : names) {
    if (node.children.contains(name))
      continue;
    out.push_back({UnderlayAction::Kind::BindFromImage,
                   join_image_path(image_dir, name),
                   dest_prefix + "/" + name, false});
  }
  for (const auto &[name, child] : node.children) {
    std::string destination = dest_prefix + "/" + name;
    if (child.bind != nullptr) {
      out.push_back({child.bind->source_is_dir ? UnderlayAction::Kind::MakeDir
                                               : UnderlayAction::Kind::MakeFile,
                     "", destination, false});
      out.push_back({UnderlayAction::Kind::BindFromHost, child.bind->source,
                     destination, child.bind->readonly});
    } else if (child.children.empty()) {
      out.push_back({UnderlayAction::Kind::MakeDir, "", destination, false});
    } else {
      out.push_back({UnderlayAction::Kind::MakeDir, "", destination, false});
      emit_level(join_image_path(image_dir, name), destination, child, probe,
                 out);
    }
  }
}

std::string mount_table_escape(const std::string &path) {
  std::string out;
  for (char c : path) {
    switch (c) {
    case ' ':
      out += "\\040";
      break;
    case '\t':
      out += "\\011";
      break;
    case '\n':
      out += "\\012";
      break;
    case '\\':
      out += "\\134";
      break;
    default:
      out += c;
    }
  }
  return out;
}

std::string exit_description(int status) {
  if (WIFEXITED(status))
    return "with status " + std::to_string(WEXITSTATUS(status));
  if (WIFSIGNALED(status))
    return "on signal " + std::to_string(WTERMSIG(status));
  return "abnormally";
}

std::string consume_stderr_file(HelperProcess &helper) {
  if (helper.stderr_path.empty())
    return {};
  std::string text;
  if (auto content = slurp_file_if_exists(helper.stderr_path))
    text = std::string(trim(*content));
  ::unlink(helper.stderr_path.c_str());
  helper.stderr_path.clear();
  return text;
}

void kill_and_reap(HelperProcess &helper, int sig) {
  if (helper.pid <= 0)
    return;
  ::kill(helper.pid, sig);
  int status = 0;
  ::waitpid(helper.pid, &status, 0);
  helper.pid = -1;
  helper.state = HelperProcess::State::Exited;
}

// Exec strips the namespace capabilities a non-zero uid holds, which
// would leave the fuse helpers unable to mount even though this process
// owns the namespace. Carrying CAP_SYS_ADMIN across exec as an ambient
// capability keeps them working; it confers nothing outside the
// namespace. Best effort: without the capability the raise just fails.
void raise_ambient_sys_admin() {
  __user_cap_header_struct hdr{};
  hdr.version = _LINUX_CAPABILITY_VERSION_3;
  hdr.pid = 0;
  __user_cap_data_struct data[2]{};
  if (::syscall(SYS_capget, &hdr, data) != 0)
    return;
  data[0].inheritable |= 1u << CAP_SYS_ADMIN;
  if (::syscall(SYS_capset, &hdr, data) != 0)
    return;
  ::prctl(PR_CAP_AMBIENT, PR_CAP_AMBIENT_RAISE, CAP_SYS_ADMIN, 0, 0);
}

HelperProcess spawn_helper(const std::string &name,
                           const std::vector<std::string> &args,
                           const std::string &mountpoint) {
  auto path = find_helper(name);
  if (!path)
    raise(Errc::HelperMissing, "helper not found in search path: " + name);

  HelperProcess helper;
  helper.helper = name;
  helper.mountpoint = mountpoint;

  char stderr_template[] = "/tmp/unsuid-helper-XXXXXX";
  int errfd = ::mkstemp(stderr_template);
  if (errfd >= 0)
    helper.stderr_path = stderr_template;

  std::vector<std::string> argv;
  argv.push_back(*path);
  argv.insert(argv.end(), args.begin(), args.end());
  SpawnOptions opts;
  opts.pre_exec = [errfd] {
    raise_ambient_sys_admin();
    if (errfd >= 0) {
      ::dup2(errfd, 2);
      ::close(errfd);
    }
  };
  helper.pid = spawn_command(argv, opts);
  if (errfd >= 0)
    ::close(errfd);
  return helper;
}

std::vector<std::string> fuse2fs_args(const std::string &source,
                                      const std::string &target,
                                      bool writable) {
  std::vector<std::string> args = {source, target, "-o", "fakeroot"};
  if (!writable) {
    args.push_back("-o");
    args.push_back("ro");
  }
  return args;
}

} // namespace

std::string_view to_string(UnderlayAction::Kind kind) {
  switch (kind) {
  case UnderlayAction::Kind::BindFromImage:
    return "BindFromImage";
  case UnderlayAction::Kind::BindFromHost:
    return "BindFromHost";
  case UnderlayAction::Kind::MakeDir:
    return "MakeDir";
  case UnderlayAction::Kind::MakeFile:
    return "MakeFile";
  }
  return "?";
}

std::vector<UnderlayAction> compose_underlay(
    const std::function<UnderlayProbe(const std::string &)> &probe_image,
    const std::vector<UnderlayBind> &binds,
    const std::vector<std::string> &standard_targets) {
  DestNode root;
  for (const auto &bind : binds)
    insert_destination(root, bind.destination, &bind);
  for (const auto &target : standard_targets)
    insert_destination(root, target, nullptr);

  std::vector<UnderlayAction> actions;
  emit_level("", "", root, probe_image, actions);
  return actions;
}

std::function<UnderlayProbe(const std::string &)>
directory_probe(const std::string &image_root) {
  return [image_root](const std::string &relative) -> UnderlayProbe {
    std::string full =
        relative.empty() ? image_root : image_root + "/" + relative;
    struct stat st{};
    if (::lstat(full.c_str(), &st) != 0)
      return {UnderlayProbe::Type::Missing, {}};
    if (!S_ISDIR(st.st_mode))
      return {UnderlayProbe::Type::File, {}};
    UnderlayProbe probe{UnderlayProbe::Type::Directory, {}};
    DIR *dir = ::opendir(full.c_str());
    if (dir == nullptr)
      raise_errno(Errc::Io, "opendir " + full);
    while (struct dirent *entry = ::readdir(dir)) {
      std::string name = entry->d_name;
      if (name != "." && name != "..")
        probe.children.push_back(name);
    }
    ::closedir(dir);
    std::sort(probe.children.begin(), probe.children.end());
    return probe;
  };
}

bool is_mount_point(const std::string &target) {
  std::string normalized = target;
  while (normalized.size() > 1 && normalized.back() == '/')
    normalized.pop_back();
  std::string escaped = mount_table_escape(normalized);

  std::string table = slurp_file("/proc/self/mounts");
  for (auto line : split(table, '\n')) {
    auto fields = split(line, ' ');
    if (fields.size() >= 2 && fields[1] == escaped)
      return true;
  }
  return false;
}

void wait_until_mounted(HelperProcess &helper, const std::string &target) {
  using namespace std::chrono;
  const auto deadline = steady_clock::now() + seconds(10);
  auto delay = microseconds(1000);

  for (;;) {
    if (is_mount_point(target)) {
      helper.state = HelperProcess::State::Serving;
      return;
    }
    int status = 0;
    pid_t reaped = ::waitpid(helper.pid, &status, WNOHANG);
    if (reaped == helper.pid) {
      helper.pid = -1;
      helper.state = HelperProcess::State::Exited;
      if (is_mount_point(target)) { // mounted just before exiting
        helper.state = HelperProcess::State::Serving;
        return;
      }
      std::string diag = consume_stderr_file(helper);
      std::string what = helper.helper + " exited " +
                         exit_description(status) + " before mounting " +
                         target;
      if (!diag.empty())
        what += ": " + diag;
      raise(Errc::HelperFailed, what);
    }
    if (steady_clock::now() >= deadline) {
      kill_and_reap(helper, SIGKILL);
      consume_stderr_file(helper);
      raise(Errc::MountTimeout,
            helper.helper + " did not mount " + target + " within 10 s");
    }
    std::this_thread::sleep_for(delay);
    delay = std::min(delay * 2, microseconds(200000));
  }
}

HelperProcess mount_squash_partition(const std::string &image,
                                     const PartitionDescriptor &part,
                                     const std::string &target) {
  if (part.kind != PartitionKind::Squashfs)
    raise(Errc::InvalidPartition, "not a squashfs partition");
  make_dirs(target);
  auto helper = spawn_helper(
      "squashfuse",
      {"-f", "-o", "offset=" + std::to_string(part.offset), image, target},
      target);
  try {
    wait_until_mounted(helper, target);
  } catch (...) {
    kill_and_reap(helper, SIGKILL);
    throw;
  }
  return helper;
}

std::pair<WindowHandle, HelperProcess>
mount_ext_partition(const std::string &image, const PartitionDescriptor &part,
                    const std::string &target, bool writable) {
  if (part.kind != PartitionKind::Extfs)
    raise(Errc::InvalidPartition, "not an ext partition");
  make_dirs(target);
  std::string window_mount = target + ".win";
  make_dirs(window_mount);

  WindowHandle window = serve_window(
      {image, part.offset, part.size, writable, window_mount});
  auto helper = spawn_helper(
      "fuse2fs", fuse2fs_args(window.part_path(), target, writable), target);
  try {
    wait_until_mounted(helper, target);
  } catch (...) {
    kill_and_reap(helper, SIGKILL);
    window.shutdown();
    throw;
  }
  return {std::move(window), std::move(helper)};
}

std::optional<HelperProcess>
mount_overlay(RootStrategyKind strategy,
              const std::vector<std::string> &lowerdirs,
              const std::string &upperdir, const std::string &workdir,
              const std::string &target) {
  if (strategy == RootStrategyKind::ReadOnlyUnderlay)
    raise(Errc::InvalidRequest, "underlay strategy has no overlay mount");
  if (lowerdirs.empty())
    raise(Errc::InvalidRequest, "overlay needs at least one lower layer");

  std::string options = "lowerdir=";
  for (size_t i = 0; i < lowerdirs.size(); ++i) {
    if (i > 0)
      options += ":";
    options += lowerdirs[i];
  }
  if (!upperdir.empty()) {
    make_dirs(upperdir);
    make_dirs(workdir);
    options += ",upperdir=" + upperdir + ",workdir=" + workdir;
  }
  make_dirs(target);

  if (strategy == RootStrategyKind::KernelOverlay) {
    if (::mount("overlay", target.c_str(), "overlay", 0, options.c_str()) != 0)
      raise_errno(Errc::OverlayRejectedByKernel,
                  "kernel refused the overlay mount at " + target +
                      "; re-run probing to confirm unprivileged overlay "
                      "support");
    return std::nullopt;
  }

  auto helper =
      spawn_helper("fuse-overlayfs", {"-f", "-o", options, target}, target);
  try {
    wait_until_mounted(helper, target);
  } catch (...) {
    kill_and_reap(helper, SIGKILL);
    throw;
  }
  return helper;
}

MountExecutor::MountExecutor() = default;

MountExecutor::~MountExecutor() {
  try {
    teardown();
  } catch (...) {
  }
}

void MountExecutor::execute(const MountPlan &plan, bool pivot) {
  bool overlay_present = false;
  for (const auto &step : plan.steps) {
    if (const auto *standard = std::get_if<MountStandard>(&step)) {
      standard_targets_.push_back(standard->target);
    } else if (std::holds_alternative<MountKernelOverlay>(step) ||
               std::holds_alternative<MountFuseOverlay>(step)) {
      overlay_present = true;
      if (const auto *kernel = std::get_if<MountKernelOverlay>(&step))
        root_ = kernel->target;
      else
        root_ = std::get<MountFuseOverlay>(step).target;
    } else if (const auto *squash = std::get_if<MountSquashPartition>(&step)) {
      if (image_root_.empty())
        image_root_ = squash->target;
    } else if (const auto *ext = std::get_if<MountExtPartition>(&step)) {
      if (image_root_.empty())
        image_root_ = ext->target;
    }
  }
  for (const auto &step : plan.steps)
    if (const auto *p = std::get_if<PivotIntoRoot>(&step))
      root_ = p->root;
  if (root_.empty())
    root_ = scratch::kRoot;
  underlay_mode_ = !overlay_present;

  for (const auto &step : plan.steps) {
    if (const auto *p = std::get_if<PivotIntoRoot>(&step)) {
      if (!binds_flushed_)
        flush_binds();
      if (pivot)
        pivot_into(p->root, &messages_);
      continue;
    }
    if (std::holds_alternative<MountStandard>(step) && !binds_flushed_)
      flush_binds();
    execute_step(step);
  }
  if (!binds_flushed_)
    flush_binds();
}

void MountExecutor::execute_step(const MountStep &step) {
  if (const auto *scratch_root = std::get_if<MakeScratchRoot>(&step)) {
    make_dirs(scratch_root->path);
    if (::mount("tmpfs", scratch_root->path.c_str(), "tmpfs", 0,
                "mode=0755") != 0)
      raise_errno(Errc::MountFailed, "tmpfs on " + scratch_root->path);
    record_mount(scratch_root->path);
    make_dirs(root_);
  } else if (const auto *squash = std::get_if<MountSquashPartition>(&step)) {
    helpers_.push_back(mount_squash_partition(
        squash->image,
        {PartitionKind::Squashfs, PartitionRole::Rootfs, squash->offset,
         squash->size},
        squash->target));
    record_mount(squash->target);
  } else if (const auto *window = std::get_if<ServeWindowFile>(&step)) {
    make_dirs(window->mountpoint);
    windows_.push_back(serve_window({window->backing, window->offset,
                                     window->size, window->writable,
                                     window->mountpoint}));
  } else if (const auto *ext = std::get_if<MountExtPartition>(&step)) {
    make_dirs(ext->target);
    auto helper = spawn_helper(
        "fuse2fs", fuse2fs_args(ext->source, ext->target, ext->writable),
        ext->target);
    try {
      wait_until_mounted(helper, ext->target);
    } catch (...) {
      kill_and_reap(helper, SIGKILL);
      throw;
    }
    helpers_.push_back(std::move(helper));
    record_mount(ext->target);
  } else if (const auto *kernel = std::get_if<MountKernelOverlay>(&step)) {
    mount_overlay(RootStrategyKind::KernelOverlay, kernel->lowerdirs,
                  kernel->upperdir, kernel->workdir, kernel->target);
    record_mount(kernel->target);
  } else if (const auto *fuse = std::get_if<MountFuseOverlay>(&step)) {
    auto helper =
        mount_overlay(RootStrategyKind::FuseOverlay, fuse->lowerdirs,
                      fuse->upperdir, fuse->workdir, fuse->target);
    if (helper.has_value())
      helpers_.push_back(std::move(*helper));
    record_mount(fuse->target);
  } else if (const auto *bind = std::get_if<BindEntry>(&step)) {
    pending_binds_.push_back(*bind);
  } else if (const auto *standard = std::get_if<MountStandard>(&step)) {
    std::string target = root_ + standard->target;
    make_dirs(target);
    if (standard->what == "tmp") {
      if (::mount("tmpfs", target.c_str(), "tmpfs", 0, "mode=1777") != 0)
        raise_errno(Errc::MountFailed, "tmpfs on " + target);
      record_mount(target);
    } else {
      bind_mount(standard->source, target, false, true);
    }
  }
}

void MountExecutor::flush_binds() {
  binds_flushed_ = true;
  make_dirs(root_);

  if (!underlay_mode_) {
    for (const auto &bind : pending_binds_) {
      std::string target = root_ + bind.destination;
      if (is_directory(bind.source))
        make_dirs(target);
      else if (!path_exists(target))
        make_file(target);
      bind_mount(bind.source, target, bind.readonly, true);
    }
    pending_binds_.clear();
    return;
  }

  std::vector<UnderlayBind> binds;
  binds.reserve(pending_binds_.size());
  for (const auto &bind : pending_binds_)
    binds.push_back({bind.source, bind.destination, bind.readonly,
                     is_directory(bind.source)});
  auto probe = image_root_.empty()
                   ? std::function<UnderlayProbe(const std::string &)>(
                         [](const std::string &) -> UnderlayProbe {
                           return {UnderlayProbe::Type::Missing, {}};
                         })
                   : directory_probe(image_root_);
  auto actions = compose_underlay(probe, binds, standard_targets_);

  for (const auto &action : actions) {
    std::string target = root_ + action.destination;
    switch (action.kind) {
    case UnderlayAction::Kind::MakeDir:
      make_dirs(target);
      break;
    case UnderlayAction::Kind::MakeFile:
      make_file(target);
      break;
    case UnderlayAction::Kind::BindFromImage: {
      std::string source = image_root_ + "/" + action.source;
      struct stat st{};
      if (::lstat(source.c_str(), &st) != 0)
        raise_errno(Errc::Io, "lstat " + source);
      if (S_ISLNK(st.st_mode)) {
        // A bind mount would resolve the link; replicate it instead.
        std::string link_target(st.st_size > 0 ? st.st_size : PATH_MAX, '\0');
        ssize_t n = ::readlink(source.c_str(), link_target.data(),
                               link_target.size());
        if (n < 0)
          raise_errno(Errc::Io, "readlink " + source);
        link_target.resize(static_cast<size_t>(n));
        make_dirs(parent_of(target));
        if (::symlink(link_target.c_str(), target.c_str()) != 0)
          raise_errno(Errc::Io, "symlink " + target);
      } else {
        if (S_ISDIR(st.st_mode))
          make_dirs(target);
        else
          make_file(target);
        bind_mount(source, target, false, false);
      }
      break;
    }
    case UnderlayAction::Kind::BindFromHost:
      bind_mount(action.source, target, action.readonly, true);
      break;
    }
  }
  pending_binds_.clear();
}

void MountExecutor::bind_mount(const std::string &source,
                               const std::string &target, bool readonly,
                               bool recursive) {
  unsigned long flags = MS_BIND | (recursive ? MS_REC : 0);
  if (::mount(source.c_str(), target.c_str(), nullptr, flags, nullptr) != 0)
    raise_errno(Errc::MountFailed, "bind " + source + " -> " + target);
  record_mount(target);
  if (readonly &&
      ::mount(nullptr, target.c_str(), nullptr,
              MS_BIND | MS_REMOUNT | MS_RDONLY, nullptr) != 0)
    raise_errno(Errc::MountFailed, "read-only remount of " + target);
}

void MountExecutor::record_mount(const std::string &target) {
  mounts_.push_back(target);
}

void MountExecutor::teardown() {
  if (torn_down_)
    return;
  torn_down_ = true;

  for (auto it = mounts_.rbegin(); it != mounts_.rend(); ++it) {
    if (::umount2(it->c_str(), UMOUNT_NOFOLLOW) == 0)
      continue;
    if (errno == EINVAL || errno == ENOENT)
      continue; // already gone
    if (errno == EBUSY) {
      if (::umount2(it->c_str(), MNT_DETACH | UMOUNT_NOFOLLOW) == 0)
        messages_.push_back("lazily detached busy mount: " + *it);
      else
        messages_.push_back("failed to detach busy mount " + *it + ": " +
                            std::strerror(errno));
    } else {
      messages_.push_back("failed to unmount " + *it + ": " +
                          std::strerror(errno));
    }
  }
  mounts_.clear();

  for (auto &window : windows_)
    window.shutdown();
  windows_.clear();

  for (auto &helper : helpers_) {
    if (helper.pid > 0) {
      ::kill(helper.pid, SIGTERM);
      using namespace std::chrono;
      auto grace_end = steady_clock::now() + seconds(2);
      int status = 0;
      for (;;) {
        pid_t reaped = ::waitpid(helper.pid, &status, WNOHANG);
        if (reaped == helper.pid || (reaped < 0 && errno == ECHILD))
          break;
        if (steady_clock::now() >= grace_end) {
          ::kill(helper.pid, SIGKILL);
          ::waitpid(helper.pid, &status, 0);
          break;
        }
        std::this_thread::sleep_for(milliseconds(10));
      }
      helper.pid = -1;
      helper.state = HelperProcess::State::Exited;
    }
    if (!helper.stderr_path.empty())
      ::unlink(helper.stderr_path.c_str());
  }
  helpers_.clear();
}

} // namespace unsuid
