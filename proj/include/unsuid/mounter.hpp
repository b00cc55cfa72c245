// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <sys/types.h>

#include "unsuid/imagefmt.hpp"
#include "unsuid/planner.hpp"
#include "unsuid/windowfile.hpp"

namespace unsuid {

struct HelperProcess {
  std::string helper;
  pid_t pid = -1;
  std::string mountpoint;
  enum class State { Starting, Serving, Exited } state = State::Starting;
  /// File capturing the helper's stderr, read back on failure.
  std::string stderr_path;
};

struct UnderlayAction {
  enum class Kind { BindFromImage, BindFromHost, MakeDir, MakeFile };
  Kind kind = Kind::MakeDir;
  std::string source;      // empty for Make*
  std::string destination; // container-absolute, resolved under the root
  bool readonly = false;   // BindFromHost only

  bool operator==(const UnderlayAction &) const = default;
};

std::string_view to_string(UnderlayAction::Kind kind);

/// What the underlay composer knows about one image path: whether it is
/// missing, a regular (non-directory) entry, or a directory with the
/// given child names.
struct UnderlayProbe {
  enum class Type { Missing, File, Directory };
  Type type = Type::Missing;
  std::vector<std::string> children;
};

struct UnderlayBind {
  std::string source;
  std::string destination;
  bool readonly = false;
  bool source_is_dir = false;
};

/// Pure underlay composition: image entries not shadowed by a bind or
/// standard destination become BindFromImage; shadowed directories are
/// replicated level by level along destination components only; bind
/// targets get MakeDir/MakeFile then BindFromHost; standard targets get
/// their MakeDir mount points. Deterministic order: lexicographic within
/// a level, parents before children.
std::vector<UnderlayAction> compose_underlay(
    const std::function<UnderlayProbe(const std::string &)> &probe_image,
    const std::vector<UnderlayBind> &binds,
    const std::vector<std::string> &standard_targets);

/// Probe backed by a real directory tree rooted at image_root.
std::function<UnderlayProbe(const std::string &)>
directory_probe(const std::string &image_root);

/// True when the mount table of this process lists target as a mount
/// point.
bool is_mount_point(const std::string &target);

/// Polls until target appears mounted or the helper exits; exponential
/// backoff with a 10 s ceiling. Throws HelperFailed (with captured
/// stderr) or MountTimeout; on success marks the helper Serving.
void wait_until_mounted(HelperProcess &helper, const std::string &target);

HelperProcess mount_squash_partition(const std::string &image,
                                     const PartitionDescriptor &part,
                                     const std::string &target);

std::pair<WindowHandle, HelperProcess>
mount_ext_partition(const std::string &image, const PartitionDescriptor &part,
                    const std::string &target, bool writable);

std::optional<HelperProcess>
mount_overlay(RootStrategyKind strategy,
              const std::vector<std::string> &lowerdirs,
              const std::string &upperdir, const std::string &workdir,
              const std::string &target);

/// Executes a mount plan inside the already-entered namespaces. Bind
/// entries are deferred and flushed when the first standard mount is
/// reached (underlay composition needs the full destination set).
class MountExecutor {
public:
  MountExecutor();
  ~MountExecutor();
  MountExecutor(const MountExecutor &) = delete;
  MountExecutor &operator=(const MountExecutor &) = delete;

  /// Runs every step except PivotIntoRoot, which is executed only when
  /// pivot is true (tests keep the namespace root intact).
  void execute(const MountPlan &plan, bool pivot = true);

  /// Unmounts in reverse order, shuts down windows, reaps helpers.
  /// Idempotent; busy mounts are lazily detached and reported.
  void teardown();

  /// Warnings and teardown reports accumulated so far.
  const std::vector<std::string> &messages() const { return messages_; }

  /// The assembled container root (valid after execute, before pivot).
  const std::string &root() const { return root_; }

private:
  void execute_step(const MountStep &step);
  void flush_binds();
  void bind_mount(const std::string &source, const std::string &target,
                  bool readonly, bool recursive);
  void record_mount(const std::string &target);

  std::vector<WindowHandle> windows_;
  std::vector<HelperProcess> helpers_;
  std::vector<std::string> mounts_; // unmounted back to front
  std::vector<BindEntry> pending_binds_;
  std::vector<std::string> standard_targets_;
  std::vector<std::string> messages_;
  std::string image_root_;
  std::string root_;
  bool underlay_mode_ = false;
  bool binds_flushed_ = false;
  bool torn_down_ = false;
};

} // namespace unsuid
