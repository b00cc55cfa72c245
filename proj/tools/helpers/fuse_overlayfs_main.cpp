// SPDX-License-Identifier: Apache-2.0

// Overlay FUSE mount merging read-only lower directories under an
// optional writable upper directory. Deletions and opaque directories
// are recorded as plain marker files, so the upper may live on any
// writable filesystem, including ones without device-node or xattr
// support:
//   .wh.<name>     hides <name> in every layer below this one
//   .wh..wh..opq   hides the lower contents of the containing directory
// Usage: fuse-overlayfs [-f] -o lowerdir=a[:b...][,upperdir=u,workdir=w]
//        <mountpoint>

#include <cerrno>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <dirent.h>
#include <fcntl.h>
#include <sys/stat.h>
#include <sys/statvfs.h>
#include <unistd.h>

#include "unsuid/errors.hpp"
#include "unsuid/fusemini.hpp"
#include "unsuid/util.hpp"

namespace {

using namespace unsuid;

constexpr char kWhiteoutPrefix[] = ".wh.";
constexpr char kOpaqueMarker[] = ".wh..wh..opq";

bool is_marker(const std::string &name) {
  return name.rfind(kWhiteoutPrefix, 0) == 0;
}

std::string join(const std::string &dir, const std::string &name) {
  return dir.empty() ? name : dir + "/" + name;
}

bool exists(const std::string &path) {
  struct stat st{};
  return ::lstat(path.c_str(), &st) == 0;
}

struct Source {
  size_t layer = 0;
  std::string real;
  struct stat st {};
};

class OverlayOps final : public FuseOps {
public:
  OverlayOps(std::vector<std::string> layers, bool writable)
      : layers_(std::move(layers)), writable_(writable) {
    node_to_path_[FUSE_ROOT_ID] = "";
    path_to_node_[""] = FUSE_ROOT_ID;
  }

  uint32_t root_mode() {
    struct stat st{};
    if (::stat(layers_[0].c_str(), &st) != 0)
      return S_IFDIR | 0755;
    return st.st_mode;
  }

  void lookup(FuseReply &reply, uint64_t parent,
              const std::string &name) override {
    if (is_marker(name)) {
      reply.error(ENOENT);
      return;
    }
    std::string path = join(path_of(parent), name);
    auto src = resolve(path);
    if (!src) {
      reply.error(ENOENT);
      return;
    }
    reply_entry(reply, node_of(path), src->st);
  }

  void getattr(FuseReply &reply, uint64_t node) override {
    auto src = resolve(path_of(node));
    if (!src) {
      reply.error(ENOENT);
      return;
    }
    fuse_attr_out out{};
    out.attr_valid = 1;
    fill_attr(out.attr, node, src->st);
    reply.attr(out);
  }

  void setattr(FuseReply &reply, uint64_t node,
               const fuse_setattr_in &in) override {
    const std::string path = path_of(node);
    int err = copy_up(path);
    if (err != 0) {
      reply.error(err);
      return;
    }
    const std::string real = upper_real(path);
    if (in.valid & FATTR_SIZE)
      if (::truncate(real.c_str(), static_cast<off_t>(in.size)) != 0) {
        reply.error(errno);
        return;
      }
    if (in.valid & FATTR_MODE)
      if (::chmod(real.c_str(), in.mode & 07777) != 0) {
        reply.error(errno);
        return;
      }
    if (in.valid & (FATTR_UID | FATTR_GID)) {
      uid_t uid = (in.valid & FATTR_UID) ? in.uid : uid_t(-1);
      gid_t gid = (in.valid & FATTR_GID) ? in.gid : gid_t(-1);
      if (::lchown(real.c_str(), uid, gid) != 0) {
        reply.error(errno);
        return;
      }
    }
    if (in.valid & (FATTR_ATIME | FATTR_MTIME)) {
      timespec times[2] = {{0, UTIME_OMIT}, {0, UTIME_OMIT}};
      if (in.valid & FATTR_ATIME)
        times[0] = {static_cast<time_t>(in.atime),
                    (in.valid & FATTR_ATIME_NOW) ? UTIME_NOW : 0L};
      if (in.valid & FATTR_MTIME)
        times[1] = {static_cast<time_t>(in.mtime),
                    (in.valid & FATTR_MTIME_NOW) ? UTIME_NOW : 0L};
      if (::utimensat(AT_FDCWD, real.c_str(), times,
                      AT_SYMLINK_NOFOLLOW) != 0) {
        reply.error(errno);
        return;
      }
    }
    struct stat st{};
    if (::lstat(real.c_str(), &st) != 0) {
      reply.error(errno);
      return;
    }
    fuse_attr_out out{};
    out.attr_valid = 1;
    fill_attr(out.attr, node, st);
    reply.attr(out);
  }

  void open(FuseReply &reply, uint64_t node, uint32_t flags) override {
    const std::string path = path_of(node);
    bool for_write = (flags & O_ACCMODE) != O_RDONLY ||
                     (flags & (O_TRUNC | O_APPEND)) != 0;
    if (for_write) {
      int err = copy_up(path);
      if (err != 0) {
        reply.error(err);
        return;
      }
      if (flags & O_TRUNC)
        if (::truncate(upper_real(path).c_str(), 0) != 0) {
          reply.error(errno);
          return;
        }
    } else if (!resolve(path)) {
      reply.error(ENOENT);
      return;
    }
    fuse_open_out out{};
    reply.open(out);
  }

  void read(FuseReply &reply, uint64_t node, uint64_t offset,
            uint32_t size) override {
    auto src = resolve(path_of(node));
    if (!src) {
      reply.error(ENOENT);
      return;
    }
    int fd = ::open(src->real.c_str(), O_RDONLY | O_CLOEXEC);
    if (fd < 0) {
      reply.error(errno);
      return;
    }
    std::vector<std::byte> buf(size);
    ssize_t n = ::pread(fd, buf.data(), size, static_cast<off_t>(offset));
    int read_errno = errno;
    ::close(fd);
    if (n < 0) {
      reply.error(read_errno);
      return;
    }
    reply.data(buf.data(), static_cast<size_t>(n));
  }

  void write(FuseReply &reply, uint64_t node, uint64_t offset,
             std::span<const std::byte> data) override {
    const std::string path = path_of(node);
    int err = copy_up(path);
    if (err != 0) {
      reply.error(err);
      return;
    }
    int fd = ::open(upper_real(path).c_str(), O_WRONLY | O_CLOEXEC);
    if (fd < 0) {
      reply.error(errno);
      return;
    }
    ssize_t n = ::pwrite(fd, data.data(), data.size(),
                         static_cast<off_t>(offset));
    int write_errno = errno;
    ::close(fd);
    if (n < 0) {
      reply.error(write_errno);
      return;
    }
    fuse_write_out out{};
    out.size = static_cast<uint32_t>(n);
    reply.write(out);
  }

  void flush(FuseReply &reply, uint64_t) override { reply.empty(); }
  void release(FuseReply &reply, uint64_t) override { reply.empty(); }
  void releasedir(FuseReply &reply, uint64_t) override { reply.empty(); }

  void fsync(FuseReply &reply, uint64_t node) override {
    auto src = resolve(path_of(node));
    if (src && in_upper(*src)) {
      int fd = ::open(src->real.c_str(), O_RDONLY | O_CLOEXEC);
      if (fd >= 0) {
        ::fsync(fd);
        ::close(fd);
      }
    }
    reply.empty();
  }

  void opendir(FuseReply &reply, uint64_t node) override {
    auto src = resolve(path_of(node));
    if (!src) {
      reply.error(ENOENT);
      return;
    }
    if (!S_ISDIR(src->st.st_mode)) {
      reply.error(ENOTDIR);
      return;
    }
    fuse_open_out out{};
    reply.open(out);
  }

  void readdir(FuseReply &reply, uint64_t node, uint64_t offset,
               uint32_t size) override {
    auto entries = merged_list(path_of(node));
    if (!entries) {
      reply.error(ENOENT);
      return;
    }
    FuseDirBuffer buf(size);
    uint64_t index = 0;
    bool full = false;
    auto emit = [&](uint64_t ino, uint32_t type, const std::string &name) {
      if (!full && index >= offset)
        full = !buf.add(ino, index + 1, type, name);
      ++index;
    };
    emit(node, DT_DIR, ".");
    emit(node, DT_DIR, "..");
    for (const auto &[name, src] : *entries) {
      if (full)
        break;
      emit(node_of(join(path_of(node), name)),
           (src.st.st_mode >> 12) & 0xf, name);
    }
    reply.data(buf.bytes().data(), buf.bytes().size());
  }

  void readlink(FuseReply &reply, uint64_t node) override {
    auto src = resolve(path_of(node));
    if (!src) {
      reply.error(ENOENT);
      return;
    }
    char buf[PATH_MAX];
    ssize_t n = ::readlink(src->real.c_str(), buf, sizeof(buf));
    if (n < 0) {
      reply.error(errno);
      return;
    }
    reply.data(buf, static_cast<size_t>(n));
  }

  void mknod(FuseReply &reply, uint64_t parent, const std::string &name,
             uint32_t mode, uint32_t umask) override {
    create_common(reply, parent, name, [&](const std::string &real) {
      return ::mknod(real.c_str(), mode & ~(umask & 0777), 0);
    });
  }

  void mkdir(FuseReply &reply, uint64_t parent, const std::string &name,
             uint32_t mode, uint32_t umask) override {
    const std::string parent_path = path_of(parent);
    const std::string path = join(parent_path, name);
    int err = prepare_create(parent_path, path, name);
    if (err != 0) {
      reply.error(err);
      return;
    }
    bool had_whiteout = exists(whiteout_real(parent_path, name));
    if (::mkdir(upper_real(path).c_str(), mode & ~(umask & 0777)) != 0) {
      reply.error(errno);
      return;
    }
    ::unlink(whiteout_real(parent_path, name).c_str());
    // A directory recreated over a deleted one must not expose the old
    // lower contents.
    if (had_whiteout)
      make_marker(join(upper_real(path), kOpaqueMarker));
    finish_entry(reply, path);
  }

  void symlink(FuseReply &reply, uint64_t parent, const std::string &name,
               const std::string &target) override {
    create_common(reply, parent, name, [&](const std::string &real) {
      return ::symlink(target.c_str(), real.c_str());
    });
  }

  void unlink(FuseReply &reply, uint64_t parent,
              const std::string &name) override {
    const std::string parent_path = path_of(parent);
    const std::string path = join(parent_path, name);
    auto src = resolve(path);
    if (!src) {
      reply.error(ENOENT);
      return;
    }
    if (!writable_) {
      reply.error(EROFS);
      return;
    }
    if (in_upper(*src) && ::unlink(src->real.c_str()) != 0) {
      reply.error(errno);
      return;
    }
    int err = hide_if_visible_below(parent_path, name);
    if (err != 0) {
      reply.error(err);
      return;
    }
    reply.empty();
  }

  void rmdir(FuseReply &reply, uint64_t parent,
             const std::string &name) override {
    const std::string parent_path = path_of(parent);
    const std::string path = join(parent_path, name);
    auto src = resolve(path);
    if (!src) {
      reply.error(ENOENT);
      return;
    }
    if (!S_ISDIR(src->st.st_mode)) {
      reply.error(ENOTDIR);
      return;
    }
    if (!writable_) {
      reply.error(EROFS);
      return;
    }
    auto entries = merged_list(path);
    if (!entries || !entries->empty()) {
      reply.error(ENOTEMPTY);
      return;
    }
    if (in_upper(*src)) {
      // The merged view is empty; only markers can remain underneath.
      if (int err = clear_markers(src->real); err != 0) {
        reply.error(err);
        return;
      }
      if (::rmdir(src->real.c_str()) != 0) {
        reply.error(errno);
        return;
      }
    }
    int err = hide_if_visible_below(parent_path, name);
    if (err != 0) {
      reply.error(err);
      return;
    }
    reply.empty();
  }

  void rename(FuseReply &reply, uint64_t parent, const std::string &name,
              uint64_t new_parent, const std::string &new_name) override {
    if (is_marker(name) || is_marker(new_name)) {
      reply.error(EPERM);
      return;
    }
    const std::string old_parent_path = path_of(parent);
    const std::string new_parent_path = path_of(new_parent);
    const std::string old_path = join(old_parent_path, name);
    const std::string new_path = join(new_parent_path, new_name);
    auto src = resolve(old_path);
    if (!src) {
      reply.error(ENOENT);
      return;
    }
    if (!writable_) {
      reply.error(EROFS);
      return;
    }
    if (S_ISDIR(src->st.st_mode)) {
      // Renaming a directory whose content is merged from lower layers
      // would need a deep copy; EXDEV makes callers fall back to one.
      if (!in_upper(*src) || visible_below(old_parent_path, name)) {
        reply.error(EXDEV);
        return;
      }
    } else if (int err = copy_up(old_path); err != 0) {
      reply.error(err);
      return;
    }
    auto dst = resolve(new_path);
    if (dst && S_ISDIR(dst->st.st_mode)) {
      auto entries = merged_list(new_path);
      if (!entries || !entries->empty()) {
        reply.error(ENOTEMPTY);
        return;
      }
      if (!S_ISDIR(src->st.st_mode)) {
        reply.error(EISDIR);
        return;
      }
      if (in_upper(*dst)) {
        if (int err = clear_markers(dst->real); err != 0) {
          reply.error(err);
          return;
        }
        if (::rmdir(dst->real.c_str()) != 0) {
          reply.error(errno);
          return;
        }
      }
    }
    if (int err = ensure_upper_dir(new_parent_path); err != 0) {
      reply.error(err);
      return;
    }
    if (::rename(upper_real(old_path).c_str(),
                 upper_real(new_path).c_str()) != 0) {
      reply.error(errno);
      return;
    }
    ::unlink(whiteout_real(new_parent_path, new_name).c_str());
    int err = hide_if_visible_below(old_parent_path, name);
    if (err != 0) {
      reply.error(err);
      return;
    }
    remap_subtree(old_path, new_path);
    reply.empty();
  }

  void link(FuseReply &reply, uint64_t node, uint64_t new_parent,
            const std::string &new_name) override {
    const std::string path = path_of(node);
    const std::string new_parent_path = path_of(new_parent);
    const std::string new_path = join(new_parent_path, new_name);
    if (is_marker(new_name)) {
      reply.error(EPERM);
      return;
    }
    if (resolve(new_path)) {
      reply.error(EEXIST);
      return;
    }
    if (int err = copy_up(path); err != 0) {
      reply.error(err);
      return;
    }
    if (int err = ensure_upper_dir(new_parent_path); err != 0) {
      reply.error(err);
      return;
    }
    if (::link(upper_real(path).c_str(), upper_real(new_path).c_str()) != 0) {
      reply.error(errno);
      return;
    }
    ::unlink(whiteout_real(new_parent_path, new_name).c_str());
    finish_entry(reply, new_path);
  }

  void create(FuseReply &reply, uint64_t parent, const std::string &name,
              uint32_t mode, uint32_t umask, uint32_t flags) override {
    (void)flags;
    const std::string parent_path = path_of(parent);
    const std::string path = join(parent_path, name);
    int err = prepare_create(parent_path, path, name);
    if (err != 0) {
      reply.error(err);
      return;
    }
    int fd = ::open(upper_real(path).c_str(),
                    O_CREAT | O_EXCL | O_WRONLY | O_CLOEXEC,
                    (mode & ~(umask & 0777)) & 07777);
    if (fd < 0) {
      reply.error(errno);
      return;
    }
    ::close(fd);
    ::unlink(whiteout_real(parent_path, name).c_str());
    struct stat st{};
    if (::lstat(upper_real(path).c_str(), &st) != 0) {
      reply.error(errno);
      return;
    }
    // CREATE replies carry an entry and an open result back to back.
    struct {
      fuse_entry_out entry;
      fuse_open_out open;
    } out{};
    uint64_t node = node_of(path);
    out.entry.nodeid = node;
    out.entry.attr_valid = 1;
    out.entry.entry_valid = 1;
    fill_attr(out.entry.attr, node, st);
    reply.data(&out, sizeof(out));
  }

  void statfs(FuseReply &reply, uint64_t) override {
    struct statvfs sv{};
    if (::statvfs(layers_[0].c_str(), &sv) != 0) {
      reply.error(errno);
      return;
    }
    fuse_statfs_out out{};
    out.st.bsize = sv.f_bsize;
    out.st.frsize = sv.f_frsize;
    out.st.blocks = sv.f_blocks;
    out.st.bfree = sv.f_bfree;
    out.st.bavail = sv.f_bavail;
    out.st.files = sv.f_files;
    out.st.ffree = sv.f_ffree;
    out.st.namelen = 255;
    reply.statfs(out);
  }

  void access(FuseReply &reply, uint64_t, uint32_t mask) override {
    // Permission checks defer to the layer filesystems; only a missing
    // upper refuses writes.
    reply.error(!writable_ && (mask & W_OK) ? EROFS : 0);
  }

  void forget(uint64_t, uint64_t) override {}

private:
  const std::string &path_of(uint64_t node) { return node_to_path_.at(node); }

  uint64_t node_of(const std::string &path) {
    auto it = path_to_node_.find(path);
    if (it != path_to_node_.end())
      return it->second;
    uint64_t node = next_node_++;
    path_to_node_[path] = node;
    node_to_path_[node] = path;
    return node;
  }

  void remap_subtree(const std::string &from, const std::string &to) {
    std::vector<std::pair<std::string, uint64_t>> moved;
    for (auto it = path_to_node_.begin(); it != path_to_node_.end();) {
      bool match = it->first == from ||
                   it->first.rfind(from + "/", 0) == 0;
      if (match) {
        moved.emplace_back(to + it->first.substr(from.size()), it->second);
        it = path_to_node_.erase(it);
      } else {
        ++it;
      }
    }
    for (auto &[path, node] : moved) {
      path_to_node_[path] = node;
      node_to_path_[node] = path;
    }
  }

  bool in_upper(const Source &src) const {
    return writable_ && src.layer == 0;
  }

  std::string upper_real(const std::string &path) const {
    return path.empty() ? layers_[0] : layers_[0] + "/" + path;
  }

  std::string whiteout_real(const std::string &parent_path,
                            const std::string &name) const {
    return join(upper_real(parent_path), kWhiteoutPrefix + name);
  }

  static int make_marker(const std::string &real) {
    int fd = ::open(real.c_str(), O_CREAT | O_WRONLY | O_CLOEXEC, 0600);
    if (fd < 0)
      return errno;
    ::close(fd);
    return 0;
  }

  /// The per-layer directories contributing to the merged directory at
  /// path, top to bottom; nullopt when the path is not a visible
  /// directory. Whiteouts and opaque markers cut deeper layers off.
  std::optional<std::vector<std::pair<size_t, std::string>>>
  dir_layers(const std::string &path) {
    std::vector<std::pair<size_t, std::string>> live;
    for (size_t i = 0; i < layers_.size(); ++i) {
      live.emplace_back(i, layers_[i]);
      if (exists(layers_[i] + "/" + kOpaqueMarker))
        break;
    }
    std::string remaining = path;
    while (!remaining.empty()) {
      auto pos = remaining.find('/');
      std::string component = remaining.substr(0, pos);
      remaining = pos == std::string::npos ? "" : remaining.substr(pos + 1);

      std::vector<std::pair<size_t, std::string>> next;
      for (const auto &[layer, dir] : live) {
        std::string real = dir + "/" + component;
        struct stat st{};
        if (::lstat(real.c_str(), &st) == 0) {
          if (!S_ISDIR(st.st_mode)) {
            // A non-directory ends the merge: it either IS the entry
            // (topmost) or is shadowed by the directories above it, and
            // nothing below it contributes either way.
            break;
          }
          next.emplace_back(layer, real);
          if (exists(real + "/" + kOpaqueMarker))
            break;
        } else if (exists(dir + "/" + kWhiteoutPrefix + component)) {
          break;
        }
      }
      if (next.empty())
        return std::nullopt;
      live = std::move(next);
    }
    return live;
  }

  std::optional<Source> resolve(const std::string &path) {
    if (path.empty()) {
      Source src{0, layers_[0], {}};
      if (::lstat(src.real.c_str(), &src.st) != 0)
        return std::nullopt;
      return src;
    }
    auto pos = path.find_last_of('/');
    std::string parent = pos == std::string::npos ? "" : path.substr(0, pos);
    std::string name = pos == std::string::npos ? path : path.substr(pos + 1);
    auto live = dir_layers(parent);
    if (!live)
      return std::nullopt;
    for (const auto &[layer, dir] : *live) {
      Source src{layer, dir + "/" + name, {}};
      if (::lstat(src.real.c_str(), &src.st) == 0)
        return src;
      if (exists(dir + "/" + kWhiteoutPrefix + name))
        return std::nullopt;
    }
    return std::nullopt;
  }

  /// True when removing the upper entry would re-expose a lower one.
  bool visible_below(const std::string &parent_path,
                     const std::string &name) {
    auto live = dir_layers(parent_path);
    if (!live)
      return false;
    for (const auto &[layer, dir] : *live) {
      if (writable_ && layer == 0)
        continue;
      if (exists(dir + "/" + name))
        return true;
      if (exists(dir + "/" + kWhiteoutPrefix + name))
        return false;
    }
    return false;
  }

  int hide_if_visible_below(const std::string &parent_path,
                            const std::string &name) {
    if (!visible_below(parent_path, name))
      return 0;
    if (int err = ensure_upper_dir(parent_path); err != 0)
      return err;
    return make_marker(whiteout_real(parent_path, name));
  }

  std::optional<std::map<std::string, Source>>
  merged_list(const std::string &path) {
    auto live = dir_layers(path);
    if (!live)
      return std::nullopt;
    std::map<std::string, Source> out;
    std::set<std::string> hidden;
    for (const auto &[layer, dir] : *live) {
      DIR *d = ::opendir(dir.c_str());
      if (!d)
        continue;
      std::vector<std::string> names;
      while (dirent *de = ::readdir(d)) {
        std::string name = de->d_name;
        if (name == "." || name == "..")
          continue;
        names.push_back(std::move(name));
      }
      ::closedir(d);
      // Real entries of this layer first; its whiteouts only hide
      // deeper layers.
      for (const auto &name : names) {
        if (is_marker(name))
          continue;
        if (hidden.count(name) || out.count(name))
          continue;
        Source src{layer, dir + "/" + name, {}};
        if (::lstat(src.real.c_str(), &src.st) == 0)
          out.emplace(name, std::move(src));
      }
      for (const auto &name : names)
        if (is_marker(name) && name != kOpaqueMarker)
          hidden.insert(name.substr(std::strlen(kWhiteoutPrefix)));
    }
    return out;
  }

  /// Removes marker files directly inside an upper directory so a plain
  /// rmdir can succeed once the merged view is empty.
  static int clear_markers(const std::string &real) {
    DIR *d = ::opendir(real.c_str());
    if (!d)
      return errno;
    std::vector<std::string> markers;
    while (dirent *de = ::readdir(d)) {
      std::string name = de->d_name;
      if (is_marker(name))
        markers.push_back(std::move(name));
    }
    ::closedir(d);
    for (const auto &name : markers)
      if (::unlink((real + "/" + name).c_str()) != 0)
        return errno;
    return 0;
  }

  int ensure_upper_dir(const std::string &path) {
    if (!writable_)
      return EROFS;
    if (path.empty())
      return 0;
    auto src = resolve(path);
    if (!src)
      return ENOENT;
    if (!S_ISDIR(src->st.st_mode))
      return ENOTDIR;
    if (in_upper(*src))
      return 0;
    auto pos = path.find_last_of('/');
    if (int err = ensure_upper_dir(
            pos == std::string::npos ? "" : path.substr(0, pos));
        err != 0)
      return err;
    if (::mkdir(upper_real(path).c_str(), src->st.st_mode & 07777) != 0 &&
        errno != EEXIST)
      return errno;
    return 0;
  }

  int copy_up(const std::string &path) {
    if (!writable_)
      return EROFS;
    auto src = resolve(path);
    if (!src)
      return ENOENT;
    if (in_upper(*src))
      return 0;
    if (S_ISDIR(src->st.st_mode))
      return ensure_upper_dir(path);
    auto pos = path.find_last_of('/');
    if (int err = ensure_upper_dir(
            pos == std::string::npos ? "" : path.substr(0, pos));
        err != 0)
      return err;
    const std::string dst = upper_real(path);
    if (S_ISLNK(src->st.st_mode)) {
      char buf[PATH_MAX];
      ssize_t n = ::readlink(src->real.c_str(), buf, sizeof(buf));
      if (n < 0 || ::symlink(std::string(buf, size_t(n)).c_str(),
                             dst.c_str()) != 0)
        return errno;
    } else if (S_ISREG(src->st.st_mode)) {
      int in = ::open(src->real.c_str(), O_RDONLY | O_CLOEXEC);
      if (in < 0)
        return errno;
      int out = ::open(dst.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC,
                       src->st.st_mode & 07777);
      if (out < 0) {
        int err = errno;
        ::close(in);
        return err;
      }
      char buf[1 << 16];
      ssize_t n;
      while ((n = ::read(in, buf, sizeof(buf))) > 0)
        if (::write(out, buf, static_cast<size_t>(n)) != n) {
          n = -1;
          break;
        }
      int err = n < 0 ? errno : 0;
      ::close(in);
      ::close(out);
      if (err != 0) {
        ::unlink(dst.c_str());
        return err;
      }
    } else {
      if (::mknod(dst.c_str(), src->st.st_mode,
                  static_cast<dev_t>(src->st.st_rdev)) != 0)
        return errno;
    }
    // Ownership carry is best effort; layers under fakeroot helpers
    // already present the serving user.
    (void)!::lchown(dst.c_str(), src->st.st_uid, src->st.st_gid);
    return 0;
  }

  /// Shared validation for mknod, mkdir, symlink, and create.
  int prepare_create(const std::string &parent_path, const std::string &path,
                     const std::string &name) {
    if (is_marker(name))
      return EPERM;
    if (!writable_)
      return EROFS;
    if (resolve(path))
      return EEXIST;
    return ensure_upper_dir(parent_path);
  }

  template <typename MakeFn>
  void create_common(FuseReply &reply, uint64_t parent,
                     const std::string &name, MakeFn &&make) {
    const std::string parent_path = path_of(parent);
    const std::string path = join(parent_path, name);
    int err = prepare_create(parent_path, path, name);
    if (err != 0) {
      reply.error(err);
      return;
    }
    if (make(upper_real(path)) != 0) {
      reply.error(errno);
      return;
    }
    ::unlink(whiteout_real(parent_path, name).c_str());
    finish_entry(reply, path);
  }

  void finish_entry(FuseReply &reply, const std::string &path) {
    struct stat st{};
    if (::lstat(upper_real(path).c_str(), &st) != 0) {
      reply.error(errno);
      return;
    }
    reply_entry(reply, node_of(path), st);
  }

  void reply_entry(FuseReply &reply, uint64_t node, const struct stat &st) {
    fuse_entry_out out{};
    out.nodeid = node;
    out.attr_valid = 1;
    out.entry_valid = 1;
    fill_attr(out.attr, node, st);
    reply.entry(out);
  }

  void fill_attr(fuse_attr &attr, uint64_t node, const struct stat &st) {
    attr.ino = node;
    attr.size = static_cast<uint64_t>(st.st_size);
    attr.blocks = static_cast<uint64_t>(st.st_blocks);
    attr.atime = static_cast<uint64_t>(st.st_atime);
    attr.mtime = static_cast<uint64_t>(st.st_mtime);
    attr.ctime = static_cast<uint64_t>(st.st_ctime);
    attr.mode = st.st_mode;
    attr.nlink = static_cast<uint32_t>(st.st_nlink);
    attr.uid = st.st_uid;
    attr.gid = st.st_gid;
    attr.rdev = static_cast<uint32_t>(st.st_rdev);
    attr.blksize = 4096;
  }

  std::vector<std::string> layers_;
  bool writable_;
  std::map<uint64_t, std::string> node_to_path_;
  std::map<std::string, uint64_t> path_to_node_;
  uint64_t next_node_ = FUSE_ROOT_ID + 1;
};

int usage() {
  std::fprintf(stderr,
               "usage: fuse-overlayfs [-f] -o lowerdir=a[:b...]"
               "[,upperdir=u,workdir=w] <mountpoint>\n");
  return 2;
}

} // namespace

int main(int argc, char **argv) {
  std::vector<std::string> lowers;
  std::string upper;
  std::string work;
  std::vector<std::string> positional;
  for (int i = 1; i < argc; ++i) {
    std::string arg = argv[i];
    if (arg == "-f")
      continue; // always foreground
    if (arg == "-o") {
      if (++i >= argc)
        return usage();
      std::string opts = argv[i];
      size_t start = 0;
      while (start <= opts.size()) {
        size_t end = opts.find(',', start);
        std::string opt = opts.substr(start, end - start);
        if (opt.rfind("lowerdir=", 0) == 0) {
          std::string list = opt.substr(9);
          size_t ls = 0;
          while (ls <= list.size()) {
            size_t le = list.find(':', ls);
            std::string dir = list.substr(ls, le - ls);
            if (!dir.empty())
              lowers.push_back(dir);
            if (le == std::string::npos)
              break;
            ls = le + 1;
          }
        } else if (opt.rfind("upperdir=", 0) == 0) {
          upper = opt.substr(9);
        } else if (opt.rfind("workdir=", 0) == 0) {
          work = opt.substr(8);
        }
        if (end == std::string::npos)
          break;
        start = end + 1;
      }
      continue;
    }
    positional.push_back(arg);
  }
  if (positional.size() != 1 || lowers.empty())
    return usage();
  if (!upper.empty() && work.empty()) {
    std::fprintf(stderr, "fuse-overlayfs: upperdir requires workdir\n");
    return 2;
  }

  std::vector<std::string> layers;
  if (!upper.empty())
    layers.push_back(upper);
  layers.insert(layers.end(), lowers.begin(), lowers.end());
  for (const auto &layer : layers) {
    struct stat st{};
    if (::stat(layer.c_str(), &st) != 0 || !S_ISDIR(st.st_mode)) {
      std::fprintf(stderr, "fuse-overlayfs: %s: not a directory\n",
                   layer.c_str());
      return 1;
    }
  }

  try {
    OverlayOps ops(std::move(layers), !upper.empty());
    FuseService service;
    service.mount(positional[0], &ops, ops.root_mode(), "fuse-overlayfs",
                  /*read_only=*/upper.empty());
    service.serve();
  } catch (const Error &e) {
    std::fprintf(stderr, "fuse-overlayfs: %s\n", e.what());
    return 1;
  } catch (const std::exception &e) {
    std::fprintf(stderr, "fuse-overlayfs: %s\n", e.what());
    return 1;
  }
  return 0;
}
