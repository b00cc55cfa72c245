// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include <linux/fuse.h>
#include <sys/stat.h>

#include "unsuid/util.hpp"

namespace unsuid {

/// One request's reply channel. Exactly one of the reply methods must be
/// called per request (except FORGET-class messages, which take none).
class FuseReply {
public:
  FuseReply(int dev_fd, uint64_t unique) : dev_fd_(dev_fd), unique_(unique) {}

  void error(int errno_value);
  void data(const void *payload, size_t length);
  void empty() { data(nullptr, 0); }
  void entry(const fuse_entry_out &out) { data(&out, sizeof(out)); }
  void attr(const fuse_attr_out &out) { data(&out, sizeof(out)); }
  void open(const fuse_open_out &out) { data(&out, sizeof(out)); }
  void write(const fuse_write_out &out) { data(&out, sizeof(out)); }
  void statfs(const fuse_statfs_out &out) { data(&out, sizeof(out)); }

private:
  int dev_fd_;
  uint64_t unique_;
};

/// Append-style buffer for READDIR replies.
class FuseDirBuffer {
public:
  explicit FuseDirBuffer(size_t max_size) : max_size_(max_size) {}

  /// Returns false once the buffer is full (entry not added).
  bool add(uint64_t ino, uint64_t next_offset, uint32_t type,
           const std::string &name);
  const std::vector<std::byte> &bytes() const { return data_; }

private:
  size_t max_size_;
  std::vector<std::byte> data_;
};

/// Request handlers for a tiny FUSE filesystem. The default for every
/// operation is ENOSYS; implement what the filesystem needs.
class FuseOps {
public:
  virtual ~FuseOps() = default;

  virtual void init(const fuse_init_in &in) { (void)in; }
  virtual void lookup(FuseReply &reply, uint64_t parent,
                      const std::string &name);
  virtual void getattr(FuseReply &reply, uint64_t node);
  virtual void setattr(FuseReply &reply, uint64_t node,
                       const fuse_setattr_in &in);
  virtual void open(FuseReply &reply, uint64_t node, uint32_t flags);
  virtual void read(FuseReply &reply, uint64_t node, uint64_t offset,
                    uint32_t size);
  virtual void write(FuseReply &reply, uint64_t node, uint64_t offset,
                     std::span<const std::byte> data);
  virtual void flush(FuseReply &reply, uint64_t node);
  virtual void release(FuseReply &reply, uint64_t node);
  virtual void fsync(FuseReply &reply, uint64_t node);
  virtual void opendir(FuseReply &reply, uint64_t node);
  virtual void readdir(FuseReply &reply, uint64_t node, uint64_t offset,
                       uint32_t size);
  virtual void releasedir(FuseReply &reply, uint64_t node);
  virtual void readlink(FuseReply &reply, uint64_t node);
  virtual void mknod(FuseReply &reply, uint64_t parent,
                     const std::string &name, uint32_t mode, uint32_t umask);
  virtual void mkdir(FuseReply &reply, uint64_t parent,
                     const std::string &name, uint32_t mode, uint32_t umask);
  virtual void symlink(FuseReply &reply, uint64_t parent,
                       const std::string &name, const std::string &target);
  virtual void unlink(FuseReply &reply, uint64_t parent,
                      const std::string &name);
  virtual void rmdir(FuseReply &reply, uint64_t parent,
                     const std::string &name);
  virtual void rename(FuseReply &reply, uint64_t parent,
                      const std::string &name, uint64_t new_parent,
                      const std::string &new_name);
  virtual void link(FuseReply &reply, uint64_t node, uint64_t new_parent,
                    const std::string &new_name);
  virtual void create(FuseReply &reply, uint64_t parent,
                      const std::string &name, uint32_t mode, uint32_t umask,
                      uint32_t flags);
  virtual void statfs(FuseReply &reply, uint64_t node);
  virtual void access(FuseReply &reply, uint64_t node, uint32_t mask);
  virtual void forget(uint64_t node, uint64_t nlookup);
  virtual void destroy() {}
};

/// A mounted FUSE filesystem served by an in-process loop over /dev/fuse.
class FuseService {
public:
  FuseService() = default;
  FuseService(const FuseService &) = delete;
  FuseService &operator=(const FuseService &) = delete;
  ~FuseService();

  /// Opens /dev/fuse and mounts it at target. Throws FuseUnavailable when
  /// the device cannot be opened, MountFailed when the mount is refused.
  /// read_only makes it an MS_RDONLY mount, so write attempts fail with
  /// EROFS in the VFS before the filesystem is consulted.
  void mount(const std::string &target, FuseOps *ops, uint32_t root_mode,
             const std::string &fsname, bool read_only = false);

  /// Serves requests until unmount or shutdown, on the calling thread.
  void serve();
  /// Spawns a serving thread.
  void serve_async();

  /// Unmounts and stops the loop; joins the serving thread. Idempotent.
  void shutdown();

  bool mounted() const { return !target_.empty(); }
  const std::string &target() const { return target_; }

private:
  void loop();

  Fd dev_;
  FuseOps *ops_ = nullptr;
  std::string target_;
  std::thread thread_;
  uint32_t max_write_ = 0;
};

} // namespace unsuid
