// SPDX-License-Identifier: Apache-2.0

// FUSE mount of an ext filesystem image with full read-write support.
// The `fakeroot` option lets any caller set arbitrary ownership (the
// runtime's root emulation depends on it); `ro` forces read-only.
// Usage: fuse2fs <image> <mountpoint> -o fakeroot [-o ro]

#include <cerrno>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include <dirent.h>
#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include "unsuid/errors.hpp"
#include "unsuid/ext2fs.hpp"
#include "unsuid/fusemini.hpp"
#include "unsuid/util.hpp"

namespace {

using namespace unsuid;

uint32_t dirent_type(uint8_t ext_type) {
  switch (ext_type) {
  case ext2::kFtRegular:
    return DT_REG;
  case ext2::kFtDirectory:
    return DT_DIR;
  case ext2::kFtCharDev:
    return DT_CHR;
  case ext2::kFtBlockDev:
    return DT_BLK;
  case ext2::kFtFifo:
    return DT_FIFO;
  case ext2::kFtSocket:
    return DT_SOCK;
  case ext2::kFtSymlink:
    return DT_LNK;
  default:
    return DT_UNKNOWN;
  }
}

class ExtOps final : public FuseOps {
public:
  explicit ExtOps(ext2::Fs &fs) : fs_(fs) {}

  void lookup(FuseReply &reply, uint64_t parent,
              const std::string &name) override {
    run(reply, [&] {
      auto ino = fs_.lookup(to_ino(parent), name);
      if (!ino) {
        reply.error(ENOENT);
        return;
      }
      reply_entry(reply, *ino);
    });
  }

  void getattr(FuseReply &reply, uint64_t node) override {
    run(reply, [&] {
      fuse_attr_out out{};
      out.attr_valid = 1;
      fill_attr(out.attr, fs_.getattr(to_ino(node)));
      reply.attr(out);
    });
  }

  void setattr(FuseReply &reply, uint64_t node,
               const fuse_setattr_in &in) override {
    run(reply, [&] {
      ext2::SetAttrRequest request;
      if (in.valid & FATTR_MODE)
        request.mode = in.mode;
      if (in.valid & FATTR_UID)
        request.uid = in.uid;
      if (in.valid & FATTR_GID)
        request.gid = in.gid;
      if (in.valid & FATTR_SIZE)
        request.size = in.size;
      if (in.valid & FATTR_ATIME)
        request.atime = static_cast<uint32_t>(in.atime);
      if (in.valid & FATTR_MTIME)
        request.mtime = static_cast<uint32_t>(in.mtime);
      fuse_attr_out out{};
      out.attr_valid = 1;
      fill_attr(out.attr, fs_.setattr(to_ino(node), request));
      reply.attr(out);
    });
  }

  void open(FuseReply &reply, uint64_t node, uint32_t flags) override {
    run(reply, [&] {
      fs_.getattr(to_ino(node)); // existence check
      if (!writable_ && (flags & O_ACCMODE) != O_RDONLY) {
        reply.error(EROFS);
        return;
      }
      fuse_open_out out{};
      reply.open(out);
    });
  }

  void read(FuseReply &reply, uint64_t node, uint64_t offset,
            uint32_t size) override {
    run(reply, [&] {
      std::vector<std::byte> buf(size);
      uint64_t n = fs_.read(to_ino(node), offset, std::span<std::byte>(buf));
      reply.data(buf.data(), n);
    });
  }

  void write(FuseReply &reply, uint64_t node, uint64_t offset,
             std::span<const std::byte> data) override {
    run(reply, [&] {
      uint64_t n = fs_.write(to_ino(node), offset, data);
      fuse_write_out out{};
      out.size = static_cast<uint32_t>(n);
      reply.write(out);
    });
  }

  void flush(FuseReply &reply, uint64_t) override { reply.empty(); }
  void release(FuseReply &reply, uint64_t) override { reply.empty(); }
  void releasedir(FuseReply &reply, uint64_t) override { reply.empty(); }

  void fsync(FuseReply &reply, uint64_t) override {
    run(reply, [&] {
      fs_.fsync_backing();
      reply.empty();
    });
  }

  void opendir(FuseReply &reply, uint64_t node) override {
    run(reply, [&] {
      fs_.getattr(to_ino(node));
      fuse_open_out out{};
      reply.open(out);
    });
  }

  void readdir(FuseReply &reply, uint64_t node, uint64_t offset,
               uint32_t size) override {
    run(reply, [&] {
      auto entries = fs_.readdir(to_ino(node));
      FuseDirBuffer buf(size);
      for (uint64_t i = offset; i < entries.size(); ++i) {
        const auto &entry = entries[i];
        if (!buf.add(from_ino(entry.ino), i + 1, dirent_type(entry.file_type),
                     entry.name))
          break;
      }
      reply.data(buf.bytes().data(), buf.bytes().size());
    });
  }

  void readlink(FuseReply &reply, uint64_t node) override {
    run(reply, [&] {
      std::string target = fs_.readlink(to_ino(node));
      reply.data(target.data(), target.size());
    });
  }

  void mknod(FuseReply &reply, uint64_t parent, const std::string &name,
             uint32_t mode, uint32_t umask) override {
    run(reply, [&] {
      uint32_t ino = fs_.mknod(to_ino(parent), name, apply_umask(mode, umask),
                               caller_uid(), caller_gid(), 0);
      reply_entry(reply, ino);
    });
  }

  void mkdir(FuseReply &reply, uint64_t parent, const std::string &name,
             uint32_t mode, uint32_t umask) override {
    run(reply, [&] {
      uint32_t ino = fs_.mkdir(to_ino(parent), name,
                               apply_umask(S_IFDIR | (mode & 07777), umask),
                               caller_uid(), caller_gid());
      reply_entry(reply, ino);
    });
  }

  void symlink(FuseReply &reply, uint64_t parent, const std::string &name,
               const std::string &target) override {
    run(reply, [&] {
      uint32_t ino =
          fs_.symlink(to_ino(parent), name, target, caller_uid(),
                      caller_gid());
      reply_entry(reply, ino);
    });
  }

  void unlink(FuseReply &reply, uint64_t parent,
              const std::string &name) override {
    run(reply, [&] {
      fs_.unlink(to_ino(parent), name);
      reply.empty();
    });
  }

  void rmdir(FuseReply &reply, uint64_t parent,
             const std::string &name) override {
    run(reply, [&] {
      fs_.rmdir(to_ino(parent), name);
      reply.empty();
    });
  }

  void rename(FuseReply &reply, uint64_t parent, const std::string &name,
              uint64_t new_parent, const std::string &new_name) override {
    run(reply, [&] {
      fs_.rename(to_ino(parent), name, to_ino(new_parent), new_name);
      reply.empty();
    });
  }

  void link(FuseReply &reply, uint64_t node, uint64_t new_parent,
            const std::string &new_name) override {
    run(reply, [&] {
      fs_.link(to_ino(node), to_ino(new_parent), new_name);
      reply_entry(reply, to_ino(node));
    });
  }

  void create(FuseReply &reply, uint64_t parent, const std::string &name,
              uint32_t mode, uint32_t umask, uint32_t flags) override {
    (void)flags;
    run(reply, [&] {
      uint32_t ino =
          fs_.mknod(to_ino(parent), name,
                    S_IFREG | (apply_umask(mode, umask) & 07777),
                    caller_uid(), caller_gid(), 0);
      // CREATE replies carry an entry and an open result back to back.
      struct {
        fuse_entry_out entry;
        fuse_open_out open;
      } out{};
      out.entry.nodeid = from_ino(ino);
      out.entry.attr_valid = 1;
      out.entry.entry_valid = 1;
      fill_attr(out.entry.attr, fs_.getattr(ino));
      reply.data(&out, sizeof(out));
    });
  }

  void statfs(FuseReply &reply, uint64_t) override {
    run(reply, [&] {
      auto stats = fs_.statfs();
      fuse_statfs_out out{};
      out.st.bsize = stats.block_size;
      out.st.frsize = stats.block_size;
      out.st.blocks = stats.blocks_total;
      out.st.bfree = stats.blocks_free;
      out.st.bavail = stats.blocks_free;
      out.st.files = stats.inodes_total;
      out.st.ffree = stats.inodes_free;
      out.st.namelen = 255;
      reply.statfs(out);
    });
  }

  void access(FuseReply &reply, uint64_t, uint32_t mask) override {
    // fakeroot: every permission check passes; only read-only mounts
    // refuse write access.
    reply.error((!writable_ && (mask & W_OK)) ? EROFS : 0);
  }

  void forget(uint64_t, uint64_t) override {}

  void set_writable(bool writable) { writable_ = writable; }

private:
  template <typename F> void run(FuseReply &reply, F &&f) {
    try {
      f();
    } catch (const ext2::FsError &e) {
      reply.error(e.code());
    } catch (const std::exception &) {
      reply.error(EIO);
    }
  }

  static uint32_t to_ino(uint64_t node) {
    return node == FUSE_ROOT_ID ? ext2::kRootInode
                                : static_cast<uint32_t>(node);
  }

  static uint64_t from_ino(uint32_t ino) {
    return ino == ext2::kRootInode ? FUSE_ROOT_ID : ino;
  }

  static uint32_t apply_umask(uint32_t mode, uint32_t umask) {
    return mode & ~(umask & 0777);
  }

  uint32_t caller_uid() const { return ::geteuid(); }
  uint32_t caller_gid() const { return ::getegid(); }

  void reply_entry(FuseReply &reply, uint32_t ino) {
    fuse_entry_out out{};
    out.nodeid = from_ino(ino);
    out.attr_valid = 1;
    out.entry_valid = 1;
    fill_attr(out.attr, fs_.getattr(ino));
    reply.entry(out);
  }

  void fill_attr(fuse_attr &attr, const ext2::Attr &in) {
    attr.ino = from_ino(in.ino);
    attr.size = in.size;
    attr.blocks = in.blocks512;
    attr.atime = in.atime;
    attr.mtime = in.mtime;
    attr.ctime = in.ctime;
    attr.mode = in.mode;
    attr.nlink = in.links;
    // Fakeroot presentation: ownership is reported as the serving user
    // while the stored ids stay authoritative on disk. Inside a user
    // namespace with a single-entry map, reporting a foreign stored id
    // would make the inode unusable: the VFS refuses writes to inodes
    // whose owner has no mapping.
    attr.uid = ::geteuid();
    attr.gid = ::getegid();
    attr.rdev = static_cast<uint32_t>(in.rdev);
    attr.blksize = ext2::kBlockSize;
  }

  ext2::Fs &fs_;
  bool writable_ = true;
};

int usage() {
  std::fprintf(stderr,
               "usage: fuse2fs <image> <mountpoint> -o fakeroot [-o ro]\n");
  return 2;
}

} // namespace

int main(int argc, char **argv) {
  bool writable = true;
  std::vector<std::string> positional;
  for (int i = 1; i < argc; ++i) {
    std::string arg = argv[i];
    if (arg == "-f") {
      continue; // always foreground
    } else if (arg == "-o") {
      if (++i >= argc)
        return usage();
      for (auto opt : unsuid::split(argv[i], ',')) {
        if (opt == "ro")
          writable = false;
        // fakeroot is this filesystem's native behavior; rw is default.
      }
    } else {
      positional.emplace_back(arg);
    }
  }
  if (positional.size() != 2)
    return usage();
  const std::string &image = positional[0];
  const std::string &target = positional[1];

  try {
    unsuid::ext2::Fs fs(image, 0, unsuid::file_size(image), writable);
    ExtOps ops(fs);
    ops.set_writable(writable);
    uint32_t root_mode = fs.getattr(unsuid::ext2::kRootInode).mode;
    unsuid::FuseService service;
    service.mount(target, &ops, root_mode, "fuse2fs",
                  /*read_only=*/!writable);
    service.serve();
    return 0;
  } catch (const std::exception &e) {
    std::fprintf(stderr, "fuse2fs: %s\n", e.what());
    return 1;
  }
}
