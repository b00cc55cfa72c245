// SPDX-License-Identifier: Apache-2.0

// Read-only FUSE mount of one squashfs filesystem, supporting the
// `offset=<bytes>` option for filesystems embedded inside a larger file.
// Usage: squashfuse [-f] [-o opt[,opt...]] <image> <mountpoint>

#include <cerrno>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include <dirent.h>
#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include "unsuid/errors.hpp"
#include "unsuid/fusemini.hpp"
#include "unsuid/squashfs.hpp"
#include "unsuid/util.hpp"

namespace {

using namespace unsuid;

uint32_t dirent_type(uint16_t squash_type) {
  switch (squash_type) {
  case squashfs::kTypeDir:
    return DT_DIR;
  case squashfs::kTypeFile:
    return DT_REG;
  case squashfs::kTypeSymlink:
    return DT_LNK;
  case squashfs::kTypeBlockDev:
    return DT_BLK;
  case squashfs::kTypeCharDev:
    return DT_CHR;
  case squashfs::kTypeFifo:
    return DT_FIFO;
  case squashfs::kTypeSocket:
    return DT_SOCK;
  default:
    return DT_UNKNOWN;
  }
}

class SquashOps final : public FuseOps {
public:
  explicit SquashOps(squashfs::Reader &reader) : reader_(reader) {
    node_to_ref_[FUSE_ROOT_ID] = reader_.root_ref();
    ref_to_node_[reader_.root_ref()] = FUSE_ROOT_ID;
  }

  uint32_t root_mode() { return reader_.stat_ref(reader_.root_ref()).mode; }

  void lookup(FuseReply &reply, uint64_t parent,
              const std::string &name) override {
    run(reply, [&] {
      uint64_t dir_ref = ref_of(parent);
      auto ref = reader_.lookup(dir_ref, name);
      if (!ref) {
        reply.error(ENOENT);
        return;
      }
      fuse_entry_out out{};
      out.nodeid = node_of(*ref);
      out.attr_valid = 1;
      out.entry_valid = 1;
      fill_attr(out.attr, out.nodeid, reader_.stat_ref(*ref));
      reply.entry(out);
    });
  }

  void getattr(FuseReply &reply, uint64_t node) override {
    run(reply, [&] {
      fuse_attr_out out{};
      out.attr_valid = 1;
      fill_attr(out.attr, node, reader_.stat_ref(ref_of(node)));
      reply.attr(out);
    });
  }

  void open(FuseReply &reply, uint64_t node, uint32_t flags) override {
    (void)node;
    if ((flags & O_ACCMODE) != O_RDONLY) {
      reply.error(EROFS);
      return;
    }
    fuse_open_out out{};
    out.open_flags = FOPEN_KEEP_CACHE;
    reply.open(out);
  }

  void read(FuseReply &reply, uint64_t node, uint64_t offset,
            uint32_t size) override {
    run(reply, [&] {
      std::vector<std::byte> buf(size);
      uint64_t n = reader_.read_file(ref_of(node), offset,
                                     std::span<std::byte>(buf));
      reply.data(buf.data(), n);
    });
  }

  void opendir(FuseReply &reply, uint64_t node) override {
    (void)node;
    fuse_open_out out{};
    reply.open(out);
  }

  void readdir(FuseReply &reply, uint64_t node, uint64_t offset,
               uint32_t size) override {
    run(reply, [&] {
      auto entries = reader_.read_dir(ref_of(node));
      FuseDirBuffer buf(size);
      // Synthetic . and .. first, then listing entries, all addressed
      // by a stable per-entry resume offset.
      uint64_t index = 0;
      bool full = false;
      auto emit = [&](uint64_t ino, uint32_t type, const std::string &name) {
        if (!full && index >= offset)
          full = !buf.add(ino, index + 1, type, name);
        ++index;
      };
      emit(node, DT_DIR, ".");
      emit(node, DT_DIR, "..");
      for (const auto &entry : entries) {
        if (full)
          break;
        emit(node_of(entry.inode_ref), dirent_type(entry.type), entry.name);
      }
      reply.data(buf.bytes().data(), buf.bytes().size());
    });
  }

  void releasedir(FuseReply &reply, uint64_t) override { reply.empty(); }
  void release(FuseReply &reply, uint64_t) override { reply.empty(); }
  void flush(FuseReply &reply, uint64_t) override { reply.empty(); }

  void readlink(FuseReply &reply, uint64_t node) override {
    run(reply, [&] {
      std::string target = reader_.read_link(ref_of(node));
      reply.data(target.data(), target.size());
    });
  }

  void access(FuseReply &reply, uint64_t, uint32_t mask) override {
    reply.error((mask & W_OK) ? EROFS : 0);
  }

  void statfs(FuseReply &reply, uint64_t) override {
    fuse_statfs_out out{};
    out.st.bsize = squashfs::kBlockSize;
    out.st.frsize = squashfs::kBlockSize;
    out.st.blocks = (reader_.superblock().bytes_used + squashfs::kBlockSize -
                     1) /
                    squashfs::kBlockSize;
    out.st.files = reader_.superblock().inode_count;
    out.st.namelen = 255;
    reply.statfs(out);
  }

  void forget(uint64_t, uint64_t) override {}

private:
  template <typename F> void run(FuseReply &reply, F &&f) {
    try {
      f();
    } catch (const Error &) {
      reply.error(EIO);
    } catch (const std::exception &) {
      reply.error(EIO);
    }
  }

  uint64_t ref_of(uint64_t node) {
    auto it = node_to_ref_.find(node);
    if (it == node_to_ref_.end())
      throw Error(Errc::Io, "unknown fuse node");
    return it->second;
  }

  uint64_t node_of(uint64_t ref) {
    auto it = ref_to_node_.find(ref);
    if (it != ref_to_node_.end())
      return it->second;
    uint64_t node = next_node_++;
    node_to_ref_[node] = ref;
    ref_to_node_[ref] = node;
    return node;
  }

  void fill_attr(fuse_attr &attr, uint64_t node,
                 const squashfs::InodeAttr &in) {
    attr.ino = node;
    attr.size = in.size;
    attr.blocks = (in.size + 511) / 512;
    attr.atime = in.mtime;
    attr.mtime = in.mtime;
    attr.ctime = in.mtime;
    attr.mode = in.mode;
    attr.nlink = in.nlink;
    // Stored ids are presented as the serving user: inside a user
    // namespace with a single-entry map, foreign ids have no mapping and
    // the VFS refuses all access to such inodes.
    attr.uid = ::geteuid();
    attr.gid = ::getegid();
    attr.rdev = static_cast<uint32_t>(in.rdev);
    attr.blksize = 4096;
  }

  squashfs::Reader &reader_;
  std::map<uint64_t, uint64_t> node_to_ref_;
  std::map<uint64_t, uint64_t> ref_to_node_;
  uint64_t next_node_ = FUSE_ROOT_ID + 1;
};

int usage() {
  std::fprintf(stderr,
               "usage: squashfuse [-f] [-o opt[,opt...]] <image> <mountpoint>\n");
  return 2;
}

} // namespace

int main(int argc, char **argv) {
  uint64_t offset = 0;
  std::vector<std::string> positional;
  for (int i = 1; i < argc; ++i) {
    std::string arg = argv[i];
    if (arg == "-f") {
      continue; // always foreground
    } else if (arg == "-o") {
      if (++i >= argc)
        return usage();
      for (auto opt : unsuid::split(argv[i], ',')) {
        if (unsuid::starts_with(opt, "offset="))
          offset = std::strtoull(std::string(opt.substr(7)).c_str(), nullptr,
                                 10);
        // ro and friends are accepted silently: always read-only.
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
    uint64_t total = unsuid::file_size(image);
    if (offset >= total) {
      std::fprintf(stderr, "squashfuse: offset %llu past end of %s\n",
                   static_cast<unsigned long long>(offset), image.c_str());
      return 1;
    }
    unsuid::squashfs::Reader reader(image, offset, total - offset);
    SquashOps ops(reader);
    unsuid::FuseService service;
    service.mount(target, &ops, ops.root_mode(), "squashfuse",
                  /*read_only=*/true);
    service.serve();
    return 0;
  } catch (const std::exception &e) {
    std::fprintf(stderr, "squashfuse: %s\n", e.what());
    return 1;
  }
}
