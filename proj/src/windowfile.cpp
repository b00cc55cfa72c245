// SPDX-License-Identifier: Apache-2.0

#include "unsuid/windowfile.hpp"

#include <cerrno>
#include <cstring>
#include <vector>

#include <dirent.h>
#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <fmt/format.h>

#include "unsuid/errors.hpp"
#include "unsuid/fusemini.hpp"
#include "unsuid/util.hpp"

namespace unsuid {

namespace {

constexpr uint64_t kRootNode = FUSE_ROOT_ID; // 1
constexpr uint64_t kPartNode = 2;

class WindowOps final : public FuseOps {
public:
  WindowOps(WindowSpec spec, Fd backing)
      : spec_(std::move(spec)), backing_(std::move(backing)) {}

  void lookup(FuseReply &reply, uint64_t parent,
              const std::string &name) override {
    if (parent != kRootNode || name != kWindowFileName) {
      reply.error(ENOENT);
      return;
    }
    fuse_entry_out out{};
    out.nodeid = kPartNode;
    out.attr_valid = 1;
    fill_part_attr(out.attr);
    reply.entry(out);
  }

  void getattr(FuseReply &reply, uint64_t node) override {
    fuse_attr_out out{};
    out.attr_valid = 1;
    if (node == kRootNode)
      fill_root_attr(out.attr);
    else if (node == kPartNode)
      fill_part_attr(out.attr);
    else {
      reply.error(ENOENT);
      return;
    }
    reply.attr(out);
  }

  void setattr(FuseReply &reply, uint64_t node,
               const fuse_setattr_in &in) override {
    if (node != kPartNode) {
      reply.error(EPERM);
      return;
    }
    // The window never resizes; a no-op truncate to the exact size is
    // tolerated so O_TRUNC-less writers keep working.
    if ((in.valid & FATTR_SIZE) && in.size != spec_.size) {
      reply.error(EFBIG);
      return;
    }
    fuse_attr_out out{};
    out.attr_valid = 1;
    fill_part_attr(out.attr);
    reply.attr(out);
  }

  void open(FuseReply &reply, uint64_t node, uint32_t flags) override {
    if (node != kPartNode) {
      reply.error(EISDIR);
      return;
    }
    uint32_t accmode = flags & O_ACCMODE;
    if (!spec_.writable && accmode != O_RDONLY) {
      reply.error(EROFS);
      return;
    }
    fuse_open_out out{};
    out.open_flags = FOPEN_DIRECT_IO;
    reply.open(out);
  }

  void read(FuseReply &reply, uint64_t node, uint64_t offset,
            uint32_t size) override {
    if (node != kPartNode) {
      reply.error(EINVAL);
      return;
    }
    auto [backing_pos, clamped] = translate_io(offset, size, spec_);
    std::vector<std::byte> buf(clamped);
    size_t done = 0;
    while (done < clamped) {
      ssize_t n = ::pread(backing_.get(), buf.data() + done, clamped - done,
                          static_cast<off_t>(backing_pos + done));
      if (n < 0) {
        if (errno == EINTR)
          continue;
        reply.error(errno);
        return;
      }
      if (n == 0)
        break; // backing shorter than the spec promised
      done += static_cast<size_t>(n);
    }
    reply.data(buf.data(), done);
  }

  void write(FuseReply &reply, uint64_t node, uint64_t offset,
             std::span<const std::byte> data) override {
    if (node != kPartNode) {
      reply.error(EINVAL);
      return;
    }
    if (!spec_.writable) {
      reply.error(EROFS);
      return;
    }
    auto [backing_pos, clamped] = translate_io(offset, data.size(), spec_);
    if (clamped < data.size()) {
      // Writes may never grow the window or spill past it.
      reply.error(EFBIG);
      return;
    }
    size_t done = 0;
    while (done < data.size()) {
      ssize_t n = ::pwrite(backing_.get(), data.data() + done,
                           data.size() - done,
                           static_cast<off_t>(backing_pos + done));
      if (n < 0) {
        if (errno == EINTR)
          continue;
        reply.error(errno);
        return;
      }
      done += static_cast<size_t>(n);
    }
    fuse_write_out out{};
    out.size = static_cast<uint32_t>(done);
    reply.write(out);
  }

  void fsync(FuseReply &reply, uint64_t) override {
    if (::fdatasync(backing_.get()) != 0) {
      reply.error(errno);
      return;
    }
    reply.empty();
  }

  void readdir(FuseReply &reply, uint64_t node, uint64_t offset,
               uint32_t size) override {
    if (node != kRootNode) {
      reply.error(ENOTDIR);
      return;
    }
    FuseDirBuffer buf(size);
    if (offset == 0)
      buf.add(kPartNode, 1, DT_REG, kWindowFileName);
    reply.data(buf.bytes().data(), buf.bytes().size());
  }

private:
  void fill_root_attr(fuse_attr &attr) const {
    attr.ino = kRootNode;
    attr.mode = S_IFDIR | 0755;
    attr.nlink = 2;
    attr.uid = ::geteuid();
    attr.gid = ::getegid();
    attr.blksize = 4096;
  }

  void fill_part_attr(fuse_attr &attr) const {
    attr.ino = kPartNode;
    attr.size = spec_.size;
    attr.blocks = (spec_.size + 511) / 512;
    attr.mode = S_IFREG | (spec_.writable ? 0644 : 0444);
    attr.nlink = 1;
    attr.uid = ::geteuid();
    attr.gid = ::getegid();
    attr.blksize = 4096;
  }

  WindowSpec spec_;
  Fd backing_;
};

} // namespace

std::pair<uint64_t, uint64_t> translate_io(uint64_t window_position,
                                           uint64_t length,
                                           const WindowSpec &spec) {
  uint64_t backing_position = spec.offset + window_position;
  uint64_t clamped = 0;
  if (window_position < spec.size)
    clamped = std::min(length, spec.size - window_position);
  return {backing_position, clamped};
}

struct WindowHandle::Impl {
  WindowSpec spec;
  std::unique_ptr<WindowOps> ops;
  FuseService service;
};

WindowHandle::WindowHandle() = default;
WindowHandle::WindowHandle(WindowHandle &&) noexcept = default;
WindowHandle &WindowHandle::operator=(WindowHandle &&) noexcept = default;

WindowHandle::~WindowHandle() {
  try {
    shutdown();
  } catch (...) {
  }
}

std::string WindowHandle::part_path() const {
  return impl_->spec.mountpoint + "/" + kWindowFileName;
}

const WindowSpec &WindowHandle::spec() const { return impl_->spec; }

void WindowHandle::shutdown() {
  if (impl_)
    impl_->service.shutdown();
}

WindowHandle serve_window(const WindowSpec &spec) {
  if (spec.size == 0)
    raise(Errc::SpecOutOfBounds, "window size is zero");
  Fd backing;
  try {
    backing = spec.writable ? open_readwrite(spec.backing)
                            : open_readonly(spec.backing);
  } catch (const Error &e) {
    raise(Errc::MountFailed,
          fmt::format("backing {}: {}", spec.backing, e.what()));
  }
  uint64_t backing_length = file_size(backing.get());
  if (spec.offset > backing_length || spec.size > backing_length - spec.offset)
    raise(Errc::SpecOutOfBounds,
          fmt::format("window [{}, {}+{}) exceeds backing length {}",
                      spec.offset, spec.offset, spec.size, backing_length));
  if (!is_directory(spec.mountpoint))
    raise(Errc::MountFailed,
          fmt::format("mountpoint {} is not a directory", spec.mountpoint));

  WindowHandle handle;
  handle.impl_ = std::make_unique<WindowHandle::Impl>();
  handle.impl_->spec = spec;
  handle.impl_->ops = std::make_unique<WindowOps>(spec, std::move(backing));
  handle.impl_->service.mount(spec.mountpoint, handle.impl_->ops.get(),
                              S_IFDIR | 0755, "unsuid-window");
  handle.impl_->service.serve_async();
  return handle;
}

} // namespace unsuid
