// SPDX-License-Identifier: Apache-2.0

#include "unsuid/fusemini.hpp"

#include <algorithm>
#include <cerrno>
#include <cstring>

#include <fcntl.h>
#include <sys/mount.h>
#include <sys/uio.h>
#include <unistd.h>

#include <fmt/format.h>

#include "unsuid/errors.hpp"

namespace unsuid {

namespace {

constexpr uint32_t kMaxWrite = 128 * 1024;
constexpr size_t kReadBufferSize = kMaxWrite + 16 * 1024;

void send_reply(int dev_fd, uint64_t unique, int error, const void *payload,
                size_t length) {
  fuse_out_header hdr{};
  hdr.len = static_cast<uint32_t>(sizeof(hdr) + length);
  hdr.error = -error;
  hdr.unique = unique;

  iovec iov[2];
  iov[0].iov_base = &hdr;
  iov[0].iov_len = sizeof(hdr);
  iov[1].iov_base = const_cast<void *>(payload);
  iov[1].iov_len = length;
  // A failed reply write means the request vanished (unmount/interrupt);
  // the loop's read will observe the same condition.
  ssize_t rc = ::writev(dev_fd, iov, length > 0 ? 2 : 1);
  (void)rc;
}

std::string read_name(std::span<const std::byte> payload) {
  const char *begin = reinterpret_cast<const char *>(payload.data());
  size_t len = ::strnlen(begin, payload.size());
  return std::string(begin, len);
}

} // namespace

void FuseReply::error(int errno_value) {
  send_reply(dev_fd_, unique_, errno_value, nullptr, 0);
}

void FuseReply::data(const void *payload, size_t length) {
  send_reply(dev_fd_, unique_, 0, payload, length);
}

bool FuseDirBuffer::add(uint64_t ino, uint64_t next_offset, uint32_t type,
                        const std::string &name) {
  size_t entry_size = FUSE_DIRENT_ALIGN(FUSE_NAME_OFFSET + name.size());
  if (data_.size() + entry_size > max_size_)
    return false;
  size_t base = data_.size();
  data_.resize(base + entry_size, std::byte{0});
  fuse_dirent ent{};
  ent.ino = ino;
  ent.off = next_offset;
  ent.namelen = static_cast<uint32_t>(name.size());
  ent.type = type;
  std::memcpy(data_.data() + base, &ent, FUSE_NAME_OFFSET);
  std::memcpy(data_.data() + base + FUSE_NAME_OFFSET, name.data(),
              name.size());
  return true;
}

void FuseOps::lookup(FuseReply &reply, uint64_t, const std::string &) {
  reply.error(ENOSYS);
}
void FuseOps::getattr(FuseReply &reply, uint64_t) { reply.error(ENOSYS); }
void FuseOps::setattr(FuseReply &reply, uint64_t, const fuse_setattr_in &) {
  reply.error(ENOSYS);
}
void FuseOps::open(FuseReply &reply, uint64_t, uint32_t) {
  reply.error(ENOSYS);
}
void FuseOps::read(FuseReply &reply, uint64_t, uint64_t, uint32_t) {
  reply.error(ENOSYS);
}
void FuseOps::write(FuseReply &reply, uint64_t, uint64_t,
                    std::span<const std::byte>) {
  reply.error(ENOSYS);
}
void FuseOps::flush(FuseReply &reply, uint64_t) { reply.empty(); }
void FuseOps::release(FuseReply &reply, uint64_t) { reply.empty(); }
void FuseOps::fsync(FuseReply &reply, uint64_t) { reply.empty(); }
void FuseOps::opendir(FuseReply &reply, uint64_t) {
  fuse_open_out out{};
  reply.open(out);
}
void FuseOps::readdir(FuseReply &reply, uint64_t, uint64_t, uint32_t) {
  reply.error(ENOSYS);
}
void FuseOps::releasedir(FuseReply &reply, uint64_t) { reply.empty(); }
void FuseOps::readlink(FuseReply &reply, uint64_t) { reply.error(ENOSYS); }
void FuseOps::mknod(FuseReply &reply, uint64_t, const std::string &, uint32_t,
                    uint32_t) {
  reply.error(ENOSYS);
}
void FuseOps::mkdir(FuseReply &reply, uint64_t, const std::string &, uint32_t,
                    uint32_t) {
  reply.error(ENOSYS);
}
void FuseOps::symlink(FuseReply &reply, uint64_t, const std::string &,
                      const std::string &) {
  reply.error(ENOSYS);
}
void FuseOps::unlink(FuseReply &reply, uint64_t, const std::string &) {
  reply.error(ENOSYS);
}
void FuseOps::rmdir(FuseReply &reply, uint64_t, const std::string &) {
  reply.error(ENOSYS);
}
void FuseOps::rename(FuseReply &reply, uint64_t, const std::string &, uint64_t,
                     const std::string &) {
  reply.error(ENOSYS);
}
void FuseOps::link(FuseReply &reply, uint64_t, uint64_t, const std::string &) {
  reply.error(ENOSYS);
}
void FuseOps::create(FuseReply &reply, uint64_t, const std::string &, uint32_t,
                     uint32_t, uint32_t) {
  reply.error(ENOSYS);
}
void FuseOps::statfs(FuseReply &reply, uint64_t) {
  fuse_statfs_out out{};
  out.st.bsize = 4096;
  out.st.namelen = 255;
  reply.statfs(out);
}
void FuseOps::access(FuseReply &reply, uint64_t, uint32_t) {
  reply.error(ENOSYS);
}
void FuseOps::forget(uint64_t, uint64_t) {}

FuseService::~FuseService() {
  try {
    shutdown();
  } catch (...) {
  }
}

void FuseService::mount(const std::string &target, FuseOps *ops,
                        uint32_t root_mode, const std::string &fsname,
                        bool read_only) {
  int raw = ::open("/dev/fuse", O_RDWR | O_CLOEXEC);
  if (raw < 0)
    raise_errno(Errc::FuseUnavailable, "open /dev/fuse");
  Fd dev(raw);

  std::string opts =
      fmt::format("fd={},rootmode={:o},user_id={},group_id={}", dev.get(),
                  root_mode & S_IFMT, ::geteuid(), ::getegid());
  unsigned long flags = MS_NOSUID | MS_NODEV;
  if (read_only)
    flags |= MS_RDONLY;
  if (::mount(fsname.c_str(), target.c_str(), "fuse", flags,
              opts.c_str()) != 0)
    raise_errno(Errc::MountFailed, fmt::format("fuse mount at {}", target));

  dev_ = std::move(dev);
  ops_ = ops;
  target_ = target;
}

void FuseService::serve() { loop(); }

void FuseService::serve_async() {
  thread_ = std::thread([this] { loop(); });
}

void FuseService::shutdown() {
  if (!target_.empty()) {
    ::umount2(target_.c_str(), MNT_DETACH);
    target_.clear();
  }
  if (thread_.joinable())
    thread_.join();
  dev_.reset();
  ops_ = nullptr;
}

void FuseService::loop() {
  std::vector<std::byte> buffer(kReadBufferSize);
  int fd = dev_.get();
  for (;;) {
    ssize_t n = ::read(fd, buffer.data(), buffer.size());
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN || errno == ENOENT)
        continue;
      break; // ENODEV after unmount, or the fd was closed
    }
    if (static_cast<size_t>(n) < sizeof(fuse_in_header))
      continue;

    const auto *hdr = reinterpret_cast<const fuse_in_header *>(buffer.data());
    std::span<const std::byte> payload(buffer.data() + sizeof(fuse_in_header),
                                       static_cast<size_t>(n) -
                                           sizeof(fuse_in_header));
    FuseReply reply(fd, hdr->unique);

    switch (hdr->opcode) {
    case FUSE_INIT: {
      const auto *in = reinterpret_cast<const fuse_init_in *>(payload.data());
      fuse_init_out out{};
      out.major = FUSE_KERNEL_VERSION;
      out.minor = std::min(in->minor, uint32_t{FUSE_KERNEL_MINOR_VERSION});
      out.max_readahead = in->max_readahead;
      out.flags = in->flags & FUSE_BIG_WRITES;
      out.max_background = 16;
      out.congestion_threshold = 12;
      out.max_write = kMaxWrite;
      out.time_gran = 1;
      max_write_ = kMaxWrite;
      if (ops_)
        ops_->init(*in);
      reply.data(&out, sizeof(out));
      break;
    }
    case FUSE_DESTROY:
      if (ops_)
        ops_->destroy();
      reply.empty();
      break;
    case FUSE_FORGET: {
      const auto *in =
          reinterpret_cast<const fuse_forget_in *>(payload.data());
      ops_->forget(hdr->nodeid, in->nlookup);
      break; // no reply by protocol
    }
    case FUSE_BATCH_FORGET:
      break; // no reply by protocol
    case FUSE_INTERRUPT:
      break; // best effort: requests here are all short-lived
    case FUSE_LOOKUP:
      ops_->lookup(reply, hdr->nodeid, read_name(payload));
      break;
    case FUSE_GETATTR:
      ops_->getattr(reply, hdr->nodeid);
      break;
    case FUSE_SETATTR: {
      const auto *in =
          reinterpret_cast<const fuse_setattr_in *>(payload.data());
      ops_->setattr(reply, hdr->nodeid, *in);
      break;
    }
    case FUSE_OPEN: {
      const auto *in = reinterpret_cast<const fuse_open_in *>(payload.data());
      ops_->open(reply, hdr->nodeid, in->flags);
      break;
    }
    case FUSE_READ: {
      const auto *in = reinterpret_cast<const fuse_read_in *>(payload.data());
      ops_->read(reply, hdr->nodeid, in->offset, in->size);
      break;
    }
    case FUSE_WRITE: {
      const auto *in = reinterpret_cast<const fuse_write_in *>(payload.data());
      std::span<const std::byte> data =
          payload.subspan(sizeof(fuse_write_in),
                          std::min<size_t>(in->size, payload.size() -
                                                         sizeof(fuse_write_in)));
      ops_->write(reply, hdr->nodeid, in->offset, data);
      break;
    }
    case FUSE_FLUSH:
      ops_->flush(reply, hdr->nodeid);
      break;
    case FUSE_RELEASE:
      ops_->release(reply, hdr->nodeid);
      break;
    case FUSE_FSYNC:
    case FUSE_FSYNCDIR:
      ops_->fsync(reply, hdr->nodeid);
      break;
    case FUSE_OPENDIR:
      ops_->opendir(reply, hdr->nodeid);
      break;
    case FUSE_READDIR: {
      const auto *in = reinterpret_cast<const fuse_read_in *>(payload.data());
      ops_->readdir(reply, hdr->nodeid, in->offset, in->size);
      break;
    }
    case FUSE_RELEASEDIR:
      ops_->releasedir(reply, hdr->nodeid);
      break;
    case FUSE_READLINK:
      ops_->readlink(reply, hdr->nodeid);
      break;
    case FUSE_MKNOD: {
      const auto *in = reinterpret_cast<const fuse_mknod_in *>(payload.data());
      ops_->mknod(reply, hdr->nodeid,
                  read_name(payload.subspan(sizeof(fuse_mknod_in))), in->mode,
                  in->umask);
      break;
    }
    case FUSE_MKDIR: {
      const auto *in = reinterpret_cast<const fuse_mkdir_in *>(payload.data());
      ops_->mkdir(reply, hdr->nodeid,
                  read_name(payload.subspan(sizeof(fuse_mkdir_in))), in->mode,
                  in->umask);
      break;
    }
    case FUSE_SYMLINK: {
      std::string name = read_name(payload);
      std::string link_target =
          read_name(payload.subspan(name.size() + 1));
      ops_->symlink(reply, hdr->nodeid, name, link_target);
      break;
    }
    case FUSE_UNLINK:
      ops_->unlink(reply, hdr->nodeid, read_name(payload));
      break;
    case FUSE_RMDIR:
      ops_->rmdir(reply, hdr->nodeid, read_name(payload));
      break;
    case FUSE_RENAME: {
      const auto *in =
          reinterpret_cast<const fuse_rename_in *>(payload.data());
      auto names = payload.subspan(sizeof(fuse_rename_in));
      std::string old_name = read_name(names);
      std::string new_name = read_name(names.subspan(old_name.size() + 1));
      ops_->rename(reply, hdr->nodeid, old_name, in->newdir, new_name);
      break;
    }
    case FUSE_RENAME2: {
      const auto *in =
          reinterpret_cast<const fuse_rename2_in *>(payload.data());
      if (in->flags != 0) {
        reply.error(EINVAL);
        break;
      }
      auto names = payload.subspan(sizeof(fuse_rename2_in));
      std::string old_name = read_name(names);
      std::string new_name = read_name(names.subspan(old_name.size() + 1));
      ops_->rename(reply, hdr->nodeid, old_name, in->newdir, new_name);
      break;
    }
    case FUSE_LINK: {
      const auto *in = reinterpret_cast<const fuse_link_in *>(payload.data());
      ops_->link(reply, in->oldnodeid, hdr->nodeid,
                 read_name(payload.subspan(sizeof(fuse_link_in))));
      break;
    }
    case FUSE_CREATE: {
      const auto *in =
          reinterpret_cast<const fuse_create_in *>(payload.data());
      ops_->create(reply, hdr->nodeid,
                   read_name(payload.subspan(sizeof(fuse_create_in))),
                   in->mode, in->umask, in->flags);
      break;
    }
    case FUSE_STATFS:
      ops_->statfs(reply, hdr->nodeid);
      break;
    case FUSE_ACCESS: {
      const auto *in =
          reinterpret_cast<const fuse_access_in *>(payload.data());
      ops_->access(reply, hdr->nodeid, in->mask);
      break;
    }
    default:
      reply.error(ENOSYS);
      break;
    }
  }
}

} // namespace unsuid
