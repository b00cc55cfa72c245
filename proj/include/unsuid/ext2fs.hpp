// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <exception>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "unsuid/util.hpp"

namespace unsuid::ext2 {

inline constexpr uint16_t kMagic = 0xEF53;
inline constexpr uint32_t kBlockSize = 4096;
inline constexpr uint32_t kInodeSize = 128;
inline constexpr uint32_t kRootInode = 2;
inline constexpr uint32_t kFirstFreeInode = 11;
inline constexpr uint32_t kBlocksPerGroup = 32768;

// Directory entry file_type codes (FILETYPE incompat feature).
inline constexpr uint8_t kFtRegular = 1;
inline constexpr uint8_t kFtDirectory = 2;
inline constexpr uint8_t kFtCharDev = 3;
inline constexpr uint8_t kFtBlockDev = 4;
inline constexpr uint8_t kFtFifo = 5;
inline constexpr uint8_t kFtSocket = 6;
inline constexpr uint8_t kFtSymlink = 7;

/// Operation-level failure carrying a POSIX errno, distinct from the
/// structural Error hierarchy: these are expected filesystem outcomes
/// (ENOENT, ENOSPC, EROFS, ...) that map straight onto FUSE replies.
class FsError : public std::exception {
public:
  explicit FsError(int errno_value) : errno_(errno_value) {}
  int code() const { return errno_; }
  const char *what() const noexcept override;

private:
  int errno_;
};

struct Attr {
  uint32_t ino = 0;
  uint32_t mode = 0;
  uint32_t uid = 0;
  uint32_t gid = 0;
  uint64_t size = 0;
  uint16_t links = 0;
  uint32_t atime = 0;
  uint32_t ctime = 0;
  uint32_t mtime = 0;
  uint64_t rdev = 0;
  uint32_t blocks512 = 0;
};

struct Dirent {
  std::string name;
  uint32_t ino = 0;
  uint8_t file_type = 0;
};

struct SetAttrRequest {
  std::optional<uint32_t> mode;
  std::optional<uint32_t> uid;
  std::optional<uint32_t> gid;
  std::optional<uint64_t> size;
  std::optional<uint32_t> atime;
  std::optional<uint32_t> mtime;
};

struct FsStats {
  uint64_t block_size = 0;
  uint64_t blocks_total = 0;
  uint64_t blocks_free = 0;
  uint64_t inodes_total = 0;
  uint64_t inodes_free = 0;
};

/// Creates an ext2 filesystem (rev 1, 4096-byte blocks, 128-byte
/// inodes, directory file types, no journal) across [offset,
/// offset+length) of the file, creating or extending it as needed.
void mkfs(const std::string &path, uint64_t offset, uint64_t length);

/// Read-write ext2 driver addressed by inode number (root is 2).
/// Single-threaded; mutations hit the backing file before returning.
class Fs {
public:
  Fs(const std::string &path, uint64_t offset, uint64_t length,
     bool writable);
  ~Fs();
  Fs(Fs &&) noexcept;
  Fs &operator=(Fs &&) noexcept;

  Attr getattr(uint32_t ino);
  std::vector<Dirent> readdir(uint32_t ino);
  std::optional<uint32_t> lookup(uint32_t dir, std::string_view name);
  std::string readlink(uint32_t ino);
  uint64_t read(uint32_t ino, uint64_t pos, std::span<std::byte> out);
  uint64_t write(uint32_t ino, uint64_t pos, std::span<const std::byte> in);
  uint32_t mknod(uint32_t dir, std::string_view name, uint32_t mode,
                 uint32_t uid, uint32_t gid, uint64_t rdev);
  uint32_t mkdir(uint32_t dir, std::string_view name, uint32_t mode,
                 uint32_t uid, uint32_t gid);
  uint32_t symlink(uint32_t dir, std::string_view name,
                   std::string_view target, uint32_t uid, uint32_t gid);
  void unlink(uint32_t dir, std::string_view name);
  void rmdir(uint32_t dir, std::string_view name);
  void rename(uint32_t old_dir, std::string_view old_name, uint32_t new_dir,
              std::string_view new_name);
  void link(uint32_t ino, uint32_t new_dir, std::string_view new_name);
  Attr setattr(uint32_t ino, const SetAttrRequest &request);
  void fsync_backing();
  FsStats statfs();

private:
  struct Super;
  struct GroupDesc;
  struct RawInode;

  std::vector<std::byte> read_block(uint32_t block);
  void write_block(uint32_t block, std::span<const std::byte> data);
  RawInode load_inode(uint32_t ino);
  void store_inode(uint32_t ino, const RawInode &inode);
  uint32_t alloc_block(uint32_t near_ino);
  void free_block(uint32_t block);
  uint32_t alloc_inode(bool directory);
  void free_inode(uint32_t ino, bool directory);
  uint32_t bmap(RawInode &inode, uint32_t file_block, bool allocate,
                uint32_t near_ino);
  uint64_t release_tree(uint32_t block, int depth);
  uint64_t prune_indirect(uint32_t block, int depth, uint64_t keep,
                          bool *now_empty);
  void truncate_inode(uint32_t ino, RawInode &inode, uint64_t new_size);
  void add_dirent(uint32_t dir, std::string_view name, uint32_t ino,
                  uint8_t file_type);
  bool remove_dirent(uint32_t dir, std::string_view name,
                     uint32_t *removed_ino);
  bool dir_is_empty(uint32_t dir);
  void write_backing(uint64_t fs_offset, std::span<const std::byte> data);
  void read_backing(uint64_t fs_offset, std::span<std::byte> data);
  void flush_super();
  void require_writable();
  uint64_t free_file(uint32_t ino, RawInode &inode);

  Fd fd_;
  uint64_t base_ = 0;
  uint64_t length_ = 0;
  bool writable_ = false;
  std::unique_ptr<Super> sb_;
  std::vector<GroupDesc> groups_;
};

} // namespace unsuid::ext2
