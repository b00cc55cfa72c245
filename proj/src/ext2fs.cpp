// SPDX-License-Identifier: Apache-2.0

#include "unsuid/ext2fs.hpp"

#include <algorithm>
#include <array>
#include <cerrno>
#include <cstring>
#include <ctime>

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include "unsuid/errors.hpp"

namespace unsuid::ext2 {

namespace {

constexpr uint32_t kPtrsPerBlock = kBlockSize / 4;
constexpr uint64_t kSingleBase = 12;
constexpr uint64_t kSingleEnd = kSingleBase + kPtrsPerBlock;
constexpr uint64_t kDoubleEnd =
    kSingleEnd + uint64_t{kPtrsPerBlock} * kPtrsPerBlock;
constexpr uint64_t kMaxFileSize = 0xFFFFFFFFull;
constexpr uint32_t kNameMax = 255;
constexpr uint16_t kDirentHeader = 8;

// Deterministic filesystem identity: image bytes depend only on the size.
constexpr std::array<uint8_t, 16> kUuid = {0x75, 0x6e, 0x73, 0x75, 0x69, 0x64,
                                           0x2d, 0x65, 0x78, 0x74, 0x32, 0x2d,
                                           0x76, 0x30, 0x30, 0x31};

uint32_t now_ts() { return static_cast<uint32_t>(::time(nullptr)); }

uint64_t ceil_div(uint64_t a, uint64_t b) { return (a + b - 1) / b; }

uint16_t dirent_len(size_t name_len) {
  return static_cast<uint16_t>((kDirentHeader + name_len + 3) & ~size_t{3});
}

uint8_t ft_for_mode(uint32_t mode) {
  switch (mode & S_IFMT) {
  case S_IFREG:
    return kFtRegular;
  case S_IFDIR:
    return kFtDirectory;
  case S_IFCHR:
    return kFtCharDev;
  case S_IFBLK:
    return kFtBlockDev;
  case S_IFIFO:
    return kFtFifo;
  case S_IFSOCK:
    return kFtSocket;
  case S_IFLNK:
    return kFtSymlink;
  default:
    return 0;
  }
}

bool bit_test(std::span<const std::byte> bitmap, uint32_t index) {
  return (std::to_integer<uint8_t>(bitmap[index / 8]) >> (index % 8)) & 1u;
}

void bit_set(std::span<std::byte> bitmap, uint32_t index) {
  bitmap[index / 8] |= std::byte{static_cast<uint8_t>(1u << (index % 8))};
}

void bit_clear(std::span<std::byte> bitmap, uint32_t index) {
  bitmap[index / 8] &= std::byte{static_cast<uint8_t>(~(1u << (index % 8)))};
}

void encode_rdev(uint64_t rdev, uint32_t block[15]) {
  auto maj = static_cast<uint32_t>((rdev >> 8) & 0xFFF);
  auto min = static_cast<uint32_t>((rdev & 0xFF) | ((rdev >> 12) & 0xFFF00));
  if (maj < 256 && min < 256) {
    block[0] = (maj << 8) | min;
    block[1] = 0;
  } else {
    block[0] = 0;
    block[1] = (min & 0xFF) | (maj << 8) | ((min & ~0xFFu) << 12);
  }
}

uint64_t decode_rdev(const uint32_t block[15]) {
  uint32_t maj;
  uint32_t min;
  if (block[0] != 0) {
    maj = (block[0] >> 8) & 0xFF;
    min = block[0] & 0xFF;
  } else {
    maj = (block[1] >> 8) & 0xFFF;
    min = (block[1] & 0xFF) | ((block[1] >> 12) & 0xFFF00);
  }
  return (uint64_t{min} & 0xFF) | (uint64_t{maj} << 8) |
         ((uint64_t{min} & ~0xFFull) << 12);
}

void check_component(std::string_view name) {
  if (name.empty() || name == "." || name == ".." ||
      name.find('/') != std::string_view::npos ||
      name.find('\0') != std::string_view::npos)
    throw FsError(EINVAL);
  if (name.size() > kNameMax)
    throw FsError(ENAMETOOLONG);
}

void put_dirent(std::span<std::byte> block, size_t offset, uint32_t ino,
                uint16_t rec_len, std::string_view name, uint8_t file_type) {
  put_le32(block, offset, ino);
  put_le16(block, offset + 4, rec_len);
  block[offset + 6] = std::byte{static_cast<uint8_t>(name.size())};
  block[offset + 7] = std::byte{file_type};
  std::memcpy(block.data() + offset + 8, name.data(), name.size());
}

} // namespace

const char *FsError::what() const noexcept { return "ext2 operation error"; }

struct Fs::Super {
  std::vector<std::byte> raw; // 1024 bytes at filesystem offset 1024
  uint32_t inodes_count = 0;
  uint32_t blocks_count = 0;
  uint32_t free_blocks = 0;
  uint32_t free_inodes = 0;
  uint32_t inodes_per_group = 0;
  uint32_t blocks_per_group = 0;
  uint32_t groups = 0;
};

struct Fs::GroupDesc {
  uint32_t block_bitmap = 0;
  uint32_t inode_bitmap = 0;
  uint32_t inode_table = 0;
  uint16_t free_blocks = 0;
  uint16_t free_inodes = 0;
  uint16_t used_dirs = 0;
};

struct Fs::RawInode {
  uint32_t mode = 0;
  uint32_t uid = 0;
  uint32_t gid = 0;
  uint64_t size = 0;
  uint32_t atime = 0;
  uint32_t ctime = 0;
  uint32_t mtime = 0;
  uint32_t dtime = 0;
  uint16_t links = 0;
  uint32_t blocks512 = 0;
  uint32_t block[15] = {};
  std::array<char, 60> inline_target{};

  bool fast_symlink() const { return S_ISLNK(mode) && blocks512 == 0; }

  static RawInode parse(std::span<const std::byte> raw) {
    RawInode inode;
    inode.mode = le16(raw, 0);
    inode.uid = le16(raw, 2) | (uint32_t{le16(raw, 120)} << 16);
    inode.size = le32(raw, 4);
    inode.atime = le32(raw, 8);
    inode.ctime = le32(raw, 12);
    inode.mtime = le32(raw, 16);
    inode.dtime = le32(raw, 20);
    inode.gid = le16(raw, 24) | (uint32_t{le16(raw, 122)} << 16);
    inode.links = le16(raw, 26);
    inode.blocks512 = le32(raw, 28);
    for (size_t i = 0; i < 15; ++i)
      inode.block[i] = le32(raw, 40 + i * 4);
    std::memcpy(inode.inline_target.data(), raw.data() + 40, 60);
    return inode;
  }

  void serialize(std::span<std::byte> raw) const {
    std::memset(raw.data(), 0, kInodeSize);
    put_le16(raw, 0, static_cast<uint16_t>(mode));
    put_le16(raw, 2, static_cast<uint16_t>(uid));
    put_le32(raw, 4, static_cast<uint32_t>(size));
    put_le32(raw, 8, atime);
    put_le32(raw, 12, ctime);
    put_le32(raw, 16, mtime);
    put_le32(raw, 20, dtime);
    put_le16(raw, 24, static_cast<uint16_t>(gid));
    put_le16(raw, 26, links);
    put_le32(raw, 28, blocks512);
    if (fast_symlink())
      std::memcpy(raw.data() + 40, inline_target.data(), 60);
    else
      for (size_t i = 0; i < 15; ++i)
        put_le32(raw, 40 + i * 4, block[i]);
    put_le16(raw, 120, static_cast<uint16_t>(uid >> 16));
    put_le16(raw, 122, static_cast<uint16_t>(gid >> 16));
  }
};

// ---------------------------------------------------------------------------
// mkfs

void mkfs(const std::string &path, uint64_t offset, uint64_t length) {
  uint64_t blocks64 = length / kBlockSize;
  if (blocks64 < 64)
    raise(Errc::InvalidRequest, "ext image too small: " + path);
  if (blocks64 > 0xFFFFFFFFull)
    raise(Errc::InvalidRequest, "ext image too large: " + path);

  uint32_t groups =
      static_cast<uint32_t>(ceil_div(blocks64, kBlocksPerGroup));
  uint64_t total_inodes = std::max<uint64_t>(16, length >> 14);
  uint32_t ipg = static_cast<uint32_t>(
      std::min<uint64_t>((ceil_div(total_inodes, groups) + 7) & ~7ull,
                         uint64_t{8} * kBlockSize));
  uint32_t itable_blocks =
      static_cast<uint32_t>(ceil_div(uint64_t{ipg} * kInodeSize, kBlockSize));

  // A runt trailing group without room for its metadata is dropped.
  if (groups > 1) {
    uint64_t runt = blocks64 - uint64_t{groups - 1} * kBlocksPerGroup;
    if (runt < uint64_t{2} + itable_blocks + 8) {
      blocks64 = uint64_t{groups - 1} * kBlocksPerGroup;
      groups -= 1;
    }
  }
  auto blocks = static_cast<uint32_t>(blocks64);
  uint32_t gdt_blocks =
      static_cast<uint32_t>(ceil_div(uint64_t{groups} * 32, kBlockSize));

  struct Layout {
    uint32_t base;
    uint32_t count;
    uint32_t block_bitmap;
    uint32_t inode_bitmap;
    uint32_t inode_table;
    uint32_t data_start;
  };
  std::vector<Layout> layout(groups);
  for (uint32_t g = 0; g < groups; ++g) {
    auto &l = layout[g];
    l.base = g * kBlocksPerGroup;
    l.count = std::min<uint32_t>(kBlocksPerGroup, blocks - l.base);
    l.block_bitmap = l.base + (g == 0 ? 1 + gdt_blocks : 0);
    l.inode_bitmap = l.block_bitmap + 1;
    l.inode_table = l.inode_bitmap + 1;
    l.data_start = l.inode_table + itable_blocks;
    if (l.data_start + (g == 0 ? 1 : 0) >= l.base + l.count)
      raise(Errc::InvalidRequest, "ext image too small: " + path);
  }
  uint32_t root_block = layout[0].data_start;

  int raw_fd = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (raw_fd < 0)
    raise_errno(Errc::Io, "open " + path);
  Fd fd(raw_fd);
  if (file_size(fd.get()) < offset + length &&
      ::ftruncate(fd.get(), static_cast<off_t>(offset + length)) != 0)
    raise_errno(Errc::Io, "ftruncate " + path);

  auto write_fs = [&](uint64_t fs_off, std::span<const std::byte> data) {
    write_all_at(fd.get(), offset + fs_off, data);
  };
  std::vector<std::byte> zero(kBlockSize);
  for (const auto &l : layout)
    for (uint32_t b = l.base; b < l.data_start; ++b)
      write_fs(uint64_t{b} * kBlockSize, zero);

  uint64_t free_blocks_total = 0;
  std::vector<std::byte> bitmap(kBlockSize);
  for (uint32_t g = 0; g < groups; ++g) {
    const auto &l = layout[g];
    uint32_t used = l.data_start - l.base + (g == 0 ? 1 : 0);
    std::memset(bitmap.data(), 0, kBlockSize);
    for (uint32_t i = 0; i < used; ++i)
      bit_set(bitmap, i);
    for (uint32_t i = l.count; i < kBlocksPerGroup; ++i)
      bit_set(bitmap, i);
    write_fs(uint64_t{l.block_bitmap} * kBlockSize, bitmap);
    free_blocks_total += l.count - used;

    std::memset(bitmap.data(), 0, kBlockSize);
    if (g == 0)
      for (uint32_t i = 0; i < kFirstFreeInode - 1; ++i)
        bit_set(bitmap, i);
    for (uint32_t i = ipg; i < 8 * kBlockSize; ++i)
      bit_set(bitmap, i);
    write_fs(uint64_t{l.inode_bitmap} * kBlockSize, bitmap);
  }
  uint64_t free_inodes_total =
      uint64_t{ipg} * groups - (kFirstFreeInode - 1);

  // Group descriptor table.
  std::vector<std::byte> gdt(uint64_t{gdt_blocks} * kBlockSize);
  for (uint32_t g = 0; g < groups; ++g) {
    const auto &l = layout[g];
    size_t at = size_t{g} * 32;
    put_le32(gdt, at + 0, l.block_bitmap);
    put_le32(gdt, at + 4, l.inode_bitmap);
    put_le32(gdt, at + 8, l.inode_table);
    put_le16(gdt, at + 12,
             static_cast<uint16_t>(l.count - (l.data_start - l.base) -
                                   (g == 0 ? 1 : 0)));
    put_le16(gdt, at + 14,
             static_cast<uint16_t>(g == 0 ? ipg - (kFirstFreeInode - 1) : ipg));
    put_le16(gdt, at + 16, g == 0 ? 1 : 0);
  }
  write_fs(kBlockSize, gdt);

  // Root directory: inode 2 plus a single listing block, owned by the
  // creating user so an identity-mapped mount can write to it.
  std::vector<std::byte> inode_raw(kInodeSize);
  put_le16(inode_raw, 0, S_IFDIR | 0755);
  put_le16(inode_raw, 2, static_cast<uint16_t>(::geteuid()));
  put_le32(inode_raw, 4, kBlockSize);
  put_le16(inode_raw, 24, static_cast<uint16_t>(::getegid()));
  put_le16(inode_raw, 26, 2);               // links: "." and ".."
  put_le32(inode_raw, 28, kBlockSize / 512);
  put_le32(inode_raw, 40, root_block);
  put_le16(inode_raw, 120, static_cast<uint16_t>(::geteuid() >> 16));
  put_le16(inode_raw, 122, static_cast<uint16_t>(::getegid() >> 16));
  write_fs(uint64_t{layout[0].inode_table} * kBlockSize +
               (kRootInode - 1) * kInodeSize,
           inode_raw);

  std::vector<std::byte> dirblk(kBlockSize);
  put_dirent(dirblk, 0, kRootInode, 12, ".", kFtDirectory);
  put_dirent(dirblk, 12, kRootInode, kBlockSize - 12, "..", kFtDirectory);
  write_fs(uint64_t{root_block} * kBlockSize, dirblk);

  std::vector<std::byte> sb(1024);
  put_le32(sb, 0, ipg * groups);             // s_inodes_count
  put_le32(sb, 4, blocks);                   // s_blocks_count
  put_le32(sb, 8, 0);                        // s_r_blocks_count
  put_le32(sb, 12, static_cast<uint32_t>(free_blocks_total));
  put_le32(sb, 16, static_cast<uint32_t>(free_inodes_total));
  put_le32(sb, 20, 0);                       // s_first_data_block
  put_le32(sb, 24, 2);                       // s_log_block_size: 4096
  put_le32(sb, 28, 2);                       // s_log_frag_size
  put_le32(sb, 32, kBlocksPerGroup);
  put_le32(sb, 36, kBlocksPerGroup);         // s_frags_per_group
  put_le32(sb, 40, ipg);
  put_le16(sb, 54, 0xFFFF);                  // s_max_mnt_count: never
  put_le16(sb, 56, kMagic);
  put_le16(sb, 58, 1);                       // s_state: clean
  put_le16(sb, 60, 1);                       // s_errors: continue
  put_le32(sb, 76, 1);                       // s_rev_level
  put_le32(sb, 84, kFirstFreeInode);
  put_le16(sb, 88, kInodeSize);
  put_le32(sb, 96, 0x2);                     // incompat: FILETYPE
  put_le32(sb, 100, 0x1);                    // ro_compat: SPARSE_SUPER
  for (size_t i = 0; i < kUuid.size(); ++i)
    sb[104 + i] = std::byte{kUuid[i]};
  write_fs(1024, sb);
}

// ---------------------------------------------------------------------------
// driver

Fs::Fs(const std::string &path, uint64_t offset, uint64_t length,
       bool writable)
    : base_(offset), length_(length), writable_(writable) {
  fd_ = writable ? open_readwrite(path) : open_readonly(path);
  if (length_ == 0)
    length_ = file_size(fd_.get()) - std::min(file_size(fd_.get()), offset);
  if (length_ < 2048)
    raise(Errc::Truncated, "ext image shorter than a superblock: " + path);

  auto sb = std::make_unique<Super>();
  sb->raw.resize(1024);
  read_exact_at(fd_.get(), base_ + 1024, sb->raw);
  if (le16(sb->raw, 56) != kMagic)
    raise(Errc::BadMagic, "not an ext filesystem: " + path);
  if (le32(sb->raw, 76) != 1)
    raise(Errc::BadVersion, "unsupported ext revision: " + path);
  if (le32(sb->raw, 24) != 2)
    raise(Errc::FormatFailed, "unsupported ext block size: " + path);
  if ((le32(sb->raw, 96) & ~0x2u) != 0)
    raise(Errc::FormatFailed, "unsupported ext incompat features: " + path);
  if (le16(sb->raw, 88) != kInodeSize)
    raise(Errc::FormatFailed, "unsupported ext inode size: " + path);
  sb->inodes_count = le32(sb->raw, 0);
  sb->blocks_count = le32(sb->raw, 4);
  sb->free_blocks = le32(sb->raw, 12);
  sb->free_inodes = le32(sb->raw, 16);
  sb->blocks_per_group = le32(sb->raw, 32);
  sb->inodes_per_group = le32(sb->raw, 40);
  if (sb->blocks_per_group == 0 || sb->inodes_per_group == 0)
    raise(Errc::FormatFailed, "corrupt ext superblock: " + path);
  if (uint64_t{sb->blocks_count} * kBlockSize > length_)
    raise(Errc::Truncated, "ext filesystem exceeds its partition: " + path);
  sb->groups = static_cast<uint32_t>(
      ceil_div(sb->blocks_count, sb->blocks_per_group));
  sb_ = std::move(sb);

  std::vector<std::byte> gdt(
      ceil_div(uint64_t{sb_->groups} * 32, kBlockSize) * kBlockSize);
  read_exact_at(fd_.get(), base_ + kBlockSize, gdt);
  groups_.resize(sb_->groups);
  for (uint32_t g = 0; g < sb_->groups; ++g) {
    size_t at = size_t{g} * 32;
    groups_[g].block_bitmap = le32(gdt, at + 0);
    groups_[g].inode_bitmap = le32(gdt, at + 4);
    groups_[g].inode_table = le32(gdt, at + 8);
    groups_[g].free_blocks = le16(gdt, at + 12);
    groups_[g].free_inodes = le16(gdt, at + 14);
    groups_[g].used_dirs = le16(gdt, at + 16);
  }
}

Fs::~Fs() = default;
Fs::Fs(Fs &&) noexcept = default;
Fs &Fs::operator=(Fs &&) noexcept = default;

void Fs::read_backing(uint64_t fs_offset, std::span<std::byte> data) {
  read_exact_at(fd_.get(), base_ + fs_offset, data);
}

void Fs::write_backing(uint64_t fs_offset, std::span<const std::byte> data) {
  write_all_at(fd_.get(), base_ + fs_offset, data);
}

std::vector<std::byte> Fs::read_block(uint32_t block) {
  if (block == 0 || block >= sb_->blocks_count)
    throw FsError(EIO);
  std::vector<std::byte> data(kBlockSize);
  read_backing(uint64_t{block} * kBlockSize, data);
  return data;
}

void Fs::write_block(uint32_t block, std::span<const std::byte> data) {
  if (block == 0 || block >= sb_->blocks_count)
    throw FsError(EIO);
  write_backing(uint64_t{block} * kBlockSize, data);
}

void Fs::require_writable() {
  if (!writable_)
    throw FsError(EROFS);
}

void Fs::flush_super() {
  put_le32(sb_->raw, 12, sb_->free_blocks);
  put_le32(sb_->raw, 16, sb_->free_inodes);
  put_le32(sb_->raw, 48, now_ts()); // s_wtime
  write_backing(1024, sb_->raw);

  std::vector<std::byte> gdt(
      ceil_div(uint64_t{sb_->groups} * 32, kBlockSize) * kBlockSize);
  read_backing(kBlockSize, gdt);
  for (uint32_t g = 0; g < sb_->groups; ++g) {
    size_t at = size_t{g} * 32;
    put_le16(gdt, at + 12, groups_[g].free_blocks);
    put_le16(gdt, at + 14, groups_[g].free_inodes);
    put_le16(gdt, at + 16, groups_[g].used_dirs);
  }
  write_backing(kBlockSize, gdt);
}

Fs::RawInode Fs::load_inode(uint32_t ino) {
  if (ino == 0 || ino > sb_->inodes_count)
    throw FsError(EIO);
  uint32_t group = (ino - 1) / sb_->inodes_per_group;
  uint32_t index = (ino - 1) % sb_->inodes_per_group;
  std::vector<std::byte> raw(kInodeSize);
  read_backing(uint64_t{groups_[group].inode_table} * kBlockSize +
                   uint64_t{index} * kInodeSize,
               raw);
  return RawInode::parse(raw);
}

void Fs::store_inode(uint32_t ino, const RawInode &inode) {
  uint32_t group = (ino - 1) / sb_->inodes_per_group;
  uint32_t index = (ino - 1) % sb_->inodes_per_group;
  std::vector<std::byte> raw(kInodeSize);
  inode.serialize(raw);
  write_backing(uint64_t{groups_[group].inode_table} * kBlockSize +
                    uint64_t{index} * kInodeSize,
                raw);
}

uint32_t Fs::alloc_block(uint32_t near_ino) {
  uint32_t start_group =
      near_ino == 0 ? 0 : (near_ino - 1) / sb_->inodes_per_group;
  for (uint32_t pass = 0; pass < sb_->groups; ++pass) {
    uint32_t g = (start_group + pass) % sb_->groups;
    if (groups_[g].free_blocks == 0)
      continue;
    uint32_t group_blocks = std::min<uint32_t>(
        sb_->blocks_per_group,
        sb_->blocks_count - g * sb_->blocks_per_group);
    auto bitmap = read_block(groups_[g].block_bitmap);
    for (uint32_t i = 0; i < group_blocks; ++i) {
      if (bit_test(bitmap, i))
        continue;
      bit_set(bitmap, i);
      write_block(groups_[g].block_bitmap, bitmap);
      groups_[g].free_blocks -= 1;
      sb_->free_blocks -= 1;
      flush_super();
      uint32_t block = g * sb_->blocks_per_group + i;
      std::vector<std::byte> zero(kBlockSize);
      write_block(block, zero);
      return block;
    }
  }
  throw FsError(ENOSPC);
}

void Fs::free_block(uint32_t block) {
  if (block == 0 || block >= sb_->blocks_count)
    throw FsError(EIO);
  uint32_t g = block / sb_->blocks_per_group;
  uint32_t i = block % sb_->blocks_per_group;
  auto bitmap = read_block(groups_[g].block_bitmap);
  if (!bit_test(bitmap, i))
    throw FsError(EIO);
  bit_clear(bitmap, i);
  write_block(groups_[g].block_bitmap, bitmap);
  groups_[g].free_blocks += 1;
  sb_->free_blocks += 1;
  flush_super();
}

uint32_t Fs::alloc_inode(bool directory) {
  for (uint32_t g = 0; g < sb_->groups; ++g) {
    if (groups_[g].free_inodes == 0)
      continue;
    auto bitmap = read_block(groups_[g].inode_bitmap);
    for (uint32_t i = 0; i < sb_->inodes_per_group; ++i) {
      if (bit_test(bitmap, i))
        continue;
      bit_set(bitmap, i);
      write_block(groups_[g].inode_bitmap, bitmap);
      groups_[g].free_inodes -= 1;
      sb_->free_inodes -= 1;
      if (directory)
        groups_[g].used_dirs += 1;
      flush_super();
      return g * sb_->inodes_per_group + i + 1;
    }
  }
  throw FsError(ENOSPC);
}

void Fs::free_inode(uint32_t ino, bool directory) {
  uint32_t g = (ino - 1) / sb_->inodes_per_group;
  uint32_t i = (ino - 1) % sb_->inodes_per_group;
  auto bitmap = read_block(groups_[g].inode_bitmap);
  bit_clear(bitmap, i);
  write_block(groups_[g].inode_bitmap, bitmap);
  groups_[g].free_inodes += 1;
  sb_->free_inodes += 1;
  if (directory && groups_[g].used_dirs > 0)
    groups_[g].used_dirs -= 1;
  flush_super();
}

uint32_t Fs::bmap(RawInode &inode, uint32_t file_block, bool allocate,
                  uint32_t near_ino) {
  uint64_t fbi = file_block;
  if (fbi < kSingleBase) {
    uint32_t b = inode.block[fbi];
    if (b == 0 && allocate) {
      b = alloc_block(near_ino);
      inode.block[fbi] = b;
      inode.blocks512 += kBlockSize / 512;
    }
    return b;
  }

  size_t slot;
  std::array<uint32_t, 2> idx{};
  int depth;
  if (fbi < kSingleEnd) {
    slot = 12;
    depth = 1;
    idx[0] = static_cast<uint32_t>(fbi - kSingleBase);
  } else if (fbi < kDoubleEnd) {
    slot = 13;
    depth = 2;
    idx[0] = static_cast<uint32_t>((fbi - kSingleEnd) / kPtrsPerBlock);
    idx[1] = static_cast<uint32_t>((fbi - kSingleEnd) % kPtrsPerBlock);
  } else {
    throw FsError(EFBIG);
  }

  uint32_t cur = inode.block[slot];
  if (cur == 0) {
    if (!allocate)
      return 0;
    cur = alloc_block(near_ino);
    inode.block[slot] = cur;
    inode.blocks512 += kBlockSize / 512;
  }
  for (int level = 0; level < depth; ++level) {
    auto data = read_block(cur);
    uint32_t next = le32(data, size_t{idx[level]} * 4);
    if (next == 0) {
      if (!allocate)
        return 0;
      next = alloc_block(near_ino);
      inode.blocks512 += kBlockSize / 512;
      put_le32(data, size_t{idx[level]} * 4, next);
      write_block(cur, data);
    }
    cur = next;
  }
  return cur;
}

uint64_t Fs::release_tree(uint32_t block, int depth) {
  uint64_t count = 1;
  auto data = read_block(block);
  for (size_t i = 0; i < kPtrsPerBlock; ++i) {
    uint32_t child = le32(data, i * 4);
    if (child == 0)
      continue;
    if (depth == 0) {
      free_block(child);
      ++count;
    } else {
      count += release_tree(child, depth - 1);
    }
  }
  free_block(block);
  return count;
}

uint64_t Fs::prune_indirect(uint32_t block, int depth, uint64_t keep,
                            bool *now_empty) {
  auto data = read_block(block);
  uint64_t per = 1;
  for (int i = 0; i < depth; ++i)
    per *= kPtrsPerBlock;
  bool dirty = false;
  bool empty = true;
  uint64_t freed = 0;
  for (size_t i = 0; i < kPtrsPerBlock; ++i) {
    uint32_t child = le32(data, i * 4);
    if (child == 0)
      continue;
    uint64_t start = i * per;
    if (start >= keep) {
      if (depth == 0) {
        free_block(child);
        ++freed;
      } else {
        freed += release_tree(child, depth - 1);
      }
      put_le32(data, i * 4, 0);
      dirty = true;
    } else if (depth > 0 && start + per > keep) {
      bool sub_empty = false;
      freed += prune_indirect(child, depth - 1, keep - start, &sub_empty);
      if (sub_empty) {
        free_block(child);
        ++freed;
        put_le32(data, i * 4, 0);
        dirty = true;
      } else {
        empty = false;
      }
    } else {
      empty = false;
    }
  }
  if (dirty)
    write_block(block, data);
  *now_empty = empty;
  return freed;
}

void Fs::truncate_inode(uint32_t ino, RawInode &inode, uint64_t new_size) {
  if (new_size > kMaxFileSize)
    throw FsError(EFBIG);
  uint64_t old_size = inode.size;
  if (new_size < old_size) {
    uint64_t keep = ceil_div(new_size, kBlockSize);
    for (uint64_t i = keep; i < kSingleBase && i < 12; ++i) {
      if (inode.block[i] != 0) {
        free_block(inode.block[i]);
        inode.block[i] = 0;
        inode.blocks512 -= kBlockSize / 512;
      }
    }
    if (inode.block[12] != 0) {
      if (keep <= kSingleBase) {
        uint64_t freed = release_tree(inode.block[12], 0);
        inode.blocks512 -= static_cast<uint32_t>(freed * (kBlockSize / 512));
        inode.block[12] = 0;
      } else if (keep < kSingleEnd) {
        bool empty = false;
        uint64_t freed =
            prune_indirect(inode.block[12], 0, keep - kSingleBase, &empty);
        inode.blocks512 -= static_cast<uint32_t>(freed * (kBlockSize / 512));
        if (empty) {
          free_block(inode.block[12]);
          inode.blocks512 -= kBlockSize / 512;
          inode.block[12] = 0;
        }
      }
    }
    if (inode.block[13] != 0) {
      if (keep <= kSingleEnd) {
        uint64_t freed = release_tree(inode.block[13], 1);
        inode.blocks512 -= static_cast<uint32_t>(freed * (kBlockSize / 512));
        inode.block[13] = 0;
      } else if (keep < kDoubleEnd) {
        bool empty = false;
        uint64_t freed =
            prune_indirect(inode.block[13], 1, keep - kSingleEnd, &empty);
        inode.blocks512 -= static_cast<uint32_t>(freed * (kBlockSize / 512));
        if (empty) {
          free_block(inode.block[13]);
          inode.blocks512 -= kBlockSize / 512;
          inode.block[13] = 0;
        }
      }
    }
    if (new_size % kBlockSize != 0) {
      uint32_t last = bmap(
          inode, static_cast<uint32_t>(new_size / kBlockSize), false, ino);
      if (last != 0) {
        auto data = read_block(last);
        std::memset(data.data() + new_size % kBlockSize, 0,
                    kBlockSize - new_size % kBlockSize);
        write_block(last, data);
      }
    }
  }
  inode.size = new_size;
  inode.mtime = inode.ctime = now_ts();
  store_inode(ino, inode);
}

uint64_t Fs::free_file(uint32_t ino, RawInode &inode) {
  (void)ino;
  if (inode.fast_symlink())
    return 0;
  if (!S_ISREG(inode.mode) && !S_ISDIR(inode.mode) && !S_ISLNK(inode.mode))
    return 0; // device and fifo inodes carry no blocks
  uint64_t freed = 0;
  for (size_t i = 0; i < 12; ++i) {
    if (inode.block[i] != 0) {
      free_block(inode.block[i]);
      inode.block[i] = 0;
      ++freed;
    }
  }
  for (size_t slot = 12; slot < 15; ++slot) {
    if (inode.block[slot] != 0) {
      freed += release_tree(inode.block[slot], static_cast<int>(slot - 12));
      inode.block[slot] = 0;
    }
  }
  inode.blocks512 = 0;
  return freed;
}

// ---------------------------------------------------------------------------
// directory internals

namespace {

struct DirentView {
  uint32_t ino;
  uint16_t rec_len;
  uint8_t name_len;
  uint8_t file_type;
  std::string_view name;
};

DirentView parse_dirent(std::span<const std::byte> block, size_t offset) {
  if (offset + kDirentHeader > block.size())
    throw FsError(EIO);
  DirentView view;
  view.ino = le32(block, offset);
  view.rec_len = le16(block, offset + 4);
  view.name_len = std::to_integer<uint8_t>(block[offset + 6]);
  view.file_type = std::to_integer<uint8_t>(block[offset + 7]);
  if (view.rec_len < kDirentHeader || view.rec_len % 4 != 0 ||
      offset + view.rec_len > block.size() ||
      kDirentHeader + view.name_len > view.rec_len)
    throw FsError(EIO);
  view.name = std::string_view(
      reinterpret_cast<const char *>(block.data() + offset + kDirentHeader),
      view.name_len);
  return view;
}

} // namespace

std::vector<Dirent> Fs::readdir(uint32_t ino) {
  RawInode dir = load_inode(ino);
  if (!S_ISDIR(dir.mode))
    throw FsError(ENOTDIR);
  std::vector<Dirent> out;
  uint64_t nblocks = dir.size / kBlockSize;
  for (uint64_t fbi = 0; fbi < nblocks; ++fbi) {
    uint32_t block = bmap(dir, static_cast<uint32_t>(fbi), false, ino);
    if (block == 0)
      continue;
    auto data = read_block(block);
    size_t off = 0;
    while (off < kBlockSize) {
      DirentView view = parse_dirent(data, off);
      if (view.ino != 0)
        out.push_back({std::string(view.name), view.ino, view.file_type});
      off += view.rec_len;
    }
  }
  return out;
}

std::optional<uint32_t> Fs::lookup(uint32_t dir_ino, std::string_view name) {
  RawInode dir = load_inode(dir_ino);
  if (!S_ISDIR(dir.mode))
    throw FsError(ENOTDIR);
  uint64_t nblocks = dir.size / kBlockSize;
  for (uint64_t fbi = 0; fbi < nblocks; ++fbi) {
    uint32_t block = bmap(dir, static_cast<uint32_t>(fbi), false, dir_ino);
    if (block == 0)
      continue;
    auto data = read_block(block);
    size_t off = 0;
    while (off < kBlockSize) {
      DirentView view = parse_dirent(data, off);
      if (view.ino != 0 && view.name == name)
        return view.ino;
      off += view.rec_len;
    }
  }
  return std::nullopt;
}

void Fs::add_dirent(uint32_t dir_ino, std::string_view name, uint32_t ino,
                    uint8_t file_type) {
  uint16_t needed = dirent_len(name.size());
  RawInode dir = load_inode(dir_ino);
  uint64_t nblocks = dir.size / kBlockSize;
  for (uint64_t fbi = 0; fbi < nblocks; ++fbi) {
    uint32_t block = bmap(dir, static_cast<uint32_t>(fbi), false, dir_ino);
    if (block == 0)
      continue;
    auto data = read_block(block);
    size_t off = 0;
    while (off < kBlockSize) {
      DirentView view = parse_dirent(data, off);
      uint16_t used = view.ino != 0 ? dirent_len(view.name_len) : 0;
      if (view.rec_len - used >= needed) {
        if (used != 0)
          put_le16(data, off + 4, used);
        put_dirent(data, off + used,
                   ino, static_cast<uint16_t>(view.rec_len - used), name,
                   file_type);
        write_block(block, data);
        return;
      }
      off += view.rec_len;
    }
  }
  // No room in the existing listing: append one block.
  uint32_t block =
      bmap(dir, static_cast<uint32_t>(nblocks), true, dir_ino);
  std::vector<std::byte> data(kBlockSize);
  put_dirent(data, 0, ino, kBlockSize, name, file_type);
  write_block(block, data);
  dir.size += kBlockSize;
  store_inode(dir_ino, dir);
}

bool Fs::remove_dirent(uint32_t dir_ino, std::string_view name,
                       uint32_t *removed_ino) {
  RawInode dir = load_inode(dir_ino);
  uint64_t nblocks = dir.size / kBlockSize;
  for (uint64_t fbi = 0; fbi < nblocks; ++fbi) {
    uint32_t block = bmap(dir, static_cast<uint32_t>(fbi), false, dir_ino);
    if (block == 0)
      continue;
    auto data = read_block(block);
    size_t off = 0;
    size_t prev_off = kBlockSize; // sentinel: no previous entry yet
    while (off < kBlockSize) {
      DirentView view = parse_dirent(data, off);
      if (view.ino != 0 && view.name == name) {
        if (removed_ino != nullptr)
          *removed_ino = view.ino;
        if (prev_off != kBlockSize) {
          // Merge into the previous entry's slack.
          uint16_t prev_rec = le16(data, prev_off + 4);
          put_le16(data, prev_off + 4,
                   static_cast<uint16_t>(prev_rec + view.rec_len));
        } else {
          put_le32(data, off, 0);
        }
        write_block(block, data);
        return true;
      }
      prev_off = off;
      off += view.rec_len;
    }
  }
  return false;
}

bool Fs::dir_is_empty(uint32_t dir_ino) {
  for (const auto &entry : readdir(dir_ino))
    if (entry.name != "." && entry.name != "..")
      return false;
  return true;
}

// ---------------------------------------------------------------------------
// public operations

Attr Fs::getattr(uint32_t ino) {
  RawInode inode = load_inode(ino);
  Attr attr;
  attr.ino = ino;
  attr.mode = inode.mode;
  attr.uid = inode.uid;
  attr.gid = inode.gid;
  attr.size = inode.size;
  attr.links = inode.links;
  attr.atime = inode.atime;
  attr.ctime = inode.ctime;
  attr.mtime = inode.mtime;
  attr.blocks512 = inode.blocks512;
  if (S_ISCHR(inode.mode) || S_ISBLK(inode.mode))
    attr.rdev = decode_rdev(inode.block);
  return attr;
}

std::string Fs::readlink(uint32_t ino) {
  RawInode inode = load_inode(ino);
  if (!S_ISLNK(inode.mode))
    throw FsError(EINVAL);
  if (inode.fast_symlink())
    return std::string(inode.inline_target.data(),
                       std::min<uint64_t>(inode.size, 60));
  uint32_t block = bmap(inode, 0, false, ino);
  if (block == 0)
    throw FsError(EIO);
  auto data = read_block(block);
  return std::string(reinterpret_cast<const char *>(data.data()),
                     std::min<uint64_t>(inode.size, kBlockSize));
}

uint64_t Fs::read(uint32_t ino, uint64_t pos, std::span<std::byte> out) {
  RawInode inode = load_inode(ino);
  if (S_ISDIR(inode.mode))
    throw FsError(EISDIR);
  if (!S_ISREG(inode.mode))
    throw FsError(EINVAL);
  if (pos >= inode.size || out.empty())
    return 0;
  uint64_t n = std::min<uint64_t>(out.size(), inode.size - pos);
  uint64_t done = 0;
  while (done < n) {
    uint64_t at = pos + done;
    uint64_t in_block = at % kBlockSize;
    uint64_t chunk = std::min(n - done, kBlockSize - in_block);
    uint32_t block =
        bmap(inode, static_cast<uint32_t>(at / kBlockSize), false, ino);
    if (block == 0) {
      std::memset(out.data() + done, 0, chunk);
    } else {
      auto data = read_block(block);
      std::memcpy(out.data() + done, data.data() + in_block, chunk);
    }
    done += chunk;
  }
  return n;
}

uint64_t Fs::write(uint32_t ino, uint64_t pos,
                   std::span<const std::byte> in) {
  require_writable();
  RawInode inode = load_inode(ino);
  if (S_ISDIR(inode.mode))
    throw FsError(EISDIR);
  if (!S_ISREG(inode.mode))
    throw FsError(EINVAL);
  if (in.empty())
    return 0;
  uint64_t end = pos + in.size();
  if (end > kMaxFileSize)
    throw FsError(EFBIG);
  uint64_t done = 0;
  try {
    while (done < in.size()) {
      uint64_t at = pos + done;
      uint64_t in_block = at % kBlockSize;
      uint64_t chunk = std::min<uint64_t>(in.size() - done,
                                          kBlockSize - in_block);
      uint32_t block =
          bmap(inode, static_cast<uint32_t>(at / kBlockSize), true, ino);
      if (chunk == kBlockSize) {
        write_block(block, in.subspan(done, chunk));
      } else {
        auto data = read_block(block);
        std::memcpy(data.data() + in_block, in.data() + done, chunk);
        write_block(block, data);
      }
      done += chunk;
    }
  } catch (const FsError &) {
    // Keep already-allocated blocks reachable before surfacing the error.
    store_inode(ino, inode);
    throw;
  }
  inode.size = std::max(inode.size, end);
  inode.mtime = inode.ctime = now_ts();
  store_inode(ino, inode);
  return in.size();
}

uint32_t Fs::mknod(uint32_t dir, std::string_view name, uint32_t mode,
                   uint32_t uid, uint32_t gid, uint64_t rdev) {
  require_writable();
  check_component(name);
  uint32_t fmt = mode & S_IFMT;
  if (fmt != S_IFREG && fmt != S_IFCHR && fmt != S_IFBLK && fmt != S_IFIFO &&
      fmt != S_IFSOCK)
    throw FsError(EINVAL);
  RawInode parent = load_inode(dir);
  if (!S_ISDIR(parent.mode))
    throw FsError(ENOTDIR);
  if (lookup(dir, name).has_value())
    throw FsError(EEXIST);

  uint32_t ino = alloc_inode(false);
  RawInode inode;
  inode.mode = mode;
  inode.uid = uid;
  inode.gid = gid;
  inode.links = 1;
  inode.atime = inode.ctime = inode.mtime = now_ts();
  if (fmt == S_IFCHR || fmt == S_IFBLK)
    encode_rdev(rdev, inode.block);
  store_inode(ino, inode);
  add_dirent(dir, name, ino, ft_for_mode(mode));

  parent = load_inode(dir);
  parent.mtime = parent.ctime = now_ts();
  store_inode(dir, parent);
  return ino;
}

uint32_t Fs::mkdir(uint32_t dir, std::string_view name, uint32_t mode,
                   uint32_t uid, uint32_t gid) {
  require_writable();
  check_component(name);
  RawInode parent = load_inode(dir);
  if (!S_ISDIR(parent.mode))
    throw FsError(ENOTDIR);
  if (lookup(dir, name).has_value())
    throw FsError(EEXIST);

  uint32_t ino = alloc_inode(true);
  RawInode inode;
  inode.mode = S_IFDIR | (mode & 07777);
  inode.uid = uid;
  inode.gid = gid;
  inode.links = 2;
  inode.atime = inode.ctime = inode.mtime = now_ts();
  uint32_t listing = bmap(inode, 0, true, ino);
  std::vector<std::byte> data(kBlockSize);
  put_dirent(data, 0, ino, 12, ".", kFtDirectory);
  put_dirent(data, 12, dir, kBlockSize - 12, "..", kFtDirectory);
  write_block(listing, data);
  inode.size = kBlockSize;
  store_inode(ino, inode);

  add_dirent(dir, name, ino, kFtDirectory);
  parent = load_inode(dir);
  parent.links += 1;
  parent.mtime = parent.ctime = now_ts();
  store_inode(dir, parent);
  return ino;
}

uint32_t Fs::symlink(uint32_t dir, std::string_view name,
                     std::string_view target, uint32_t uid, uint32_t gid) {
  require_writable();
  check_component(name);
  if (target.empty() || target.size() >= kBlockSize)
    throw FsError(target.empty() ? EINVAL : ENAMETOOLONG);
  RawInode parent = load_inode(dir);
  if (!S_ISDIR(parent.mode))
    throw FsError(ENOTDIR);
  if (lookup(dir, name).has_value())
    throw FsError(EEXIST);

  uint32_t ino = alloc_inode(false);
  RawInode inode;
  inode.mode = S_IFLNK | 0777;
  inode.uid = uid;
  inode.gid = gid;
  inode.links = 1;
  inode.atime = inode.ctime = inode.mtime = now_ts();
  inode.size = target.size();
  if (target.size() < 60) {
    std::memcpy(inode.inline_target.data(), target.data(), target.size());
  } else {
    uint32_t block = bmap(inode, 0, true, ino);
    std::vector<std::byte> data(kBlockSize);
    std::memcpy(data.data(), target.data(), target.size());
    write_block(block, data);
  }
  store_inode(ino, inode);
  add_dirent(dir, name, ino, kFtSymlink);

  parent = load_inode(dir);
  parent.mtime = parent.ctime = now_ts();
  store_inode(dir, parent);
  return ino;
}

void Fs::unlink(uint32_t dir, std::string_view name) {
  require_writable();
  check_component(name);
  auto found = lookup(dir, name);
  if (!found)
    throw FsError(ENOENT);
  RawInode inode = load_inode(*found);
  if (S_ISDIR(inode.mode))
    throw FsError(EISDIR);
  remove_dirent(dir, name, nullptr);

  inode.links -= 1;
  inode.ctime = now_ts();
  if (inode.links == 0) {
    free_file(*found, inode);
    inode.dtime = now_ts();
    store_inode(*found, inode);
    free_inode(*found, false);
  } else {
    store_inode(*found, inode);
  }

  RawInode parent = load_inode(dir);
  parent.mtime = parent.ctime = now_ts();
  store_inode(dir, parent);
}

void Fs::rmdir(uint32_t dir, std::string_view name) {
  require_writable();
  check_component(name);
  auto found = lookup(dir, name);
  if (!found)
    throw FsError(ENOENT);
  RawInode inode = load_inode(*found);
  if (!S_ISDIR(inode.mode))
    throw FsError(ENOTDIR);
  if (!dir_is_empty(*found))
    throw FsError(ENOTEMPTY);
  remove_dirent(dir, name, nullptr);

  free_file(*found, inode);
  inode.links = 0;
  inode.dtime = now_ts();
  store_inode(*found, inode);
  free_inode(*found, true);

  RawInode parent = load_inode(dir);
  parent.links -= 1;
  parent.mtime = parent.ctime = now_ts();
  store_inode(dir, parent);
}

void Fs::rename(uint32_t old_dir, std::string_view old_name, uint32_t new_dir,
                std::string_view new_name) {
  require_writable();
  check_component(old_name);
  check_component(new_name);
  auto src = lookup(old_dir, old_name);
  if (!src)
    throw FsError(ENOENT);
  if (old_dir == new_dir && old_name == new_name)
    return;
  RawInode src_inode = load_inode(*src);
  bool src_is_dir = S_ISDIR(src_inode.mode);

  if (src_is_dir) {
    // Refuse to move a directory beneath itself.
    uint32_t cursor = new_dir;
    while (cursor != kRootInode) {
      if (cursor == *src)
        throw FsError(EINVAL);
      auto up = lookup(cursor, "..");
      if (!up || *up == cursor)
        throw FsError(EIO);
      cursor = *up;
    }
  }

  auto dst = lookup(new_dir, new_name);
  if (dst) {
    if (*dst == *src)
      return;
    RawInode dst_inode = load_inode(*dst);
    if (S_ISDIR(dst_inode.mode)) {
      if (!src_is_dir)
        throw FsError(EISDIR);
      if (!dir_is_empty(*dst))
        throw FsError(ENOTEMPTY);
      remove_dirent(new_dir, new_name, nullptr);
      free_file(*dst, dst_inode);
      dst_inode.links = 0;
      dst_inode.dtime = now_ts();
      store_inode(*dst, dst_inode);
      free_inode(*dst, true);
      RawInode nd = load_inode(new_dir);
      nd.links -= 1;
      store_inode(new_dir, nd);
    } else {
      if (src_is_dir)
        throw FsError(ENOTDIR);
      remove_dirent(new_dir, new_name, nullptr);
      dst_inode.links -= 1;
      dst_inode.ctime = now_ts();
      if (dst_inode.links == 0) {
        free_file(*dst, dst_inode);
        dst_inode.dtime = now_ts();
        store_inode(*dst, dst_inode);
        free_inode(*dst, false);
      } else {
        store_inode(*dst, dst_inode);
      }
    }
  }

  add_dirent(new_dir, new_name, *src, ft_for_mode(src_inode.mode));
  remove_dirent(old_dir, old_name, nullptr);

  if (src_is_dir && old_dir != new_dir) {
    // Repoint the moved directory's ".." and fix parent link counts.
    src_inode = load_inode(*src);
    uint32_t listing = bmap(src_inode, 0, false, *src);
    if (listing != 0) {
      auto data = read_block(listing);
      size_t off = 0;
      while (off < kBlockSize) {
        DirentView view = parse_dirent(data, off);
        if (view.ino != 0 && view.name == "..") {
          put_le32(data, off, new_dir);
          write_block(listing, data);
          break;
        }
        off += view.rec_len;
      }
    }
    RawInode od = load_inode(old_dir);
    od.links -= 1;
    store_inode(old_dir, od);
    RawInode nd = load_inode(new_dir);
    nd.links += 1;
    store_inode(new_dir, nd);
  }

  uint32_t stamp = now_ts();
  for (uint32_t d : {old_dir, new_dir}) {
    RawInode inode = load_inode(d);
    inode.mtime = inode.ctime = stamp;
    store_inode(d, inode);
    if (old_dir == new_dir)
      break;
  }
}

void Fs::link(uint32_t ino, uint32_t new_dir, std::string_view new_name) {
  require_writable();
  check_component(new_name);
  RawInode inode = load_inode(ino);
  if (S_ISDIR(inode.mode))
    throw FsError(EPERM);
  if (lookup(new_dir, new_name).has_value())
    throw FsError(EEXIST);
  add_dirent(new_dir, new_name, ino, ft_for_mode(inode.mode));
  inode.links += 1;
  inode.ctime = now_ts();
  store_inode(ino, inode);

  RawInode parent = load_inode(new_dir);
  parent.mtime = parent.ctime = now_ts();
  store_inode(new_dir, parent);
}

Attr Fs::setattr(uint32_t ino, const SetAttrRequest &request) {
  require_writable();
  RawInode inode = load_inode(ino);
  if (request.size.has_value()) {
    if (S_ISDIR(inode.mode))
      throw FsError(EISDIR);
    if (!S_ISREG(inode.mode))
      throw FsError(EINVAL);
    truncate_inode(ino, inode, *request.size);
  }
  if (request.mode.has_value())
    inode.mode = (inode.mode & S_IFMT) | (*request.mode & 07777);
  if (request.uid.has_value())
    inode.uid = *request.uid;
  if (request.gid.has_value())
    inode.gid = *request.gid;
  if (request.atime.has_value())
    inode.atime = *request.atime;
  if (request.mtime.has_value())
    inode.mtime = *request.mtime;
  inode.ctime = now_ts();
  store_inode(ino, inode);
  return getattr(ino);
}

void Fs::fsync_backing() {
  if (writable_ && ::fsync(fd_.get()) != 0)
    raise_errno(Errc::Io, "fsync ext backing file");
}

FsStats Fs::statfs() {
  FsStats stats;
  stats.block_size = kBlockSize;
  stats.blocks_total = sb_->blocks_count;
  stats.blocks_free = sb_->free_blocks;
  stats.inodes_total = sb_->inodes_count;
  stats.inodes_free = sb_->free_inodes;
  return stats;
}

} // namespace unsuid::ext2
