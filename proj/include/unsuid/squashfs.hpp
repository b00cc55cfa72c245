// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "unsuid/util.hpp"

namespace unsuid::squashfs {

inline constexpr uint32_t kMagic = 0x73717368; // "hsqs" little-endian
inline constexpr uint32_t kBlockSize = 131072;
inline constexpr uint16_t kBlockLog = 17;
inline constexpr size_t kMetadataSize = 8192;
inline constexpr uint16_t kCompressionZlib = 1;

// Inode type codes (basic variants only).
inline constexpr uint16_t kTypeDir = 1;
inline constexpr uint16_t kTypeFile = 2;
inline constexpr uint16_t kTypeSymlink = 3;
inline constexpr uint16_t kTypeBlockDev = 4;
inline constexpr uint16_t kTypeCharDev = 5;
inline constexpr uint16_t kTypeFifo = 6;
inline constexpr uint16_t kTypeSocket = 7;

struct Superblock {
  uint32_t inode_count = 0;
  uint32_t mkfs_time = 0;
  uint32_t block_size = 0;
  uint32_t fragment_count = 0;
  uint16_t compression = 0;
  uint16_t block_log = 0;
  uint16_t flags = 0;
  uint16_t id_count = 0;
  uint16_t version_major = 0;
  uint16_t version_minor = 0;
  uint64_t root_inode_ref = 0;
  uint64_t bytes_used = 0;
  uint64_t id_table_start = 0;
  uint64_t xattr_id_table_start = 0;
  uint64_t inode_table_start = 0;
  uint64_t directory_table_start = 0;
  uint64_t fragment_table_start = 0;
  uint64_t export_table_start = 0;
};

struct InodeAttr {
  uint32_t inode_number = 0;
  uint16_t type = 0;   // on-disk type code
  uint32_t mode = 0;   // full st_mode including type bits
  uint32_t uid = 0;
  uint32_t gid = 0;
  uint32_t mtime = 0;
  uint64_t size = 0;   // file bytes; symlink target length; dir listing size
  uint32_t nlink = 1;
  uint64_t rdev = 0;
};

struct DirEntry {
  std::string name;
  uint64_t inode_ref = 0;
  uint16_t type = 0;
};

/// Read-only driver over one squashfs filesystem embedded at a byte
/// offset of a backing file. Inodes are addressed by their metadata
/// reference (block start << 16 | offset), with the root reference taken
/// from the superblock.
class Reader {
public:
  Reader(const std::string &path, uint64_t offset, uint64_t length);

  const Superblock &superblock() const { return sb_; }
  uint64_t root_ref() const { return sb_.root_inode_ref; }

  InodeAttr stat_ref(uint64_t ref);
  std::vector<DirEntry> read_dir(uint64_t dir_ref);
  std::optional<uint64_t> lookup(uint64_t dir_ref, std::string_view name);
  std::string read_link(uint64_t ref);
  /// Returns bytes copied; short only at end of file.
  uint64_t read_file(uint64_t ref, uint64_t pos, std::span<std::byte> out);

private:
  friend class MetaCursor;

  struct FileMeta {
    uint64_t blocks_start = 0;
    uint64_t file_size = 0;
    std::vector<uint32_t> block_words;
    std::vector<uint64_t> block_disk_offsets;
  };

  struct MetaBlock {
    std::vector<std::byte> data;
    uint64_t disk_length = 0; // header plus stored bytes
  };

  struct Inode;
  Inode parse_inode(uint64_t ref);

  const MetaBlock &metadata_block(uint64_t table_start,
                                  uint64_t block_disk_start);
  const FileMeta &file_meta(uint64_t ref);
  std::span<const std::byte> data_block(uint64_t ref, const FileMeta &meta,
                                        size_t index);
  uint32_t id_at(uint16_t index) const;

  Fd fd_;
  uint64_t base_ = 0;
  uint64_t length_ = 0;
  Superblock sb_;
  std::vector<uint32_t> ids_;
  std::map<uint64_t, MetaBlock> meta_cache_; // keyed by absolute offset
  std::map<uint64_t, FileMeta> file_cache_;
  // Single-slot data block cache; FUSE reads are mostly sequential.
  uint64_t cached_ref_ = ~0ull;
  size_t cached_index_ = 0;
  std::vector<std::byte> cached_data_;
};

/// Packs a directory tree into a squashfs image: zlib data blocks,
/// uncompressed metadata, no fragments, no xattrs. Directory listings
/// above 65532 bytes are refused (basic directory inodes only).
void write_tree(const std::string &source_dir, const std::string &out_path);

} // namespace unsuid::squashfs
