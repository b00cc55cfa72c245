// SPDX-License-Identifier: Apache-2.0

#include "unsuid/squashfs.hpp"

#include <algorithm>
#include <array>
#include <cstring>
#include <ctime>
#include <memory>

#include <dirent.h>
#include <fcntl.h>
#include <sys/stat.h>
#include <sys/sysmacros.h>
#include <unistd.h>
#include <zlib.h>

#include <fmt/format.h>

#include "unsuid/errors.hpp"

namespace unsuid::squashfs {
namespace {

constexpr uint16_t kFlagUncompressedInodes = 0x0001;
constexpr uint16_t kFlagNoFragments = 0x0010;
constexpr uint16_t kFlagNoXattrs = 0x0200;
constexpr uint16_t kFlagUncompressedIds = 0x0800;
constexpr uint16_t kMetadataUncompressed = 0x8000;
constexpr uint32_t kDataUncompressed = 1u << 24;
constexpr uint32_t kDataSizeMask = kDataUncompressed - 1;
constexpr uint32_t kInvalidFragment = 0xFFFFFFFF;
constexpr uint64_t kNoTable = ~0ull;
constexpr size_t kSuperblockSize = 96;
// Uncompressed metadata block on disk: 2-byte header + 8192 payload.
constexpr uint64_t kMetaOnDisk = 2 + kMetadataSize;
// Basic directory inodes carry a u16 listing size biased by 3.
constexpr size_t kMaxDirListing = 0xFFFF - 3;

std::vector<std::byte> zlib_inflate(std::span<const std::byte> in,
                                    size_t max_out) {
  std::vector<std::byte> out(max_out);
  uLongf out_len = max_out;
  int rc = ::uncompress(reinterpret_cast<Bytef *>(out.data()), &out_len,
                        reinterpret_cast<const Bytef *>(in.data()), in.size());
  if (rc != Z_OK)
    raise(Errc::FormatFailed, fmt::format("zlib inflate failed (rc {})", rc));
  out.resize(out_len);
  return out;
}

std::optional<std::vector<std::byte>> zlib_deflate(
    std::span<const std::byte> in) {
  uLongf bound = ::compressBound(in.size());
  std::vector<std::byte> out(bound);
  int rc = ::compress2(reinterpret_cast<Bytef *>(out.data()), &bound,
                       reinterpret_cast<const Bytef *>(in.data()), in.size(),
                       Z_BEST_COMPRESSION);
  if (rc != Z_OK || bound >= in.size())
    return std::nullopt;
  out.resize(bound);
  return out;
}

uint32_t encode_rdev(uint64_t rdev) {
  unsigned maj = major(rdev);
  unsigned min = minor(rdev);
  return (min & 0xff) | (maj << 8) | ((min & ~0xffu) << 12);
}

uint64_t decode_rdev(uint32_t v) {
  unsigned maj = (v >> 8) & 0xfff;
  unsigned min = (v & 0xff) | ((v >> 12) & ~0xffu);
  return makedev(maj, min);
}

uint32_t mode_bits_for(uint16_t type, uint32_t perms) {
  switch (type) {
  case kTypeDir:
    return S_IFDIR | perms;
  case kTypeFile:
    return S_IFREG | perms;
  case kTypeSymlink:
    return S_IFLNK | perms;
  case kTypeBlockDev:
    return S_IFBLK | perms;
  case kTypeCharDev:
    return S_IFCHR | perms;
  case kTypeFifo:
    return S_IFIFO | perms;
  case kTypeSocket:
    return S_IFSOCK | perms;
  default:
    raise(Errc::FormatFailed, fmt::format("unknown inode type {}", type));
  }
}

} // namespace

// ---------------------------------------------------------------------------
// Reader

/// Sequential cursor over a metadata stream starting at a reference
/// (block disk start << 16 | byte offset inside the block).
class MetaCursor {
public:
  MetaCursor(Reader &reader, uint64_t table_start, uint64_t ref)
      : reader_(reader), table_start_(table_start), block_(ref >> 16),
        offset_(ref & 0xFFFF) {}

  void read(std::span<std::byte> out) {
    size_t done = 0;
    while (done < out.size()) {
      const auto &blk = reader_.metadata_block(table_start_, block_);
      if (offset_ >= blk.data.size()) {
        block_ += blk.disk_length;
        offset_ = 0;
        continue;
      }
      size_t take = std::min(out.size() - done, blk.data.size() - offset_);
      std::memcpy(out.data() + done, blk.data.data() + offset_, take);
      done += take;
      offset_ += take;
    }
  }

  uint16_t u16() {
    std::array<std::byte, 2> b;
    read(b);
    return le16(b, 0);
  }
  uint32_t u32() {
    std::array<std::byte, 4> b;
    read(b);
    return le32(b, 0);
  }
  int16_t s16() { return static_cast<int16_t>(u16()); }
  std::string str(size_t n) {
    std::vector<std::byte> b(n);
    read(b);
    return std::string(reinterpret_cast<const char *>(b.data()), n);
  }

private:
  Reader &reader_;
  uint64_t table_start_;
  uint64_t block_;
  size_t offset_;
};

struct Reader::Inode {
  InodeAttr attr;
  // Directories.
  uint64_t dir_listing_ref = 0;
  // Regular files.
  FileMeta file;
  // Symlinks.
  std::string target;
};

Reader::Reader(const std::string &path, uint64_t offset, uint64_t length)
    : fd_(open_readonly(path)), base_(offset), length_(length) {
  uint64_t file_len = file_size(fd_.get());
  if (base_ >= file_len)
    raise(Errc::Truncated, "partition offset beyond end of file");
  if (length_ == 0 || base_ + length_ > file_len)
    length_ = file_len - base_;
  if (length_ < kSuperblockSize)
    raise(Errc::Truncated, "file too short for a squashfs superblock");

  std::vector<std::byte> raw(kSuperblockSize);
  read_exact_at(fd_.get(), base_, raw);
  if (le32(raw, 0) != kMagic)
    raise(Errc::BadMagic, "squashfs magic not found");
  sb_.inode_count = le32(raw, 4);
  sb_.mkfs_time = le32(raw, 8);
  sb_.block_size = le32(raw, 12);
  sb_.fragment_count = le32(raw, 16);
  sb_.compression = le16(raw, 20);
  sb_.block_log = le16(raw, 22);
  sb_.flags = le16(raw, 24);
  sb_.id_count = le16(raw, 26);
  sb_.version_major = le16(raw, 28);
  sb_.version_minor = le16(raw, 30);
  sb_.root_inode_ref = le64(raw, 32);
  sb_.bytes_used = le64(raw, 40);
  sb_.id_table_start = le64(raw, 48);
  sb_.xattr_id_table_start = le64(raw, 56);
  sb_.inode_table_start = le64(raw, 64);
  sb_.directory_table_start = le64(raw, 72);
  sb_.fragment_table_start = le64(raw, 80);
  sb_.export_table_start = le64(raw, 88);

  if (sb_.version_major != 4 || sb_.version_minor != 0)
    raise(Errc::BadVersion,
          fmt::format("squashfs {}.{} not supported", sb_.version_major,
                      sb_.version_minor));
  if (sb_.compression != kCompressionZlib)
    raise(Errc::FormatFailed,
          fmt::format("unsupported compressor {}", sb_.compression));
  if (sb_.block_size != (1u << sb_.block_log) || sb_.block_size > (1u << 20))
    raise(Errc::FormatFailed, "implausible block size");
  if (sb_.bytes_used > length_)
    raise(Errc::Truncated, "superblock claims bytes beyond the partition");

  // Id table: the superblock points at an index of absolute offsets of
  // the id metadata blocks.
  size_t id_blocks =
      (size_t{sb_.id_count} * 4 + kMetadataSize - 1) / kMetadataSize;
  if (id_blocks == 0)
    raise(Errc::FormatFailed, "id table must not be empty");
  std::vector<std::byte> index(id_blocks * 8);
  read_exact_at(fd_.get(), base_ + sb_.id_table_start, index);
  ids_.reserve(sb_.id_count);
  for (size_t b = 0; b < id_blocks; ++b) {
    const auto &block = metadata_block(0, le64(index, b * 8));
    for (size_t p = 0;
         p + 4 <= block.data.size() && ids_.size() < sb_.id_count; p += 4)
      ids_.push_back(le32(block.data, p));
  }
  if (ids_.size() != sb_.id_count)
    raise(Errc::Truncated, "id table shorter than superblock id count");
}

const Reader::MetaBlock &Reader::metadata_block(uint64_t table_start,
                                                uint64_t block_disk_start) {
  uint64_t abs = base_ + table_start + block_disk_start;
  auto it = meta_cache_.find(abs);
  if (it != meta_cache_.end())
    return it->second;

  std::vector<std::byte> hdr(2);
  read_exact_at(fd_.get(), abs, hdr);
  uint16_t word = le16(hdr, 0);
  size_t stored = word & ~kMetadataUncompressed;
  if (stored == 0 || stored > kMetadataSize)
    raise(Errc::FormatFailed, "metadata block size out of range");

  std::vector<std::byte> payload(stored);
  read_exact_at(fd_.get(), abs + 2, payload);
  MetaBlock blk;
  blk.disk_length = 2 + stored;
  if (word & kMetadataUncompressed)
    blk.data = std::move(payload);
  else
    blk.data = zlib_inflate(payload, kMetadataSize);
  return meta_cache_.emplace(abs, std::move(blk)).first->second;
}

uint32_t Reader::id_at(uint16_t index) const {
  if (index >= ids_.size())
    raise(Errc::FormatFailed, fmt::format("id index {} out of range", index));
  return ids_[index];
}

Reader::Inode Reader::parse_inode(uint64_t ref) {
  MetaCursor cur(*this, sb_.inode_table_start, ref);
  Inode node;
  node.attr.type = cur.u16();
  uint32_t perms = cur.u16();
  node.attr.uid = id_at(cur.u16());
  node.attr.gid = id_at(cur.u16());
  node.attr.mtime = cur.u32();
  node.attr.inode_number = cur.u32();
  node.attr.mode = mode_bits_for(node.attr.type, perms);

  switch (node.attr.type) {
  case kTypeDir: {
    uint32_t start_block = cur.u32();
    node.attr.nlink = cur.u32();
    uint16_t listing_size = cur.u16();
    uint16_t block_offset = cur.u16();
    cur.u32(); // parent inode number
    node.attr.size = listing_size;
    node.dir_listing_ref = (uint64_t{start_block} << 16) | block_offset;
    break;
  }
  case kTypeFile: {
    node.file.blocks_start = cur.u32();
    uint32_t fragment = cur.u32();
    cur.u32(); // offset inside the fragment block
    node.file.file_size = cur.u32();
    node.attr.size = node.file.file_size;
    if (fragment != kInvalidFragment)
      raise(Errc::FormatFailed,
            "fragment blocks are not supported by this reader");
    size_t blocks =
        (node.file.file_size + sb_.block_size - 1) / sb_.block_size;
    node.file.block_words.reserve(blocks);
    uint64_t disk = node.file.blocks_start;
    for (size_t i = 0; i < blocks; ++i) {
      uint32_t word = cur.u32();
      node.file.block_words.push_back(word);
      node.file.block_disk_offsets.push_back(disk);
      disk += word & kDataSizeMask;
    }
    break;
  }
  case kTypeSymlink: {
    node.attr.nlink = cur.u32();
    uint32_t target_size = cur.u32();
    if (target_size > 4096)
      raise(Errc::FormatFailed, "symlink target too long");
    node.target = cur.str(target_size);
    node.attr.size = target_size;
    break;
  }
  case kTypeBlockDev:
  case kTypeCharDev: {
    node.attr.nlink = cur.u32();
    node.attr.rdev = decode_rdev(cur.u32());
    break;
  }
  case kTypeFifo:
  case kTypeSocket: {
    node.attr.nlink = cur.u32();
    break;
  }
  default:
    raise(Errc::FormatFailed,
          fmt::format("extended inode type {} not supported", node.attr.type));
  }
  return node;
}

InodeAttr Reader::stat_ref(uint64_t ref) { return parse_inode(ref).attr; }

std::vector<DirEntry> Reader::read_dir(uint64_t dir_ref) {
  Inode dir = parse_inode(dir_ref);
  if (dir.attr.type != kTypeDir)
    raise(Errc::FormatFailed, "read_dir on a non-directory inode");
  std::vector<DirEntry> entries;
  if (dir.attr.size <= 3)
    return entries;
  size_t remaining = dir.attr.size - 3;
  MetaCursor cur(*this, sb_.directory_table_start, dir.dir_listing_ref);
  while (remaining > 0) {
    if (remaining < 12)
      raise(Errc::Truncated, "directory listing header cut short");
    uint32_t count = cur.u32() + 1;
    uint32_t start_block = cur.u32();
    cur.u32(); // base inode number
    remaining -= 12;
    for (uint32_t i = 0; i < count; ++i) {
      if (remaining < 8)
        raise(Errc::Truncated, "directory entry cut short");
      uint16_t offset = cur.u16();
      cur.s16(); // inode number delta
      uint16_t type = cur.u16();
      uint16_t name_size = cur.u16();
      std::string name = cur.str(size_t{name_size} + 1);
      if (remaining < 8 + name.size())
        raise(Errc::Truncated, "directory entry name cut short");
      remaining -= 8 + name.size();
      entries.push_back(
          {std::move(name), (uint64_t{start_block} << 16) | offset, type});
    }
  }
  return entries;
}

std::optional<uint64_t> Reader::lookup(uint64_t dir_ref,
                                       std::string_view name) {
  for (const auto &entry : read_dir(dir_ref))
    if (entry.name == name)
      return entry.inode_ref;
  return std::nullopt;
}

std::string Reader::read_link(uint64_t ref) {
  Inode node = parse_inode(ref);
  if (node.attr.type != kTypeSymlink)
    raise(Errc::FormatFailed, "read_link on a non-symlink inode");
  return node.target;
}

const Reader::FileMeta &Reader::file_meta(uint64_t ref) {
  auto it = file_cache_.find(ref);
  if (it != file_cache_.end())
    return it->second;
  Inode node = parse_inode(ref);
  if (node.attr.type != kTypeFile)
    raise(Errc::FormatFailed, "file read on a non-file inode");
  return file_cache_.emplace(ref, std::move(node.file)).first->second;
}

std::span<const std::byte> Reader::data_block(uint64_t ref,
                                              const FileMeta &meta,
                                              size_t index) {
  if (cached_ref_ == ref && cached_index_ == index)
    return cached_data_;

  size_t expect = sb_.block_size;
  if ((index + 1) * uint64_t{sb_.block_size} > meta.file_size)
    expect = meta.file_size - index * uint64_t{sb_.block_size};

  uint32_t word = meta.block_words[index];
  uint32_t stored = word & kDataSizeMask;
  if (stored == 0) {
    // Sparse block: all zeros, no bytes on disk.
    cached_data_.assign(expect, std::byte{0});
  } else {
    std::vector<std::byte> raw(stored);
    read_exact_at(fd_.get(), base_ + meta.block_disk_offsets[index],
                        raw);
    if (word & kDataUncompressed)
      cached_data_ = std::move(raw);
    else
      cached_data_ = zlib_inflate(raw, sb_.block_size);
    if (cached_data_.size() != expect)
      raise(Errc::FormatFailed, "data block length mismatch");
  }
  cached_ref_ = ref;
  cached_index_ = index;
  return cached_data_;
}

uint64_t Reader::read_file(uint64_t ref, uint64_t pos,
                           std::span<std::byte> out) {
  const FileMeta &meta = file_meta(ref);
  if (pos >= meta.file_size)
    return 0;
  uint64_t want = std::min<uint64_t>(out.size(), meta.file_size - pos);
  uint64_t done = 0;
  while (done < want) {
    size_t index = (pos + done) / sb_.block_size;
    size_t within = (pos + done) % sb_.block_size;
    auto block = data_block(ref, meta, index);
    size_t take = std::min<uint64_t>(want - done, block.size() - within);
    std::memcpy(out.data() + done, block.data() + within, take);
    done += take;
  }
  return done;
}

// ---------------------------------------------------------------------------
// Writer

namespace {

/// Accumulates a metadata stream; emitted as uncompressed 8192-byte
/// blocks so references are computable while streaming.
class MetaWriter {
public:
  uint64_t ref() const {
    return ((stream_.size() / kMetadataSize) * kMetaOnDisk) << 16 |
           (stream_.size() % kMetadataSize);
  }

  void bytes(std::span<const std::byte> data) {
    stream_.insert(stream_.end(), data.begin(), data.end());
  }
  void u16(uint16_t v) {
    std::array<std::byte, 2> b;
    put_le16(b, 0, v);
    bytes(b);
  }
  void u32(uint32_t v) {
    std::array<std::byte, 4> b;
    put_le32(b, 0, v);
    bytes(b);
  }
  void s16(int16_t v) { u16(static_cast<uint16_t>(v)); }
  void text(std::string_view s) {
    bytes(std::as_bytes(std::span(s.data(), s.size())));
  }

  /// On-disk encoding: per-block 2-byte header with the uncompressed
  /// marker. Absolute block offsets are `start + i * kMetaOnDisk`.
  std::vector<std::byte> finish() const {
    std::vector<std::byte> out;
    size_t pos = 0;
    while (pos < stream_.size()) {
      size_t chunk = std::min(kMetadataSize, stream_.size() - pos);
      std::array<std::byte, 2> hdr;
      put_le16(hdr, 0,
                     static_cast<uint16_t>(chunk | kMetadataUncompressed));
      out.insert(out.end(), hdr.begin(), hdr.end());
      out.insert(out.end(), stream_.begin() + pos,
                 stream_.begin() + pos + chunk);
      pos += chunk;
    }
    return out;
  }

  size_t stream_size() const { return stream_.size(); }

private:
  std::vector<std::byte> stream_;
};

struct TreeNode {
  std::string name;
  std::string path;
  struct stat st {};
  std::vector<std::unique_ptr<TreeNode>> children;
  uint32_t inode_number = 0;
  uint64_t inode_ref = 0;
  uint64_t blocks_start = 0;
  std::vector<uint32_t> block_words;
};

std::unique_ptr<TreeNode> scan_tree(const std::string &path,
                                    const std::string &name) {
  auto node = std::make_unique<TreeNode>();
  node->name = name;
  node->path = path;
  if (::lstat(path.c_str(), &node->st) != 0)
    raise_errno(Errc::Io, fmt::format("lstat {}", path));
  if (S_ISDIR(node->st.st_mode)) {
    DIR *dir = ::opendir(path.c_str());
    if (!dir)
      raise_errno(Errc::Io, fmt::format("opendir {}", path));
    while (dirent *de = ::readdir(dir)) {
      std::string_view n = de->d_name;
      if (n == "." || n == "..")
        continue;
      node->children.push_back(
          scan_tree(path + "/" + std::string(n), std::string(n)));
    }
    ::closedir(dir);
    std::sort(node->children.begin(), node->children.end(),
              [](const auto &a, const auto &b) { return a->name < b->name; });
  }
  return node;
}

void number_inodes(TreeNode &node, uint32_t &next) {
  for (auto &child : node.children)
    number_inodes(*child, next);
  node.inode_number = next++;
}

void collect_ids(const TreeNode &node, std::vector<uint32_t> &ids) {
  auto add = [&](uint32_t id) {
    if (std::find(ids.begin(), ids.end(), id) == ids.end())
      ids.push_back(id);
  };
  add(node.st.st_uid);
  add(node.st.st_gid);
  for (const auto &child : node.children)
    collect_ids(*child, ids);
}

uint16_t type_code_for(mode_t mode) {
  if (S_ISDIR(mode))
    return kTypeDir;
  if (S_ISREG(mode))
    return kTypeFile;
  if (S_ISLNK(mode))
    return kTypeSymlink;
  if (S_ISBLK(mode))
    return kTypeBlockDev;
  if (S_ISCHR(mode))
    return kTypeCharDev;
  if (S_ISFIFO(mode))
    return kTypeFifo;
  if (S_ISSOCK(mode))
    return kTypeSocket;
  raise(Errc::FormatFailed, "unsupported file type in source tree");
}

class TreeWriter {
public:
  TreeWriter(const std::string &source, const std::string &out_path)
      : out_path_(out_path) {
    root_ = scan_tree(source, "");
    if (!S_ISDIR(root_->st.st_mode))
      raise(Errc::FormatFailed, "squashfs source must be a directory");
    uint32_t next = 1;
    number_inodes(*root_, next);
    inode_count_ = next - 1;
    collect_ids(*root_, ids_);
    if (ids_.size() > 0xFFFF)
      raise(Errc::FormatFailed, "too many distinct uids/gids");

    out_ = Fd(::open(out_path.c_str(), O_CREAT | O_TRUNC | O_WRONLY,
                           0644));
    if (!out_.valid())
      raise_errno(Errc::Io, fmt::format("create {}", out_path));
    // Reserve the superblock; data blocks follow immediately.
    std::vector<std::byte> zero(kSuperblockSize, std::byte{0});
    write_all_at(out_.get(), 0, zero);
    cursor_ = kSuperblockSize;

    write_data_blocks(*root_);
    serialize_inode(*root_, inode_count_ + 1);

    uint64_t inode_table_start = cursor_;
    append(inodes_.finish());
    uint64_t directory_table_start = cursor_;
    append(dirs_.finish());

    // Id table blocks, then the index pointing at them.
    MetaWriter idw;
    for (uint32_t id : ids_)
      idw.u32(id);
    uint64_t id_blocks_start = cursor_;
    append(idw.finish());
    uint64_t id_index_start = cursor_;
    size_t id_block_count =
        (ids_.size() * 4 + kMetadataSize - 1) / kMetadataSize;
    std::vector<std::byte> index(id_block_count * 8);
    for (size_t i = 0; i < id_block_count; ++i)
      put_le64(index, i * 8, id_blocks_start + i * kMetaOnDisk);
    append(index);

    uint64_t bytes_used = cursor_;
    // Images are padded to a 4096 boundary.
    uint64_t padded = (bytes_used + 4095) / 4096 * 4096;
    if (padded > bytes_used) {
      std::vector<std::byte> pad(padded - bytes_used, std::byte{0});
      append(pad);
    }

    std::vector<std::byte> sb(kSuperblockSize);
    put_le32(sb, 0, kMagic);
    put_le32(sb, 4, inode_count_);
    put_le32(sb, 8, static_cast<uint32_t>(::time(nullptr)));
    put_le32(sb, 12, kBlockSize);
    put_le32(sb, 16, 0); // fragments
    put_le16(sb, 20, kCompressionZlib);
    put_le16(sb, 22, kBlockLog);
    put_le16(sb, 24,
                   kFlagUncompressedInodes | kFlagNoFragments |
                       kFlagNoXattrs | kFlagUncompressedIds);
    put_le16(sb, 26, static_cast<uint16_t>(ids_.size()));
    put_le16(sb, 28, 4);
    put_le16(sb, 30, 0);
    put_le64(sb, 32, root_->inode_ref);
    put_le64(sb, 40, bytes_used);
    put_le64(sb, 48, id_index_start);
    put_le64(sb, 56, kNoTable); // xattrs
    put_le64(sb, 64, inode_table_start);
    put_le64(sb, 72, directory_table_start);
    put_le64(sb, 80, kNoTable); // fragments
    put_le64(sb, 88, kNoTable); // export table
    write_all_at(out_.get(), 0, sb);
  }

private:
  void append(std::span<const std::byte> data) {
    write_all_at(out_.get(), cursor_, data);
    cursor_ += data.size();
  }

  uint16_t id_index(uint32_t id) const {
    auto it = std::find(ids_.begin(), ids_.end(), id);
    return static_cast<uint16_t>(it - ids_.begin());
  }

  void write_data_blocks(TreeNode &node) {
    for (auto &child : node.children)
      write_data_blocks(*child);
    if (!S_ISREG(node.st.st_mode) || node.st.st_size == 0)
      return;

    Fd in = open_readonly(node.path);
    uint64_t size = file_size(in.get());
    node.blocks_start = cursor_;
    std::vector<std::byte> buf(kBlockSize);
    uint64_t pos = 0;
    while (pos < size) {
      size_t chunk = static_cast<size_t>(
          std::min<uint64_t>(kBlockSize, size - pos));
      std::span<std::byte> block(buf.data(), chunk);
      read_exact_at(in.get(), pos, block);
      pos += chunk;

      bool zero = std::all_of(block.begin(), block.end(), [](std::byte b) {
        return b == std::byte{0};
      });
      if (zero) {
        node.block_words.push_back(0);
        continue;
      }
      if (auto packed = zlib_deflate(block)) {
        node.block_words.push_back(static_cast<uint32_t>(packed->size()));
        append(*packed);
      } else {
        node.block_words.push_back(static_cast<uint32_t>(chunk) |
                                   kDataUncompressed);
        append(block);
      }
    }
  }

  void serialize_inode(TreeNode &node, uint32_t parent_inode) {
    for (auto &child : node.children)
      serialize_inode(*child, node.inode_number);

    uint16_t type = type_code_for(node.st.st_mode);
    uint64_t listing_ref = 0;
    size_t listing_size = 0;
    if (type == kTypeDir)
      listing_ref = write_dir_listing(node, listing_size);

    node.inode_ref = inodes_.ref();
    inodes_.u16(type);
    inodes_.u16(node.st.st_mode & 07777);
    inodes_.u16(id_index(node.st.st_uid));
    inodes_.u16(id_index(node.st.st_gid));
    inodes_.u32(static_cast<uint32_t>(
        std::clamp<int64_t>(node.st.st_mtime, 0, UINT32_MAX)));
    inodes_.u32(node.inode_number);

    switch (type) {
    case kTypeDir: {
      uint32_t subdirs = 0;
      for (const auto &child : node.children)
        if (S_ISDIR(child->st.st_mode))
          ++subdirs;
      inodes_.u32(static_cast<uint32_t>(listing_ref >> 16));
      inodes_.u32(2 + subdirs);
      inodes_.u16(static_cast<uint16_t>(listing_size + 3));
      inodes_.u16(static_cast<uint16_t>(listing_ref & 0xFFFF));
      inodes_.u32(parent_inode);
      break;
    }
    case kTypeFile: {
      uint64_t size = static_cast<uint64_t>(node.st.st_size);
      if (node.blocks_start > UINT32_MAX || size > UINT32_MAX)
        raise(Errc::FormatFailed,
              "file too large for basic squashfs inodes");
      inodes_.u32(static_cast<uint32_t>(node.blocks_start));
      inodes_.u32(kInvalidFragment);
      inodes_.u32(0);
      inodes_.u32(static_cast<uint32_t>(size));
      for (uint32_t word : node.block_words)
        inodes_.u32(word);
      break;
    }
    case kTypeSymlink: {
      std::vector<char> target(node.st.st_size + 1);
      ssize_t n = ::readlink(node.path.c_str(), target.data(), target.size());
      if (n < 0)
        raise_errno(Errc::Io, fmt::format("readlink {}", node.path));
      inodes_.u32(1);
      inodes_.u32(static_cast<uint32_t>(n));
      inodes_.text(std::string_view(target.data(), n));
      break;
    }
    case kTypeBlockDev:
    case kTypeCharDev:
      inodes_.u32(1);
      inodes_.u32(encode_rdev(node.st.st_rdev));
      break;
    case kTypeFifo:
    case kTypeSocket:
      inodes_.u32(1);
      break;
    }
  }

  uint64_t write_dir_listing(const TreeNode &node, size_t &listing_size) {
    uint64_t ref = dirs_.ref();
    size_t before = dirs_.stream_size();
    size_t i = 0;
    while (i < node.children.size()) {
      // One header covers entries sharing an inode metadata block whose
      // inode numbers stay within the i16 delta of the first entry.
      uint32_t group_start =
          static_cast<uint32_t>(node.children[i]->inode_ref >> 16);
      uint32_t base_ino = node.children[i]->inode_number;
      size_t j = i;
      while (j < node.children.size() && (j - i) < 256) {
        const TreeNode &c = *node.children[j];
        if (static_cast<uint32_t>(c.inode_ref >> 16) != group_start)
          break;
        int64_t delta =
            int64_t{c.inode_number} - int64_t{base_ino};
        if (delta < INT16_MIN || delta > INT16_MAX)
          break;
        ++j;
      }
      dirs_.u32(static_cast<uint32_t>(j - i - 1));
      dirs_.u32(group_start);
      dirs_.u32(base_ino);
      for (; i < j; ++i) {
        const TreeNode &c = *node.children[i];
        if (c.name.size() > 255)
          raise(Errc::FormatFailed, "file name longer than 255 bytes");
        dirs_.u16(static_cast<uint16_t>(c.inode_ref & 0xFFFF));
        dirs_.s16(static_cast<int16_t>(int64_t{c.inode_number} -
                                       int64_t{base_ino}));
        dirs_.u16(type_code_for(c.st.st_mode));
        dirs_.u16(static_cast<uint16_t>(c.name.size() - 1));
        dirs_.text(c.name);
      }
    }
    listing_size = dirs_.stream_size() - before;
    if (listing_size > kMaxDirListing)
      raise(Errc::FormatFailed,
            fmt::format("directory listing of {} exceeds {} bytes",
                        node.path, kMaxDirListing));
    return ref;
  }

  std::string out_path_;
  std::unique_ptr<TreeNode> root_;
  uint32_t inode_count_ = 0;
  std::vector<uint32_t> ids_;
  Fd out_;
  uint64_t cursor_ = 0;
  MetaWriter inodes_;
  MetaWriter dirs_;
};

} // namespace

void write_tree(const std::string &source_dir, const std::string &out_path) {
  TreeWriter writer(source_dir, out_path);
}

} // namespace unsuid::squashfs
