// SPDX-License-Identifier: Apache-2.0

#include "unsuid/imagefmt.hpp"

#include <algorithm>
#include <cstring>

#include <fcntl.h>
#include <unistd.h>

#include <fmt/format.h>

#include "unsuid/errors.hpp"
#include "unsuid/util.hpp"

namespace unsuid {

namespace {

constexpr uint64_t kSquashMagicOffset = 0;
constexpr char kSquashMagic[4] = {'h', 's', 'q', 's'};
constexpr uint64_t kExtMagicOffset = 1080; // superblock at 1024, magic at +56
constexpr uint16_t kExtMagic = 0xEF53;
// The ext probe needs the superblock magic plus the two state bytes after it.
constexpr uint64_t kExtMinLength = 1084;

uint64_t align_up(uint64_t value, uint64_t alignment) {
  return (value + alignment - 1) / alignment * alignment;
}

void validate_descriptor(const PartitionDescriptor &d, uint64_t file_length,
                         uint64_t header_end, size_t index) {
  if (d.kind != PartitionKind::Squashfs && d.kind != PartitionKind::Extfs)
    raise(Errc::InvalidPartition,
          fmt::format("descriptor {}: unknown kind {}", index,
                      static_cast<uint32_t>(d.kind)));
  if (d.role != PartitionRole::Rootfs && d.role != PartitionRole::Overlay)
    raise(Errc::InvalidPartition,
          fmt::format("descriptor {}: unknown role {}", index,
                      static_cast<uint32_t>(d.role)));
  // Overlay partitions must be mountable writable, which squashfs is not.
  if (d.role == PartitionRole::Overlay && d.kind != PartitionKind::Extfs)
    raise(Errc::InvalidPartition,
          fmt::format("descriptor {}: overlay partitions must be ext", index));
  if (d.size == 0)
    raise(Errc::DescriptorOutOfBounds,
          fmt::format("descriptor {}: size is zero", index));
  if (d.offset % kCifAlignment != 0)
    raise(Errc::DescriptorOutOfBounds,
          fmt::format("descriptor {}: offset {} not {}-aligned", index,
                      d.offset, kCifAlignment));
  if (d.offset < std::max(kCifAlignment, header_end))
    raise(Errc::DescriptorOutOfBounds,
          fmt::format("descriptor {}: offset {} overlaps the header", index,
                      d.offset));
  if (d.offset > file_length || d.size > file_length - d.offset)
    raise(Errc::DescriptorOutOfBounds,
          fmt::format("descriptor {}: [{}, {}+{}) exceeds file length {}",
                      index, d.offset, d.offset, d.size, file_length));
}

void validate_descriptor_set(const std::vector<PartitionDescriptor> &parts) {
  size_t rootfs_count = 0;
  for (const auto &d : parts)
    if (d.role == PartitionRole::Rootfs)
      ++rootfs_count;
  if (rootfs_count > 1)
    raise(Errc::DuplicateRootfs,
          fmt::format("{} rootfs descriptors", rootfs_count));

  std::vector<std::pair<uint64_t, uint64_t>> spans;
  spans.reserve(parts.size());
  for (const auto &d : parts)
    spans.emplace_back(d.offset, d.offset + d.size);
  std::sort(spans.begin(), spans.end());
  for (size_t i = 1; i < spans.size(); ++i)
    if (spans[i].first < spans[i - 1].second)
      raise(Errc::OverlappingPartitions,
            fmt::format("[{}, {}) overlaps [{}, {})", spans[i].first,
                        spans[i].second, spans[i - 1].first,
                        spans[i - 1].second));
}

ImageInfo parse_cif_fd(int fd, uint64_t file_length) {
  std::vector<std::byte> header(kCifHeaderSize);
  read_exact_at(fd, 0, header);
  if (std::memcmp(header.data(), kCifMagic, sizeof(kCifMagic)) != 0)
    raise(Errc::BadMagic, "file does not start with the CIF magic");
  uint32_t version = le32(header, 8);
  if (version != kCifVersion)
    raise(Errc::BadVersion, fmt::format("version {} (supported: {})", version,
                                        kCifVersion));
  uint32_t count = le32(header, 12);
  uint64_t table_bytes = static_cast<uint64_t>(count) * kCifDescriptorSize;
  if (kCifHeaderSize + table_bytes > file_length)
    raise(Errc::Truncated,
          fmt::format("descriptor table ({} entries) extends past file length "
                      "{}",
                      count, file_length));

  std::vector<std::byte> table(table_bytes);
  if (!table.empty())
    read_exact_at(fd, kCifHeaderSize, table);

  uint64_t header_end = kCifHeaderSize + table_bytes;
  ImageInfo info;
  info.kind = ImageKind::Cif;
  info.file_length = file_length;
  info.partitions.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    size_t base = i * kCifDescriptorSize;
    PartitionDescriptor d;
    d.kind = static_cast<PartitionKind>(le32(table, base));
    d.role = static_cast<PartitionRole>(le32(table, base + 4));
    d.offset = le64(table, base + 8);
    d.size = le64(table, base + 16);
    validate_descriptor(d, file_length, header_end, i);
    info.partitions.push_back(d);
  }
  validate_descriptor_set(info.partitions);
  return info;
}

} // namespace

std::string_view to_string(ImageKind kind) {
  switch (kind) {
  case ImageKind::RawSquashfs: return "RawSquashfs";
  case ImageKind::RawExtfs: return "RawExtfs";
  case ImageKind::Cif: return "Cif";
  }
  return "?";
}

std::string_view to_string(PartitionKind kind) {
  switch (kind) {
  case PartitionKind::Squashfs: return "Squashfs";
  case PartitionKind::Extfs: return "Extfs";
  }
  return "?";
}

std::string_view to_string(PartitionRole role) {
  switch (role) {
  case PartitionRole::Rootfs: return "Rootfs";
  case PartitionRole::Overlay: return "Overlay";
  }
  return "?";
}

const PartitionDescriptor *ImageInfo::rootfs() const {
  for (const auto &p : partitions)
    if (p.role == PartitionRole::Rootfs)
      return &p;
  return nullptr;
}

std::vector<PartitionDescriptor> ImageInfo::overlays() const {
  std::vector<PartitionDescriptor> out;
  for (const auto &p : partitions)
    if (p.role == PartitionRole::Overlay)
      out.push_back(p);
  return out;
}

ImageInfo detect_image(const std::string &path) {
  Fd fd = open_readonly(path);
  uint64_t length = file_size(fd.get());

  std::byte head[8] = {};
  size_t head_len = static_cast<size_t>(std::min<uint64_t>(length, 8));
  if (head_len > 0)
    read_exact_at(fd.get(), 0, std::span(head, head_len));

  if (head_len >= sizeof(kCifMagic) &&
      std::memcmp(head, kCifMagic, sizeof(kCifMagic)) == 0)
    return parse_cif_fd(fd.get(), length);

  if (head_len >= sizeof(kSquashMagic) &&
      std::memcmp(head + kSquashMagicOffset, kSquashMagic,
                  sizeof(kSquashMagic)) == 0) {
    ImageInfo info;
    info.kind = ImageKind::RawSquashfs;
    info.file_length = length;
    info.partitions = {{PartitionKind::Squashfs, PartitionRole::Rootfs, 0,
                        length}};
    return info;
  }

  if (length >= kExtMinLength) {
    std::byte magic[2];
    read_exact_at(fd.get(), kExtMagicOffset, magic);
    if (le16(magic, 0) == kExtMagic) {
      ImageInfo info;
      info.kind = ImageKind::RawExtfs;
      info.file_length = length;
      info.partitions = {{PartitionKind::Extfs, PartitionRole::Rootfs, 0,
                          length}};
      return info;
    }
  }

  raise(Errc::UnknownFormat,
        fmt::format("{}: no CIF, squashfs, or ext magic found", path));
}

ImageInfo parse_cif(const std::string &path) {
  Fd fd = open_readonly(path);
  return parse_cif_fd(fd.get(), file_size(fd.get()));
}

ImageInfo write_cif(const std::vector<CifPartitionInput> &partitions,
                    const std::string &out_path) {
  if (partitions.empty())
    raise(Errc::InvalidPartition, "a CIF needs at least one partition");
  size_t rootfs_count = 0;
  for (const auto &p : partitions)
    if (p.role == PartitionRole::Rootfs)
      ++rootfs_count;
  if (rootfs_count > 1)
    raise(Errc::DuplicateRootfs,
          fmt::format("{} rootfs partitions requested", rootfs_count));
  if (rootfs_count == 0)
    raise(Errc::InvalidPartition, "a CIF needs exactly one rootfs partition");
  for (size_t i = 0; i < partitions.size(); ++i)
    if (partitions[i].role == PartitionRole::Overlay &&
        partitions[i].kind != PartitionKind::Extfs)
      raise(Errc::InvalidPartition,
            fmt::format("partition {}: overlay partitions must be ext", i));

  uint64_t header_end = kCifHeaderSize + partitions.size() * kCifDescriptorSize;
  uint64_t cursor = align_up(std::max(kCifAlignment, header_end),
                             kCifAlignment);

  std::vector<PartitionDescriptor> descs;
  descs.reserve(partitions.size());
  for (size_t i = 0; i < partitions.size(); ++i) {
    uint64_t payload_size = file_size(partitions[i].payload_path);
    if (payload_size == 0)
      raise(Errc::InvalidPartition,
            fmt::format("partition {}: payload {} is empty", i,
                        partitions[i].payload_path));
    descs.push_back({partitions[i].kind, partitions[i].role, cursor,
                     payload_size});
    cursor = align_up(cursor + payload_size, kCifAlignment);
  }

  std::vector<std::byte> header(header_end);
  std::memcpy(header.data(), kCifMagic, sizeof(kCifMagic));
  put_le32(header, 8, kCifVersion);
  put_le32(header, 12, static_cast<uint32_t>(descs.size()));
  for (size_t i = 0; i < descs.size(); ++i) {
    size_t base = kCifHeaderSize + i * kCifDescriptorSize;
    put_le32(header, base, static_cast<uint32_t>(descs[i].kind));
    put_le32(header, base + 4, static_cast<uint32_t>(descs[i].role));
    put_le64(header, base + 8, descs[i].offset);
    put_le64(header, base + 16, descs[i].size);
  }

  int raw = ::open(out_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC,
                   0644);
  if (raw < 0)
    raise_errno(Errc::Io, fmt::format("open {}", out_path));
  {
    Fd out(raw);
    write_all_at(out.get(), 0, header);
    for (size_t i = 0; i < descs.size(); ++i) {
      std::vector<std::byte> payload =
          slurp_binary(partitions[i].payload_path);
      write_all_at(out.get(), descs[i].offset, payload);
    }
    // Zero-fill up to the aligned end so trailing gaps are explicit.
    uint64_t end = file_size(out.get());
    if (end < cursor && ::ftruncate(out.get(), static_cast<off_t>(cursor)) != 0)
      raise_errno(Errc::Io, fmt::format("ftruncate {}", out_path));
  }
  return parse_cif(out_path);
}

} // namespace unsuid
