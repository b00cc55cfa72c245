// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace unsuid {

enum class ImageKind { RawSquashfs, RawExtfs, Cif };

enum class PartitionKind : uint32_t { Squashfs = 1, Extfs = 2 };
enum class PartitionRole : uint32_t { Rootfs = 1, Overlay = 2 };

std::string_view to_string(ImageKind kind);
std::string_view to_string(PartitionKind kind);
std::string_view to_string(PartitionRole role);

struct PartitionDescriptor {
  PartitionKind kind;
  PartitionRole role;
  uint64_t offset = 0;
  uint64_t size = 0;

  bool operator==(const PartitionDescriptor &) const = default;
};

struct ImageInfo {
  ImageKind kind;
  std::vector<PartitionDescriptor> partitions;
  uint64_t file_length = 0;

  bool operator==(const ImageInfo &) const = default;

  const PartitionDescriptor *rootfs() const;
  std::vector<PartitionDescriptor> overlays() const;
};

inline constexpr char kCifMagic[8] = {'C', 'I', 'F', 'I', 'M', 'G', '0', '1'};
inline constexpr uint32_t kCifVersion = 1;
inline constexpr uint64_t kCifAlignment = 4096;
inline constexpr size_t kCifHeaderSize = 16;
inline constexpr size_t kCifDescriptorSize = 24;

/// Classifies a file as CIF, raw squashfs, or raw ext by magic bytes,
/// in that precedence order.
ImageInfo detect_image(const std::string &path);

/// Parses the CIF descriptor table and validates every descriptor.
ImageInfo parse_cif(const std::string &path);

struct CifPartitionInput {
  PartitionKind kind;
  PartitionRole role;
  std::string payload_path;
};

/// Writes a CIF file: header, descriptor table, then payloads copied
/// verbatim at 4096-aligned offsets in argument order. Returns the
/// parse-back of the written file.
ImageInfo write_cif(const std::vector<CifPartitionInput> &partitions,
                    const std::string &out_path);

} // namespace unsuid
