// SPDX-License-Identifier: Apache-2.0

// Formats a file as an empty ext filesystem, creating it when missing.
// Usage: mke2fs <path> <size-bytes>

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <string>

#include "unsuid/ext2fs.hpp"

int main(int argc, char **argv) {
  if (argc != 3) {
    std::fprintf(stderr, "usage: mke2fs <path> <size-bytes>\n");
    return 2;
  }
  const std::string path = argv[1];
  uint64_t size = std::strtoull(argv[2], nullptr, 10);

  try {
    unsuid::ext2::mkfs(path, 0, size);
    return 0;
  } catch (const std::exception &e) {
    std::fprintf(stderr, "mke2fs: %s\n", e.what());
    return 1;
  }
}
