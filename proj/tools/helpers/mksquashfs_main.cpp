// SPDX-License-Identifier: Apache-2.0

// Packs a directory tree into a squashfs image.
// Usage: mksquashfs <source-dir> <output> [-noappend] [-no-xattrs]

#include <cstdio>
#include <string>
#include <vector>

#include <unistd.h>

#include "unsuid/squashfs.hpp"
#include "unsuid/util.hpp"

int main(int argc, char **argv) {
  std::vector<std::string> positional;
  for (int i = 1; i < argc; ++i) {
    std::string arg = argv[i];
    // -noappend is the only behavior offered (output is replaced) and
    // xattrs are never written, so both flags are accepted as-is.
    if (arg == "-noappend" || arg == "-no-xattrs")
      continue;
    positional.emplace_back(arg);
  }
  if (positional.size() != 2) {
    std::fprintf(stderr,
                 "usage: mksquashfs <source-dir> <output> [-noappend] "
                 "[-no-xattrs]\n");
    return 2;
  }
  const std::string &source = positional[0];
  const std::string &output = positional[1];

  try {
    if (!unsuid::is_directory(source)) {
      std::fprintf(stderr, "mksquashfs: %s: not a directory\n",
                   source.c_str());
      return 1;
    }
    ::unlink(output.c_str());
    unsuid::squashfs::write_tree(source, output);
    return 0;
  } catch (const std::exception &e) {
    std::fprintf(stderr, "mksquashfs: %s\n", e.what());
    ::unlink(output.c_str());
    return 1;
  }
}
