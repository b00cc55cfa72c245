// SPDX-License-Identifier: Apache-2.0

// Test double for newuidmap/newgidmap: records its argv, then performs
// the real map write (the test harness runs it with enough privilege).
// Role is taken from argv[0]'s basename; FAKEIDMAP_LOG appends one line
// per invocation and FAKEIDMAP_FAIL=<role> forces a failure.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <string>

int main(int argc, char **argv) {
  std::string role = argv[0];
  if (auto pos = role.find_last_of('/'); pos != std::string::npos)
    role = role.substr(pos + 1);

  if (const char *log = std::getenv("FAKEIDMAP_LOG")) {
    std::ofstream out(log, std::ios::app);
    out << role;
    for (int i = 1; i < argc; ++i)
      out << " " << argv[i];
    out << "\n";
  }

  if (const char *fail = std::getenv("FAKEIDMAP_FAIL");
      fail != nullptr && role == fail) {
    std::fprintf(stderr, "%s exploded\n", role.c_str());
    return 1;
  }

  if (argc < 5 || (argc - 2) % 3 != 0) {
    std::fprintf(stderr, "%s: bad argument count %d\n", role.c_str(), argc);
    return 1;
  }

  std::string path = std::string("/proc/") + argv[1] + "/" +
                     (role == "newuidmap" ? "uid_map" : "gid_map");
  std::string text;
  for (int i = 2; i < argc; i += 3)
    text += std::string(argv[i]) + " " + argv[i + 1] + " " + argv[i + 2] +
            "\n";

  std::FILE *f = std::fopen(path.c_str(), "w");
  if (f == nullptr) {
    std::perror(path.c_str());
    return 1;
  }
  // A map must be written in one shot; the kernel rejects appends.
  size_t n = std::fwrite(text.data(), 1, text.size(), f);
  if (std::fclose(f) != 0 || n != text.size()) {
    std::fprintf(stderr, "%s: write failed\n", path.c_str());
    return 1;
  }
  return 0;
}
