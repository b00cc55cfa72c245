// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace unsuid {

struct SubIdRange {
  uint32_t start = 0;
  uint32_t count = 0;

  bool operator==(const SubIdRange &) const = default;
};

inline constexpr const char *kHelperNames[] = {
    "squashfuse", "fuse2fs",  "fuse-overlayfs", "fakeroot",
    "newuidmap",  "newgidmap", "mksquashfs",
};

struct HostProfile {
  bool userns_available = false;
  bool unpriv_overlayfs = false;
  bool fuse_device_usable = false;
  bool subid_mapped = false;
  std::vector<SubIdRange> subuid_ranges;
  std::vector<SubIdRange> subgid_ranges;
  /// One entry per name in kHelperNames; nullopt when not found.
  std::map<std::string, std::optional<std::string>> helper_paths;
  /// Modeling flag for planner tests; the live probe always reports false.
  bool setuid_installed = false;
  bool already_root_mapped = false;
  uint32_t invoking_uid = 0;
  uint32_t invoking_gid = 0;
  std::vector<std::string> diagnostics;

  std::optional<std::string> helper(const std::string &name) const;
};

/// Functional capability probe: forks throwaway children for the namespace
/// and overlay checks, opens /dev/fuse, parses subid files, resolves
/// helpers. Must run before the process spawns threads.
HostProfile probe_host();

/// The helper search path: UNSUID_HELPER_PATH prepended to PATH.
std::string helper_search_path();
std::optional<std::string> find_helper(const std::string &name);

/// Parses `name:start:count` lines, keeping ranges whose name equals
/// user_name or the decimal numeric_id. Malformed matching lines and
/// nonpositive counts are skipped with a diagnostic.
std::vector<SubIdRange> parse_subid(std::string_view content,
                                    const std::string &user_name,
                                    uint32_t numeric_id,
                                    std::vector<std::string> &diagnostics);

/// True iff euid is 0 while the uid map is not the identity map
/// `0 0 4294967295` (a root-mapped namespace, not real root).
bool detect_root_mapped_env(std::string_view uid_map_text, uint32_t euid);

std::string profile_to_json(const HostProfile &profile);
HostProfile profile_from_json(const std::string &json_text);
std::string profile_to_human(const HostProfile &profile);

} // namespace unsuid
