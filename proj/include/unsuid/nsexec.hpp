// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "unsuid/planner.hpp"

namespace unsuid {

struct NamespaceSetup {
  std::vector<IdMapEntry> uid_map_entries;
  std::vector<IdMapEntry> gid_map_entries;
  bool deny_setgroups = false;
  bool use_newidmap_helpers = false;
  bool no_new_privs = true;
  /// Resolved helper paths; required when use_newidmap_helpers.
  std::string newuidmap_path;
  std::string newgidmap_path;
};

/// Derives the namespace recipe from an identity plan. Multi-id maps
/// require the setuid helpers; single-entry single-id maps are written
/// directly with setgroups denied first. Refuses FakerootCmdOnly with
/// ModeRequiresSetuidHost: this runtime never installs setuid.
NamespaceSetup namespace_setup_for(const IdentityPlan &identity,
                                   const HostProfile &profile);

/// Unshares user+mount namespaces (never any other kind) and writes the
/// id maps, directly or via the newuidmap/newgidmap helpers running in a
/// pre-forked child. Caller must still be single-threaded. no-new-privs
/// is applied after the maps are in place (the helpers are setuid).
void enter_namespaces(const NamespaceSetup &setup);

/// Sets the no-new-privs process attribute; irreversible, inherited.
void apply_no_new_privs();

/// Makes root the mount namespace's `/` via pivot-root (binding it onto
/// itself first), detaching the old root. Falls back to chroot-style
/// entry with a warning when pivot is unsupported on the filesystem.
void pivot_into(const std::string &root, std::vector<std::string> *warnings);

struct ExecSpec {
  std::vector<std::string> argv;
  std::string working_dir = "/";
  std::map<std::string, std::string> env;
  std::optional<std::string> fakeroot_wrap;
};

/// Environment allowlist: PATH, HOME, TERM from the current environment
/// (PATH defaulted when unset) plus the explicit entries.
std::vector<std::string> container_environment(
    const std::map<std::string, std::string> &extra);

/// Replaces the process image with the container command, wrapped by the
/// fakeroot command when requested. Exits 127 when the command does not
/// exist; throws ExecFailed for other exec errors.
[[noreturn]] void exec_in_container(const ExecSpec &spec);

} // namespace unsuid
