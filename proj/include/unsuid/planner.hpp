// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "unsuid/hostprobe.hpp"
#include "unsuid/imagefmt.hpp"

namespace unsuid {

/// Fixed scratch layout used by every plan, created inside the private
/// mount namespace (a tmpfs is mounted over the base first).
namespace scratch {
inline constexpr char kBase[] = "/tmp/.unsuid";
inline constexpr char kRoot[] = "/tmp/.unsuid/root";
inline constexpr char kImage[] = "/tmp/.unsuid/image";
inline constexpr char kWindowBase[] = "/tmp/.unsuid/win";
inline constexpr char kPartBase[] = "/tmp/.unsuid/part";
inline constexpr char kUpper[] = "/tmp/.unsuid/upper";
inline constexpr char kWork[] = "/tmp/.unsuid/work";
} // namespace scratch

enum class IdentityMode {
  SubIdMapped,
  RootMappedNs,
  RootMappedNsPlusFakerootCmd,
  FakerootCmdOnly,
  PlainUser,
};

std::string_view to_string(IdentityMode mode);
IdentityMode identity_mode_from_string(std::string_view name);

inline constexpr char kInfoRootMapped[] =
    "INFO: falling back to a root-mapped user namespace for root emulation";
inline constexpr char kInfoRootMappedPlusFakeroot[] =
    "INFO: using a root-mapped user namespace with the fakeroot command for "
    "root emulation";
inline constexpr char kInfoSubidNested[] =
    "INFO: subid mapping selected inside an existing root-mapped namespace; "
    "nested setups that forbid privilege elevation may reject it";

struct IdMapEntry {
  uint32_t inside = 0;
  uint32_t outside = 0;
  uint32_t count = 0;

  bool operator==(const IdMapEntry &) const = default;
};

struct IdentityPlan {
  IdentityMode mode = IdentityMode::PlainUser;
  std::vector<IdMapEntry> uid_map_entries;
  std::vector<IdMapEntry> gid_map_entries;
  std::optional<std::string> fakeroot_cmd;
  bool requires_setuid_host = false;
  std::vector<std::string> info_messages;

  bool operator==(const IdentityPlan &) const = default;
};

struct BindSpec {
  std::string source;
  std::string destination;
  bool readonly = false;

  bool operator==(const BindSpec &) const = default;
};

struct OverlaySourceSpec {
  enum class Kind { ExtImage, Directory };
  Kind kind = Kind::Directory;
  std::string path;
  uint64_t size = 0; // ext image length; 0 for directories

  bool operator==(const OverlaySourceSpec &) const = default;
};

struct RuntimeRequest {
  std::string image;
  std::vector<std::string> command;
  bool writable = false;
  /// Overlay sources in lower-to-upper order; resolved from --overlay
  /// paths before planning so the planner itself does no I/O.
  std::vector<OverlaySourceSpec> overlays;
  std::vector<BindSpec> binds;
  bool fakeroot_requested = false;
  bool build_mode = false;
  std::vector<std::string> env_passthrough;
  /// Force the read-only underlay strategy; conflicts with writability
  /// and overlays.
  bool force_underlay = false;
  /// Writable with an ephemeral tmpfs upper instead of a persistent
  /// overlay source.
  bool writable_tmpfs = false;
  /// Host home directory to map in; empty skips the home step.
  std::string home_dir;
};

enum class RootStrategyKind { ReadOnlyUnderlay, KernelOverlay, FuseOverlay };

std::string_view to_string(RootStrategyKind kind);

struct OverlayLayer {
  enum class Source { ExtPartition, ExtImagePath, HostDir, TmpfsScratch };
  Source source = Source::TmpfsScratch;
  std::string path;    // backing image or host directory
  uint64_t offset = 0; // partition byte offset
  uint64_t size = 0;   // partition or image byte length

  bool operator==(const OverlayLayer &) const = default;
};

struct RootStrategy {
  RootStrategyKind kind = RootStrategyKind::ReadOnlyUnderlay;
  /// Layers above the rootfs, bottom-to-top, excluding the upper.
  std::vector<OverlayLayer> lowers;
  std::optional<OverlayLayer> upper;

  bool operator==(const RootStrategy &) const = default;
};

// Mount steps, executed strictly in plan order.

struct MakeScratchRoot {
  std::string path;
  bool operator==(const MakeScratchRoot &) const = default;
};

struct MountSquashPartition {
  std::string image;
  uint64_t offset = 0;
  uint64_t size = 0;
  std::string target;
  bool operator==(const MountSquashPartition &) const = default;
};

struct ServeWindowFile {
  std::string backing;
  uint64_t offset = 0;
  uint64_t size = 0;
  bool writable = false;
  std::string mountpoint;
  bool operator==(const ServeWindowFile &) const = default;
};

struct MountExtPartition {
  std::string source; // the window's exposed file
  std::string target;
  bool writable = false;
  bool operator==(const MountExtPartition &) const = default;
};

struct MountKernelOverlay {
  /// Mount-option order: first entry is the top lower layer.
  std::vector<std::string> lowerdirs;
  std::string upperdir; // empty for a read-only overlay
  std::string workdir;
  std::string target;
  bool operator==(const MountKernelOverlay &) const = default;
};

struct MountFuseOverlay {
  std::vector<std::string> lowerdirs;
  std::string upperdir;
  std::string workdir;
  std::string target;
  bool operator==(const MountFuseOverlay &) const = default;
};

struct BindEntry {
  std::string source;
  std::string destination; // container-absolute
  bool readonly = false;
  /// True when the bind participates in underlay composition instead of
  /// being applied directly onto the assembled root.
  bool underlay = false;
  bool operator==(const BindEntry &) const = default;
};

struct MountStandard {
  std::string what;   // proc | sys | dev | tmp | home
  std::string source; // host source; empty for the tmpfs /tmp
  std::string target; // container-absolute
  bool operator==(const MountStandard &) const = default;
};

struct PivotIntoRoot {
  std::string root;
  bool operator==(const PivotIntoRoot &) const = default;
};

using MountStep =
    std::variant<MakeScratchRoot, MountSquashPartition, ServeWindowFile,
                 MountExtPartition, MountKernelOverlay, MountFuseOverlay,
                 BindEntry, MountStandard, PivotIntoRoot>;

struct MountPlan {
  std::vector<MountStep> steps;

  bool operator==(const MountPlan &) const = default;
};

struct Plan {
  IdentityPlan identity;
  MountPlan mounts;

  bool operator==(const Plan &) const = default;
};

/// The fakeroot fallback chain, evaluated in strict priority order.
IdentityPlan select_identity(const HostProfile &profile,
                             const RuntimeRequest &request);

RootStrategy select_root_strategy(const HostProfile &profile,
                                  const RuntimeRequest &request,
                                  const ImageInfo &image);

/// Pure composition of the two selectors into an ordered mount plan.
/// Identical inputs produce identical plans.
Plan plan(const HostProfile &profile, const RuntimeRequest &request,
          const ImageInfo &image);

enum class RenderFormat { Human, Json };

std::string render_plan(const Plan &plan, RenderFormat format);
Plan parse_plan_json(const std::string &json_text);

} // namespace unsuid
