// SPDX-License-Identifier: Apache-2.0

#include "unsuid/planner.hpp"

#include <algorithm>
#include <set>

#include <fmt/format.h>
#include <json.hpp>

#include "unsuid/errors.hpp"
#include "unsuid/util.hpp"

namespace unsuid {

namespace {

using ordered_json = nlohmann::ordered_json;

std::string layer_content_dir(const OverlayLayer &layer, size_t ext_index) {
  switch (layer.source) {
  case OverlayLayer::Source::ExtPartition:
  case OverlayLayer::Source::ExtImagePath:
    return fmt::format("{}/{}/upper", scratch::kPartBase, ext_index);
  case OverlayLayer::Source::HostDir:
    return layer.path + "/upper";
  case OverlayLayer::Source::TmpfsScratch:
    return scratch::kUpper;
  }
  return {};
}

std::string layer_work_dir(const OverlayLayer &layer, size_t ext_index) {
  switch (layer.source) {
  case OverlayLayer::Source::ExtPartition:
  case OverlayLayer::Source::ExtImagePath:
    return fmt::format("{}/{}/work", scratch::kPartBase, ext_index);
  case OverlayLayer::Source::HostDir:
    return layer.path + "/work";
  case OverlayLayer::Source::TmpfsScratch:
    return scratch::kWork;
  }
  return {};
}

bool layer_is_ext(const OverlayLayer &layer) {
  return layer.source == OverlayLayer::Source::ExtPartition ||
         layer.source == OverlayLayer::Source::ExtImagePath;
}

std::vector<BindSpec> validated_binds(const RuntimeRequest &request) {
  std::vector<BindSpec> out;
  std::set<std::string> seen;
  for (const auto &bind : request.binds) {
    auto normalized = normalize_abs_path(bind.destination);
    if (!normalized)
      raise(Errc::InvalidRequest,
            fmt::format("bind destination '{}' is not a clean absolute path",
                        bind.destination));
    if (*normalized == "/")
      raise(Errc::InvalidRequest, "bind destination may not be /");
    if (!seen.insert(*normalized).second)
      raise(Errc::BindDestinationConflict,
            fmt::format("two binds target {}", *normalized));
    out.push_back({bind.source, *normalized, bind.readonly});
  }
  return out;
}

ordered_json map_to_json(const std::vector<IdMapEntry> &entries) {
  ordered_json arr = ordered_json::array();
  for (const auto &e : entries)
    arr.push_back(ordered_json{
        {"inside", e.inside}, {"outside", e.outside}, {"count", e.count}});
  return arr;
}

std::vector<IdMapEntry> map_from_json(const ordered_json &arr) {
  std::vector<IdMapEntry> out;
  for (const auto &item : arr)
    out.push_back({item.value("inside", 0u), item.value("outside", 0u),
                   item.value("count", 0u)});
  return out;
}

ordered_json step_to_json(const MountStep &step) {
  ordered_json j;
  std::visit(
      [&](const auto &s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, MakeScratchRoot>) {
          j["step"] = "MakeScratchRoot";
          j["path"] = s.path;
        } else if constexpr (std::is_same_v<T, MountSquashPartition>) {
          j["step"] = "MountSquashPartition";
          j["image"] = s.image;
          j["offset"] = s.offset;
          j["size"] = s.size;
          j["target"] = s.target;
        } else if constexpr (std::is_same_v<T, ServeWindowFile>) {
          j["step"] = "ServeWindowFile";
          j["backing"] = s.backing;
          j["offset"] = s.offset;
          j["size"] = s.size;
          j["writable"] = s.writable;
          j["mountpoint"] = s.mountpoint;
        } else if constexpr (std::is_same_v<T, MountExtPartition>) {
          j["step"] = "MountExtPartition";
          j["source"] = s.source;
          j["target"] = s.target;
          j["writable"] = s.writable;
        } else if constexpr (std::is_same_v<T, MountKernelOverlay>) {
          j["step"] = "MountKernelOverlay";
          j["lowerdirs"] = s.lowerdirs;
          j["upperdir"] = s.upperdir;
          j["workdir"] = s.workdir;
          j["target"] = s.target;
        } else if constexpr (std::is_same_v<T, MountFuseOverlay>) {
          j["step"] = "MountFuseOverlay";
          j["lowerdirs"] = s.lowerdirs;
          j["upperdir"] = s.upperdir;
          j["workdir"] = s.workdir;
          j["target"] = s.target;
        } else if constexpr (std::is_same_v<T, BindEntry>) {
          j["step"] = "BindEntry";
          j["source"] = s.source;
          j["destination"] = s.destination;
          j["readonly"] = s.readonly;
          j["underlay"] = s.underlay;
        } else if constexpr (std::is_same_v<T, MountStandard>) {
          j["step"] = "MountStandard";
          j["what"] = s.what;
          j["source"] = s.source;
          j["target"] = s.target;
        } else if constexpr (std::is_same_v<T, PivotIntoRoot>) {
          j["step"] = "PivotIntoRoot";
          j["root"] = s.root;
        }
      },
      step);
  return j;
}

MountStep step_from_json(const ordered_json &j) {
  std::string kind = j.value("step", "");
  if (kind == "MakeScratchRoot")
    return MakeScratchRoot{j.value("path", "")};
  if (kind == "MountSquashPartition")
    return MountSquashPartition{j.value("image", ""),
                                j.value("offset", uint64_t{0}),
                                j.value("size", uint64_t{0}),
                                j.value("target", "")};
  if (kind == "ServeWindowFile")
    return ServeWindowFile{j.value("backing", ""),
                           j.value("offset", uint64_t{0}),
                           j.value("size", uint64_t{0}),
                           j.value("writable", false),
                           j.value("mountpoint", "")};
  if (kind == "MountExtPartition")
    return MountExtPartition{j.value("source", ""), j.value("target", ""),
                             j.value("writable", false)};
  if (kind == "MountKernelOverlay" || kind == "MountFuseOverlay") {
    std::vector<std::string> lowers;
    if (j.contains("lowerdirs"))
      for (const auto &l : j["lowerdirs"])
        lowers.push_back(l.template get<std::string>());
    if (kind == "MountKernelOverlay")
      return MountKernelOverlay{lowers, j.value("upperdir", ""),
                                j.value("workdir", ""), j.value("target", "")};
    return MountFuseOverlay{lowers, j.value("upperdir", ""),
                            j.value("workdir", ""), j.value("target", "")};
  }
  if (kind == "BindEntry")
    return BindEntry{j.value("source", ""), j.value("destination", ""),
                     j.value("readonly", false), j.value("underlay", false)};
  if (kind == "MountStandard")
    return MountStandard{j.value("what", ""), j.value("source", ""),
                         j.value("target", "")};
  if (kind == "PivotIntoRoot")
    return PivotIntoRoot{j.value("root", "")};
  raise(Errc::Io, fmt::format("unknown plan step '{}'", kind));
}

std::string step_to_human(const MountStep &step) {
  return std::visit(
      [](const auto &s) -> std::string {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, MakeScratchRoot>)
          return fmt::format("scratch root at {}", s.path);
        else if constexpr (std::is_same_v<T, MountSquashPartition>)
          return fmt::format("squashfs partition {} offset {} size {} -> {}",
                             s.image, s.offset, s.size, s.target);
        else if constexpr (std::is_same_v<T, ServeWindowFile>)
          return fmt::format("window file over {} offset {} size {} ({}) at "
                             "{}",
                             s.backing, s.offset, s.size,
                             s.writable ? "rw" : "ro", s.mountpoint);
        else if constexpr (std::is_same_v<T, MountExtPartition>)
          return fmt::format("ext partition {} ({}) -> {}", s.source,
                             s.writable ? "rw" : "ro", s.target);
        else if constexpr (std::is_same_v<T, MountKernelOverlay>)
          return fmt::format("kernel overlay lower=[{}] upper={} work={} -> "
                             "{}",
                             fmt::join(s.lowerdirs, ":"), s.upperdir,
                             s.workdir, s.target);
        else if constexpr (std::is_same_v<T, MountFuseOverlay>)
          return fmt::format("fuse overlay lower=[{}] upper={} work={} -> {}",
                             fmt::join(s.lowerdirs, ":"), s.upperdir,
                             s.workdir, s.target);
        else if constexpr (std::is_same_v<T, BindEntry>)
          return fmt::format("bind {} -> {}{}{}", s.source, s.destination,
                             s.readonly ? " (ro)" : "",
                             s.underlay ? " (underlay)" : "");
        else if constexpr (std::is_same_v<T, MountStandard>)
          return fmt::format("standard {} -> {}", s.what, s.target);
        else if constexpr (std::is_same_v<T, PivotIntoRoot>)
          return fmt::format("pivot into {}", s.root);
        return {};
      },
      step);
}

} // namespace

std::string_view to_string(IdentityMode mode) {
  switch (mode) {
  case IdentityMode::SubIdMapped: return "SubIdMapped";
  case IdentityMode::RootMappedNs: return "RootMappedNs";
  case IdentityMode::RootMappedNsPlusFakerootCmd:
    return "RootMappedNsPlusFakerootCmd";
  case IdentityMode::FakerootCmdOnly: return "FakerootCmdOnly";
  case IdentityMode::PlainUser: return "PlainUser";
  }
  return "?";
}

IdentityMode identity_mode_from_string(std::string_view name) {
  for (auto mode :
       {IdentityMode::SubIdMapped, IdentityMode::RootMappedNs,
        IdentityMode::RootMappedNsPlusFakerootCmd, IdentityMode::FakerootCmdOnly,
        IdentityMode::PlainUser})
    if (to_string(mode) == name)
      return mode;
  raise(Errc::Io, fmt::format("unknown identity mode '{}'", name));
}

std::string_view to_string(RootStrategyKind kind) {
  switch (kind) {
  case RootStrategyKind::ReadOnlyUnderlay: return "ReadOnlyUnderlay";
  case RootStrategyKind::KernelOverlay: return "KernelOverlay";
  case RootStrategyKind::FuseOverlay: return "FuseOverlay";
  }
  return "?";
}

IdentityPlan select_identity(const HostProfile &profile,
                             const RuntimeRequest &request) {
  IdentityPlan plan;
  uint32_t uid = profile.invoking_uid;
  uint32_t gid = profile.invoking_gid;

  bool fakeroot = request.fakeroot_requested || request.build_mode;
  if (!fakeroot) {
    plan.mode = IdentityMode::PlainUser;
    plan.uid_map_entries = {{uid, uid, 1}};
    plan.gid_map_entries = {{gid, gid, 1}};
    return plan;
  }

  bool idmap_helpers = profile.helper("newuidmap").has_value() &&
                       profile.helper("newgidmap").has_value();
  auto fakeroot_cmd = profile.helper("fakeroot");

  if (profile.subid_mapped && (idmap_helpers || profile.setuid_installed)) {
    plan.mode = IdentityMode::SubIdMapped;
    const SubIdRange &sub_uid = profile.subuid_ranges.front();
    const SubIdRange &sub_gid = profile.subgid_ranges.front();
    plan.uid_map_entries = {{0, uid, 1}, {1, sub_uid.start, sub_uid.count}};
    plan.gid_map_entries = {{0, gid, 1}, {1, sub_gid.start, sub_gid.count}};
    plan.requires_setuid_host = !idmap_helpers;
    if (profile.already_root_mapped)
      plan.info_messages.push_back(kInfoSubidNested);
    return plan;
  }

  if (profile.userns_available) {
    plan.uid_map_entries = {{0, uid, 1}};
    plan.gid_map_entries = {{0, gid, 1}};
    if (fakeroot_cmd && !profile.already_root_mapped) {
      plan.mode = IdentityMode::RootMappedNsPlusFakerootCmd;
      plan.fakeroot_cmd = fakeroot_cmd;
      plan.info_messages.push_back(kInfoRootMappedPlusFakeroot);
    } else {
      plan.mode = IdentityMode::RootMappedNs;
      plan.info_messages.push_back(kInfoRootMapped);
    }
    return plan;
  }

  if (profile.setuid_installed && fakeroot_cmd) {
    plan.mode = IdentityMode::FakerootCmdOnly;
    plan.fakeroot_cmd = fakeroot_cmd;
    plan.requires_setuid_host = true;
    return plan;
  }

  std::vector<std::string> failed;
  if (!profile.subid_mapped)
    failed.push_back("no subuid/subgid ranges for the invoking user");
  else
    failed.push_back("newuidmap/newgidmap not found and no setuid install");
  failed.push_back("user namespaces unavailable");
  if (!profile.setuid_installed)
    failed.push_back("no setuid-root installation");
  else
    failed.push_back("fakeroot command not found");
  raise(Errc::NoRootEmulationAvailable,
        fmt::format("cannot emulate root: {}", fmt::join(failed, "; ")));
}

RootStrategy select_root_strategy(const HostProfile &profile,
                                  const RuntimeRequest &request,
                                  const ImageInfo &image) {
  std::vector<OverlayLayer> sources;
  for (const auto &part : image.overlays())
    sources.push_back({OverlayLayer::Source::ExtPartition, request.image,
                       part.offset, part.size});
  for (const auto &src : request.overlays) {
    if (src.kind == OverlaySourceSpec::Kind::ExtImage)
      sources.push_back(
          {OverlayLayer::Source::ExtImagePath, src.path, 0, src.size});
    else
      sources.push_back({OverlayLayer::Source::HostDir, src.path, 0, 0});
  }

  if (request.writable_tmpfs && !request.writable)
    raise(Errc::InvalidRequest, "a tmpfs upper requires a writable run");

  bool overlays_requested = !sources.empty() || request.writable_tmpfs;
  if (request.force_underlay && (request.writable || overlays_requested))
    raise(Errc::InvalidRequest,
          "--underlay is read-only and excludes overlays");

  RootStrategy strategy;
  if (!request.writable && !overlays_requested) {
    strategy.kind = RootStrategyKind::ReadOnlyUnderlay;
    return strategy;
  }

  if (request.writable) {
    if (request.writable_tmpfs) {
      strategy.upper = OverlayLayer{.source = OverlayLayer::Source::TmpfsScratch,
                                    .path = {},
                                    .offset = 0,
                                    .size = 0};
      strategy.lowers = std::move(sources);
    } else if (!sources.empty()) {
      strategy.upper = sources.back();
      sources.pop_back();
      strategy.lowers = std::move(sources);
    } else {
      raise(Errc::InvalidRequest,
            "writable run requested without an overlay source (add an "
            "overlay path, an overlay partition, or a tmpfs upper)");
    }
  } else {
    strategy.lowers = std::move(sources);
  }

  // An ext-backed upper is served over fuse, and the kernel refuses fuse
  // filesystems as an overlay upper layer (fuse lowers are fine), so such
  // stacks must go through the fuse-overlayfs helper.
  bool fuse_upper =
      strategy.upper &&
      (strategy.upper->source == OverlayLayer::Source::ExtPartition ||
       strategy.upper->source == OverlayLayer::Source::ExtImagePath);
  if (profile.unpriv_overlayfs && !fuse_upper) {
    strategy.kind = RootStrategyKind::KernelOverlay;
  } else if (profile.helper("fuse-overlayfs")) {
    strategy.kind = RootStrategyKind::FuseOverlay;
  } else if (fuse_upper) {
    raise(Errc::WritableButNoOverlayBackend,
          "an ext-backed upper layer needs the fuse-overlayfs helper, "
          "which is not available");
  } else {
    raise(Errc::WritableButNoOverlayBackend,
          "neither unprivileged kernel overlayfs nor fuse-overlayfs is "
          "available");
  }
  return strategy;
}

Plan plan(const HostProfile &profile, const RuntimeRequest &request,
          const ImageInfo &image) {
  const PartitionDescriptor *rootfs = image.rootfs();
  if (!rootfs)
    raise(Errc::InvalidRequest, "image has no rootfs partition");
  for (const auto &src : request.overlays)
    if (src.kind == OverlaySourceSpec::Kind::ExtImage && src.size == 0)
      raise(Errc::InvalidRequest,
            fmt::format("overlay image {} has unknown size", src.path));

  std::vector<BindSpec> binds = validated_binds(request);
  IdentityPlan identity = select_identity(profile, request);
  RootStrategy strategy = select_root_strategy(profile, request, image);

  Plan result;
  result.identity = identity;
  auto &steps = result.mounts.steps;

  steps.push_back(MakeScratchRoot{scratch::kBase});

  size_t window_index = 0;
  auto serve_and_mount_ext = [&](const std::string &backing, uint64_t offset,
                                 uint64_t size, bool writable,
                                 const std::string &target) {
    std::string mountpoint =
        fmt::format("{}/{}", scratch::kWindowBase, window_index);
    steps.push_back(ServeWindowFile{backing, offset, size, writable,
                                    mountpoint});
    steps.push_back(MountExtPartition{mountpoint + "/part", target, writable});
    ++window_index;
  };

  if (rootfs->kind == PartitionKind::Squashfs) {
    steps.push_back(MountSquashPartition{request.image, rootfs->offset,
                                         rootfs->size, scratch::kImage});
  } else {
    serve_and_mount_ext(request.image, rootfs->offset, rootfs->size, false,
                        scratch::kImage);
  }

  if (strategy.kind != RootStrategyKind::ReadOnlyUnderlay) {
    // Mount every ext-backed layer; directory layers need no mount. The
    // ext mount index doubles as the window index so paths stay stable.
    std::vector<std::string> lower_dirs_bottom_up;
    lower_dirs_bottom_up.push_back(scratch::kImage);
    auto mount_layer = [&](const OverlayLayer &layer,
                           bool writable) -> std::string {
      size_t ext_index = window_index;
      if (layer_is_ext(layer)) {
        std::string target = fmt::format("{}/{}", scratch::kPartBase,
                                         ext_index);
        serve_and_mount_ext(layer.path, layer.offset, layer.size, writable,
                            target);
      }
      return layer_content_dir(layer, ext_index);
    };
    for (const auto &layer : strategy.lowers)
      lower_dirs_bottom_up.push_back(mount_layer(layer, false));

    std::string upperdir, workdir;
    if (strategy.upper) {
      size_t upper_ext_index = window_index;
      mount_layer(*strategy.upper, true);
      upperdir = layer_content_dir(*strategy.upper, upper_ext_index);
      workdir = layer_work_dir(*strategy.upper, upper_ext_index);
    }

    std::vector<std::string> lowerdirs(lower_dirs_bottom_up.rbegin(),
                                       lower_dirs_bottom_up.rend());
    if (strategy.kind == RootStrategyKind::KernelOverlay)
      steps.push_back(MountKernelOverlay{std::move(lowerdirs), upperdir,
                                         workdir, scratch::kRoot});
    else
      steps.push_back(MountFuseOverlay{std::move(lowerdirs), upperdir,
                                       workdir, scratch::kRoot});
  }

  bool via_underlay = strategy.kind == RootStrategyKind::ReadOnlyUnderlay;
  for (const auto &bind : binds)
    steps.push_back(BindEntry{bind.source, bind.destination, bind.readonly,
                              via_underlay});

  steps.push_back(MountStandard{"proc", "/proc", "/proc"});
  steps.push_back(MountStandard{"sys", "/sys", "/sys"});
  steps.push_back(MountStandard{"dev", "/dev", "/dev"});
  steps.push_back(MountStandard{"tmp", "", "/tmp"});
  if (!request.home_dir.empty())
    steps.push_back(MountStandard{"home", request.home_dir, request.home_dir});

  steps.push_back(PivotIntoRoot{scratch::kRoot});
  return result;
}

std::string render_plan(const Plan &plan, RenderFormat format) {
  if (format == RenderFormat::Json) {
    ordered_json identity;
    identity["mode"] = std::string(to_string(plan.identity.mode));
    identity["uid_map"] = map_to_json(plan.identity.uid_map_entries);
    identity["gid_map"] = map_to_json(plan.identity.gid_map_entries);
    identity["fakeroot_cmd"] = plan.identity.fakeroot_cmd
                                   ? ordered_json(*plan.identity.fakeroot_cmd)
                                   : ordered_json(nullptr);
    identity["requires_setuid_host"] = plan.identity.requires_setuid_host;
    identity["info_messages"] = plan.identity.info_messages;

    ordered_json mounts = ordered_json::array();
    for (const auto &step : plan.mounts.steps)
      mounts.push_back(step_to_json(step));

    ordered_json j;
    j["identity"] = identity;
    j["mounts"] = mounts;
    return j.dump(2) + "\n";
  }

  std::string out;
  out += fmt::format("identity: {}\n", to_string(plan.identity.mode));
  for (const auto &e : plan.identity.uid_map_entries)
    out += fmt::format("  uid map: {} {} {}\n", e.inside, e.outside, e.count);
  for (const auto &e : plan.identity.gid_map_entries)
    out += fmt::format("  gid map: {} {} {}\n", e.inside, e.outside, e.count);
  if (plan.identity.fakeroot_cmd)
    out += fmt::format("  fakeroot command: {}\n", *plan.identity.fakeroot_cmd);
  if (plan.identity.requires_setuid_host)
    out += "  requires a setuid-root installation\n";
  for (const auto &msg : plan.identity.info_messages)
    out += fmt::format("{}\n", msg);
  out += "mounts:\n";
  for (const auto &step : plan.mounts.steps)
    out += fmt::format("  {}\n", step_to_human(step));
  return out;
}

Plan parse_plan_json(const std::string &json_text) {
  ordered_json j;
  try {
    j = ordered_json::parse(json_text);
  } catch (const nlohmann::json::exception &e) {
    raise(Errc::Io, fmt::format("plan JSON: {}", e.what()));
  }
  Plan plan;
  const auto &identity = j.at("identity");
  plan.identity.mode =
      identity_mode_from_string(identity.value("mode", "PlainUser"));
  if (identity.contains("uid_map"))
    plan.identity.uid_map_entries = map_from_json(identity["uid_map"]);
  if (identity.contains("gid_map"))
    plan.identity.gid_map_entries = map_from_json(identity["gid_map"]);
  if (identity.contains("fakeroot_cmd") && identity["fakeroot_cmd"].is_string())
    plan.identity.fakeroot_cmd =
        identity["fakeroot_cmd"].template get<std::string>();
  plan.identity.requires_setuid_host =
      identity.value("requires_setuid_host", false);
  if (identity.contains("info_messages"))
    for (const auto &m : identity["info_messages"])
      plan.identity.info_messages.push_back(m.template get<std::string>());
  for (const auto &step : j.at("mounts"))
    plan.mounts.steps.push_back(step_from_json(step));
  return plan;
}

} // namespace unsuid
