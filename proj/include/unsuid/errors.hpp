// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace unsuid {

/// Every failure the runtime can report, across all modules.
enum class Errc {
  // image format
  UnknownFormat,
  Io,
  Truncated,
  BadMagic,
  BadVersion,
  DescriptorOutOfBounds,
  OverlappingPartitions,
  DuplicateRootfs,
  InvalidPartition,

  // host probing
  MalformedIdMap,

  // planning
  NoRootEmulationAvailable,
  WritableButNoOverlayBackend,
  BindDestinationConflict,
  InvalidRequest,

  // window file
  FuseUnavailable,
  MountFailed,
  SpecOutOfBounds,

  // mounting
  HelperMissing,
  HelperFailed,
  MountTimeout,
  WindowFailed,
  OverlayRejectedByKernel,
  DestinationInsideFile,

  // namespaces and exec
  UsernsDenied,
  IdMapWriteFailed,
  HelperIdMapFailed,
  PrctlFailed,
  PivotFailed,
  ExecFailed,
  ModeRequiresSetuidHost,

  // builds
  SetupScriptFailed,
  PackagingFailed,
  FormatFailed,
};

std::string_view to_string(Errc code);

class Error : public std::runtime_error {
public:
  Error(Errc code, std::string message);

  Errc code() const { return code_; }

private:
  Errc code_;
};

[[noreturn]] void raise(Errc code, std::string message);
[[noreturn]] void raise_errno(Errc code, std::string message);

} // namespace unsuid
