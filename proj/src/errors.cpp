// SPDX-License-Identifier: Apache-2.0

#include "unsuid/errors.hpp"

#include <cerrno>
#include <cstring>

#include <fmt/format.h>

namespace unsuid {

std::string_view to_string(Errc code) {
  switch (code) {
  case Errc::UnknownFormat: return "UnknownFormat";
  case Errc::Io: return "Io";
  case Errc::Truncated: return "Truncated";
  case Errc::BadMagic: return "BadMagic";
  case Errc::BadVersion: return "BadVersion";
  case Errc::DescriptorOutOfBounds: return "DescriptorOutOfBounds";
  case Errc::OverlappingPartitions: return "OverlappingPartitions";
  case Errc::DuplicateRootfs: return "DuplicateRootfs";
  case Errc::InvalidPartition: return "InvalidPartition";
  case Errc::MalformedIdMap: return "MalformedIdMap";
  case Errc::NoRootEmulationAvailable: return "NoRootEmulationAvailable";
  case Errc::WritableButNoOverlayBackend: return "WritableButNoOverlayBackend";
  case Errc::BindDestinationConflict: return "BindDestinationConflict";
  case Errc::InvalidRequest: return "InvalidRequest";
  case Errc::FuseUnavailable: return "FuseUnavailable";
  case Errc::MountFailed: return "MountFailed";
  case Errc::SpecOutOfBounds: return "SpecOutOfBounds";
  case Errc::HelperMissing: return "HelperMissing";
  case Errc::HelperFailed: return "HelperFailed";
  case Errc::MountTimeout: return "MountTimeout";
  case Errc::WindowFailed: return "WindowFailed";
  case Errc::OverlayRejectedByKernel: return "OverlayRejectedByKernel";
  case Errc::DestinationInsideFile: return "DestinationInsideFile";
  case Errc::UsernsDenied: return "UsernsDenied";
  case Errc::IdMapWriteFailed: return "IdMapWriteFailed";
  case Errc::HelperIdMapFailed: return "HelperIdMapFailed";
  case Errc::PrctlFailed: return "PrctlFailed";
  case Errc::PivotFailed: return "PivotFailed";
  case Errc::ExecFailed: return "ExecFailed";
  case Errc::ModeRequiresSetuidHost: return "ModeRequiresSetuidHost";
  case Errc::SetupScriptFailed: return "SetupScriptFailed";
  case Errc::PackagingFailed: return "PackagingFailed";
  case Errc::FormatFailed: return "FormatFailed";
  }
  return "Unknown";
}

Error::Error(Errc code, std::string message)
    : std::runtime_error(fmt::format("{}: {}", to_string(code), message)),
      code_(code) {}

void raise(Errc code, std::string message) {
  throw Error(code, std::move(message));
}

void raise_errno(Errc code, std::string message) {
  throw Error(code, fmt::format("{}: {}", message, std::strerror(errno)));
}

} // namespace unsuid
