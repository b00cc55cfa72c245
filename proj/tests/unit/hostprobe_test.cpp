// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <sys/stat.h>

#include <unistd.h>

#include "support/testutil.hpp"
#include "unsuid/errors.hpp"
#include "unsuid/hostprobe.hpp"
#include "unsuid/util.hpp"

using namespace unsuid;
using testutil::errc_of;

TEST_CASE("parse_subid matches lines by user name") {
  std::vector<std::string> diags;
  auto ranges =
      parse_subid("alice:100000:65536\nbob:165536:65536", "alice", 1000, diags);
  REQUIRE(ranges.size() == 1);
  CHECK(ranges[0].start == 100000);
  CHECK(ranges[0].count == 65536);
  CHECK(diags.empty());
}

TEST_CASE("parse_subid matches lines by decimal numeric id") {
  std::vector<std::string> diags;
  auto ranges = parse_subid("1000:200000:65536", "alice", 1000, diags);
  REQUIRE(ranges.size() == 1);
  CHECK(ranges[0].start == 200000);
  CHECK(ranges[0].count == 65536);
}

TEST_CASE("parse_subid skips malformed and nonpositive-count lines") {
  std::vector<std::string> diags;
  auto ranges = parse_subid("alice:100000:0\nalice:bad:10\n", "alice", 1000,
                            diags);
  CHECK(ranges.empty());
  CHECK(diags.size() == 2);
}

TEST_CASE("parse_subid preserves order and collects multiple ranges") {
  std::vector<std::string> diags;
  auto ranges = parse_subid("u:300000:10\nother:1:1\nu:100000:20\n", "u", 7,
                            diags);
  REQUIRE(ranges.size() == 2);
  CHECK(ranges[0].start == 300000);
  CHECK(ranges[1].start == 100000);
  CHECK(diags.empty());
}

TEST_CASE("parse_subid tolerates empty lines and trailing whitespace") {
  std::vector<std::string> diags;
  auto ranges = parse_subid("\n  \nu:100000:50  \n\n", "u", 7, diags);
  REQUIRE(ranges.size() == 1);
  CHECK(ranges[0].start == 100000);
  CHECK(ranges[0].count == 50);
  CHECK(diags.empty());
}

TEST_CASE("parse_subid rejects ranges that overflow 32-bit id space") {
  std::vector<std::string> diags;
  auto ranges = parse_subid("u:4294967290:100", "u", 7, diags);
  CHECK(ranges.empty());
  CHECK(diags.size() == 1);
}

TEST_CASE("parse_subid is total on garbage input") {
  std::vector<std::string> diags;
  auto ranges = parse_subid("::::\n:::\nx\n12:34\n,,\n", "u", 7, diags);
  CHECK(ranges.empty());
  CHECK(!diags.empty());
}

TEST_CASE("detect_root_mapped_env is true for euid 0 under a partial map") {
  CHECK(detect_root_mapped_env("         0       1000          1\n", 0));
}

TEST_CASE("detect_root_mapped_env excludes the identity map") {
  CHECK(!detect_root_mapped_env("         0          0 4294967295\n", 0));
}

TEST_CASE("detect_root_mapped_env is false for nonzero euid") {
  CHECK(!detect_root_mapped_env("         0       1000          1\n", 1000));
}

TEST_CASE("detect_root_mapped_env rejects malformed map text") {
  CHECK(errc_of([] { detect_root_mapped_env("0 1000\n", 0); }) ==
        Errc::MalformedIdMap);
}

TEST_CASE("helper_search_path prefers the bundled helper directory") {
  // The test harness sets UNSUID_HELPER_PATH; it must sort before PATH.
  const char *helper_dir = ::getenv("UNSUID_HELPER_PATH");
  REQUIRE(helper_dir != nullptr);
  std::string search = helper_search_path();
  CHECK(starts_with(search, helper_dir));
}

TEST_CASE("find_helper resolves only executables on the search path") {
  testutil::TempDir td;
  make_dirs(td.sub("bin"));
  write_file(td.sub("bin/fakeroot"), "#!/bin/sh\nexec \"$@\"\n");
  ::chmod(td.sub("bin/fakeroot").c_str(), 0755);
  CHECK(find_in_path_list("fakeroot", td.sub("bin")) ==
        td.sub("bin/fakeroot"));
}

TEST_CASE("probe_host fills identity fields and searches helpers") {
  HostProfile profile = probe_host();
  CHECK(profile.invoking_uid == ::getuid());
  CHECK(profile.invoking_gid == ::getgid());
  // This artifact is never installed setuid.
  CHECK(!profile.setuid_installed);
  // subid link invariant.
  CHECK(profile.subid_mapped ==
        (!profile.subuid_ranges.empty() && !profile.subgid_ranges.empty()));
  // helper_paths carries all seven keys.
  for (const auto &name : kHelperNames)
    CHECK(profile.helper_paths.count(std::string(name)) == 1);
  // Bundled helpers are on the harness search path.
  CHECK(profile.helper("squashfuse").has_value());
  CHECK(profile.helper("fuse2fs").has_value());
  CHECK(profile.helper("mksquashfs").has_value());
}

TEST_CASE("probe_host functional probes succeed in this environment") {
  HostProfile profile = probe_host();
  INFO("diagnostics: ", [&] {
    std::string all;
    for (const auto &d : profile.diagnostics)
      all += d + "; ";
    return all;
  }());
  CHECK(profile.userns_available);
  CHECK(profile.fuse_device_usable);
}

TEST_CASE("profile json round-trips byte-identically") {
  HostProfile profile = probe_host();
  std::string once = profile_to_json(profile);
  HostProfile back = profile_from_json(once);
  std::string twice = profile_to_json(back);
  CHECK(once == twice);
  CHECK(back.invoking_uid == profile.invoking_uid);
  CHECK(back.userns_available == profile.userns_available);
  CHECK(back.subuid_ranges.size() == profile.subuid_ranges.size());
}

TEST_CASE("synthetic profile json preserves helper paths and ranges") {
  HostProfile p;
  p.userns_available = true;
  p.unpriv_overlayfs = false;
  p.fuse_device_usable = true;
  p.subid_mapped = true;
  p.subuid_ranges = {{100000, 65536}, {300000, 10}};
  p.subgid_ranges = {{100000, 65536}};
  p.helper_paths["fakeroot"] = "/usr/bin/fakeroot";
  p.setuid_installed = false;
  p.already_root_mapped = false;
  p.invoking_uid = 1000;
  p.invoking_gid = 1000;

  HostProfile back = profile_from_json(profile_to_json(p));
  CHECK(back.subuid_ranges.size() == 2);
  CHECK(back.subuid_ranges[0].start == 100000);
  CHECK(back.subuid_ranges[1].count == 10);
  CHECK(back.helper("fakeroot") == std::string("/usr/bin/fakeroot"));
  CHECK(!back.helper("squashfuse").has_value());
}
