// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <sys/stat.h>

#include <random>

#include "support/testutil.hpp"
#include "unsuid/errors.hpp"
#include "unsuid/util.hpp"

using namespace unsuid;

TEST_CASE("split keeps empty fields") {
  CHECK(split("a:b:c", ':') == std::vector<std::string>{"a", "b", "c"});
  CHECK(split("a::c", ':') == std::vector<std::string>{"a", "", "c"});
  CHECK(split(":", ':') == std::vector<std::string>{"", ""});
  CHECK(split("", ':') == std::vector<std::string>{""});
  CHECK(split("abc", ':') == std::vector<std::string>{"abc"});
}

TEST_CASE("trim strips ascii whitespace on both ends") {
  CHECK(trim("  x  ") == "x");
  CHECK(trim("\t a b \n") == "a b");
  CHECK(trim("") == "");
  CHECK(trim("   ") == "");
}

TEST_CASE("normalize_abs_path canonicalizes without touching the filesystem") {
  CHECK(normalize_abs_path("/usr//bin/") == "/usr/bin");
  CHECK(normalize_abs_path("/a/./b") == "/a/b");
  CHECK(normalize_abs_path("/") == "/");
  CHECK(normalize_abs_path("//") == "/");
  CHECK(normalize_abs_path("relative") == std::nullopt);
  CHECK(normalize_abs_path("/a/../b") == std::nullopt);
  CHECK(normalize_abs_path("/..") == std::nullopt);
  CHECK(normalize_abs_path("") == std::nullopt);
}

TEST_CASE("path_components splits a normalized path") {
  CHECK(path_components("/a/b/c") ==
        std::vector<std::string>{"a", "b", "c"});
  CHECK(path_components("/") == std::vector<std::string>{});
}

TEST_CASE("little-endian codecs round-trip") {
  std::vector<std::byte> buf(14);
  put_le16(buf, 0, 0xBEEF);
  put_le32(buf, 2, 0xDEADBEEFu);
  put_le64(buf, 6, 0x0123456789ABCDEFull);
  CHECK(le16(buf, 0) == 0xBEEF);
  CHECK(le32(buf, 2) == 0xDEADBEEFu);
  CHECK(le64(buf, 6) == 0x0123456789ABCDEFull);
}

TEST_CASE("little-endian byte order is fixed, not host-dependent") {
  std::vector<std::byte> buf(4);
  put_le32(buf, 0, 0x11223344u);
  CHECK(std::to_integer<int>(buf[0]) == 0x44);
  CHECK(std::to_integer<int>(buf[1]) == 0x33);
  CHECK(std::to_integer<int>(buf[2]) == 0x22);
  CHECK(std::to_integer<int>(buf[3]) == 0x11);
}

TEST_CASE("read_exact_at distinguishes truncation from success") {
  testutil::TempDir td;
  const std::string p = td.sub("f");
  write_binary(p, testutil::counting_bytes(100));

  Fd fd = open_readonly(p);
  std::vector<std::byte> buf(50);
  read_exact_at(fd.get(), 25, buf);
  CHECK(buf == testutil::counting_bytes(50, 25));

  std::vector<std::byte> big(101);
  CHECK(testutil::errc_of([&] { read_exact_at(fd.get(), 0, big); }) ==
        Errc::Truncated);
}

TEST_CASE("file_size reports byte length") {
  testutil::TempDir td;
  const std::string p = td.sub("f");
  write_binary(p, testutil::counting_bytes(12345));
  CHECK(file_size(p) == 12345);
}

TEST_CASE("write_all_at then read back round-trips at offsets") {
  testutil::TempDir td;
  const std::string p = td.sub("f");
  write_binary(p, std::vector<std::byte>(64, std::byte{0}));

  Fd fd = open_readwrite(p);
  auto payload = testutil::counting_bytes(16, 7);
  write_all_at(fd.get(), 32, payload);

  std::vector<std::byte> back(16);
  read_exact_at(fd.get(), 32, back);
  CHECK(back == payload);
}

TEST_CASE("make_dirs creates nested directories idempotently") {
  testutil::TempDir td;
  const std::string p = td.sub("a/b/c");
  make_dirs(p);
  CHECK(is_directory(p));
  make_dirs(p);
  CHECK(is_directory(p));
}

TEST_CASE("find_in_path_list picks the first executable match") {
  testutil::TempDir td;
  make_dirs(td.sub("d1"));
  make_dirs(td.sub("d2"));
  write_file(td.sub("d2/tool"), "#!/bin/sh\n");
  ::chmod(td.sub("d2/tool").c_str(), 0755);

  const std::string path = td.sub("d1") + ":" + td.sub("d2");
  CHECK(find_in_path_list("tool", path) == td.sub("d2/tool"));
  CHECK(find_in_path_list("absent", path) == std::nullopt);

  // Non-executable files do not count as matches.
  write_file(td.sub("d1/tool"), "data");
  CHECK(find_in_path_list("tool", path) == td.sub("d2/tool"));
}

TEST_CASE("slurp_file_if_exists returns nullopt for missing files") {
  testutil::TempDir td;
  CHECK(slurp_file_if_exists(td.sub("missing")) == std::nullopt);
  write_file(td.sub("present"), "hello");
  CHECK(slurp_file_if_exists(td.sub("present")) == "hello");
}

TEST_CASE("starts_with matches prefixes") {
  CHECK(starts_with("hsqs-image", "hsqs"));
  CHECK(!starts_with("hs", "hsqs"));
}
