// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cstdio>
#include <cstring>
#include <map>
#include <random>

#include <dirent.h>
#include <sys/stat.h>
#include <sys/sysmacros.h>
#include <unistd.h>

#include "support/testutil.hpp"
#include "unsuid/errors.hpp"
#include "unsuid/imagefmt.hpp"
#include "unsuid/squashfs.hpp"
#include "unsuid/util.hpp"

using namespace unsuid;
using testutil::errc_of;

namespace {

void write_sample_tree(const std::string &root) {
  make_dirs(root + "/bin");
  make_dirs(root + "/etc/conf.d");
  make_dirs(root + "/empty");
  write_file(root + "/bin/tool", "#!/bin/sh\necho tool\n");
  ::chmod((root + "/bin/tool").c_str(), 0755);
  write_file(root + "/etc/hostname", "unsuid-test\n");
  write_file(root + "/etc/conf.d/empty-file", "");
  CHECK(::symlink("../etc/hostname", (root + "/bin/hostlink").c_str()) == 0);
  CHECK(::mkfifo((root + "/etc/pipe").c_str(), 0600) == 0);

  // Multi-block file: 300000 bytes spans three 128K blocks, the last
  // one partial; repetitive prefix compresses, random tail does not.
  std::mt19937 rng(99);
  std::vector<std::byte> big(300000, std::byte{'A'});
  auto tail = testutil::random_bytes(rng, 100000);
  std::copy(tail.begin(), tail.end(), big.begin() + 200000);
  write_binary(root + "/bin/big", big);

  // A file with an all-zero middle block exercises sparse encoding.
  std::vector<std::byte> sparse(3 * 131072, std::byte{0});
  sparse.front() = std::byte{'S'};
  sparse.back() = std::byte{'E'};
  write_binary(root + "/etc/sparse", sparse);
}

/// Walks the image and the source directory in lockstep, comparing
/// structure, attributes, and full file content.
void compare_tree(squashfs::Reader &reader, uint64_t dir_ref,
                  const std::string &host_dir) {
  auto entries = reader.read_dir(dir_ref);

  std::map<std::string, struct stat> host;
  {
    DIR *d = ::opendir(host_dir.c_str());
    REQUIRE(d != nullptr);
    while (dirent *de = ::readdir(d)) {
      std::string name = de->d_name;
      if (name == "." || name == "..")
        continue;
      struct stat st{};
      REQUIRE(::lstat((host_dir + "/" + name).c_str(), &st) == 0);
      host.emplace(std::move(name), st);
    }
    ::closedir(d);
  }

  REQUIRE(entries.size() == host.size());
  // Listings are name-sorted.
  for (size_t i = 1; i < entries.size(); ++i)
    CHECK(entries[i - 1].name < entries[i].name);

  for (const auto &entry : entries) {
    auto it = host.find(entry.name);
    REQUIRE(it != host.end());
    const struct stat &st = it->second;
    squashfs::InodeAttr attr = reader.stat_ref(entry.inode_ref);

    CHECK((attr.mode & S_IFMT) == (st.st_mode & S_IFMT));
    CHECK((attr.mode & 07777) == (st.st_mode & 07777));
    CHECK(attr.uid == st.st_uid);
    CHECK(attr.gid == st.st_gid);
    CHECK(attr.mtime == static_cast<uint32_t>(st.st_mtime));

    const std::string host_path = host_dir + "/" + entry.name;
    if (S_ISREG(st.st_mode)) {
      CHECK(attr.size == static_cast<uint64_t>(st.st_size));
      std::vector<std::byte> content(attr.size);
      CHECK(reader.read_file(entry.inode_ref, 0, content) == attr.size);
      CHECK(content == slurp_binary(host_path));
    } else if (S_ISLNK(st.st_mode)) {
      std::vector<char> buf(4096);
      ssize_t n = ::readlink(host_path.c_str(), buf.data(), buf.size());
      REQUIRE(n > 0);
      CHECK(reader.read_link(entry.inode_ref) ==
            std::string(buf.data(), static_cast<size_t>(n)));
    } else if (S_ISDIR(st.st_mode)) {
      compare_tree(reader, entry.inode_ref, host_path);
    } else {
      CHECK(attr.rdev == st.st_rdev);
    }
  }
}

} // namespace

TEST_CASE("written image begins with the squashfs magic bytes") {
  testutil::TempDir td;
  write_sample_tree(td.sub("tree"));
  squashfs::write_tree(td.sub("tree"), td.sub("img"));

  // Independent hex check, no format code involved.
  auto raw = slurp_binary(td.sub("img"));
  REQUIRE(raw.size() >= 96);
  CHECK(std::memcmp(raw.data(), "hsqs", 4) == 0);
  // Byte 28, little-endian u16: filesystem major version 4.
  CHECK(le16(raw, 28) == 4);
  CHECK(raw.size() % 4096 == 0);
  // detect_image agrees.
  CHECK(detect_image(td.sub("img")).kind == ImageKind::RawSquashfs);
}

TEST_CASE("image round-trips the full source tree") {
  testutil::TempDir td;
  write_sample_tree(td.sub("tree"));
  squashfs::write_tree(td.sub("tree"), td.sub("img"));

  squashfs::Reader reader(td.sub("img"), 0, 0);
  CHECK(reader.superblock().inode_count == 12);
  squashfs::InodeAttr root = reader.stat_ref(reader.root_ref());
  CHECK(S_ISDIR(root.mode));
  compare_tree(reader, reader.root_ref(), td.sub("tree"));
}

TEST_CASE("reader works at a nonzero partition offset") {
  testutil::TempDir td;
  write_sample_tree(td.sub("tree"));
  squashfs::write_tree(td.sub("tree"), td.sub("payload"));

  ImageInfo info = write_cif(
      {{PartitionKind::Squashfs, PartitionRole::Rootfs, td.sub("payload")}},
      td.sub("img"));
  const auto &part = info.partitions[0];
  CHECK(part.offset == 4096);

  squashfs::Reader reader(td.sub("img"), part.offset, part.size);
  compare_tree(reader, reader.root_ref(), td.sub("tree"));
}

TEST_CASE("random reads equal slices of the original file") {
  testutil::TempDir td;
  make_dirs(td.sub("tree"));
  std::mt19937 rng(1234);
  auto data = testutil::random_bytes(rng, 400000);
  write_binary(td.sub("tree/blob"), data);
  squashfs::write_tree(td.sub("tree"), td.sub("img"));

  squashfs::Reader reader(td.sub("img"), 0, 0);
  auto ref = reader.lookup(reader.root_ref(), "blob");
  REQUIRE(ref.has_value());

  std::uniform_int_distribution<uint64_t> pos_dist(0, 450000);
  std::uniform_int_distribution<size_t> len_dist(1, 200000);
  for (int i = 0; i < 200; ++i) {
    uint64_t pos = pos_dist(rng);
    size_t len = len_dist(rng);
    std::vector<std::byte> got(len);
    uint64_t n = reader.read_file(*ref, pos, got);
    uint64_t expect =
        pos >= data.size()
            ? 0
            : std::min<uint64_t>(len, data.size() - pos);
    REQUIRE(n == expect);
    got.resize(n);
    std::vector<std::byte> want(data.begin() + std::min<size_t>(pos,
                                                                data.size()),
                               data.begin() +
                                   std::min<size_t>(pos + n, data.size()));
    CHECK(got == want);
  }
}

TEST_CASE("lookup resolves names and misses cleanly") {
  testutil::TempDir td;
  write_sample_tree(td.sub("tree"));
  squashfs::write_tree(td.sub("tree"), td.sub("img"));

  squashfs::Reader reader(td.sub("img"), 0, 0);
  auto bin = reader.lookup(reader.root_ref(), "bin");
  REQUIRE(bin.has_value());
  CHECK(reader.lookup(*bin, "tool").has_value());
  CHECK(!reader.lookup(*bin, "absent").has_value());
  CHECK(!reader.lookup(reader.root_ref(), "zzz").has_value());
}

TEST_CASE("a directory of many entries spans metadata groups") {
  testutil::TempDir td;
  make_dirs(td.sub("tree/d"));
  char name[32];
  for (int i = 0; i < 600; ++i) {
    std::snprintf(name, sizeof(name), "tree/d/f%03d", i);
    write_file(td.sub(name), "x");
  }
  squashfs::write_tree(td.sub("tree"), td.sub("img"));

  squashfs::Reader reader(td.sub("img"), 0, 0);
  auto d = reader.lookup(reader.root_ref(), "d");
  REQUIRE(d.has_value());
  auto entries = reader.read_dir(*d);
  CHECK(entries.size() == 600);
  for (const auto &e : entries) {
    std::vector<std::byte> c(1);
    CHECK(reader.read_file(e.inode_ref, 0, c) == 1);
    CHECK(std::to_integer<char>(c[0]) == 'x');
  }
}

TEST_CASE("empty files and empty directories survive the trip") {
  testutil::TempDir td;
  make_dirs(td.sub("tree/hollow"));
  write_file(td.sub("tree/zero"), "");
  squashfs::write_tree(td.sub("tree"), td.sub("img"));

  squashfs::Reader reader(td.sub("img"), 0, 0);
  auto hollow = reader.lookup(reader.root_ref(), "hollow");
  REQUIRE(hollow.has_value());
  CHECK(reader.read_dir(*hollow).empty());

  auto zero = reader.lookup(reader.root_ref(), "zero");
  REQUIRE(zero.has_value());
  CHECK(reader.stat_ref(*zero).size == 0);
  std::vector<std::byte> buf(10);
  CHECK(reader.read_file(*zero, 0, buf) == 0);
}

TEST_CASE("non-directory sources are refused") {
  testutil::TempDir td;
  write_file(td.sub("file"), "not a tree");
  CHECK(errc_of([&] { squashfs::write_tree(td.sub("file"), td.sub("img")); })
        == Errc::FormatFailed);
}

TEST_CASE("reader rejects files without the magic") {
  testutil::TempDir td;
  write_binary(td.sub("junk"), testutil::counting_bytes(5000));
  CHECK(errc_of([&] { squashfs::Reader r(td.sub("junk"), 0, 0); }) ==
        Errc::BadMagic);
}

TEST_CASE("reader rejects truncated images") {
  testutil::TempDir td;
  write_sample_tree(td.sub("tree"));
  squashfs::write_tree(td.sub("tree"), td.sub("img"));
  auto raw = slurp_binary(td.sub("img"));
  raw.resize(raw.size() / 2);
  write_binary(td.sub("cut"), raw);
  CHECK(errc_of([&] { squashfs::Reader r(td.sub("cut"), 0, 0); }) ==
        Errc::Truncated);
}
