// SPDX-License-Identifier: Apache-2.0

#include "unsuid/ext2fs.hpp"

#include <algorithm>
#include <cstring>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <sys/stat.h>
#include <sys/sysmacros.h>

#include <doctest.h>

#include "support/testutil.hpp"
#include "unsuid/errors.hpp"
#include "unsuid/imagefmt.hpp"
#include "unsuid/util.hpp"

using namespace unsuid;

namespace {

std::span<const std::byte> as_bytes_of(const std::string &text) {
  return {reinterpret_cast<const std::byte *>(text.data()), text.size()};
}

std::string read_whole(ext2::Fs &fs, uint32_t ino) {
  auto size = fs.getattr(ino).size;
  std::string out(size, '\0');
  auto got = fs.read(ino, 0, {reinterpret_cast<std::byte *>(out.data()),
                              out.size()});
  REQUIRE(got == size);
  return out;
}

uint32_t must_lookup(ext2::Fs &fs, uint32_t dir, std::string_view name) {
  auto found = fs.lookup(dir, name);
  REQUIRE(found.has_value());
  return *found;
}

int fs_errno_of(const std::function<void()> &body) {
  try {
    body();
  } catch (const ext2::FsError &error) {
    return error.code();
  }
  return 0;
}

} // namespace

TEST_CASE("mkfs output carries the ext magic at byte 1080") {
  testutil::TempDir dir;
  auto image = dir.sub("plain.ext2");
  ext2::mkfs(image, 0, 4u << 20);

  // Oracle: raw hex dump, independent of the driver's own parser.
  auto raw = slurp_binary(image);
  REQUIRE(raw.size() == 4u << 20);
  uint16_t magic = static_cast<uint16_t>(std::to_integer<uint8_t>(raw[1080])) |
                   static_cast<uint16_t>(std::to_integer<uint8_t>(raw[1081]))
                       << 8;
  CHECK(magic == 0xEF53);
  // Revision and inode size straight from the dump.
  CHECK(le32(raw, 1024 + 76) == 1);
  CHECK(le16(raw, 1024 + 88) == 128);

  auto info = detect_image(image);
  CHECK(info.kind == ImageKind::RawExtfs);
}

TEST_CASE("fresh filesystem holds exactly an empty root directory") {
  testutil::TempDir dir;
  auto image = dir.sub("fresh.ext2");
  ext2::mkfs(image, 0, 4u << 20);

  ext2::Fs fs(image, 0, 4u << 20, false);
  auto root = fs.getattr(ext2::kRootInode);
  CHECK((root.mode & S_IFMT) == S_IFDIR);
  CHECK((root.mode & 07777) == 0755);
  CHECK(root.links == 2);
  CHECK(root.size == 4096);

  auto listing = fs.readdir(ext2::kRootInode);
  REQUIRE(listing.size() == 2);
  CHECK(listing[0].name == ".");
  CHECK(listing[0].ino == ext2::kRootInode);
  CHECK(listing[1].name == "..");
  CHECK(listing[1].ino == ext2::kRootInode);

  auto stats = fs.statfs();
  CHECK(stats.block_size == 4096);
  CHECK(stats.blocks_total == (4u << 20) / 4096);
  CHECK(stats.blocks_free > 0);
  CHECK(stats.inodes_free == stats.inodes_total - 10);
}

TEST_CASE("file contents survive close and reopen") {
  testutil::TempDir dir;
  auto image = dir.sub("persist.ext2");
  ext2::mkfs(image, 0, 8u << 20);

  std::string body = "configuration line one\nconfiguration line two\n";
  {
    ext2::Fs fs(image, 0, 8u << 20, true);
    uint32_t ino =
        fs.mknod(ext2::kRootInode, "settings.conf", S_IFREG | 0640, 7, 8, 0);
    CHECK(fs.write(ino, 0, as_bytes_of(body)) == body.size());
  }
  {
    ext2::Fs fs(image, 0, 8u << 20, false);
    uint32_t ino = must_lookup(fs, ext2::kRootInode, "settings.conf");
    auto attr = fs.getattr(ino);
    CHECK((attr.mode & S_IFMT) == S_IFREG);
    CHECK((attr.mode & 07777) == 0640);
    CHECK(attr.uid == 7);
    CHECK(attr.gid == 8);
    CHECK(attr.links == 1);
    CHECK(read_whole(fs, ino) == body);
  }
}

TEST_CASE("multi-block and indirect files round-trip byte for byte") {
  testutil::TempDir dir;
  auto image = dir.sub("big.ext2");
  ext2::mkfs(image, 0, 16u << 20);

  std::mt19937 rng(0xE27F);
  // 49152 bytes exhausts the 12 direct blocks; the larger file needs the
  // single indirect tier and a double indirect entry (> 12 + 1024 blocks).
  auto direct_body = testutil::random_bytes(rng, 12 * 4096);
  auto indirect_body = testutil::random_bytes(rng, (12 + 1024 + 40) * 4096 + 517);

  {
    ext2::Fs fs(image, 0, 16u << 20, true);
    uint32_t a = fs.mknod(ext2::kRootInode, "direct", S_IFREG | 0644, 0, 0, 0);
    uint32_t b =
        fs.mknod(ext2::kRootInode, "indirect", S_IFREG | 0644, 0, 0, 0);
    CHECK(fs.write(a, 0, direct_body) == direct_body.size());
    CHECK(fs.write(b, 0, indirect_body) == indirect_body.size());
  }
  {
    ext2::Fs fs(image, 0, 16u << 20, false);
    uint32_t a = must_lookup(fs, ext2::kRootInode, "direct");
    uint32_t b = must_lookup(fs, ext2::kRootInode, "indirect");
    CHECK(fs.getattr(a).size == direct_body.size());
    CHECK(fs.getattr(b).size == indirect_body.size());

    std::vector<std::byte> back(indirect_body.size());
    CHECK(fs.read(b, 0, back) == indirect_body.size());
    CHECK(std::memcmp(back.data(), indirect_body.data(), back.size()) == 0);

    back.resize(direct_body.size());
    CHECK(fs.read(a, 0, back) == direct_body.size());
    CHECK(std::memcmp(back.data(), direct_body.data(), back.size()) == 0);

    // Unaligned mid-file slice.
    std::vector<std::byte> slice(10000);
    CHECK(fs.read(b, 4243000, slice) == 10000);
    CHECK(std::memcmp(slice.data(), indirect_body.data() + 4243000, 10000) ==
          0);
  }
}

TEST_CASE("sparse writes read back as zeros in the holes") {
  testutil::TempDir dir;
  auto image = dir.sub("sparse.ext2");
  ext2::mkfs(image, 0, 8u << 20);

  ext2::Fs fs(image, 0, 8u << 20, true);
  uint32_t ino = fs.mknod(ext2::kRootInode, "holes", S_IFREG | 0644, 0, 0, 0);
  std::string tail = "END";
  uint64_t pos = 100 * 4096 + 7;
  CHECK(fs.write(ino, pos, as_bytes_of(tail)) == 3);
  CHECK(fs.getattr(ino).size == pos + 3);
  // Hole blocks stay unallocated: far fewer than 100 data blocks consumed.
  CHECK(fs.getattr(ino).blocks512 < 20 * 8);

  std::vector<std::byte> mid(4096);
  CHECK(fs.read(ino, 50 * 4096, mid) == 4096);
  CHECK(std::all_of(mid.begin(), mid.end(),
                    [](std::byte b) { return b == std::byte{0}; }));
  std::vector<std::byte> end(3);
  CHECK(fs.read(ino, pos, end) == 3);
  CHECK(std::memcmp(end.data(), tail.data(), 3) == 0);
}

TEST_CASE("truncate shrinks, regrows with zeros, and frees blocks") {
  testutil::TempDir dir;
  auto image = dir.sub("trunc.ext2");
  ext2::mkfs(image, 0, 16u << 20);

  ext2::Fs fs(image, 0, 16u << 20, true);
  auto before = fs.statfs().blocks_free;
  uint32_t ino = fs.mknod(ext2::kRootInode, "log", S_IFREG | 0644, 0, 0, 0);
  std::vector<std::byte> body((12 + 1024 + 5) * 4096, std::byte{0xAB});
  CHECK(fs.write(ino, 0, body) == body.size());
  CHECK(fs.statfs().blocks_free < before);

  ext2::SetAttrRequest shrink;
  shrink.size = 100;
  auto attr = fs.setattr(ino, shrink);
  CHECK(attr.size == 100);
  CHECK(attr.blocks512 == 8);

  ext2::SetAttrRequest grow;
  grow.size = 5000;
  CHECK(fs.setattr(ino, grow).size == 5000);
  std::vector<std::byte> back(5000);
  CHECK(fs.read(ino, 0, back) == 5000);
  for (size_t i = 0; i < 100; ++i)
    CHECK(back[i] == std::byte{0xAB});
  CHECK(std::all_of(back.begin() + 100, back.end(),
                    [](std::byte b) { return b == std::byte{0}; }));

  ext2::SetAttrRequest to_zero;
  to_zero.size = 0;
  CHECK(fs.setattr(ino, to_zero).blocks512 == 0);
  fs.unlink(ext2::kRootInode, "log");
  CHECK(fs.statfs().blocks_free == before);
}

TEST_CASE("unlink frees every block of an indirect file") {
  testutil::TempDir dir;
  auto image = dir.sub("freeall.ext2");
  ext2::mkfs(image, 0, 16u << 20);

  ext2::Fs fs(image, 0, 16u << 20, true);
  auto before = fs.statfs();
  uint32_t ino = fs.mknod(ext2::kRootInode, "blob", S_IFREG | 0644, 0, 0, 0);
  std::vector<std::byte> body((12 + 1024 + 3) * 4096, std::byte{0x5C});
  CHECK(fs.write(ino, 0, body) == body.size());
  fs.unlink(ext2::kRootInode, "blob");
  auto after = fs.statfs();
  CHECK(after.blocks_free == before.blocks_free);
  CHECK(after.inodes_free == before.inodes_free);
  CHECK(fs.lookup(ext2::kRootInode, "blob") == std::nullopt);
}

TEST_CASE("directories nest, list, and refuse non-empty removal") {
  testutil::TempDir dir;
  auto image = dir.sub("dirs.ext2");
  ext2::mkfs(image, 0, 8u << 20);

  {
    ext2::Fs fs(image, 0, 8u << 20, true);
    uint32_t etc = fs.mkdir(ext2::kRootInode, "etc", 0755, 0, 0);
    uint32_t confd = fs.mkdir(etc, "conf.d", 0700, 3, 4);
    fs.mknod(confd, "10-main", S_IFREG | 0644, 0, 0, 0);
    CHECK(fs.getattr(ext2::kRootInode).links == 3);
    CHECK(fs.getattr(etc).links == 3);
    CHECK(fs.getattr(confd).links == 2);
    CHECK(fs_errno_of([&] { fs.rmdir(etc, "conf.d"); }) == ENOTEMPTY);
    CHECK(fs_errno_of([&] { fs.unlink(ext2::kRootInode, "etc"); }) == EISDIR);
    CHECK(fs_errno_of([&] { fs.rmdir(confd, "10-main"); }) == ENOTDIR);
  }
  {
    ext2::Fs fs(image, 0, 8u << 20, true);
    uint32_t etc = must_lookup(fs, ext2::kRootInode, "etc");
    uint32_t confd = must_lookup(fs, etc, "conf.d");
    CHECK((fs.getattr(confd).mode & 07777) == 0700);
    CHECK(must_lookup(fs, confd, "..") == etc);
    fs.unlink(confd, "10-main");
    fs.rmdir(etc, "conf.d");
    CHECK(fs.getattr(etc).links == 2);
    CHECK(fs.lookup(etc, "conf.d") == std::nullopt);
    fs.rmdir(ext2::kRootInode, "etc");
    CHECK(fs.getattr(ext2::kRootInode).links == 2);
  }
}

TEST_CASE("symlinks store short targets inline and long targets in a block") {
  testutil::TempDir dir;
  auto image = dir.sub("links.ext2");
  ext2::mkfs(image, 0, 8u << 20);

  std::string short_target = "../etc/hostname";
  std::string long_target(200, 'p');
  long_target[0] = '/';
  {
    ext2::Fs fs(image, 0, 8u << 20, true);
    uint32_t s =
        fs.symlink(ext2::kRootInode, "short", short_target, 11, 12);
    uint32_t l = fs.symlink(ext2::kRootInode, "long", long_target, 0, 0);
    CHECK(fs.getattr(s).blocks512 == 0);
    CHECK(fs.getattr(l).blocks512 == 8);
  }
  {
    ext2::Fs fs(image, 0, 8u << 20, false);
    uint32_t s = must_lookup(fs, ext2::kRootInode, "short");
    uint32_t l = must_lookup(fs, ext2::kRootInode, "long");
    CHECK(fs.readlink(s) == short_target);
    CHECK(fs.readlink(l) == long_target);
    CHECK(fs.getattr(s).uid == 11);
    CHECK((fs.getattr(s).mode & S_IFMT) == S_IFLNK);
  }
}

TEST_CASE("device nodes and fifos keep their identity") {
  testutil::TempDir dir;
  auto image = dir.sub("nodes.ext2");
  ext2::mkfs(image, 0, 8u << 20);

  uint64_t null_rdev = makedev(1, 3);
  uint64_t wide_rdev = makedev(300, 70000);
  {
    ext2::Fs fs(image, 0, 8u << 20, true);
    fs.mknod(ext2::kRootInode, "null", S_IFCHR | 0666, 0, 0, null_rdev);
    fs.mknod(ext2::kRootInode, "wide", S_IFBLK | 0600, 0, 0, wide_rdev);
    fs.mknod(ext2::kRootInode, "pipe", S_IFIFO | 0644, 0, 0, 0);
  }
  ext2::Fs fs(image, 0, 8u << 20, false);
  auto null_attr = fs.getattr(must_lookup(fs, ext2::kRootInode, "null"));
  CHECK((null_attr.mode & S_IFMT) == S_IFCHR);
  CHECK(null_attr.rdev == null_rdev);
  auto wide_attr = fs.getattr(must_lookup(fs, ext2::kRootInode, "wide"));
  CHECK((wide_attr.mode & S_IFMT) == S_IFBLK);
  CHECK(wide_attr.rdev == wide_rdev);
  auto pipe_attr = fs.getattr(must_lookup(fs, ext2::kRootInode, "pipe"));
  CHECK((pipe_attr.mode & S_IFMT) == S_IFIFO);
  CHECK(pipe_attr.rdev == 0);
}

TEST_CASE("hard links share an inode and survive one name's removal") {
  testutil::TempDir dir;
  auto image = dir.sub("hard.ext2");
  ext2::mkfs(image, 0, 8u << 20);

  ext2::Fs fs(image, 0, 8u << 20, true);
  uint32_t ino = fs.mknod(ext2::kRootInode, "first", S_IFREG | 0644, 0, 0, 0);
  std::string body = "shared payload";
  fs.write(ino, 0, as_bytes_of(body));
  fs.link(ino, ext2::kRootInode, "second");
  CHECK(fs.getattr(ino).links == 2);
  CHECK(must_lookup(fs, ext2::kRootInode, "second") == ino);

  fs.unlink(ext2::kRootInode, "first");
  CHECK(fs.getattr(ino).links == 1);
  CHECK(read_whole(fs, ino) == body);

  uint32_t d = fs.mkdir(ext2::kRootInode, "subdir", 0755, 0, 0);
  CHECK(fs_errno_of([&] { fs.link(d, ext2::kRootInode, "dirlink"); }) ==
        EPERM);
}

TEST_CASE("rename moves entries within and across directories") {
  testutil::TempDir dir;
  auto image = dir.sub("rename.ext2");
  ext2::mkfs(image, 0, 8u << 20);

  ext2::Fs fs(image, 0, 8u << 20, true);
  uint32_t a = fs.mkdir(ext2::kRootInode, "a", 0755, 0, 0);
  uint32_t b = fs.mkdir(ext2::kRootInode, "b", 0755, 0, 0);
  uint32_t f = fs.mknod(a, "file", S_IFREG | 0644, 0, 0, 0);
  fs.write(f, 0, as_bytes_of(std::string("payload")));

  fs.rename(a, "file", a, "renamed");
  CHECK(fs.lookup(a, "file") == std::nullopt);
  CHECK(must_lookup(fs, a, "renamed") == f);

  fs.rename(a, "renamed", b, "moved");
  CHECK(fs.lookup(a, "renamed") == std::nullopt);
  CHECK(must_lookup(fs, b, "moved") == f);

  // Replacing an existing file drops the old inode.
  fs.mknod(b, "victim", S_IFREG | 0644, 0, 0, 0);
  auto inodes_before = fs.statfs().inodes_free;
  fs.rename(b, "moved", b, "victim");
  CHECK(must_lookup(fs, b, "victim") == f);
  CHECK(fs.statfs().inodes_free == inodes_before + 1);

  // Directory moves update ".." and parent link counts.
  uint32_t sub = fs.mkdir(a, "sub", 0755, 0, 0);
  auto a_links = fs.getattr(a).links;
  auto b_links = fs.getattr(b).links;
  fs.rename(a, "sub", b, "sub");
  CHECK(must_lookup(fs, sub, "..") == b);
  CHECK(fs.getattr(a).links == a_links - 1);
  CHECK(fs.getattr(b).links == b_links + 1);

  // A directory cannot move beneath itself.
  uint32_t outer = fs.mkdir(ext2::kRootInode, "outer", 0755, 0, 0);
  uint32_t inner = fs.mkdir(outer, "inner", 0755, 0, 0);
  (void)inner;
  CHECK(fs_errno_of([&] {
          fs.rename(ext2::kRootInode, "outer", inner, "loop");
        }) == EINVAL);
}

TEST_CASE("rename onto a populated directory is refused") {
  testutil::TempDir dir;
  auto image = dir.sub("renamedir.ext2");
  ext2::mkfs(image, 0, 8u << 20);

  ext2::Fs fs(image, 0, 8u << 20, true);
  fs.mkdir(ext2::kRootInode, "src", 0755, 0, 0);
  uint32_t dst = fs.mkdir(ext2::kRootInode, "dst", 0755, 0, 0);
  fs.mknod(dst, "occupant", S_IFREG | 0644, 0, 0, 0);
  CHECK(fs_errno_of([&] {
          fs.rename(ext2::kRootInode, "src", ext2::kRootInode, "dst");
        }) == ENOTEMPTY);

  fs.unlink(dst, "occupant");
  fs.rename(ext2::kRootInode, "src", ext2::kRootInode, "dst");
  CHECK(fs.lookup(ext2::kRootInode, "src") == std::nullopt);
  uint32_t moved = must_lookup(fs, ext2::kRootInode, "dst");
  CHECK((fs.getattr(moved).mode & S_IFMT) == S_IFDIR);
}

TEST_CASE("directory listings split and merge entry records") {
  testutil::TempDir dir;
  auto image = dir.sub("dirent.ext2");
  ext2::mkfs(image, 0, 16u << 20);

  ext2::Fs fs(image, 0, 16u << 20, true);
  uint32_t d = fs.mkdir(ext2::kRootInode, "many", 0755, 0, 0);
  std::vector<std::string> names;
  for (int i = 0; i < 600; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "entry-%03d-with-padding", i);
    names.emplace_back(buf);
    fs.mknod(d, names.back(), S_IFREG | 0644, 0, 0, 0);
  }
  CHECK(fs.getattr(d).size > 4096); // listing spilled into extra blocks

  // Remove every third entry, then reinsert under longer names: removal
  // must merge slack and insertion must split it again.
  for (size_t i = 0; i < names.size(); i += 3)
    fs.unlink(d, names[i]);
  for (size_t i = 0; i < names.size(); i += 3) {
    names[i] += "-replacement-name";
    fs.mknod(d, names[i], S_IFREG | 0600, 0, 0, 0);
  }

  auto listing = fs.readdir(d);
  std::set<std::string> seen;
  for (const auto &entry : listing)
    if (entry.name != "." && entry.name != "..")
      seen.insert(entry.name);
  CHECK(seen.size() == names.size());
  for (const auto &name : names)
    CHECK(seen.contains(name));
  for (const auto &name : names)
    CHECK(fs.lookup(d, name).has_value());
}

TEST_CASE("read-only driver refuses every mutation with EROFS") {
  testutil::TempDir dir;
  auto image = dir.sub("ro.ext2");
  ext2::mkfs(image, 0, 4u << 20);
  {
    ext2::Fs rw(image, 0, 4u << 20, true);
    rw.mknod(ext2::kRootInode, "file", S_IFREG | 0644, 0, 0, 0);
  }

  ext2::Fs fs(image, 0, 4u << 20, false);
  uint32_t ino = must_lookup(fs, ext2::kRootInode, "file");
  std::string text = "x";
  CHECK(fs_errno_of([&] { fs.write(ino, 0, as_bytes_of(text)); }) == EROFS);
  CHECK(fs_errno_of([&] {
          fs.mknod(ext2::kRootInode, "new", S_IFREG | 0644, 0, 0, 0);
        }) == EROFS);
  CHECK(fs_errno_of([&] {
          fs.mkdir(ext2::kRootInode, "newdir", 0755, 0, 0);
        }) == EROFS);
  CHECK(fs_errno_of([&] { fs.unlink(ext2::kRootInode, "file"); }) == EROFS);
  CHECK(fs_errno_of([&] {
          ext2::SetAttrRequest req;
          req.mode = 0600;
          fs.setattr(ino, req);
        }) == EROFS);
  CHECK(fs_errno_of([&] {
          fs.rename(ext2::kRootInode, "file", ext2::kRootInode, "other");
        }) == EROFS);
}

TEST_CASE("ownership and mode changes always succeed and persist") {
  testutil::TempDir dir;
  auto image = dir.sub("chown.ext2");
  ext2::mkfs(image, 0, 4u << 20);

  {
    ext2::Fs fs(image, 0, 4u << 20, true);
    uint32_t ino =
        fs.mknod(ext2::kRootInode, "owned", S_IFREG | 0644, 1000, 1000, 0);
    ext2::SetAttrRequest req;
    req.uid = 0;
    req.gid = 0;
    req.mode = 04755; // setuid bit stored verbatim
    auto attr = fs.setattr(ino, req);
    CHECK(attr.uid == 0);
    CHECK(attr.gid == 0);
    CHECK((attr.mode & 07777) == 04755);

    // 32-bit ids round through the high half-words.
    ext2::SetAttrRequest wide;
    wide.uid = 100000;
    wide.gid = 165536;
    CHECK(fs.setattr(ino, wide).uid == 100000);
  }
  ext2::Fs fs(image, 0, 4u << 20, false);
  auto attr = fs.getattr(must_lookup(fs, ext2::kRootInode, "owned"));
  CHECK(attr.uid == 100000);
  CHECK(attr.gid == 165536);
  CHECK((attr.mode & 07777) == 04755);
}

TEST_CASE("driver works at a nonzero partition offset") {
  testutil::TempDir dir;
  auto image = dir.sub("embedded.bin");
  // Leading junk so the filesystem cannot accidentally sit at offset 0.
  std::vector<std::byte> junk(8192, std::byte{0x77});
  write_binary(image, junk);
  ext2::mkfs(image, 8192, 4u << 20);

  auto raw = slurp_binary(image);
  CHECK(le16(raw, 8192 + 1080) == 0xEF53);

  {
    ext2::Fs fs(image, 8192, 4u << 20, true);
    uint32_t ino =
        fs.mknod(ext2::kRootInode, "inside", S_IFREG | 0644, 0, 0, 0);
    fs.write(ino, 0, as_bytes_of(std::string("offset payload")));
  }
  ext2::Fs fs(image, 8192, 4u << 20, false);
  CHECK(read_whole(fs, must_lookup(fs, ext2::kRootInode, "inside")) ==
        "offset payload");
  // The junk prefix is untouched.
  raw = slurp_binary(image);
  for (size_t i = 0; i < 8192; ++i)
    REQUIRE(raw[i] == std::byte{0x77});
}

TEST_CASE("oversized growth is rejected whole") {
  testutil::TempDir dir;
  auto image = dir.sub("efbig.ext2");
  ext2::mkfs(image, 0, 4u << 20);

  ext2::Fs fs(image, 0, 4u << 20, true);
  uint32_t ino = fs.mknod(ext2::kRootInode, "huge", S_IFREG | 0644, 0, 0, 0);
  std::string one = "x";
  CHECK(fs_errno_of([&] { fs.write(ino, 0xFFFFFFFFull, as_bytes_of(one)); }) ==
        EFBIG);
  CHECK(fs_errno_of([&] {
          ext2::SetAttrRequest req;
          req.size = 0x100000001ull;
          fs.setattr(ino, req);
        }) == EFBIG);
  CHECK(fs.getattr(ino).size == 0);
}

TEST_CASE("filling the filesystem reports ENOSPC and stays consistent") {
  testutil::TempDir dir;
  auto image = dir.sub("full.ext2");
  ext2::mkfs(image, 0, 1u << 20); // 256 blocks total
  ext2::Fs fs(image, 0, 1u << 20, true);
  uint32_t ino = fs.mknod(ext2::kRootInode, "filler", S_IFREG | 0644, 0, 0, 0);
  std::vector<std::byte> chunk(64 * 4096, std::byte{0xEE});
  uint64_t written = 0;
  int err = 0;
  try {
    for (int i = 0; i < 64; ++i)
      written += fs.write(ino, written, chunk);
  } catch (const ext2::FsError &error) {
    err = error.code();
  }
  CHECK(err == ENOSPC);
  CHECK(written > 0);
  CHECK(fs.statfs().blocks_free == 0);
  // Unlinking returns every allocated block.
  fs.unlink(ext2::kRootInode, "filler");
  CHECK(fs.statfs().blocks_free > 200);
}

TEST_CASE("driver rejects non-ext and trimmed images") {
  testutil::TempDir dir;
  auto junk = dir.sub("junk.bin");
  std::vector<std::byte> bytes(1u << 20, std::byte{0x42});
  write_binary(junk, bytes);
  CHECK(testutil::errc_of([&] { ext2::Fs fs(junk, 0, 1u << 20, false); }) ==
        Errc::BadMagic);

  auto image = dir.sub("short.ext2");
  ext2::mkfs(image, 0, 4u << 20);
  // Claim a partition window shorter than the filesystem inside it.
  CHECK(testutil::errc_of([&] { ext2::Fs fs(image, 0, 1u << 20, false); }) ==
        Errc::Truncated);
  CHECK(testutil::errc_of([&] { ext2::Fs fs(image, 0, 1000, false); }) ==
        Errc::Truncated);
}

TEST_CASE("randomized operations match an in-memory shadow tree") {
  testutil::TempDir dir;
  auto image = dir.sub("shadow.ext2");
  ext2::mkfs(image, 0, 32u << 20);

  // Shadow model: path -> contents for files, nullopt for directories.
  std::map<std::string, std::optional<std::string>> shadow;
  shadow["/"] = std::nullopt;
  std::mt19937 rng(0x5EED);

  auto resolve = [&](ext2::Fs &fs, const std::string &path) -> uint32_t {
    uint32_t cur = ext2::kRootInode;
    for (const auto &part : path_components(path))
      cur = must_lookup(fs, cur, part);
    return cur;
  };
  auto parent_of = [](const std::string &path) {
    auto slash = path.rfind('/');
    return slash == 0 ? std::string("/") : path.substr(0, slash);
  };
  auto name_of = [](const std::string &path) {
    return path.substr(path.rfind('/') + 1);
  };
  auto pick_dir = [&]() {
    std::vector<std::string> dirs;
    for (const auto &[path, content] : shadow)
      if (!content.has_value())
        dirs.push_back(path);
    return dirs[rng() % dirs.size()];
  };
  auto pick_file = [&]() -> std::optional<std::string> {
    std::vector<std::string> files;
    for (const auto &[path, content] : shadow)
      if (content.has_value())
        files.push_back(path);
    if (files.empty())
      return std::nullopt;
    return files[rng() % files.size()];
  };

  for (int round = 0; round < 3; ++round) {
    ext2::Fs fs(image, 0, 32u << 20, true);
    for (int op = 0; op < 120; ++op) {
      switch (rng() % 5) {
      case 0: { // create or overwrite-append a file
        auto d = pick_dir();
        std::string path =
            (d == "/" ? "" : d) + "/f" + std::to_string(rng() % 40);
        if (shadow.contains(path))
          break;
        auto body_bytes = testutil::random_bytes(rng, rng() % 20000);
        std::string body(reinterpret_cast<const char *>(body_bytes.data()),
                         body_bytes.size());
        uint32_t ino = fs.mknod(resolve(fs, d), name_of(path),
                                S_IFREG | 0644, 0, 0, 0);
        fs.write(ino, 0, body_bytes);
        shadow[path] = body;
        break;
      }
      case 1: { // append to an existing file
        auto path = pick_file();
        if (!path)
          break;
        auto extra_bytes = testutil::random_bytes(rng, rng() % 9000);
        std::string extra(reinterpret_cast<const char *>(extra_bytes.data()),
                          extra_bytes.size());
        uint32_t ino = resolve(fs, *path);
        fs.write(ino, fs.getattr(ino).size, extra_bytes);
        *shadow[*path] += extra;
        break;
      }
      case 2: { // make a directory
        auto d = pick_dir();
        std::string path =
            (d == "/" ? "" : d) + "/d" + std::to_string(rng() % 15);
        if (shadow.contains(path))
          break;
        fs.mkdir(resolve(fs, d), name_of(path), 0755, 0, 0);
        shadow[path] = std::nullopt;
        break;
      }
      case 3: { // unlink a file
        auto path = pick_file();
        if (!path)
          break;
        fs.unlink(resolve(fs, parent_of(*path)), name_of(*path));
        shadow.erase(*path);
        break;
      }
      case 4: { // remove an empty directory
        auto d = pick_dir();
        if (d == "/")
          break;
        bool empty = true;
        for (const auto &[path, content] : shadow)
          if (path != d && path.starts_with(d + "/"))
            empty = false;
        if (!empty)
          break;
        fs.rmdir(resolve(fs, parent_of(d)), name_of(d));
        shadow.erase(d);
        break;
      }
      }
    }

    // Full comparison against the shadow after reopening read-only.
    ext2::Fs check(image, 0, 32u << 20, false);
    size_t entries_seen = 0;
    for (const auto &[path, content] : shadow) {
      uint32_t ino = resolve(check, path);
      auto attr = check.getattr(ino);
      if (content.has_value()) {
        REQUIRE((attr.mode & S_IFMT) == S_IFREG);
        REQUIRE(read_whole(check, ino) == *content);
      } else {
        REQUIRE((attr.mode & S_IFMT) == S_IFDIR);
      }
      ++entries_seen;
    }
    REQUIRE(entries_seen == shadow.size());

    // And the reverse direction: nothing exists that the shadow lacks.
    std::function<void(uint32_t, const std::string &)> walk =
        [&](uint32_t ino, const std::string &prefix) {
          for (const auto &entry : check.readdir(ino)) {
            if (entry.name == "." || entry.name == "..")
              continue;
            std::string path =
                (prefix == "/" ? "" : prefix) + "/" + entry.name;
            REQUIRE(shadow.contains(path));
            if (entry.file_type == ext2::kFtDirectory)
              walk(entry.ino, path);
          }
        };
    walk(ext2::kRootInode, "/");
  }
}

TEST_CASE("mkfs refuses images below the minimum size") {
  testutil::TempDir dir;
  CHECK(testutil::errc_of([&] {
          ext2::mkfs(dir.sub("tiny.ext2"), 0, 64 * 1024);
        }) == Errc::InvalidRequest);
}
