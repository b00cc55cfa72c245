// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cerrno>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <doctest.h>

#include "support/testutil.hpp"
#include "unsuid/errors.hpp"
#include "unsuid/ext2fs.hpp"
#include "unsuid/hostprobe.hpp"
#include "unsuid/imagefmt.hpp"
#include "unsuid/mounter.hpp"
#include "unsuid/nsexec.hpp"
#include "unsuid/planner.hpp"
#include "unsuid/squashfs.hpp"

using namespace unsuid;
using testutil::ChildResult;
using testutil::run_in_child;
using testutil::TempDir;

namespace {

constexpr uid_t kNobody = 65534;

void write_text(const std::string &path, const std::string &content,
                mode_t mode = 0644) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  REQUIRE(out.good());
  out << content;
  out.close();
  REQUIRE(out.good());
  REQUIRE(::chmod(path.c_str(), mode) == 0);
}

std::optional<std::string> slurp(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    return std::nullopt;
  std::string content((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
  return content;
}

// Child-side assertion: prints the failure so the parent can show it.
bool g_child_ok = true;
void check(bool ok, const char *what) {
  if (!ok) {
    std::printf("FAIL: %s\n", what);
    g_child_ok = false;
  }
}

void check_eq(const std::optional<std::string> &got, const std::string &want,
              const char *what) {
  if (!got) {
    std::printf("FAIL: %s: unreadable\n", what);
    g_child_ok = false;
  } else if (*got != want) {
    std::printf("FAIL: %s: got \"%s\" want \"%s\"\n", what, got->c_str(),
                want.c_str());
    g_child_ok = false;
  }
}

// Enters a fresh user+mount namespace with this uid identity-mapped
// (or root-mapped when root_inside), ready for unprivileged mounting.
void enter_test_namespace(bool root_inside = false) {
  IdentityPlan identity;
  identity.mode =
      root_inside ? IdentityMode::RootMappedNs : IdentityMode::PlainUser;
  const uint32_t inside = root_inside ? 0 : ::getuid();
  identity.uid_map_entries = {{inside, ::getuid(), 1}};
  identity.gid_map_entries = {{root_inside ? 0 : ::getgid(), ::getgid(), 1}};
  HostProfile profile;
  enter_namespaces(namespace_setup_for(identity, profile));
}

int child_exit() { return g_child_ok ? 0 : 1; }

// Builds the fixture tree every rootfs image in this file starts from.
void populate_rootfs_tree(const std::string &dir) {
  REQUIRE(::mkdir((dir + "/bin").c_str(), 0755) == 0);
  REQUIRE(::mkdir((dir + "/etc").c_str(), 0755) == 0);
  REQUIRE(::mkdir((dir + "/lib").c_str(), 0755) == 0);
  write_text(dir + "/bin/tool", "tool-payload\n", 0755);
  write_text(dir + "/etc/conf", "image-conf\n");
  write_text(dir + "/etc/keep", "keep-image\n");
  write_text(dir + "/lib/libz.so", "libz\n");
  REQUIRE(::symlink("conf", (dir + "/etc/alt").c_str()) == 0);
  REQUIRE(::symlink("bin", (dir + "/sbin").c_str()) == 0);
}

} // namespace

TEST_CASE("underlay plan assembles squash rootfs with shadowed binds") {
  TempDir tmp;
  REQUIRE(::chmod(tmp.path().c_str(), 0755) == 0);
  const std::string tree = tmp.sub("tree");
  REQUIRE(::mkdir(tree.c_str(), 0755) == 0);
  populate_rootfs_tree(tree);
  const std::string image = tmp.sub("root.squashfs");
  squashfs::write_tree(tree, image);
  REQUIRE(::chmod(image.c_str(), 0644) == 0);

  const std::string host_conf = tmp.sub("host-conf");
  write_text(host_conf, "host-conf\n");
  const std::string host_data = tmp.sub("data");
  REQUIRE(::mkdir(host_data.c_str(), 0755) == 0);
  write_text(host_data + "/child", "data-child\n");
  const std::string helpers = testutil::stage_helpers(
      tmp.sub("helpers"), {"squashfuse"});

  ChildResult r = run_in_child(
      [&] {
        ::setenv("UNSUID_HELPER_PATH", helpers.c_str(), 1);
        HostProfile profile = probe_host();
        RuntimeRequest request;
        request.image = image;
        request.binds = {{host_conf, "/etc/conf", false},
                         {host_data, "/data", false}};
        ImageInfo info = detect_image(image);
        Plan p = plan(profile, request, info);
        check(p.identity.mode == IdentityMode::PlainUser,
              "no fakeroot requested keeps the plain identity");

        enter_namespaces(namespace_setup_for(p.identity, profile));
        MountExecutor ex;
        ex.execute(p.mounts, /*pivot=*/false);
        const std::string root = ex.root();

        check_eq(slurp(root + "/etc/conf"), "host-conf\n",
                 "bind shadows the image file");
        check_eq(slurp(root + "/etc/keep"), "keep-image\n",
                 "sibling of a shadowed entry is replicated");
        check_eq(slurp(root + "/bin/tool"), "tool-payload\n",
                 "unshadowed image directory is bound whole");
        check_eq(slurp(root + "/data/child"), "data-child\n",
                 "host directory bind is visible");

        char link[64] = {};
        ssize_t n = ::readlink((root + "/etc/alt").c_str(), link,
                               sizeof(link) - 1);
        check(n > 0 && std::string(link, size_t(n)) == "conf",
              "symlink in a replicated level is recreated, not resolved");
        check_eq(slurp(root + "/etc/alt"), "host-conf\n",
                 "recreated symlink resolves inside the assembled root");
        n = ::readlink((root + "/sbin").c_str(), link, sizeof(link) - 1);
        check(n > 0 && std::string(link, size_t(n)) == "bin",
              "top-level image symlink is recreated");

        check(path_exists(root + "/proc/self/status"),
              "proc is mounted in the root");
        struct stat st{};
        check(::stat((root + "/dev/null").c_str(), &st) == 0 &&
                  S_ISCHR(st.st_mode),
              "dev is bound and /dev/null is a character device");
        int fd = ::open((root + "/tmp/scribble").c_str(),
                        O_CREAT | O_WRONLY, 0644);
        check(fd >= 0, "container /tmp is a writable tmpfs");
        if (fd >= 0)
          ::close(fd);
        errno = 0;
        fd = ::open((root + "/bin/tool").c_str(), O_WRONLY);
        check(fd < 0 && errno == EROFS, "rootfs content refuses writes");

        ex.teardown();
        check(!is_mount_point(root + "/proc"),
              "teardown unmounts the standard mounts");
        check(!is_mount_point(scratch::kBase),
              "teardown unmounts the scratch tmpfs");
        ex.teardown(); // second call must be a no-op
        return child_exit();
      },
      kNobody);
  INFO(r.output);
  CHECK(r.exit_code == 0);
}

TEST_CASE("writable composite image persists changes in its ext partition") {
  TempDir tmp;
  REQUIRE(::chmod(tmp.path().c_str(), 0755) == 0);
  const std::string tree = tmp.sub("tree");
  REQUIRE(::mkdir(tree.c_str(), 0755) == 0);
  populate_rootfs_tree(tree);
  const std::string squash = tmp.sub("root.squashfs");
  squashfs::write_tree(tree, squash);

  const std::string overlay = tmp.sub("overlay.ext");
  ext2::mkfs(overlay, 0, 4 << 20);
  const std::string image = tmp.sub("composite.img");
  write_cif({{PartitionKind::Squashfs, PartitionRole::Rootfs, squash},
             {PartitionKind::Extfs, PartitionRole::Overlay, overlay}},
            image);
  // The unprivileged child writes through the window straight into this
  // file, so it must be writable for it.
  REQUIRE(::chmod(image.c_str(), 0666) == 0);
  // An ext-backed upper always goes through fuse-overlayfs; the kernel
  // overlay refuses fuse upper layers.
  const std::string helpers = testutil::stage_helpers(
      tmp.sub("helpers"), {"squashfuse", "fuse2fs", "fuse-overlayfs"});

  ChildResult r = run_in_child(
      [&] {
        ::setenv("UNSUID_HELPER_PATH", helpers.c_str(), 1);
        HostProfile profile = probe_host();
        RuntimeRequest request;
        request.image = image;
        request.writable = true;
        ImageInfo info = detect_image(image);
        check(info.kind == ImageKind::Cif, "composite image detected");
        check(info.overlays().size() == 1, "one overlay partition");
        Plan p = plan(profile, request, info);

        enter_namespaces(namespace_setup_for(p.identity, profile));
        MountExecutor ex;
        ex.execute(p.mounts, /*pivot=*/false);
        const std::string root = ex.root();

        check_eq(slurp(root + "/etc/conf"), "image-conf\n",
                 "squash lower is visible through the overlay");
        write_text(root + "/newfile", "persist-me\n");
        write_text(root + "/etc/conf", "edited\n"); // forces a copy-up
        check_eq(slurp(root + "/etc/conf"), "edited\n",
                 "copy-up supersedes the lower file");

        ex.teardown();
        check(!is_mount_point(root), "overlay unmounted by teardown");

        // The upper layer lives inside the image's ext partition; prove
        // the writes reached the backing file itself.
        const PartitionDescriptor part = info.overlays()[0];
        ext2::Fs fs(image, part.offset, part.size, /*writable=*/false);
        auto upper = fs.lookup(ext2::kRootInode, "upper");
        check(upper.has_value(), "upper dir exists in the partition");
        if (upper) {
          auto file = fs.lookup(*upper, "newfile");
          check(file.has_value(), "new file landed in the partition");
          if (file) {
            ext2::Attr attr = fs.getattr(*file);
            std::string content(attr.size, '\0');
            fs.read(*file, 0,
                    std::as_writable_bytes(std::span(content)));
            check(content == "persist-me\n",
                  "persisted content survives the unmount");
          }
          auto etc = fs.lookup(*upper, "etc");
          check(etc.has_value() && fs.lookup(*etc, "conf").has_value(),
                "copy-up file landed in the partition");
        }
        return child_exit();
      },
      kNobody);
  INFO(r.output);
  CHECK(r.exit_code == 0);
  if (r.output.find("SKIP:") != std::string::npos)
    MESSAGE("skipped: no overlay backend available");
}

TEST_CASE("raw ext rootfs is served through a window and mounted read-only") {
  TempDir tmp;
  REQUIRE(::chmod(tmp.path().c_str(), 0755) == 0);
  const std::string image = tmp.sub("root.ext2");
  ext2::mkfs(image, 0, 4 << 20);
  {
    ext2::Fs fs(image, 0, 4 << 20, /*writable=*/true);
    fs.mknod(ext2::kRootInode, "hello", S_IFREG | 0644, 0, 0, 0);
    uint32_t ino = *fs.lookup(ext2::kRootInode, "hello");
    const std::string content = "ext-hello\n";
    fs.write(ino, 0, std::as_bytes(std::span(content)));
    uint32_t sub = fs.mkdir(ext2::kRootInode, "sub", S_IFDIR | 0755, 0, 0);
    fs.mknod(sub, "inner", S_IFREG | 0644, 0, 0, 0);
  }
  REQUIRE(::chmod(image.c_str(), 0644) == 0);
  const std::string helpers =
      testutil::stage_helpers(tmp.sub("helpers"), {"fuse2fs"});

  ChildResult r = run_in_child(
      [&] {
        ::setenv("UNSUID_HELPER_PATH", helpers.c_str(), 1);
        HostProfile profile = probe_host();
        RuntimeRequest request;
        request.image = image;
        ImageInfo info = detect_image(image);
        check(info.kind == ImageKind::RawExtfs, "raw ext image detected");
        Plan p = plan(profile, request, info);
        bool has_window = std::any_of(
            p.mounts.steps.begin(), p.mounts.steps.end(), [](const auto &s) {
              return std::holds_alternative<ServeWindowFile>(s);
            });
        check(has_window, "ext rootfs goes through a window file");

        enter_namespaces(namespace_setup_for(p.identity, profile));
        MountExecutor ex;
        ex.execute(p.mounts, /*pivot=*/false);
        const std::string root = ex.root();

        check_eq(slurp(root + "/hello"), "ext-hello\n",
                 "ext rootfs content is visible");
        check(path_exists(root + "/sub/inner"), "nested entries visible");
        errno = 0;
        int fd = ::open((root + "/hello").c_str(), O_WRONLY);
        check(fd < 0 && errno == EROFS,
              "read-only ext mount refuses writes");

        ex.teardown();
        return child_exit();
      },
      kNobody);
  INFO(r.output);
  CHECK(r.exit_code == 0);
}

TEST_CASE("writable tmpfs scratch leaves every image untouched") {
  TempDir tmp;
  REQUIRE(::chmod(tmp.path().c_str(), 0755) == 0);
  const std::string tree = tmp.sub("tree");
  REQUIRE(::mkdir(tree.c_str(), 0755) == 0);
  populate_rootfs_tree(tree);
  const std::string image = tmp.sub("root.squashfs");
  squashfs::write_tree(tree, image);
  REQUIRE(::chmod(image.c_str(), 0644) == 0);
  struct stat before{};
  REQUIRE(::stat(image.c_str(), &before) == 0);
  const std::string helpers = testutil::stage_helpers(
      tmp.sub("helpers"), {"squashfuse"});

  ChildResult r = run_in_child(
      [&] {
        ::setenv("UNSUID_HELPER_PATH", helpers.c_str(), 1);
        HostProfile profile = probe_host();
        if (!profile.unpriv_overlayfs &&
            !profile.helper("fuse-overlayfs")) {
          std::printf("SKIP: no overlay backend on this host\n");
          return 0;
        }
        RuntimeRequest request;
        request.image = image;
        request.writable = true;
        request.writable_tmpfs = true;
        Plan p = plan(profile, request, detect_image(image));

        enter_namespaces(namespace_setup_for(p.identity, profile));
        MountExecutor ex;
        ex.execute(p.mounts, /*pivot=*/false);
        write_text(ex.root() + "/scribble", "ephemeral\n");
        check_eq(slurp(ex.root() + "/scribble"), "ephemeral\n",
                 "tmpfs upper accepts writes");
        check_eq(slurp(ex.root() + "/etc/conf"), "image-conf\n",
                 "lower remains visible");
        ex.teardown();
        return child_exit();
      },
      kNobody);
  INFO(r.output);
  CHECK(r.exit_code == 0);

  struct stat after{};
  REQUIRE(::stat(image.c_str(), &after) == 0);
  CHECK(before.st_size == after.st_size);
  CHECK(before.st_mtim.tv_sec == after.st_mtim.tv_sec);
}

TEST_CASE("overlay mount errors") {
  SUBCASE("underlay strategy is not an overlay mount") {
    auto errc = testutil::errc_of([&] {
      mount_overlay(RootStrategyKind::ReadOnlyUnderlay, {"/x"}, "", "",
                    "/tmp/unsuid-never-mounted");
    });
    CHECK(errc == Errc::InvalidRequest);
  }
  SUBCASE("an overlay needs at least one lower layer") {
    auto errc = testutil::errc_of([&] {
      mount_overlay(RootStrategyKind::KernelOverlay, {}, "", "",
                    "/tmp/unsuid-never-mounted");
    });
    CHECK(errc == Errc::InvalidRequest);
  }
  SUBCASE("kernel rejection is surfaced, not papered over") {
    ChildResult r = run_in_child(
        [&] {
          enter_test_namespace();
          const std::string target =
              "/tmp/unsuid-ovl-rej-" + std::to_string(::getpid());
          try {
            mount_overlay(RootStrategyKind::KernelOverlay,
                          {"/nonexistent-lower-level"}, "", "", target);
            std::printf("FAIL: expected OverlayRejectedByKernel\n");
            g_child_ok = false;
          } catch (const Error &e) {
            check(e.code() == Errc::OverlayRejectedByKernel,
                  "errc is OverlayRejectedByKernel");
            check(std::string(e.what()).find("re-run probing") !=
                      std::string::npos,
                  "message tells the user to re-probe");
          }
          ::rmdir(target.c_str());
          return child_exit();
        },
        kNobody);
    INFO(r.output);
    CHECK(r.exit_code == 0);
  }
}
