// SPDX-License-Identifier: Apache-2.0

#include "unsuid/hostprobe.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <cstring>

#include <fcntl.h>
#include <pwd.h>
#include <sched.h>
#include <sys/mount.h>
#include <sys/stat.h>
#include <sys/wait.h>
#include <unistd.h>

#include <fmt/format.h>
#include <json.hpp>

#include "unsuid/errors.hpp"
#include "unsuid/util.hpp"

namespace unsuid {

namespace {

using ordered_json = nlohmann::ordered_json;

bool write_proc_file(const char *path, const std::string &content,
                     int report_fd, const char *what) {
  int fd = ::open(path, O_WRONLY | O_CLOEXEC);
  if (fd < 0) {
    ::dprintf(report_fd, "%s: open %s: %s", what, path, std::strerror(errno));
    return false;
  }
  ssize_t n = ::write(fd, content.data(), content.size());
  int saved = errno;
  ::close(fd);
  if (n != static_cast<ssize_t>(content.size())) {
    ::dprintf(report_fd, "%s: write %s: %s", what, path,
              std::strerror(saved));
    return false;
  }
  return true;
}

/// Runs in a forked child: enter a user namespace and become mapped root.
bool become_mapped_root(int report_fd) {
  uid_t uid = ::getuid();
  gid_t gid = ::getgid();
  if (::unshare(CLONE_NEWUSER) != 0) {
    ::dprintf(report_fd, "unshare(CLONE_NEWUSER): %s", std::strerror(errno));
    return false;
  }
  if (!write_proc_file("/proc/self/setgroups", "deny", report_fd, "setgroups"))
    return false;
  if (!write_proc_file("/proc/self/gid_map", fmt::format("0 {} 1\n", gid),
                       report_fd, "gid_map"))
    return false;
  if (!write_proc_file("/proc/self/uid_map", fmt::format("0 {} 1\n", uid),
                       report_fd, "uid_map"))
    return false;
  if (::geteuid() != 0) {
    ::dprintf(report_fd, "euid is %u after mapping, expected 0", ::geteuid());
    return false;
  }
  return true;
}

/// Forks, runs fn in the child, reaps it, and returns the child's failure
/// report (empty string on success).
std::optional<std::string> run_probe_child(bool (*fn)(int report_fd)) {
  int fds[2];
  if (::pipe2(fds, O_CLOEXEC) != 0)
    return fmt::format("pipe2: {}", std::strerror(errno));
  pid_t pid = ::fork();
  if (pid < 0) {
    ::close(fds[0]);
    ::close(fds[1]);
    return fmt::format("fork: {}", std::strerror(errno));
  }
  if (pid == 0) {
    ::close(fds[0]);
    ::_exit(fn(fds[1]) ? 0 : 1);
  }
  ::close(fds[1]);
  std::string report;
  char buf[512];
  ssize_t n;
  while ((n = ::read(fds[0], buf, sizeof(buf))) > 0)
    report.append(buf, static_cast<size_t>(n));
  ::close(fds[0]);
  int status = 0;
  while (::waitpid(pid, &status, 0) < 0 && errno == EINTR)
    ;
  if (WIFEXITED(status) && WEXITSTATUS(status) == 0)
    return std::nullopt;
  if (report.empty())
    report = fmt::format("probe child status {}", status);
  return report;
}

bool userns_probe_child(int report_fd) { return become_mapped_root(report_fd); }

// The overlay probe works entirely inside the child's private mount
// namespace over a tmpfs, so nothing is left behind on the host.
bool overlay_probe_child(int report_fd) {
  if (::unshare(CLONE_NEWUSER | CLONE_NEWNS) != 0) {
    ::dprintf(report_fd, "unshare(user+mount): %s", std::strerror(errno));
    return false;
  }
  if (!write_proc_file("/proc/self/setgroups", "deny", report_fd, "setgroups"))
    return false;
  if (!write_proc_file("/proc/self/gid_map",
                       fmt::format("0 {} 1\n", ::getgid()), report_fd,
                       "gid_map"))
    return false;
  if (!write_proc_file("/proc/self/uid_map",
                       fmt::format("0 {} 1\n", ::getuid()), report_fd,
                       "uid_map"))
    return false;
  if (::mount(nullptr, "/", nullptr, MS_REC | MS_PRIVATE, nullptr) != 0) {
    ::dprintf(report_fd, "make / private: %s", std::strerror(errno));
    return false;
  }
  const char *base = "/tmp";
  if (::mount("tmpfs", base, "tmpfs", 0, nullptr) != 0) {
    ::dprintf(report_fd, "tmpfs on %s: %s", base, std::strerror(errno));
    return false;
  }
  std::string lower = std::string(base) + "/lower";
  std::string upper = std::string(base) + "/upper";
  std::string work = std::string(base) + "/work";
  std::string merged = std::string(base) + "/merged";
  for (const auto &dir : {lower, upper, work, merged})
    if (::mkdir(dir.c_str(), 0755) != 0) {
      ::dprintf(report_fd, "mkdir %s: %s", dir.c_str(), std::strerror(errno));
      return false;
    }
  std::string opts = fmt::format("lowerdir={},upperdir={},workdir={}", lower,
                                 upper, work);
  if (::mount("overlay", merged.c_str(), "overlay", 0, opts.c_str()) != 0) {
    ::dprintf(report_fd, "overlay mount: %s", std::strerror(errno));
    return false;
  }
  return true;
}

std::string invoking_user_name(uint32_t uid) {
  if (struct passwd *pw = ::getpwuid(uid); pw && pw->pw_name)
    return pw->pw_name;
  return getenv_or("USER", "");
}

ordered_json ranges_to_json(const std::vector<SubIdRange> &ranges) {
  ordered_json arr = ordered_json::array();
  for (const auto &r : ranges)
    arr.push_back(ordered_json{{"start", r.start}, {"count", r.count}});
  return arr;
}

std::vector<SubIdRange> ranges_from_json(const ordered_json &arr) {
  std::vector<SubIdRange> out;
  if (!arr.is_array())
    return out;
  for (const auto &item : arr)
    out.push_back({item.value("start", 0u), item.value("count", 0u)});
  return out;
}

} // namespace

std::optional<std::string> HostProfile::helper(const std::string &name) const {
  auto it = helper_paths.find(name);
  if (it == helper_paths.end())
    return std::nullopt;
  return it->second;
}

std::string helper_search_path() {
  std::string path = getenv_or("PATH", "/usr/local/bin:/usr/bin:/bin");
  std::string prefix = getenv_or("UNSUID_HELPER_PATH", "");
  if (prefix.empty())
    return path;
  return prefix + ":" + path;
}

std::optional<std::string> find_helper(const std::string &name) {
  return find_in_path_list(name, helper_search_path());
}

HostProfile probe_host() {
  HostProfile profile;
  profile.invoking_uid = ::getuid();
  profile.invoking_gid = ::getgid();

  if (auto failure = run_probe_child(userns_probe_child)) {
    profile.userns_available = false;
    profile.diagnostics.push_back("userns probe: " + *failure);
  } else {
    profile.userns_available = true;
  }

  if (auto failure = run_probe_child(overlay_probe_child)) {
    profile.unpriv_overlayfs = false;
    profile.diagnostics.push_back("overlay probe: " + *failure);
  } else {
    profile.unpriv_overlayfs = true;
  }

  int fuse_fd = ::open("/dev/fuse", O_RDWR | O_CLOEXEC);
  if (fuse_fd >= 0) {
    profile.fuse_device_usable = true;
    ::close(fuse_fd);
  } else {
    profile.diagnostics.push_back(
        fmt::format("open /dev/fuse: {}", std::strerror(errno)));
  }

  for (const char *name : kHelperNames)
    profile.helper_paths[name] = find_helper(name);

  std::string user = invoking_user_name(profile.invoking_uid);
  if (auto content = slurp_file_if_exists("/etc/subuid"))
    profile.subuid_ranges = parse_subid(*content, user, profile.invoking_uid,
                                        profile.diagnostics);
  if (auto content = slurp_file_if_exists("/etc/subgid"))
    profile.subgid_ranges = parse_subid(*content, user, profile.invoking_gid,
                                        profile.diagnostics);
  profile.subid_mapped =
      !profile.subuid_ranges.empty() && !profile.subgid_ranges.empty();

  try {
    profile.already_root_mapped =
        detect_root_mapped_env(slurp_file("/proc/self/uid_map"), ::geteuid());
  } catch (const Error &e) {
    profile.already_root_mapped = false;
    profile.diagnostics.push_back(fmt::format("uid_map: {}", e.what()));
  }

  profile.setuid_installed = false;
  return profile;
}

std::vector<SubIdRange> parse_subid(std::string_view content,
                                    const std::string &user_name,
                                    uint32_t numeric_id,
                                    std::vector<std::string> &diagnostics) {
  std::vector<SubIdRange> out;
  std::string numeric_name = fmt::format("{}", numeric_id);
  size_t line_no = 0;
  for (const auto &raw_line : split(content, '\n')) {
    ++line_no;
    std::string_view line = trim(raw_line);
    if (line.empty())
      continue;
    auto fields = split(line, ':');
    if (fields.size() != 3) {
      diagnostics.push_back(
          fmt::format("subid line {}: expected name:start:count", line_no));
      continue;
    }
    if (fields[0] != user_name && fields[0] != numeric_name)
      continue;
    errno = 0;
    char *end = nullptr;
    unsigned long long start = std::strtoull(fields[1].c_str(), &end, 10);
    bool start_ok = errno == 0 && end && *end == '\0' && !fields[1].empty();
    errno = 0;
    long long count = std::strtoll(fields[2].c_str(), &end, 10);
    bool count_ok = errno == 0 && end && *end == '\0' && !fields[2].empty();
    if (!start_ok || !count_ok) {
      diagnostics.push_back(
          fmt::format("subid line {}: non-numeric start or count", line_no));
      continue;
    }
    if (count <= 0) {
      diagnostics.push_back(
          fmt::format("subid line {}: nonpositive count {}", line_no, count));
      continue;
    }
    if (start > 0xFFFFFFFFull ||
        start + static_cast<unsigned long long>(count) > 0x100000000ull) {
      diagnostics.push_back(fmt::format(
          "subid line {}: range exceeds the 32-bit id space", line_no));
      continue;
    }
    out.push_back({static_cast<uint32_t>(start), static_cast<uint32_t>(count)});
  }
  return out;
}

bool detect_root_mapped_env(std::string_view uid_map_text, uint32_t euid) {
  struct Entry {
    unsigned long long inside, outside, count;
  };
  std::vector<Entry> entries;
  for (const auto &raw_line : split(uid_map_text, '\n')) {
    std::string_view line = trim(raw_line);
    if (line.empty())
      continue;
    Entry e{};
    std::string owned(line);
    if (std::sscanf(owned.c_str(), "%llu %llu %llu", &e.inside, &e.outside,
                    &e.count) != 3)
      raise(Errc::MalformedIdMap,
            fmt::format("uid map line not three numbers: '{}'", owned));
    entries.push_back(e);
  }
  if (euid != 0)
    return false;
  bool identity = entries.size() == 1 && entries[0].inside == 0 &&
                  entries[0].outside == 0 && entries[0].count == 4294967295ull;
  return !identity;
}

std::string profile_to_json(const HostProfile &p) {
  ordered_json j;
  j["userns_available"] = p.userns_available;
  j["unpriv_overlayfs"] = p.unpriv_overlayfs;
  j["fuse_device_usable"] = p.fuse_device_usable;
  j["subid_mapped"] = p.subid_mapped;
  j["subuid_ranges"] = ranges_to_json(p.subuid_ranges);
  j["subgid_ranges"] = ranges_to_json(p.subgid_ranges);
  ordered_json helpers;
  for (const char *name : kHelperNames) {
    auto path = p.helper(name);
    helpers[name] = path ? ordered_json(*path) : ordered_json(nullptr);
  }
  j["helper_paths"] = helpers;
  j["setuid_installed"] = p.setuid_installed;
  j["already_root_mapped"] = p.already_root_mapped;
  j["invoking_uid"] = p.invoking_uid;
  j["invoking_gid"] = p.invoking_gid;
  j["diagnostics"] = p.diagnostics;
  return j.dump(2) + "\n";
}

HostProfile profile_from_json(const std::string &json_text) {
  ordered_json j;
  try {
    j = ordered_json::parse(json_text);
  } catch (const nlohmann::json::exception &e) {
    raise(Errc::Io, fmt::format("profile JSON: {}", e.what()));
  }
  HostProfile p;
  p.userns_available = j.value("userns_available", false);
  p.unpriv_overlayfs = j.value("unpriv_overlayfs", false);
  p.fuse_device_usable = j.value("fuse_device_usable", false);
  p.subid_mapped = j.value("subid_mapped", false);
  if (j.contains("subuid_ranges"))
    p.subuid_ranges = ranges_from_json(j["subuid_ranges"]);
  if (j.contains("subgid_ranges"))
    p.subgid_ranges = ranges_from_json(j["subgid_ranges"]);
  for (const char *name : kHelperNames)
    p.helper_paths[name] = std::nullopt;
  if (j.contains("helper_paths") && j["helper_paths"].is_object())
    for (const auto &[key, value] : j["helper_paths"].items())
      p.helper_paths[key] =
          value.is_string() ? std::optional<std::string>(
                                  value.template get<std::string>())
                            : std::nullopt;
  p.setuid_installed = j.value("setuid_installed", false);
  p.already_root_mapped = j.value("already_root_mapped", false);
  p.invoking_uid = j.value("invoking_uid", 0u);
  p.invoking_gid = j.value("invoking_gid", 0u);
  if (j.contains("diagnostics") && j["diagnostics"].is_array())
    for (const auto &d : j["diagnostics"])
      if (d.is_string())
        p.diagnostics.push_back(d.template get<std::string>());
  return p;
}

std::string profile_to_human(const HostProfile &p) {
  std::string out;
  auto flag = [](bool b) { return b ? "yes" : "no"; };
  out += fmt::format("user namespaces:      {}\n", flag(p.userns_available));
  out += fmt::format("unpriv overlayfs:     {}\n", flag(p.unpriv_overlayfs));
  out += fmt::format("/dev/fuse usable:     {}\n", flag(p.fuse_device_usable));
  out += fmt::format("subid mappings:       {}\n", flag(p.subid_mapped));
  for (const auto &r : p.subuid_ranges)
    out += fmt::format("  subuid range:       {} +{}\n", r.start, r.count);
  for (const auto &r : p.subgid_ranges)
    out += fmt::format("  subgid range:       {} +{}\n", r.start, r.count);
  out += fmt::format("already root-mapped:  {}\n",
                     flag(p.already_root_mapped));
  out += fmt::format("setuid installed:     {}\n", flag(p.setuid_installed));
  out += fmt::format("invoking uid/gid:     {}/{}\n", p.invoking_uid,
                     p.invoking_gid);
  out += "helpers:\n";
  for (const char *name : kHelperNames) {
    auto path = p.helper(name);
    out += fmt::format("  {:<16} {}\n", name, path ? *path : "(not found)");
  }
  for (const auto &d : p.diagnostics)
    out += fmt::format("note: {}\n", d);
  return out;
}

} // namespace unsuid
