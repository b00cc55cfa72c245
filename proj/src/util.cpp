// SPDX-License-Identifier: Apache-2.0

#include "unsuid/util.hpp"

#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fcntl.h>
#include <sys/stat.h>
#include <sys/types.h>
#include <unistd.h>

#include <fmt/format.h>

#include "unsuid/errors.hpp"

namespace unsuid {

Fd &Fd::operator=(Fd &&other) noexcept {
  if (this != &other)
    reset(other.release());
  return *this;
}

Fd::~Fd() { reset(); }

int Fd::release() {
  int fd = fd_;
  fd_ = -1;
  return fd;
}

void Fd::reset(int fd) {
  if (fd_ >= 0)
    ::close(fd_);
  fd_ = fd;
}

Fd open_readonly(const std::string &path) {
  int fd = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
  if (fd < 0)
    raise_errno(Errc::Io, fmt::format("open {}", path));
  return Fd(fd);
}

Fd open_readwrite(const std::string &path) {
  int fd = ::open(path.c_str(), O_RDWR | O_CLOEXEC);
  if (fd < 0)
    raise_errno(Errc::Io, fmt::format("open {}", path));
  return Fd(fd);
}

void read_exact_at(int fd, uint64_t offset, std::span<std::byte> out) {
  size_t done = 0;
  while (done < out.size()) {
    ssize_t n = ::pread(fd, out.data() + done, out.size() - done,
                        static_cast<off_t>(offset + done));
    if (n < 0) {
      if (errno == EINTR)
        continue;
      raise_errno(Errc::Io, fmt::format("pread at {}", offset + done));
    }
    if (n == 0)
      raise(Errc::Truncated,
            fmt::format("need {} bytes at offset {}, file ends after {}",
                        out.size(), offset, done));
    done += static_cast<size_t>(n);
  }
}

void write_all_at(int fd, uint64_t offset, std::span<const std::byte> data) {
  size_t done = 0;
  while (done < data.size()) {
    ssize_t n = ::pwrite(fd, data.data() + done, data.size() - done,
                         static_cast<off_t>(offset + done));
    if (n < 0) {
      if (errno == EINTR)
        continue;
      raise_errno(Errc::Io, fmt::format("pwrite at {}", offset + done));
    }
    done += static_cast<size_t>(n);
  }
}

void write_all(int fd, std::span<const std::byte> data) {
  size_t done = 0;
  while (done < data.size()) {
    ssize_t n = ::write(fd, data.data() + done, data.size() - done);
    if (n < 0) {
      if (errno == EINTR)
        continue;
      raise_errno(Errc::Io, "write");
    }
    done += static_cast<size_t>(n);
  }
}

uint64_t file_size(int fd) {
  struct stat st {};
  if (::fstat(fd, &st) != 0)
    raise_errno(Errc::Io, "fstat");
  return static_cast<uint64_t>(st.st_size);
}

uint64_t file_size(const std::string &path) {
  struct stat st {};
  if (::stat(path.c_str(), &st) != 0)
    raise_errno(Errc::Io, fmt::format("stat {}", path));
  return static_cast<uint64_t>(st.st_size);
}

std::string slurp_file(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    raise(Errc::Io, fmt::format("open {}", path));
  std::ostringstream out;
  out << in.rdbuf();
  if (in.bad())
    raise(Errc::Io, fmt::format("read {}", path));
  return out.str();
}

std::optional<std::string> slurp_file_if_exists(const std::string &path) {
  if (!path_exists(path))
    return std::nullopt;
  return slurp_file(path);
}

void write_file(const std::string &path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    raise(Errc::Io, fmt::format("open {}", path));
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out)
    raise(Errc::Io, fmt::format("write {}", path));
}

std::vector<std::byte> slurp_binary(const std::string &path) {
  Fd fd = open_readonly(path);
  std::vector<std::byte> data(file_size(fd.get()));
  if (!data.empty())
    read_exact_at(fd.get(), 0, data);
  return data;
}

void write_binary(const std::string &path, std::span<const std::byte> data) {
  int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0)
    raise_errno(Errc::Io, fmt::format("open {}", path));
  Fd owner(fd);
  write_all(fd, data);
}

bool path_exists(const std::string &path) {
  struct stat st {};
  return ::lstat(path.c_str(), &st) == 0;
}

bool is_directory(const std::string &path) {
  struct stat st {};
  return ::stat(path.c_str(), &st) == 0 && S_ISDIR(st.st_mode);
}

bool is_regular_file(const std::string &path) {
  struct stat st {};
  return ::stat(path.c_str(), &st) == 0 && S_ISREG(st.st_mode);
}

bool is_executable_file(const std::string &path) {
  struct stat st {};
  if (::stat(path.c_str(), &st) != 0 || !S_ISREG(st.st_mode))
    return false;
  return ::access(path.c_str(), X_OK) == 0;
}

void make_dirs(const std::string &path, unsigned mode) {
  if (path.empty() || is_directory(path))
    return;
  std::string accum;
  for (const auto &part : split(path, '/')) {
    if (part.empty()) {
      if (accum.empty())
        accum = "/";
      continue;
    }
    if (accum.empty())
      accum = part;
    else if (accum.back() == '/')
      accum += part;
    else
      accum += "/" + part;
    if (::mkdir(accum.c_str(), mode) != 0 && errno != EEXIST)
      raise_errno(Errc::Io, fmt::format("mkdir {}", accum));
  }
}

std::vector<std::string> split(std::string_view text, char delim) {
  std::vector<std::string> out;
  size_t start = 0;
  for (size_t i = 0; i <= text.size(); ++i) {
    if (i == text.size() || text[i] == delim) {
      out.emplace_back(text.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

std::string_view trim(std::string_view text) {
  while (!text.empty() && std::isspace(static_cast<unsigned char>(text.front())))
    text.remove_prefix(1);
  while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back())))
    text.remove_suffix(1);
  return text;
}

bool starts_with(std::string_view text, std::string_view prefix) {
  return text.size() >= prefix.size() &&
         text.substr(0, prefix.size()) == prefix;
}

std::optional<std::string> normalize_abs_path(std::string_view path) {
  if (path.empty() || path.front() != '/')
    return std::nullopt;
  std::vector<std::string> kept;
  for (const auto &part : split(path, '/')) {
    if (part.empty() || part == ".")
      continue;
    if (part == "..")
      return std::nullopt;
    kept.push_back(part);
  }
  std::string out = "/";
  for (size_t i = 0; i < kept.size(); ++i) {
    if (i)
      out += '/';
    out += kept[i];
  }
  return out;
}

std::vector<std::string> path_components(std::string_view path) {
  std::vector<std::string> out;
  for (const auto &part : split(path, '/'))
    if (!part.empty() && part != ".")
      out.push_back(part);
  return out;
}

uint16_t le16(std::span<const std::byte> buf, size_t offset) {
  uint16_t v = 0;
  std::memcpy(&v, buf.data() + offset, sizeof(v));
  return v;
}

uint32_t le32(std::span<const std::byte> buf, size_t offset) {
  uint32_t v = 0;
  std::memcpy(&v, buf.data() + offset, sizeof(v));
  return v;
}

uint64_t le64(std::span<const std::byte> buf, size_t offset) {
  uint64_t v = 0;
  std::memcpy(&v, buf.data() + offset, sizeof(v));
  return v;
}

void put_le16(std::span<std::byte> buf, size_t offset, uint16_t value) {
  std::memcpy(buf.data() + offset, &value, sizeof(value));
}

void put_le32(std::span<std::byte> buf, size_t offset, uint32_t value) {
  std::memcpy(buf.data() + offset, &value, sizeof(value));
}

void put_le64(std::span<std::byte> buf, size_t offset, uint64_t value) {
  std::memcpy(buf.data() + offset, &value, sizeof(value));
}

std::optional<std::string> find_in_path_list(const std::string &name,
                                             const std::string &path_list) {
  for (const auto &dir : split(path_list, ':')) {
    if (dir.empty())
      continue;
    std::string candidate = dir + "/" + name;
    if (is_executable_file(candidate))
      return candidate;
  }
  return std::nullopt;
}

std::string getenv_or(const char *name, const std::string &fallback) {
  const char *v = std::getenv(name);
  return v ? std::string(v) : fallback;
}

} // namespace unsuid
