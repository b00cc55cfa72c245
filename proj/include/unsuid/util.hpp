// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace unsuid {

/// Owning file descriptor.
class Fd {
public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  Fd(Fd &&other) noexcept : fd_(other.release()) {}
  Fd &operator=(Fd &&other) noexcept;
  Fd(const Fd &) = delete;
  Fd &operator=(const Fd &) = delete;
  ~Fd();

  int get() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  int release();
  void reset(int fd = -1);

private:
  int fd_ = -1;
};

Fd open_readonly(const std::string &path);
Fd open_readwrite(const std::string &path);

/// Reads exactly n bytes at offset. Throws Truncated on short read, Io on
/// failure.
void read_exact_at(int fd, uint64_t offset, std::span<std::byte> out);
void write_all_at(int fd, uint64_t offset, std::span<const std::byte> data);
void write_all(int fd, std::span<const std::byte> data);

uint64_t file_size(int fd);
uint64_t file_size(const std::string &path);

std::string slurp_file(const std::string &path);
std::optional<std::string> slurp_file_if_exists(const std::string &path);
void write_file(const std::string &path, std::string_view contents);
std::vector<std::byte> slurp_binary(const std::string &path);
void write_binary(const std::string &path, std::span<const std::byte> data);

bool path_exists(const std::string &path);
bool is_directory(const std::string &path);
bool is_regular_file(const std::string &path);
bool is_executable_file(const std::string &path);

void make_dirs(const std::string &path, unsigned mode = 0755);

/// Splits on a delimiter, keeping empty fields.
std::vector<std::string> split(std::string_view text, char delim);
std::string_view trim(std::string_view text);
bool starts_with(std::string_view text, std::string_view prefix);

/// Normalizes a container-absolute path: leading slash enforced, "." and
/// empty components dropped, ".." rejected via nullopt.
std::optional<std::string> normalize_abs_path(std::string_view path);

/// Components of a normalized absolute path ("/a/b" yields {"a", "b"}).
std::vector<std::string> path_components(std::string_view path);

/// Little-endian scalar access into raw buffers.
uint16_t le16(std::span<const std::byte> buf, size_t offset);
uint32_t le32(std::span<const std::byte> buf, size_t offset);
uint64_t le64(std::span<const std::byte> buf, size_t offset);
void put_le16(std::span<std::byte> buf, size_t offset, uint16_t value);
void put_le32(std::span<std::byte> buf, size_t offset, uint32_t value);
void put_le64(std::span<std::byte> buf, size_t offset, uint64_t value);

/// Searches PATH-style colon lists for an executable name.
std::optional<std::string> find_in_path_list(const std::string &name,
                                             const std::string &path_list);

std::string getenv_or(const char *name, const std::string &fallback);

} // namespace unsuid
