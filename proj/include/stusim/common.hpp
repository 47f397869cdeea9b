#pragma once

#include <atomic>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <random>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "json.hpp"

namespace stusim {

/// Uniform integer in [0, n) by rejection sampling over raw engine output,
/// so draws are identical across standard library implementations.
std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t n);

/// Derives an independent seed for a keyed sub-stream (splitmix64 of the
/// seed combined with the key's FNV-1a hash).
std::uint64_t mix_seed(std::uint64_t seed, std::string_view key);

/// FNV-1a 64-bit hash rendered as 16 lowercase hex digits.
std::string fnv1a_hex(std::string_view data);

/// Reads a text file into a string. Throws DataError when unreadable.
std::string read_file(const std::string& path);

/// Writes via a temporary sibling file and rename. Throws DataError.
void write_file_atomic(const std::string& path, std::string_view content);

/// Splits into lines, dropping a trailing empty line and any '\r' before '\n'.
std::vector<std::string> split_lines(std::string_view text);

std::string trim(std::string_view s);
std::string rtrim_lines(std::string_view s);  // strips trailing whitespace on every line and at the end

/// Compact single-line JSON; invalid UTF-8 is replaced rather than thrown.
std::string dump_line(const nlohmann::json& j);

/// Runs fn(i) for i in [0, n) on up to `workers` threads. The first
/// exception thrown by any task is rethrown after all workers stop.
void parallel_for(size_t n, size_t workers, const std::function<void(size_t)>& fn);

}  // namespace stusim
