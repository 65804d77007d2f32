#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>

namespace bk::util {

// 64-bit FNV-1a; stable across platforms, used for trial keys and provenance hashes.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(std::string_view text, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

std::string read_file(const std::filesystem::path& path);
std::string hash_file(const std::filesystem::path& path);

// Writes to a sibling temp file and renames it into place.
void atomic_write(const std::filesystem::path& path, std::string_view bytes);

// Deterministic generator independent of the standard library's distribution implementations.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}
    std::uint64_t next();
    // Uniform in [0, 1) with 53 random bits.
    double uniform();
    std::uint64_t below(std::uint64_t bound);

private:
    std::uint64_t state_;
};

// Runs fn over [0, n) on a bounded pool; the first exception stops the pool and is rethrown.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t index, int worker)>& fn);

}  // namespace bk::util
