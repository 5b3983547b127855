#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace jinfer {

// FNV-1a over bytes, seedable so two passes give independent streams.
std::uint64_t fnv1a64(std::string_view data, std::uint64_t basis = 0xcbf29ce484222325ULL);

// 32-hex-char digest from two FNV-1a streams with different bases. Not
// cryptographic; used for cache keys and manifest content hashes.
std::string hex_digest(std::string_view data);

// hex_digest of a file's raw bytes. Throws Error when the file cannot be read.
std::string file_digest(const std::string& path);

}  // namespace jinfer
