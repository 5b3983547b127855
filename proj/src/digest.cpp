#include "jinfer/digest.hpp"

#include <cstdio>
#include <fstream>
#include <iterator>

#include "jinfer/errors.hpp"

namespace jinfer {

std::uint64_t fnv1a64(std::string_view data, std::uint64_t basis) {
  std::uint64_t h = basis;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {
void append_hex64(std::string& out, std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  out += buf;
}
}  // namespace

std::string hex_digest(std::string_view data) {
  std::string out;
  out.reserve(32);
  append_hex64(out, fnv1a64(data, 0xcbf29ce484222325ULL));
  append_hex64(out, fnv1a64(data, 0x9ae16a3b2f90404fULL));
  return out;
}

std::string file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("file_digest: cannot read " + path);
  const std::string bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  return hex_digest(bytes);
}

}  // namespace jinfer
