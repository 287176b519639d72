#pragma once

#include <cstdint>
#include <string>

namespace gtnrec {

/// Content digests for run manifests: FNV-1a 64-bit, rendered as 16 hex
/// chars. Stable across runs of the same build; changes iff the bytes
/// change.
class Digest {
 public:
  Digest& update(const void* data, std::size_t len);
  Digest& update(const std::string& s) { return update(s.data(), s.size()); }
  Digest& update_file(const std::string& path);  // throws io on missing file

  std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ull;
};

std::string digest_of(const std::string& bytes);
std::string digest_of_file(const std::string& path);

}  // namespace gtnrec
