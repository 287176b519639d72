#include "gtnrec/digest.hpp"

#include <cstdio>
#include <fstream>

#include "gtnrec/error.hpp"

namespace gtnrec {

Digest& Digest::update(const void* data, std::size_t len) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    state_ ^= p[i];
    state_ *= 0x100000001b3ull;
  }
  return *this;
}

Digest& Digest::update_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "digest: cannot open " + path);
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    update(buf, static_cast<std::size_t>(in.gcount()));
  }
  return *this;
}

std::string Digest::hex() const {
  char out[17];
  std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(state_));
  return std::string(out);
}

std::string digest_of(const std::string& bytes) {
  Digest d;
  d.update(bytes);
  return d.hex();
}

std::string digest_of_file(const std::string& path) {
  Digest d;
  d.update_file(path);
  return d.hex();
}

}  // namespace gtnrec
