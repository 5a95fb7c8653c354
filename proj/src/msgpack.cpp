#include "vslam/msgpack.hpp"

#include <cstring>
#include <stdexcept>

namespace vslam::msgpack {

void Writer::big_endian(std::uint64_t v, int bytes) {
  for (int i = bytes - 1; i >= 0; --i) byte(static_cast<std::uint8_t>(v >> (8 * i)));
}

void Writer::pack_uint(std::uint64_t v) {
  if (v < 0x80) {
    byte(static_cast<std::uint8_t>(v));
  } else if (v <= 0xff) {
    byte(0xcc);
    big_endian(v, 1);
  } else if (v <= 0xffff) {
    byte(0xcd);
    big_endian(v, 2);
  } else if (v <= 0xffffffffull) {
    byte(0xce);
    big_endian(v, 4);
  } else {
    byte(0xcf);
    big_endian(v, 8);
  }
}

void Writer::pack_int(std::int64_t v) {
  if (v >= 0) {
    pack_uint(static_cast<std::uint64_t>(v));
    return;
  }
  if (v >= -32) {
    byte(static_cast<std::uint8_t>(v));
  } else if (v >= -128) {
    byte(0xd0);
    big_endian(static_cast<std::uint64_t>(v), 1);
  } else if (v >= -32768) {
    byte(0xd1);
    big_endian(static_cast<std::uint64_t>(v), 2);
  } else if (v >= -2147483648ll) {
    byte(0xd2);
    big_endian(static_cast<std::uint64_t>(v), 4);
  } else {
    byte(0xd3);
    big_endian(static_cast<std::uint64_t>(v), 8);
  }
}

void Writer::pack_double(double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  byte(0xcb);
  big_endian(bits, 8);
}

void Writer::pack_bool(bool v) { byte(v ? 0xc3 : 0xc2); }

void Writer::pack_str(const std::string& s) {
  const std::size_t n = s.size();
  if (n < 32) {
    byte(static_cast<std::uint8_t>(0xa0 | n));
  } else if (n <= 0xff) {
    byte(0xd9);
    big_endian(n, 1);
  } else if (n <= 0xffff) {
    byte(0xda);
    big_endian(n, 2);
  } else {
    byte(0xdb);
    big_endian(n, 4);
  }
  buf_.append(s);
}

void Writer::pack_bin(const std::uint8_t* data, std::size_t size) {
  if (size <= 0xff) {
    byte(0xc4);
    big_endian(size, 1);
  } else if (size <= 0xffff) {
    byte(0xc5);
    big_endian(size, 2);
  } else {
    byte(0xc6);
    big_endian(size, 4);
  }
  buf_.append(reinterpret_cast<const char*>(data), size);
}

void Writer::pack_array(std::size_t size) {
  if (size < 16) {
    byte(static_cast<std::uint8_t>(0x90 | size));
  } else if (size <= 0xffff) {
    byte(0xdc);
    big_endian(size, 2);
  } else {
    byte(0xdd);
    big_endian(size, 4);
  }
}

void Writer::pack_map(std::size_t size) {
  if (size < 16) {
    byte(static_cast<std::uint8_t>(0x80 | size));
  } else if (size <= 0xffff) {
    byte(0xde);
    big_endian(size, 2);
  } else {
    byte(0xdf);
    big_endian(size, 4);
  }
}

void Reader::fail(const std::string& what) const {
  std::string path = "$";
  for (const auto& seg : path_) path += "." + seg;
  throw std::runtime_error("msgpack parse error at " + path + ": " + what);
}

std::uint8_t Reader::next() {
  if (p_ == end_) fail("unexpected end of input");
  return *p_++;
}

std::uint64_t Reader::big_endian(int bytes) {
  if (end_ - p_ < bytes) fail("unexpected end of input");
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v = (v << 8) | *p_++;
  return v;
}

std::uint64_t Reader::read_uint() {
  const std::uint8_t tag = next();
  if (tag < 0x80) return tag;
  switch (tag) {
    case 0xcc: return big_endian(1);
    case 0xcd: return big_endian(2);
    case 0xce: return big_endian(4);
    case 0xcf: return big_endian(8);
    default: fail("expected unsigned integer");
  }
}

std::int64_t Reader::read_int() {
  const std::uint8_t tag = next();
  if (tag < 0x80) return tag;
  if (tag >= 0xe0) return static_cast<std::int8_t>(tag);
  switch (tag) {
    case 0xcc: return static_cast<std::int64_t>(big_endian(1));
    case 0xcd: return static_cast<std::int64_t>(big_endian(2));
    case 0xce: return static_cast<std::int64_t>(big_endian(4));
    case 0xcf: return static_cast<std::int64_t>(big_endian(8));
    case 0xd0: return static_cast<std::int8_t>(big_endian(1));
    case 0xd1: return static_cast<std::int16_t>(big_endian(2));
    case 0xd2: return static_cast<std::int32_t>(big_endian(4));
    case 0xd3: return static_cast<std::int64_t>(big_endian(8));
    default: fail("expected integer");
  }
}

double Reader::read_double() {
  const std::uint8_t tag = next();
  if (tag == 0xcb) {
    const std::uint64_t bits = big_endian(8);
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }
  if (tag == 0xca) {
    const std::uint32_t bits = static_cast<std::uint32_t>(big_endian(4));
    float v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }
  fail("expected float");
}

bool Reader::read_bool() {
  const std::uint8_t tag = next();
  if (tag == 0xc2) return false;
  if (tag == 0xc3) return true;
  fail("expected bool");
}

std::string Reader::read_str() {
  const std::uint8_t tag = next();
  std::size_t n;
  if ((tag & 0xe0) == 0xa0) {
    n = tag & 0x1f;
  } else if (tag == 0xd9) {
    n = big_endian(1);
  } else if (tag == 0xda) {
    n = big_endian(2);
  } else if (tag == 0xdb) {
    n = big_endian(4);
  } else {
    fail("expected string");
  }
  if (static_cast<std::size_t>(end_ - p_) < n) fail("unexpected end of input");
  std::string s(reinterpret_cast<const char*>(p_), n);
  p_ += n;
  return s;
}

std::vector<std::uint8_t> Reader::read_bin() {
  const std::uint8_t tag = next();
  std::size_t n;
  if (tag == 0xc4) {
    n = big_endian(1);
  } else if (tag == 0xc5) {
    n = big_endian(2);
  } else if (tag == 0xc6) {
    n = big_endian(4);
  } else {
    fail("expected binary");
  }
  if (static_cast<std::size_t>(end_ - p_) < n) fail("unexpected end of input");
  std::vector<std::uint8_t> out(p_, p_ + n);
  p_ += n;
  return out;
}

std::size_t Reader::read_array() {
  const std::uint8_t tag = next();
  if ((tag & 0xf0) == 0x90) return tag & 0x0f;
  if (tag == 0xdc) return big_endian(2);
  if (tag == 0xdd) return big_endian(4);
  fail("expected array");
}

std::size_t Reader::read_map() {
  const std::uint8_t tag = next();
  if ((tag & 0xf0) == 0x80) return tag & 0x0f;
  if (tag == 0xde) return big_endian(2);
  if (tag == 0xdf) return big_endian(4);
  fail("expected map");
}

}  // namespace vslam::msgpack
