#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace vslam::msgpack {

// Minimal canonical MessagePack writer: every value uses its smallest
// encoding, so identical logical content always yields identical bytes.
class Writer {
 public:
  void pack_uint(std::uint64_t v);
  void pack_int(std::int64_t v);  // negative values included
  void pack_double(double v);
  void pack_bool(bool v);
  void pack_str(const std::string& s);
  void pack_bin(const std::uint8_t* data, std::size_t size);
  void pack_array(std::size_t size);  // header; elements follow
  void pack_map(std::size_t size);    // header; key/value pairs follow

  const std::string& buffer() const { return buf_; }

 private:
  void byte(std::uint8_t b) { buf_.push_back(static_cast<char>(b)); }
  void big_endian(std::uint64_t v, int bytes);

  std::string buf_;
};

// Streaming reader. Errors throw std::runtime_error whose message names the
// dotted field path at the failure point.
class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : p_(data), end_(data + size) {}
  explicit Reader(const std::string& buf)
      : Reader(reinterpret_cast<const std::uint8_t*>(buf.data()), buf.size()) {}

  std::uint64_t read_uint();
  std::int64_t read_int();
  double read_double();
  bool read_bool();
  std::string read_str();
  std::vector<std::uint8_t> read_bin();
  std::size_t read_array();
  std::size_t read_map();

  bool done() const { return p_ == end_; }

  // Field-path context for error messages.
  void enter(const std::string& name) { path_.push_back(name); }
  void leave() { path_.pop_back(); }
  [[noreturn]] void fail(const std::string& what) const;

 private:
  std::uint8_t next();
  std::uint64_t big_endian(int bytes);

  const std::uint8_t* p_;
  const std::uint8_t* end_;
  std::vector<std::string> path_;
};

}  // namespace vslam::msgpack
