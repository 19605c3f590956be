#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "nelscope/errors.hpp"
#include "nelscope/ip.hpp"

// RFC 1035 subset: QUERY opcode, one question, A/AAAA/ANY answers, no
// compression on encode, compression pointers tolerated on decode, EDNS OPT
// records read and ignored. Everything fits comfortably in 512 bytes.
namespace nelscope::dns {

inline constexpr std::uint16_t kTypeA = 1;
inline constexpr std::uint16_t kTypeAaaa = 28;
inline constexpr std::uint16_t kTypeOpt = 41;
inline constexpr std::uint16_t kTypeAny = 255;
inline constexpr std::uint16_t kClassIn = 1;

inline constexpr std::uint8_t kRcodeNoError = 0;
inline constexpr std::uint8_t kRcodeFormErr = 1;
inline constexpr std::uint8_t kRcodeNxDomain = 3;
inline constexpr std::uint8_t kRcodeNotImp = 4;
inline constexpr std::uint8_t kRcodeRefused = 5;

struct Question {
  std::string qname;
  std::uint16_t qtype = kTypeA;
  std::uint16_t qclass = kClassIn;
};

struct Record {
  std::string name;
  std::uint16_t type = kTypeA;
  std::uint16_t rclass = kClassIn;
  std::uint32_t ttl = 0;
  std::vector<std::uint8_t> rdata;

  static Record address(std::string name, const IpAddress& ip, std::uint32_t ttl) {
    Record r;
    r.name = std::move(name);
    r.type = ip.is_v6() ? kTypeAaaa : kTypeA;
    r.ttl = ttl;
    r.rdata.assign(ip.data(), ip.data() + ip.size());
    return r;
  }

  IpAddress to_ip() const {
    if (type == kTypeA && rdata.size() == 4) return IpAddress::from_v4_bytes(rdata.data());
    if (type == kTypeAaaa && rdata.size() == 16)
      return IpAddress::from_v6_bytes(rdata.data());
    throw ParseError("record does not hold an address");
  }
};

struct Message {
  std::uint16_t id = 0;
  bool is_response = false;
  std::uint8_t opcode = 0;
  bool authoritative = false;
  bool truncated = false;
  bool recursion_desired = false;
  bool recursion_available = false;
  std::uint8_t rcode = kRcodeNoError;
  std::vector<Question> questions;
  std::vector<Record> answers;
  std::vector<Record> authority;
  std::vector<Record> additional;
};

namespace detail {

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  std::uint8_t u8() {
    need(1);
    return data_[pos_++];
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(data_[pos_] << 8 | data_[pos_ + 1]);
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = static_cast<std::uint32_t>(data_[pos_]) << 24 |
                      static_cast<std::uint32_t>(data_[pos_ + 1]) << 16 |
                      static_cast<std::uint32_t>(data_[pos_ + 2]) << 8 |
                      static_cast<std::uint32_t>(data_[pos_ + 3]);
    pos_ += 4;
    return v;
  }
  std::vector<std::uint8_t> bytes(std::size_t n) {
    need(n);
    std::vector<std::uint8_t> out(data_ + pos_, data_ + pos_ + n);
    pos_ += n;
    return out;
  }

  // Label sequence, possibly ending in a compression pointer. The read
  // cursor always resumes right after the first pointer encountered.
  std::string name() {
    std::string out;
    std::size_t pos = pos_;
    std::size_t jumps = 0;
    bool jumped = false;
    while (true) {
      if (pos >= size_) throw ParseError("truncated name");
      std::uint8_t len = data_[pos];
      if ((len & 0xc0) == 0xc0) {
        if (pos + 1 >= size_) throw ParseError("truncated name pointer");
        std::size_t target = static_cast<std::size_t>(len & 0x3f) << 8 | data_[pos + 1];
        if (!jumped) {
          pos_ = pos + 2;
          jumped = true;
        }
        if (++jumps > 32) throw ParseError("name pointer loop");
        if (target >= size_) throw ParseError("name pointer out of range");
        pos = target;
        continue;
      }
      if (len & 0xc0) throw ParseError("bad label length");
      ++pos;
      if (len == 0) break;
      if (pos + len > size_) throw ParseError("truncated label");
      if (!out.empty()) out.push_back('.');
      out.append(reinterpret_cast<const char*>(data_ + pos), len);
      pos += len;
    }
    if (!jumped) pos_ = pos;
    return out;
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > size_) throw ParseError("truncated DNS message");
  }
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    out_.push_back(static_cast<std::uint8_t>(v >> 8));
    out_.push_back(static_cast<std::uint8_t>(v & 0xff));
  }
  void u32(std::uint32_t v) {
    u16(static_cast<std::uint16_t>(v >> 16));
    u16(static_cast<std::uint16_t>(v & 0xffff));
  }
  void raw(const std::vector<std::uint8_t>& bytes) {
    out_.insert(out_.end(), bytes.begin(), bytes.end());
  }
  void name(std::string_view n) {
    std::size_t start = 0;
    while (start < n.size()) {
      std::size_t dot = n.find('.', start);
      std::size_t end = dot == std::string_view::npos ? n.size() : dot;
      std::size_t len = end - start;
      if (len == 0 || len > 63) throw ValidationError("bad DNS label in: " + std::string(n));
      out_.push_back(static_cast<std::uint8_t>(len));
      out_.insert(out_.end(), n.begin() + start, n.begin() + end);
      start = end + 1;
      if (dot == std::string_view::npos) break;
    }
    out_.push_back(0);
    if (out_.size() > 512) throw ValidationError("DNS message too large");
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

inline Record read_record(Reader& r) {
  Record rec;
  rec.name = r.name();
  rec.type = r.u16();
  rec.rclass = r.u16();
  rec.ttl = r.u32();
  std::uint16_t rdlen = r.u16();
  rec.rdata = r.bytes(rdlen);
  return rec;
}

inline void write_record(Writer& w, const Record& rec) {
  w.name(rec.name);
  w.u16(rec.type);
  w.u16(rec.rclass);
  w.u32(rec.ttl);
  w.u16(static_cast<std::uint16_t>(rec.rdata.size()));
  w.raw(rec.rdata);
}

}  // namespace detail

inline Message decode(const std::uint8_t* data, std::size_t size) {
  detail::Reader r(data, size);
  Message m;
  m.id = r.u16();
  std::uint16_t flags = r.u16();
  m.is_response = flags & 0x8000;
  m.opcode = static_cast<std::uint8_t>((flags >> 11) & 0xf);
  m.authoritative = flags & 0x0400;
  m.truncated = flags & 0x0200;
  m.recursion_desired = flags & 0x0100;
  m.recursion_available = flags & 0x0080;
  m.rcode = static_cast<std::uint8_t>(flags & 0xf);
  std::uint16_t qd = r.u16(), an = r.u16(), ns = r.u16(), ar = r.u16();
  for (int i = 0; i < qd; ++i) {
    Question q;
    q.qname = r.name();
    q.qtype = r.u16();
    q.qclass = r.u16();
    m.questions.push_back(std::move(q));
  }
  for (int i = 0; i < an; ++i) m.answers.push_back(detail::read_record(r));
  for (int i = 0; i < ns; ++i) m.authority.push_back(detail::read_record(r));
  for (int i = 0; i < ar; ++i) m.additional.push_back(detail::read_record(r));
  return m;
}

inline Message decode(const std::vector<std::uint8_t>& bytes) {
  return decode(bytes.data(), bytes.size());
}

inline std::vector<std::uint8_t> encode(const Message& m) {
  detail::Writer w;
  w.u16(m.id);
  std::uint16_t flags = 0;
  if (m.is_response) flags |= 0x8000;
  flags |= static_cast<std::uint16_t>(m.opcode & 0xf) << 11;
  if (m.authoritative) flags |= 0x0400;
  if (m.truncated) flags |= 0x0200;
  if (m.recursion_desired) flags |= 0x0100;
  if (m.recursion_available) flags |= 0x0080;
  flags |= m.rcode & 0xf;
  w.u16(flags);
  w.u16(static_cast<std::uint16_t>(m.questions.size()));
  w.u16(static_cast<std::uint16_t>(m.answers.size()));
  w.u16(static_cast<std::uint16_t>(m.authority.size()));
  w.u16(static_cast<std::uint16_t>(m.additional.size()));
  for (const auto& q : m.questions) {
    w.name(q.qname);
    w.u16(q.qtype);
    w.u16(q.qclass);
  }
  for (const auto& rec : m.answers) detail::write_record(w, rec);
  for (const auto& rec : m.authority) detail::write_record(w, rec);
  for (const auto& rec : m.additional) detail::write_record(w, rec);
  return w.take();
}

inline std::vector<std::uint8_t> make_query(std::uint16_t id, std::string_view qname,
                                            std::uint16_t qtype) {
  Message m;
  m.id = id;
  m.recursion_desired = true;
  m.questions.push_back(Question{std::string(qname), qtype, kClassIn});
  return encode(m);
}

}  // namespace nelscope::dns
