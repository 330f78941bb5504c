#include "moltkv/payload.hpp"

#include <cmath>

#include "moltkv/binio.hpp"
#include "moltkv/errors.hpp"

namespace moltkv {

PayloadKind kind_of(const Payload& p) { return static_cast<PayloadKind>(p.index()); }

const char* kind_name(PayloadKind k) {
  switch (k) {
    case PayloadKind::Str: return "string";
    case PayloadKind::List: return "list";
    case PayloadKind::Set: return "set";
    case PayloadKind::Hash: return "hash";
    case PayloadKind::ZSet: return "zset";
  }
  return "?";
}

void encode_payload(std::string& out, const Payload& p) {
  using namespace binio;
  put_u8(out, static_cast<uint8_t>(p.index()));
  switch (kind_of(p)) {
    case PayloadKind::Str:
      put_str(out, std::get<StrPayload>(p));
      break;
    case PayloadKind::List: {
      const auto& l = std::get<ListPayload>(p);
      put_u32(out, static_cast<uint32_t>(l.size()));
      for (const auto& e : l) put_str(out, e);
      break;
    }
    case PayloadKind::Set: {
      const auto& s = std::get<SetPayload>(p);
      put_u32(out, static_cast<uint32_t>(s.size()));
      for (const auto& e : s) put_str(out, e);
      break;
    }
    case PayloadKind::Hash: {
      const auto& h = std::get<HashPayload>(p);
      put_u32(out, static_cast<uint32_t>(h.size()));
      for (const auto& [f, v] : h) {
        put_str(out, f);
        put_str(out, v);
      }
      break;
    }
    case PayloadKind::ZSet: {
      const auto& z = std::get<ZSetPayload>(p);
      put_u32(out, static_cast<uint32_t>(z.size()));
      for (const auto& [m, score] : z) {
        put_str(out, m);
        put_f64(out, score);
      }
      break;
    }
  }
}

Payload decode_payload(std::string_view buf, size_t& pos) {
  binio::Cursor c(buf);
  c.pos = pos;
  uint8_t kind = c.u8();
  Payload p;
  switch (static_cast<PayloadKind>(kind)) {
    case PayloadKind::Str:
      p = c.str();
      break;
    case PayloadKind::List: {
      ListPayload l;
      uint32_t n = c.u32();
      l.reserve(n);
      for (uint32_t i = 0; i < n; i++) l.push_back(c.str());
      p = std::move(l);
      break;
    }
    case PayloadKind::Set: {
      SetPayload s;
      uint32_t n = c.u32();
      for (uint32_t i = 0; i < n; i++) s.insert(c.str());
      p = std::move(s);
      break;
    }
    case PayloadKind::Hash: {
      HashPayload h;
      uint32_t n = c.u32();
      for (uint32_t i = 0; i < n; i++) {
        auto f = c.str();
        h[std::move(f)] = c.str();
      }
      p = std::move(h);
      break;
    }
    case PayloadKind::ZSet: {
      ZSetPayload z;
      uint32_t n = c.u32();
      for (uint32_t i = 0; i < n; i++) {
        auto m = c.str();
        double score = c.f64();
        if (!std::isfinite(score)) throw IoError("non-finite zset score in stored payload");
        z[std::move(m)] = score;
      }
      p = std::move(z);
      break;
    }
    default:
      throw IoError("unknown payload kind " + std::to_string(kind));
  }
  pos = c.pos;
  return p;
}

bool valid_key(std::string_view key, std::string* why) {
  auto fail = [&](const char* msg) {
    if (why) *why = msg;
    return false;
  };
  if (key.empty()) return fail("empty key");
  if (key.size() > 4096) return fail("key longer than 4096 bytes");
  for (char ch : key) {
    if (ch == '\n') return fail("key contains newline");
    if (ch == '\0') return fail("key contains NUL");
  }
  return true;
}

std::string_view key_prefix(std::string_view key) {
  auto pos = key.rfind(':');
  if (pos == std::string_view::npos) return key.substr(0, 0);
  return key.substr(0, pos + 1);
}

uint64_t fnv1a(std::string_view data, uint64_t seed) {
  uint64_t h = seed;
  for (unsigned char ch : data) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace moltkv
