#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace moltkv {

using Bytes = std::string;

// Value kinds a key can hold. Containers keep deterministic order (sorted,
// or insertion order for lists) so serialization and digests are stable.
using StrPayload = Bytes;
using ListPayload = std::vector<Bytes>;
using SetPayload = std::set<Bytes>;
using HashPayload = std::map<Bytes, Bytes>;
using ZSetPayload = std::map<Bytes, double>;  // member -> score, scores always finite

using Payload = std::variant<StrPayload, ListPayload, SetPayload, HashPayload, ZSetPayload>;

enum class PayloadKind : uint8_t { Str = 0, List = 1, Set = 2, Hash = 3, ZSet = 4 };

PayloadKind kind_of(const Payload& p);
const char* kind_name(PayloadKind k);

// Canonical binary form, also the on-disk encoding. Deterministic for equal
// logical content.
void encode_payload(std::string& out, const Payload& p);
Payload decode_payload(std::string_view buf, size_t& pos);

// Entry stored under a key: payload plus the data-format version tag it was
// written at.
struct VersionedValue {
  Payload payload;
  uint32_t version = 0;
};

// Keys: 1..4096 bytes, no newline, no NUL.
bool valid_key(std::string_view key, std::string* why = nullptr);

// Namespace portion of a key: bytes up to and including the last ':' before
// the final segment. Keys without ':' fall into the reserved empty namespace.
std::string_view key_prefix(std::string_view key);

uint64_t fnv1a(std::string_view data, uint64_t seed = 0xcbf29ce484222325ull);

}  // namespace moltkv
