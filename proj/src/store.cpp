#include "moltkv/store.hpp"

#include "moltkv/binio.hpp"
#include "moltkv/errors.hpp"

namespace moltkv {

const VersionedValue* Store::raw_get(std::string_view key) const {
  auto it = map_.find(key);
  return it == map_.end() ? nullptr : &it->second;
}

void Store::raw_set(const std::string& key, Payload payload, uint32_t version) {
  std::string why;
  if (!valid_key(key, &why)) throw CommandError(why);
  if (authority_) {
    uint32_t cap = authority_(key);
    if (version > cap) {
      throw CommandError("version " + std::to_string(version) + " above logical version " +
                         std::to_string(cap) + " for key namespace");
    }
  }
  map_[key] = VersionedValue{std::move(payload), version};
}

void Store::raw_set_unchecked(const std::string& key, Payload payload, uint32_t version) {
  map_[key] = VersionedValue{std::move(payload), version};
}

bool Store::raw_delete(std::string_view key) {
  auto it = map_.find(key);
  if (it == map_.end()) return false;
  map_.erase(it);
  return true;
}

std::vector<std::string> Store::scan_prefix(std::string_view prefix) const {
  std::vector<std::string> out;
  for (auto it = map_.lower_bound(prefix); it != map_.end(); ++it) {
    if (it->first.compare(0, prefix.size(), prefix) != 0) break;
    out.push_back(it->first);
  }
  return out;
}

std::string Store::canonical_bytes() const {
  std::string out;
  binio::put_u64(out, map_.size());
  for (const auto& [key, vv] : map_) {
    binio::put_str(out, key);
    binio::put_u32(out, vv.version);
    encode_payload(out, vv.payload);
  }
  return out;
}

uint64_t Store::digest() const { return fnv1a(canonical_bytes()); }

}  // namespace moltkv
