#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "moltkv/payload.hpp"

namespace moltkv {

// Raw keyspace. Knows nothing about migration; the owner may plug in a
// version authority that caps the tag raw_set will accept for a key
// (the engine wires this to the prefix registry).
class Store {
 public:
  using VersionAuthority = std::function<uint32_t(std::string_view key)>;

  void set_version_authority(VersionAuthority a) { authority_ = std::move(a); }

  // nullptr when absent. The pointer is invalidated by the next mutation.
  const VersionedValue* raw_get(std::string_view key) const;

  // Replaces any prior entry wholesale. Throws CommandError for invalid keys
  // or a version above the authority's cap.
  void raw_set(const std::string& key, Payload payload, uint32_t version);

  // Trusted path for recovery/replication: skips the authority cap.
  void raw_set_unchecked(const std::string& key, Payload payload, uint32_t version);

  bool raw_delete(std::string_view key);

  // Keys currently beginning with `prefix`, in byte order. Empty prefix
  // scans everything.
  std::vector<std::string> scan_prefix(std::string_view prefix) const;

  size_t size() const { return map_.size(); }
  const std::map<std::string, VersionedValue, std::less<>>& entries() const { return map_; }

  // Deterministic serialization of the full contents; digest() hashes it.
  std::string canonical_bytes() const;
  uint64_t digest() const;

 private:
  std::map<std::string, VersionedValue, std::less<>> map_;
  VersionAuthority authority_;
};

}  // namespace moltkv
