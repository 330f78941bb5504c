#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace moltkv {

// One step in a namespace's version history. Records form a doubly-linked
// chain per namespace, oldest to newest; versions strictly increase along it.
// `transformers` convert a value from prev's format into this record's.
struct PrefixRecord {
  std::string prefix;
  uint32_t version = 0;
  PrefixRecord* prev = nullptr;
  PrefixRecord* next = nullptr;
  std::vector<std::string> transformers;
  std::set<uint64_t> sessions;  // sessions admitted at this record

  bool is_head() const { return next == nullptr; }
};

struct UpdateChange {
  std::string old_prefix;
  std::string new_prefix;
  uint32_t from_version = 0;
  uint32_t to_version = 0;
  std::vector<std::string> transformers;
};

struct UpdateSpec {
  std::vector<UpdateChange> changes;
};

// Snapshot form of the registry.
struct RecordImage {
  std::string prefix;
  uint32_t version;
  std::vector<std::string> transformers;
};
using ChainImage = std::vector<RecordImage>;
using RegistryImage = std::vector<ChainImage>;

// Tracks every namespace's version history and which live sessions declared
// what. Thread-unsafe by design; the engine serializes access.
class VersionRegistry {
 public:
  struct DeclareOutcome {
    bool ok;
    uint32_t current;  // governing logical version when rejected
  };

  // A declaration matches iff the prefix text is a chain head at exactly the
  // declared version. Unknown text: would bootstrap a fresh chain (ok).
  // Known text that is stale or at another version: rejected.
  DeclareOutcome check_declare(const std::string& prefix, uint32_t version) const;

  // Returns true when a fresh chain was created (callers persist that).
  // Callers run check_declare first; throws std::logic_error otherwise.
  bool declare(uint64_t session, const std::string& prefix, uint32_t version);

  void drop_session(uint64_t session);

  // Longest-prefix match of the key against chain heads. nullptr when no
  // chain governs the key.
  const PrefixRecord* resolve(std::string_view key) const;

  // Exact text lookup across all records, newest record owning the text.
  const PrefixRecord* find_text(std::string_view prefix) const;

  // Rewrites a key from rec's namespace text to its predecessor's.
  static std::string back_map(const PrefixRecord* rec, std::string_view key);

  uint32_t logical_version_for_key(std::string_view key) const;

  // Empty string when the spec can apply; otherwise the reason.
  std::string check_advance(const UpdateSpec& spec) const;

  // Applies the whole spec (validated) and returns the sessions left pinned
  // to superseded records; they are dropped from the registry.
  std::vector<uint64_t> advance(const UpdateSpec& spec);

  // Recovery/bootstrap: create a single-record chain. Text must be unknown.
  void bootstrap_chain(const std::string& prefix, uint32_t version);

  RegistryImage to_image() const;
  static VersionRegistry from_image(const RegistryImage& img);

  // Oldest-first records of the chain containing `rec`.
  std::vector<const PrefixRecord*> chain_of(const PrefixRecord* rec) const;

  size_t chain_count() const { return chains_.size(); }
  std::vector<const PrefixRecord*> heads() const;

  // Deterministic serialization of chain structure (sessions excluded).
  std::string canonical_bytes() const;

 private:
  struct Chain {
    std::vector<std::unique_ptr<PrefixRecord>> records;
    PrefixRecord* head() const { return records.back().get(); }
  };

  Chain* chain_containing(const PrefixRecord* rec) const;

  std::vector<std::unique_ptr<Chain>> chains_;
  std::unordered_map<std::string, PrefixRecord*> by_text_;  // newest record per exact text
  std::unordered_map<uint64_t, std::vector<PrefixRecord*>> session_pins_;
};

}  // namespace moltkv
