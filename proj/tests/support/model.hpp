#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "moltkv/errors.hpp"
#include "moltkv/payload.hpp"
#include "moltkv/registry.hpp"
#include "moltkv/store.hpp"
#include "moltkv/transform.hpp"
#include "moltkv/update_spec.hpp"

namespace moltkv::testing {

// Eager reference for trace equivalence. No tags, no twins, no lazy walks:
// installs rewrite everything they govern on the spot, so plain map lookups
// are the whole data path afterwards. Chain bookkeeping reuses
// VersionRegistry (cross-checked against a hand model in its own suite); the
// thing kept independent here is the data flow the engine does lazily.
class Model {
 public:
  struct Hello {
    bool ok = true;
    std::string prefix;
    uint32_t current = 0;
  };

  Hello hello(const std::vector<std::pair<std::string, uint32_t>>& decls) {
    for (size_t i = 0; i < decls.size(); i++)
      for (size_t j = i + 1; j < decls.size(); j++)
        if (decls[i].first == decls[j].first)
          throw CommandError("duplicate prefix '" + decls[i].first + "' in declaration");
    for (const auto& [prefix, version] : decls) {
      auto o = registry_.check_declare(prefix, version);
      if (!o.ok) return {false, prefix, o.current};
    }
    for (const auto& [prefix, version] : decls) registry_.declare(next_session_, prefix, version);
    next_session_++;
    return {};
  }

  void install(const UpdateDocument& doc) {
    std::map<std::string, TransformProgram> incoming;
    for (const auto& [name, src] : doc.program_sources) incoming.emplace(name, parse_program(src));
    for (const auto& ch : doc.spec.changes)
      for (const auto& name : ch.transformers)
        if (!incoming.count(name) && !transformers_.contains(name))
          throw CommandError("unknown transformer '" + name + "'");
    std::string err = registry_.check_advance(doc.spec);
    if (!err.empty()) throw CommandError(err);

    for (auto& [name, prog] : incoming) transformers_.put_program(name, std::move(prog));
    registry_.advance(doc.spec);

    // Eager migration: everything the advanced chain owns moves now. Old and
    // new keyspaces of one change may overlap (nested renames), so read every
    // source before touching anything.
    for (const auto& ch : doc.spec.changes) {
      const PrefixRecord* old_rec = registry_.find_text(ch.old_prefix);
      const PrefixRecord* head = old_rec;
      while (head->next) head = head->next;
      std::vector<std::pair<std::string, Payload>> landed;
      std::vector<std::string> gone;
      auto it = entries_.lower_bound(ch.old_prefix);
      for (; it != entries_.end() &&
             it->first.compare(0, ch.old_prefix.size(), ch.old_prefix) == 0;
           ++it) {
        if (owner_head(it->first) != head) continue;
        std::string to = ch.new_prefix + it->first.substr(ch.old_prefix.size());
        landed.emplace_back(
            std::move(to), ch.transformers.empty()
                               ? it->second
                               : apply_chain(transformers_, ch.transformers,
                                             ch.new_prefix + it->first.substr(ch.old_prefix.size()),
                                             it->second));
        gone.push_back(it->first);
      }
      for (const auto& k : gone) entries_.erase(k);
      for (auto& [k, p] : landed) entries_[k] = std::move(p);
    }
  }

  // ---- data plane, Redis-flavored ------------------------------------------

  std::optional<Bytes> get(const std::string& key) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    if (kind_of(it->second) != PayloadKind::Str) throw CommandError("wrong type");
    return std::get<StrPayload>(it->second);
  }

  bool set(const std::string& key, Bytes value, int mode) {  // 0 plain, 1 nx, 2 xx
    bool present = entries_.count(key) != 0;
    if ((mode == 1 && present) || (mode == 2 && !present)) return false;
    entries_[key] = StrPayload(std::move(value));
    return true;
  }

  uint64_t del(const std::vector<std::string>& keys) {
    uint64_t removed = 0;
    for (const auto& k : keys) removed += entries_.erase(k);
    return removed;
  }

  bool exists(const std::string& key) { return entries_.count(key) != 0; }

  int64_t lpush(const std::string& key, const std::vector<Bytes>& values) {
    auto& list = as<ListPayload>(key);
    for (const auto& v : values) list.insert(list.begin(), v);
    return static_cast<int64_t>(list.size());
  }

  std::optional<Bytes> lpop(const std::string& key) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    auto& list = require<ListPayload>(it->second);
    Bytes out = list.front();
    list.erase(list.begin());
    if (list.empty()) entries_.erase(it);
    return out;
  }

  std::vector<Bytes> lrange(const std::string& key, int64_t start, int64_t stop) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return {};
    auto& list = require<ListPayload>(it->second);
    int64_t n = static_cast<int64_t>(list.size());
    if (start < 0) start += n;
    if (stop < 0) stop += n;
    start = std::max<int64_t>(start, 0);
    stop = std::min(stop, n - 1);
    std::vector<Bytes> out;
    for (int64_t i = start; i <= stop; i++) out.push_back(list[static_cast<size_t>(i)]);
    return out;
  }

  int64_t sadd(const std::string& key, const std::vector<Bytes>& members) {
    auto& set = as<SetPayload>(key);
    int64_t added = 0;
    for (const auto& m : members)
      if (set.insert(m).second) added++;
    return added;
  }

  std::optional<Bytes> spop(const std::string& key) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    auto& set = require<SetPayload>(it->second);
    Bytes out = *set.begin();
    set.erase(set.begin());
    if (set.empty()) entries_.erase(it);
    return out;
  }

  std::vector<Bytes> smembers(const std::string& key) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return {};
    auto& set = require<SetPayload>(it->second);
    return std::vector<Bytes>(set.begin(), set.end());
  }

  int64_t hset(const std::string& key, const Bytes& field, const Bytes& value) {
    auto& hash = as<HashPayload>(key);
    int64_t created = hash.count(field) ? 0 : 1;
    hash[field] = value;
    return created;
  }

  std::optional<Bytes> hget(const std::string& key, const Bytes& field) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    auto& hash = require<HashPayload>(it->second);
    auto f = hash.find(field);
    if (f == hash.end()) return std::nullopt;
    return f->second;
  }

  HashPayload hgetall(const std::string& key) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return {};
    return require<HashPayload>(it->second);
  }

  int64_t zadd(const std::string& key, double score, const Bytes& member) {
    if (!std::isfinite(score)) throw CommandError("score must be finite");
    auto& zset = as<ZSetPayload>(key);
    int64_t created = zset.count(member) ? 0 : 1;
    zset[member] = score;
    return created;
  }

  std::optional<double> zscore(const std::string& key, const Bytes& member) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    auto& zset = require<ZSetPayload>(it->second);
    auto m = zset.find(member);
    if (m == zset.end()) return std::nullopt;
    return m->second;
  }

  // Digest comparable with Engine::store_digest() after an eager flush: by
  // then every governed entry carries its chain's head version.
  uint64_t digest() const {
    Store s;
    for (const auto& [k, p] : entries_)
      s.raw_set_unchecked(k, p, registry_.logical_version_for_key(k));
    return s.digest();
  }

  size_t key_count() const { return entries_.size(); }

 private:
  template <typename T>
  T& require(Payload& p) {
    if (auto* v = std::get_if<T>(&p)) return *v;
    throw CommandError("wrong type");
  }

  template <typename T>
  T& as(const std::string& key) {
    auto it = entries_.find(key);
    if (it == entries_.end()) it = entries_.emplace(key, T{}).first;
    return require<T>(it->second);
  }

  // Longest record text across every chain, newest record on a text tie;
  // deliberately the same ownership rule the engine applies to stored names.
  const PrefixRecord* owner_head(std::string_view name) const {
    const PrefixRecord* best = nullptr;
    for (const PrefixRecord* head : registry_.heads()) {
      for (const PrefixRecord* rec : registry_.chain_of(head)) {
        if (name.size() < rec->prefix.size()) continue;
        if (name.compare(0, rec->prefix.size(), rec->prefix) != 0) continue;
        if (!best || rec->prefix.size() > best->prefix.size() ||
            (rec->prefix.size() == best->prefix.size() && rec->version >= best->version))
          best = rec;
      }
    }
    if (!best) return nullptr;
    while (best->next) best = best->next;
    return best;
  }

  std::map<std::string, Payload> entries_;
  VersionRegistry registry_;
  TransformerRegistry transformers_;
  uint64_t next_session_ = 1;
};

}  // namespace moltkv::testing
