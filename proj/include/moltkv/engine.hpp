#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "moltkv/payload.hpp"
#include "moltkv/persistence.hpp"
#include "moltkv/registry.hpp"
#include "moltkv/store.hpp"
#include "moltkv/transform.hpp"
#include "moltkv/update_spec.hpp"

namespace moltkv {

// The interceptor: every data command funnels through here, picking up
// version checks, backward key lookup, lazy migration and residue deletion
// atomically with the command itself. Methods serialize on one internal
// mutex; a command plus any migration it induces is one indivisible unit.
struct EngineConfig {
  std::filesystem::path data_dir;  // empty: memory only, no journal/snapshot
  bool bypass = false;             // raw store semantics, no version machinery
  bool absent_sentinels = false;   // cache full-miss lookups (same semantics)
  bool track_edges = false;        // per-key per-edge migration counters
  uint32_t flush_every = 1;        // journal flush cadence, in frames
  std::function<int64_t()> clock_ms;  // injectable for timeline tests
};

struct MigrationStats {
  uint64_t commands = 0;
  uint64_t lazy_migrations = 0;     // stale entries rewritten on access
  uint64_t lazy_key_renames = 0;    // ...of which moved to a new key text
  uint64_t lazy_value_updates = 0;  // ...of which rewrote value or tag in place
  uint64_t residue_deletes = 0;     // old-named twins purged by writes
  uint64_t eager_migrations = 0;
  uint64_t installs = 0;
  std::map<int64_t, uint64_t> lazy_per_second;  // clock second -> lazy events
};

struct HelloResult {
  bool ok = true;
  std::string prefix;    // offending prefix when rejected
  uint32_t current = 0;  // its governing logical version
};

struct InstallResult {
  std::vector<uint64_t> disconnected;  // sessions left behind by the advance
};

struct EagerResult {
  uint64_t migrated = 0;
  std::string error;  // empty: completed; else first failure, partial progress
};

struct Hit {
  std::string found_key;
  VersionedValue entry;
};

enum class SetMode : uint8_t { Plain, Nx, Xx };

// (entering key name, (from_version, to_version)) -> times applied
using EdgeCounts = std::map<std::string, std::map<std::pair<uint32_t, uint32_t>, uint64_t>>;

class Engine {
 public:
  explicit Engine(EngineConfig cfg = {});

  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  // ---- sessions -----------------------------------------------------------
  uint64_t open_session();
  // All-or-nothing admission; a reject names the first offending prefix and
  // its current logical version, and admits nothing.
  HelloResult hello(uint64_t session,
                    const std::vector<std::pair<std::string, uint32_t>>& declarations);
  void close_session(uint64_t session);
  // Set when an install superseded one of the session's declarations. The
  // server turns this into GOAWAY + close before the next command runs.
  bool kicked(uint64_t session) const;

  // ---- data plane ---------------------------------------------------------
  std::optional<Bytes> get(const std::string& key);
  bool set(const std::string& key, Bytes value, SetMode mode = SetMode::Plain);
  uint64_t del(const std::vector<std::string>& keys);
  bool exists(const std::string& key);

  int64_t lpush(const std::string& key, const std::vector<Bytes>& values);
  std::optional<Bytes> lpop(const std::string& key);
  std::vector<Bytes> lrange(const std::string& key, int64_t start, int64_t stop);

  int64_t sadd(const std::string& key, const std::vector<Bytes>& members);
  std::optional<Bytes> spop(const std::string& key);  // smallest member
  std::vector<Bytes> smembers(const std::string& key);

  int64_t hset(const std::string& key, const Bytes& field, const Bytes& value);
  std::optional<Bytes> hget(const std::string& key, const Bytes& field);
  HashPayload hgetall(const std::string& key);

  int64_t zadd(const std::string& key, double score, const Bytes& member);
  std::optional<double> zscore(const std::string& key, const Bytes& member);

  // Read-only backward walk: the key as issued, then ancestor names oldest-
  // ward. Never mutates.
  std::optional<Hit> lookup_with_fallback(const std::string& key) const;

  // ---- admin --------------------------------------------------------------
  InstallResult install_update(const UpdateDocument& doc);
  EagerResult eager_migrate(const std::string& prefix);
  EagerResult eager_migrate_all();
  void register_native(const std::string& name, NativeFn fn);
  MigrationStats stats() const;
  void snapshot();

  // ---- introspection (tests and tools, not the client surface) -------------
  std::optional<VersionedValue> peek(const std::string& key) const;  // raw, no walk
  uint64_t store_digest() const;
  size_t key_count() const;
  std::string registry_bytes() const;
  uint32_t logical_version(const std::string& key) const;
  EdgeCounts edge_counts() const;
  // Fires between computing a migrated value and committing it, with the
  // command mutex held: the point a non-atomic design would expose.
  void set_migration_probe(std::function<void()> probe);
  bool bypassed() const { return cfg_.bypass; }

 private:
  struct WalkHit {
    std::string name;
    const VersionedValue* entry;
  };
  struct Settled {
    std::optional<Payload> payload;  // post-migration view; nullopt: absent
    bool migrated = false;
  };

  int64_t now_ms() const;
  void apply_op(const LogOp& op);
  void commit(std::vector<LogOp>& frame, bool sync);

  const PrefixRecord* owning_text(std::string_view name) const;
  const PrefixRecord* owning_head(std::string_view name) const;
  // Possible names of `key`'s entry, newest-first, paired with the record
  // whose text generated each; foreign-chain captures excluded.
  std::vector<std::pair<std::string, const PrefixRecord*>> twin_candidates(
      const std::string& key, const PrefixRecord* head) const;
  std::optional<WalkHit> probe_names(const std::string& key, const PrefixRecord* head) const;
  std::optional<Payload> raw_payload(const std::string& key) const;

  Settled settle(const std::string& key, std::vector<LogOp>& frame, bool lazy_accounting = true,
                 bool for_write = false, int depth = 0);
  // When texts of one chain nest, another logical key's stale entry can sit
  // at `key`; a write there would destroy it, so migrate it home first.
  void evict_occupant(std::vector<LogOp>& frame, const std::string& key, const PrefixRecord* head,
                      bool lazy_accounting, int depth);
  // Bypass-aware wrapper every container op goes through.
  std::optional<Payload> current_payload(const std::string& key, std::vector<LogOp>& frame,
                                         bool for_write);

  void stage_write(std::vector<LogOp>& frame, const std::string& key, Payload p);
  void purge_residue(std::vector<LogOp>& frame, const std::string& key);
  bool logically_present(const std::string& key) const;
  void note_lazy(bool renamed, bool transformed);

  EngineConfig cfg_;
  mutable std::mutex mu_;

  Store store_;
  VersionRegistry registry_;
  TransformerRegistry transformers_;
  std::optional<Journal> journal_;

  uint64_t next_session_ = 1;
  std::set<uint64_t> kicked_;

  MigrationStats stats_;
  std::set<std::string> absent_;  // head names known to miss everywhere
  EdgeCounts edges_;
  std::function<void()> probe_;
  int64_t epoch_ms_ = 0;
};

}  // namespace moltkv
