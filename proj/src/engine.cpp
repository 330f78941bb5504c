#include "moltkv/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "moltkv/errors.hpp"

namespace moltkv {

namespace {

int64_t steady_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

void check_key(const std::string& key) {
  std::string why;
  if (!valid_key(key, &why)) throw CommandError("invalid key: " + why);
}

const char* kWrongType = "wrong type";

template <typename T>
T& payload_as(Payload& p) {
  if (auto* v = std::get_if<T>(&p)) return *v;
  throw CommandError(kWrongType);
}

// The record a tag decodes under: the newest one at or below it. A tag below
// the whole chain predates governance; the oldest record stands in for it.
const PrefixRecord* gen_record(const std::vector<const PrefixRecord*>& chain, uint32_t tag) {
  const PrefixRecord* g = chain.front();
  for (const PrefixRecord* r : chain)
    if (r->version <= tag) g = r;
  return g;
}

}  // namespace

Engine::Engine(EngineConfig cfg) : cfg_(std::move(cfg)) {
  if (!cfg_.clock_ms) {
    epoch_ms_ = steady_ms();
    cfg_.clock_ms = steady_ms;
  }

  if (!cfg_.data_dir.empty()) {
    std::filesystem::create_directories(cfg_.data_dir);
    uint64_t mark = 0;
    if (auto snap = read_snapshot(cfg_.data_dir)) {
      registry_ = VersionRegistry::from_image(snap->registry);
      for (const auto& [name, src] : snap->programs)
        transformers_.put_program(name, parse_program(src));
      // Native names in the snapshot are informational: the host re-registers
      // them; until it does, migrations through them fail (read-degraded).
      for (auto& [key, payload, version] : snap->entries)
        store_.raw_set_unchecked(key, std::move(payload), version);
      mark = snap->mark_seq;
    }
    LogReplay replay = read_log(log_file(cfg_.data_dir));
    for (const auto& frame : replay.frames) {
      if (frame.seq <= mark) continue;
      for (const auto& op : frame.ops) apply_op(op);
    }
    journal_.emplace(cfg_.data_dir, cfg_.flush_every);
  }

  store_.set_version_authority(
      [this](std::string_view key) { return registry_.logical_version_for_key(key); });
}

int64_t Engine::now_ms() const { return cfg_.clock_ms() - epoch_ms_; }

// Single application path for live commands and log replay: what commit()
// does to memory is exactly what recovery will redo.
void Engine::apply_op(const LogOp& op) {
  switch (op.kind) {
    case LogOp::Kind::DataWrite:
      store_.raw_set_unchecked(op.key, op.payload, op.version);
      break;
    case LogOp::Kind::DataDelete:
      store_.raw_delete(op.key);
      break;
    case LogOp::Kind::ChainCreate:
      if (!registry_.find_text(op.prefix)) registry_.bootstrap_chain(op.prefix, op.version);
      break;
    case LogOp::Kind::Install: {
      for (const auto& [name, src] : op.programs)
        transformers_.put_program(name, parse_program(src));
      std::string err = registry_.check_advance(op.spec);
      if (!err.empty()) throw IoError("log replays an impossible install: " + err);
      registry_.advance(op.spec);
      break;
    }
    case LogOp::Kind::SnapshotMark:
      break;
  }
}

void Engine::commit(std::vector<LogOp>& frame, bool sync) {
  if (frame.empty()) return;
  if (journal_) journal_->append(frame, sync);
  for (const auto& op : frame) apply_op(op);
  frame.clear();
}

// Longest record text, across every chain, that prefixes `name`. Newest
// record wins a same-text tie (value-only updates repeat texts).
const PrefixRecord* Engine::owning_text(std::string_view name) const {
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
  return best;
}

const PrefixRecord* Engine::owning_head(std::string_view name) const {
  const PrefixRecord* rec = owning_text(name);
  if (!rec) return nullptr;
  while (rec->next) rec = rec->next;
  return rec;
}

// Candidate names for `key`'s entry, one per distinct text, newest text
// first. Names captured by a longer text of a different chain are foreign
// and excluded.
std::vector<std::pair<std::string, const PrefixRecord*>> Engine::twin_candidates(
    const std::string& key, const PrefixRecord* head) const {
  std::vector<std::pair<std::string, const PrefixRecord*>> out;
  std::string_view suffix = std::string_view(key).substr(head->prefix.size());
  auto chain = registry_.chain_of(head);
  std::set<std::string> seen;
  for (size_t i = chain.size(); i-- > 0;) {
    std::string name = chain[i]->prefix;
    name.append(suffix);
    if (!seen.insert(name).second) continue;
    if (name != key) {
      const PrefixRecord* oh = owning_head(name);
      if (oh && oh != head) continue;
    }
    out.emplace_back(std::move(name), chain[i]);
  }
  return out;
}

std::optional<Engine::WalkHit> Engine::probe_names(const std::string& key,
                                                   const PrefixRecord* head) const {
  // A candidate matches only when the entry's tag decodes its name under the
  // text that generated the candidate. Nested texts of one chain make the
  // same name mean different suffixes in different eras; the tag settles it.
  auto chain = registry_.chain_of(head);
  for (auto& [name, rec] : twin_candidates(key, head)) {
    const VersionedValue* e = store_.raw_get(name);
    if (e && gen_record(chain, e->version)->prefix == rec->prefix)
      return WalkHit{std::move(name), e};
  }
  return std::nullopt;
}

std::optional<Payload> Engine::raw_payload(const std::string& key) const {
  const VersionedValue* e = store_.raw_get(key);
  return e ? std::optional<Payload>(e->payload) : std::nullopt;
}

void Engine::note_lazy(bool renamed, bool transformed) {
  stats_.lazy_migrations++;
  if (renamed) stats_.lazy_key_renames++;
  if (transformed || !renamed) stats_.lazy_value_updates++;
  stats_.lazy_per_second[now_ms() / 1000]++;
}

// The heart of lazy migration. Finds the entry for `key` (walking ancestor
// names), and if it is stale stages: the transformed value written under
// `key` at the head version, plus deletion of the old name when renamed.
// `for_write` means the caller will write `key` next, so a foreign occupant
// there must be moved out even when `key` itself has nothing to migrate.
Engine::Settled Engine::settle(const std::string& key, std::vector<LogOp>& frame,
                               bool lazy_accounting, bool for_write, int depth) {
  const PrefixRecord* head = registry_.resolve(key);
  if (!head) return {raw_payload(key), false};
  if (cfg_.absent_sentinels && absent_.count(key)) return {std::nullopt, false};

  // Fresh entry under the head name short-circuits the walk: its tag decodes
  // the name under the head text, which is all the full probe would find.
  // Tags never pass the head (writes stamp the version current at the time),
  // so equality is the complete freshness test.
  if (const VersionedValue* e = store_.raw_get(key); e && e->version == head->version)
    return {e->payload, false};

  auto hit = probe_names(key, head);
  if (!hit) {
    if (for_write) evict_occupant(frame, key, head, lazy_accounting, depth);
    if (cfg_.absent_sentinels) absent_.insert(key);
    return {std::nullopt, false};
  }
  if (hit->name == key && hit->entry->version == head->version)
    return {hit->entry->payload, false};

  // Stale: run every edge past the entry's tag, oldest first.
  Payload p = hit->entry->payload;
  uint32_t tag = hit->entry->version;
  std::string_view suffix = std::string_view(key).substr(head->prefix.size());
  std::string cur_name = hit->name;
  bool transformed = false;
  for (const PrefixRecord* rec : registry_.chain_of(head)) {
    if (!rec->prev || rec->version <= tag) continue;
    std::string next_name = rec->prefix;
    next_name.append(suffix);
    if (!rec->transformers.empty()) {
      p = apply_chain(transformers_, rec->transformers, next_name, std::move(p));
      transformed = true;
    }
    if (cfg_.track_edges) edges_[cur_name][{rec->prev->version, rec->version}]++;
    cur_name = std::move(next_name);
  }

  if (probe_) probe_();  // the instant a two-phase design would be racy

  bool renamed = hit->name != key;
  if (renamed) evict_occupant(frame, key, head, lazy_accounting, depth);
  frame.push_back(LogOp::write(key, p, head->version));
  if (renamed) frame.push_back(LogOp::del(hit->name));
  if (lazy_accounting) note_lazy(renamed, transformed);
  return {std::move(p), true};
}

void Engine::evict_occupant(std::vector<LogOp>& frame, const std::string& key,
                            const PrefixRecord* head, bool lazy_accounting, int depth) {
  const VersionedValue* occ = store_.raw_get(key);
  if (!occ) return;
  if (occ->version == head->version) return;  // the occupant is this key's own fresh twin
  const PrefixRecord* g = gen_record(registry_.chain_of(head), occ->version);
  // An occupant whose tag does not decode the name at all is a stray; the
  // caller's write buries it.
  if (key.compare(0, g->prefix.size(), g->prefix) != 0) return;
  std::string home = head->prefix + key.substr(g->prefix.size());
  if (home == key) return;  // the occupant is this key's own twin
  if (depth >= 32) throw CommandError("rename collision too deep");
  settle(home, frame, lazy_accounting, true, depth + 1);
}

std::optional<Payload> Engine::current_payload(const std::string& key, std::vector<LogOp>& frame,
                                               bool for_write) {
  if (cfg_.bypass) return raw_payload(key);
  return settle(key, frame, true, for_write).payload;
}

void Engine::stage_write(std::vector<LogOp>& frame, const std::string& key, Payload p) {
  uint32_t version = cfg_.bypass ? 0 : registry_.logical_version_for_key(key);
  frame.push_back(LogOp::write(key, std::move(p), version));
  if (cfg_.absent_sentinels) {
    absent_.erase(key);
    // A write under an ancestor text resurrects its head-named twin.
    if (const PrefixRecord* owner = owning_text(key)) {
      const PrefixRecord* head = owner;
      while (head->next) head = head->next;
      absent_.erase(head->prefix + key.substr(owner->prefix.size()));
    }
  }
}

// Deletes every ancestor-named twin of `key` (not `key` itself), staged into
// the caller's frame.
void Engine::purge_residue(std::vector<LogOp>& frame, const std::string& key) {
  const PrefixRecord* head = registry_.resolve(key);
  if (!head) return;
  if (!head->prev) return;  // single-era chain: the only twin name is the key itself
  auto chain = registry_.chain_of(head);
  for (auto& [name, rec] : twin_candidates(key, head)) {
    if (name == key) continue;
    const VersionedValue* e = store_.raw_get(name);
    if (e && gen_record(chain, e->version)->prefix == rec->prefix) {
      frame.push_back(LogOp::del(std::move(name)));
      stats_.residue_deletes++;
    }
  }
}

bool Engine::logically_present(const std::string& key) const {
  const PrefixRecord* head = cfg_.bypass ? nullptr : registry_.resolve(key);
  if (!head) return store_.raw_get(key) != nullptr;
  if (cfg_.absent_sentinels && absent_.count(key)) return false;
  const VersionedValue* e = store_.raw_get(key);
  if (e && e->version == head->version) return true;
  return probe_names(key, head).has_value();
}

// ---- sessions --------------------------------------------------------------

uint64_t Engine::open_session() {
  std::lock_guard lk(mu_);
  return next_session_++;
}

HelloResult Engine::hello(uint64_t session,
                          const std::vector<std::pair<std::string, uint32_t>>& declarations) {
  std::lock_guard lk(mu_);
  if (cfg_.bypass) return {};
  for (size_t i = 0; i < declarations.size(); i++)
    for (size_t j = i + 1; j < declarations.size(); j++)
      if (declarations[i].first == declarations[j].first)
        throw CommandError("duplicate prefix '" + declarations[i].first + "' in declaration");
  for (const auto& [prefix, version] : declarations) {
    auto outcome = registry_.check_declare(prefix, version);
    if (!outcome.ok) return {false, prefix, outcome.current};
  }
  // Chains born from declarations are journaled, so recovery agrees with the
  // versions this session was admitted at.
  std::vector<LogOp> frame;
  for (const auto& [prefix, version] : declarations)
    if (!registry_.find_text(prefix)) frame.push_back(LogOp::chain_create(prefix, version));
  bool created = !frame.empty();
  commit(frame, false);
  for (const auto& [prefix, version] : declarations) registry_.declare(session, prefix, version);
  if (created && cfg_.absent_sentinels) absent_.clear();
  return {};
}

void Engine::close_session(uint64_t session) {
  std::lock_guard lk(mu_);
  registry_.drop_session(session);
  kicked_.erase(session);
}

bool Engine::kicked(uint64_t session) const {
  std::lock_guard lk(mu_);
  return kicked_.count(session) != 0;
}

// ---- data plane -------------------------------------------------------------

std::optional<Bytes> Engine::get(const std::string& key) {
  std::lock_guard lk(mu_);
  stats_.commands++;
  check_key(key);
  std::vector<LogOp> frame;
  auto p = current_payload(key, frame, false);
  commit(frame, false);
  if (!p) return std::nullopt;
  if (kind_of(*p) != PayloadKind::Str) throw CommandError(kWrongType);
  return std::get<StrPayload>(std::move(*p));
}

bool Engine::set(const std::string& key, Bytes value, SetMode mode) {
  std::lock_guard lk(mu_);
  stats_.commands++;
  check_key(key);
  if (mode != SetMode::Plain) {
    bool present = logically_present(key);
    if ((mode == SetMode::Nx && present) || (mode == SetMode::Xx && !present)) return false;
  }
  std::vector<LogOp> frame;
  if (!cfg_.bypass)
    if (const PrefixRecord* head = registry_.resolve(key))
      evict_occupant(frame, key, head, true, 0);
  stage_write(frame, key, StrPayload(std::move(value)));
  if (!cfg_.bypass) purge_residue(frame, key);
  commit(frame, false);
  return true;
}

uint64_t Engine::del(const std::vector<std::string>& keys) {
  std::lock_guard lk(mu_);
  stats_.commands++;
  uint64_t removed = 0;
  std::vector<LogOp> frame;
  for (const auto& key : keys) {
    check_key(key);
    const PrefixRecord* head = cfg_.bypass ? nullptr : registry_.resolve(key);
    if (!head) {
      if (store_.raw_get(key)) {
        frame.push_back(LogOp::del(key));
        removed++;
      }
      continue;
    }
    // Every twin goes, the stale one untransformed; one logical key removed.
    bool any = false;
    auto chain = registry_.chain_of(head);
    for (auto& [name, rec] : twin_candidates(key, head)) {
      const VersionedValue* e = store_.raw_get(name);
      if (e && gen_record(chain, e->version)->prefix == rec->prefix) {
        frame.push_back(LogOp::del(std::move(name)));
        any = true;
      }
    }
    if (any) removed++;
  }
  commit(frame, false);
  return removed;
}

bool Engine::exists(const std::string& key) {
  std::lock_guard lk(mu_);
  stats_.commands++;
  check_key(key);
  return logically_present(key);
}

int64_t Engine::lpush(const std::string& key, const std::vector<Bytes>& values) {
  std::lock_guard lk(mu_);
  stats_.commands++;
  check_key(key);
  std::vector<LogOp> frame;
  auto cur = current_payload(key, frame, true);
  Payload p = cur ? std::move(*cur) : Payload(ListPayload{});
  auto& list = payload_as<ListPayload>(p);
  for (const auto& v : values) list.insert(list.begin(), v);
  int64_t len = static_cast<int64_t>(list.size());
  stage_write(frame, key, std::move(p));
  commit(frame, false);
  return len;
}

std::optional<Bytes> Engine::lpop(const std::string& key) {
  std::lock_guard lk(mu_);
  stats_.commands++;
  check_key(key);
  std::vector<LogOp> frame;
  auto cur = current_payload(key, frame, true);
  if (!cur) {
    commit(frame, false);
    return std::nullopt;
  }
  Payload p = std::move(*cur);
  auto& list = payload_as<ListPayload>(p);
  Bytes out = std::move(list.front());
  list.erase(list.begin());
  if (list.empty())
    frame.push_back(LogOp::del(key));
  else
    stage_write(frame, key, std::move(p));
  commit(frame, false);
  return out;
}

std::vector<Bytes> Engine::lrange(const std::string& key, int64_t start, int64_t stop) {
  std::lock_guard lk(mu_);
  stats_.commands++;
  check_key(key);
  std::vector<LogOp> frame;
  auto cur = current_payload(key, frame, false);
  commit(frame, false);
  if (!cur) return {};
  auto& list = payload_as<ListPayload>(*cur);
  int64_t n = static_cast<int64_t>(list.size());
  if (start < 0) start += n;
  if (stop < 0) stop += n;
  start = std::max<int64_t>(start, 0);
  stop = std::min(stop, n - 1);
  std::vector<Bytes> out;
  for (int64_t i = start; i <= stop; i++) out.push_back(std::move(list[static_cast<size_t>(i)]));
  return out;
}

int64_t Engine::sadd(const std::string& key, const std::vector<Bytes>& members) {
  std::lock_guard lk(mu_);
  stats_.commands++;
  check_key(key);
  std::vector<LogOp> frame;
  auto cur = current_payload(key, frame, true);
  Payload p = cur ? std::move(*cur) : Payload(SetPayload{});
  auto& set = payload_as<SetPayload>(p);
  int64_t added = 0;
  for (const auto& m : members)
    if (set.insert(m).second) added++;
  stage_write(frame, key, std::move(p));
  commit(frame, false);
  return added;
}

std::optional<Bytes> Engine::spop(const std::string& key) {
  std::lock_guard lk(mu_);
  stats_.commands++;
  check_key(key);
  std::vector<LogOp> frame;
  auto cur = current_payload(key, frame, true);
  if (!cur) {
    commit(frame, false);
    return std::nullopt;
  }
  Payload p = std::move(*cur);
  auto& set = payload_as<SetPayload>(p);
  // Smallest member, not a random one: traces replay bit-exact.
  Bytes out = *set.begin();
  set.erase(set.begin());
  if (set.empty())
    frame.push_back(LogOp::del(key));
  else
    stage_write(frame, key, std::move(p));
  commit(frame, false);
  return out;
}

std::vector<Bytes> Engine::smembers(const std::string& key) {
  std::lock_guard lk(mu_);
  stats_.commands++;
  check_key(key);
  std::vector<LogOp> frame;
  auto cur = current_payload(key, frame, false);
  commit(frame, false);
  if (!cur) return {};
  auto& set = payload_as<SetPayload>(*cur);
  return std::vector<Bytes>(set.begin(), set.end());
}

int64_t Engine::hset(const std::string& key, const Bytes& field, const Bytes& value) {
  std::lock_guard lk(mu_);
  stats_.commands++;
  check_key(key);
  std::vector<LogOp> frame;
  auto cur = current_payload(key, frame, true);
  Payload p = cur ? std::move(*cur) : Payload(HashPayload{});
  auto& hash = payload_as<HashPayload>(p);
  int64_t created = hash.count(field) ? 0 : 1;
  hash[field] = value;
  stage_write(frame, key, std::move(p));
  commit(frame, false);
  return created;
}

std::optional<Bytes> Engine::hget(const std::string& key, const Bytes& field) {
  std::lock_guard lk(mu_);
  stats_.commands++;
  check_key(key);
  std::vector<LogOp> frame;
  auto cur = current_payload(key, frame, false);
  commit(frame, false);
  if (!cur) return std::nullopt;
  auto& hash = payload_as<HashPayload>(*cur);
  auto it = hash.find(field);
  if (it == hash.end()) return std::nullopt;
  return std::move(it->second);
}

HashPayload Engine::hgetall(const std::string& key) {
  std::lock_guard lk(mu_);
  stats_.commands++;
  check_key(key);
  std::vector<LogOp> frame;
  auto cur = current_payload(key, frame, false);
  commit(frame, false);
  if (!cur) return {};
  return std::move(payload_as<HashPayload>(*cur));
}

int64_t Engine::zadd(const std::string& key, double score, const Bytes& member) {
  std::lock_guard lk(mu_);
  stats_.commands++;
  check_key(key);
  if (!std::isfinite(score)) throw CommandError("score must be finite");
  std::vector<LogOp> frame;
  auto cur = current_payload(key, frame, true);
  Payload p = cur ? std::move(*cur) : Payload(ZSetPayload{});
  auto& zset = payload_as<ZSetPayload>(p);
  int64_t created = zset.count(member) ? 0 : 1;
  zset[member] = score;
  stage_write(frame, key, std::move(p));
  commit(frame, false);
  return created;
}

std::optional<double> Engine::zscore(const std::string& key, const Bytes& member) {
  std::lock_guard lk(mu_);
  stats_.commands++;
  check_key(key);
  std::vector<LogOp> frame;
  auto cur = current_payload(key, frame, false);
  commit(frame, false);
  if (!cur) return std::nullopt;
  auto& zset = payload_as<ZSetPayload>(*cur);
  auto it = zset.find(member);
  if (it == zset.end()) return std::nullopt;
  return it->second;
}

std::optional<Hit> Engine::lookup_with_fallback(const std::string& key) const {
  std::lock_guard lk(mu_);
  check_key(key);
  const PrefixRecord* head = cfg_.bypass ? nullptr : registry_.resolve(key);
  if (!head) {
    const VersionedValue* e = store_.raw_get(key);
    if (!e) return std::nullopt;
    return Hit{key, *e};
  }
  auto hit = probe_names(key, head);
  if (!hit) return std::nullopt;
  return Hit{hit->name, *hit->entry};
}

// ---- admin ------------------------------------------------------------------

InstallResult Engine::install_update(const UpdateDocument& doc) {
  std::lock_guard lk(mu_);
  if (cfg_.bypass) throw CommandError("version interception is bypassed");

  std::map<std::string, TransformProgram> incoming;
  for (const auto& [name, src] : doc.program_sources) incoming.emplace(name, parse_program(src));
  std::vector<std::string> native_names;
  for (const auto& ch : doc.spec.changes) {
    for (const auto& name : ch.transformers) {
      if (incoming.count(name)) continue;
      const Transformer* t = transformers_.find(name);
      if (!t) throw CommandError("unknown transformer '" + name + "'");
      if (std::holds_alternative<NativeFn>(*t)) native_names.push_back(name);
    }
  }
  std::string err = registry_.check_advance(doc.spec);
  if (!err.empty()) throw CommandError(err);

  LogOp op;
  op.kind = LogOp::Kind::Install;
  op.spec = doc.spec;
  op.programs = doc.program_sources;
  op.natives = std::move(native_names);
  // Durable before visible: a crash on either side of this append recovers
  // to wholly-before or wholly-after.
  if (journal_) journal_->append({op}, true);

  for (auto& [name, prog] : incoming) transformers_.put_program(name, std::move(prog));
  std::vector<uint64_t> gone = registry_.advance(doc.spec);
  for (uint64_t sid : gone) kicked_.insert(sid);
  stats_.installs++;
  absent_.clear();
  return InstallResult{std::move(gone)};
}

EagerResult Engine::eager_migrate(const std::string& prefix) {
  std::lock_guard lk(mu_);
  if (cfg_.bypass) throw CommandError("version interception is bypassed");
  const PrefixRecord* rec = registry_.find_text(prefix);
  if (!rec) throw CommandError("prefix '" + prefix + "' is not governed by any chain");
  const PrefixRecord* head = rec;
  while (head->next) head = head->next;

  auto chain = registry_.chain_of(head);
  // Head names of every stale entry belonging to this chain. The entry's tag
  // picks the record that generated its name; the suffix carries over.
  std::set<std::string> stale;
  std::set<std::string> scanned;
  for (const PrefixRecord* r : chain) {
    if (!scanned.insert(r->prefix).second) continue;
    for (const auto& key : store_.scan_prefix(r->prefix)) {
      if (owning_head(key) != head) continue;
      const VersionedValue* e = store_.raw_get(key);
      const PrefixRecord* gen = nullptr;
      for (const PrefixRecord* c : chain)
        if (c->version <= e->version) gen = c;
      if (!gen) gen = chain.front();
      if (key.compare(0, gen->prefix.size(), gen->prefix) != 0) continue;
      std::string head_name = head->prefix + key.substr(gen->prefix.size());
      if (key == head_name && e->version == head->version) continue;
      stale.insert(std::move(head_name));
    }
  }

  EagerResult out;
  for (const auto& head_name : stale) {
    std::vector<LogOp> frame;
    try {
      // Same per-key path as a lazy access, one frame per key: each
      // completed key stays validly migrated even if a later one fails.
      Settled s = settle(head_name, frame, false, true);
      if (s.migrated) {
        commit(frame, false);
        stats_.eager_migrations++;
        out.migrated++;
      }
    } catch (const TransformFailed& e) {
      out.error = e.what();
      break;
    }
  }
  if (journal_) journal_->flush(false);
  return out;
}

EagerResult Engine::eager_migrate_all() {
  std::vector<std::string> texts;
  {
    std::lock_guard lk(mu_);
    if (cfg_.bypass) throw CommandError("version interception is bypassed");
    for (const PrefixRecord* head : registry_.heads()) texts.push_back(head->prefix);
  }
  std::sort(texts.begin(), texts.end());
  EagerResult total;
  for (const auto& t : texts) {
    EagerResult r = eager_migrate(t);
    total.migrated += r.migrated;
    if (!r.error.empty() && total.error.empty()) total.error = r.error;
  }
  return total;
}

void Engine::register_native(const std::string& name, NativeFn fn) {
  std::lock_guard lk(mu_);
  transformers_.put_native(name, std::move(fn));
}

MigrationStats Engine::stats() const {
  std::lock_guard lk(mu_);
  return stats_;
}

void Engine::snapshot() {
  std::lock_guard lk(mu_);
  if (!journal_) return;
  uint64_t mark = journal_->append_snapshot_mark();
  SnapshotData snap;
  snap.mark_seq = mark;
  snap.registry = registry_.to_image();
  snap.programs = transformers_.program_sources();
  snap.natives = transformers_.native_names();
  snap.entries.reserve(store_.size());
  for (const auto& [key, vv] : store_.entries())
    snap.entries.emplace_back(key, vv.payload, vv.version);
  write_snapshot(cfg_.data_dir, snap);
  journal_->restart();
}

// ---- introspection ----------------------------------------------------------

std::optional<VersionedValue> Engine::peek(const std::string& key) const {
  std::lock_guard lk(mu_);
  const VersionedValue* e = store_.raw_get(key);
  if (!e) return std::nullopt;
  return *e;
}

uint64_t Engine::store_digest() const {
  std::lock_guard lk(mu_);
  return store_.digest();
}

size_t Engine::key_count() const {
  std::lock_guard lk(mu_);
  return store_.size();
}

std::string Engine::registry_bytes() const {
  std::lock_guard lk(mu_);
  return registry_.canonical_bytes();
}

uint32_t Engine::logical_version(const std::string& key) const {
  std::lock_guard lk(mu_);
  return registry_.logical_version_for_key(key);
}

EdgeCounts Engine::edge_counts() const {
  std::lock_guard lk(mu_);
  return edges_;
}

void Engine::set_migration_probe(std::function<void()> probe) {
  std::lock_guard lk(mu_);
  probe_ = std::move(probe);
}

}  // namespace moltkv
