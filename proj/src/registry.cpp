#include "moltkv/registry.hpp"

#include <algorithm>
#include <stdexcept>

#include "moltkv/binio.hpp"
#include "moltkv/payload.hpp"

namespace moltkv {

namespace {

bool proper_prefix_of(std::string_view shorter, std::string_view longer) {
  return shorter.size() < longer.size() && longer.substr(0, shorter.size()) == shorter;
}

}  // namespace

VersionRegistry::DeclareOutcome VersionRegistry::check_declare(const std::string& prefix,
                                                               uint32_t version) const {
  if (prefix.empty()) return {false, 0};  // reserved, never updatable
  auto it = by_text_.find(prefix);
  if (it == by_text_.end()) return {true, version};
  const PrefixRecord* rec = it->second;
  const PrefixRecord* head = rec;
  while (head->next) head = head->next;
  if (rec == head && rec->version == version) return {true, version};
  return {false, head->version};
}

bool VersionRegistry::declare(uint64_t session, const std::string& prefix, uint32_t version) {
  auto outcome = check_declare(prefix, version);
  if (!outcome.ok) throw std::logic_error("declare without successful check_declare");
  bool created = false;
  auto it = by_text_.find(prefix);
  if (it == by_text_.end()) {
    bootstrap_chain(prefix, version);
    it = by_text_.find(prefix);
    created = true;
  }
  PrefixRecord* rec = it->second;
  rec->sessions.insert(session);
  session_pins_[session].push_back(rec);
  return created;
}

void VersionRegistry::drop_session(uint64_t session) {
  auto it = session_pins_.find(session);
  if (it == session_pins_.end()) return;
  for (PrefixRecord* rec : it->second) rec->sessions.erase(session);
  session_pins_.erase(it);
}

const PrefixRecord* VersionRegistry::resolve(std::string_view key) const {
  const PrefixRecord* best = nullptr;
  for (const auto& chain : chains_) {
    PrefixRecord* head = chain->head();
    if (key.size() >= head->prefix.size() &&
        key.compare(0, head->prefix.size(), head->prefix) == 0) {
      if (!best || head->prefix.size() > best->prefix.size()) best = head;
    }
  }
  return best;
}

const PrefixRecord* VersionRegistry::find_text(std::string_view prefix) const {
  auto it = by_text_.find(std::string(prefix));
  return it == by_text_.end() ? nullptr : it->second;
}

std::string VersionRegistry::back_map(const PrefixRecord* rec, std::string_view key) {
  if (!rec->prev) throw std::logic_error("back_map at chain start");
  if (key.substr(0, rec->prefix.size()) != rec->prefix)
    throw std::logic_error("back_map key outside namespace");
  std::string out = rec->prev->prefix;
  out.append(key.substr(rec->prefix.size()));
  return out;
}

uint32_t VersionRegistry::logical_version_for_key(std::string_view key) const {
  const PrefixRecord* rec = resolve(key);
  return rec ? rec->version : 0;
}

std::string VersionRegistry::check_advance(const UpdateSpec& spec) const {
  if (spec.changes.empty()) return "update spec has no changes";

  // Chains touched by earlier changes in this spec, plus texts the spec will
  // introduce. Bootstrapped chains are keyed by their old text.
  std::vector<const void*> touched;
  std::vector<std::string> pending_texts;

  for (const auto& ch : spec.changes) {
    if (ch.old_prefix.empty() || ch.new_prefix.empty()) return "empty prefix is reserved";
    if (ch.to_version != ch.from_version + 1) return "to_version must be from_version + 1";

    const PrefixRecord* rec = find_text(ch.old_prefix);
    const void* chain_key;
    if (rec) {
      if (!rec->is_head())
        return "prefix '" + ch.old_prefix + "' is superseded";
      if (rec->version != ch.from_version)
        return "version mismatch for '" + ch.old_prefix + "': current is " +
               std::to_string(rec->version);
      chain_key = chain_containing(rec);
    } else {
      chain_key = nullptr;  // bootstrap; dedupe below via pending_texts
      for (const auto& prior : spec.changes) {
        if (&prior == &ch) break;
        if (prior.old_prefix == ch.old_prefix) return "duplicate change for '" + ch.old_prefix + "'";
      }
    }
    if (chain_key) {
      if (std::find(touched.begin(), touched.end(), chain_key) != touched.end())
        return "duplicate change for '" + ch.old_prefix + "'";
      touched.push_back(chain_key);
    }

    if (ch.new_prefix != ch.old_prefix) {
      // The rewrite must stay an unambiguous bijection: the new text may not
      // equal or prefix-overlap any text belonging to a different chain.
      for (const auto& [text, other] : by_text_) {
        if (rec && chain_containing(other) == chain_key) continue;
        if (text == ch.new_prefix) return "prefix '" + ch.new_prefix + "' already in use";
        if (proper_prefix_of(ch.new_prefix, text) || proper_prefix_of(text, ch.new_prefix))
          return "prefix '" + ch.new_prefix + "' would be ambiguous with existing '" + text + "'";
      }
      for (const auto& text : pending_texts) {
        if (text == ch.new_prefix || proper_prefix_of(ch.new_prefix, text) ||
            proper_prefix_of(text, ch.new_prefix))
          return "prefix '" + ch.new_prefix + "' conflicts with '" + text + "' from the same spec";
      }
    }
    if (!rec && ch.new_prefix != ch.old_prefix) pending_texts.push_back(ch.old_prefix);
    pending_texts.push_back(ch.new_prefix);
  }
  return "";
}

std::vector<uint64_t> VersionRegistry::advance(const UpdateSpec& spec) {
  std::string err = check_advance(spec);
  if (!err.empty()) throw std::logic_error("advance without successful check: " + err);

  std::set<uint64_t> stale;
  for (const auto& ch : spec.changes) {
    PrefixRecord* old_head = const_cast<PrefixRecord*>(find_text(ch.old_prefix));
    Chain* chain;
    if (!old_head) {
      bootstrap_chain(ch.old_prefix, ch.from_version);
      old_head = by_text_[ch.old_prefix];
      chain = chains_.back().get();
    } else {
      chain = chain_containing(old_head);
    }

    auto rec = std::make_unique<PrefixRecord>();
    rec->prefix = ch.new_prefix;
    rec->version = ch.to_version;
    rec->prev = old_head;
    rec->transformers = ch.transformers;
    old_head->next = rec.get();
    by_text_[ch.new_prefix] = rec.get();
    chain->records.push_back(std::move(rec));

    // Sessions admitted anywhere along this chain are now stale.
    for (const auto& r : chain->records) {
      if (r.get() == chain->head()) continue;
      for (uint64_t sid : r->sessions) stale.insert(sid);
    }
  }
  std::vector<uint64_t> out(stale.begin(), stale.end());
  for (uint64_t sid : out) drop_session(sid);
  return out;
}

void VersionRegistry::bootstrap_chain(const std::string& prefix, uint32_t version) {
  if (prefix.empty()) throw std::logic_error("empty prefix is reserved");
  if (by_text_.count(prefix)) throw std::logic_error("bootstrap of known prefix");
  auto chain = std::make_unique<Chain>();
  auto rec = std::make_unique<PrefixRecord>();
  rec->prefix = prefix;
  rec->version = version;
  by_text_[prefix] = rec.get();
  chain->records.push_back(std::move(rec));
  chains_.push_back(std::move(chain));
}

RegistryImage VersionRegistry::to_image() const {
  RegistryImage img;
  for (const auto& chain : chains_) {
    ChainImage ci;
    for (const auto& rec : chain->records)
      ci.push_back({rec->prefix, rec->version, rec->transformers});
    img.push_back(std::move(ci));
  }
  // Chains sorted by oldest text for deterministic snapshots.
  std::sort(img.begin(), img.end(),
            [](const ChainImage& a, const ChainImage& b) { return a[0].prefix < b[0].prefix; });
  return img;
}

VersionRegistry VersionRegistry::from_image(const RegistryImage& img) {
  VersionRegistry reg;
  for (const auto& ci : img) {
    if (ci.empty()) continue;
    auto chain = std::make_unique<Chain>();
    PrefixRecord* prev = nullptr;
    for (const auto& ri : ci) {
      auto rec = std::make_unique<PrefixRecord>();
      rec->prefix = ri.prefix;
      rec->version = ri.version;
      rec->transformers = ri.transformers;
      rec->prev = prev;
      if (prev) prev->next = rec.get();
      prev = rec.get();
      reg.by_text_[ri.prefix] = rec.get();
      chain->records.push_back(std::move(rec));
    }
    reg.chains_.push_back(std::move(chain));
  }
  return reg;
}

std::vector<const PrefixRecord*> VersionRegistry::chain_of(const PrefixRecord* rec) const {
  const PrefixRecord* cur = rec;
  while (cur->prev) cur = cur->prev;
  std::vector<const PrefixRecord*> out;
  for (; cur; cur = cur->next) out.push_back(cur);
  return out;
}

std::vector<const PrefixRecord*> VersionRegistry::heads() const {
  std::vector<const PrefixRecord*> out;
  out.reserve(chains_.size());
  for (const auto& chain : chains_) out.push_back(chain->head());
  return out;
}

std::string VersionRegistry::canonical_bytes() const {
  RegistryImage img = to_image();
  std::string out;
  binio::put_u32(out, static_cast<uint32_t>(img.size()));
  for (const auto& ci : img) {
    binio::put_u32(out, static_cast<uint32_t>(ci.size()));
    for (const auto& ri : ci) {
      binio::put_str(out, ri.prefix);
      binio::put_u32(out, ri.version);
      binio::put_u32(out, static_cast<uint32_t>(ri.transformers.size()));
      for (const auto& t : ri.transformers) binio::put_str(out, t);
    }
  }
  return out;
}

VersionRegistry::Chain* VersionRegistry::chain_containing(const PrefixRecord* rec) const {
  const PrefixRecord* oldest = rec;
  while (oldest->prev) oldest = oldest->prev;
  for (const auto& chain : chains_) {
    if (chain->records.front().get() == oldest) return chain.get();
  }
  return nullptr;
}

}  // namespace moltkv
