#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "moltkv/engine.hpp"
#include "moltkv/errors.hpp"
#include "moltkv/transform.hpp"
#include "moltkv/update_spec.hpp"
#include "model.hpp"

namespace moltkv::testing {

struct TraceCmd {
  enum class K {
    Hello,
    Install,
    Get,
    Set,
    SetNx,
    SetXx,
    Del,
    Exists,
    Lpush,
    Lpop,
    Lrange,
    Sadd,
    Spop,
    Smembers,
    Hset,
    Hget,
    Hgetall,
    Zadd,
    Zscore,
  };
  K k = K::Get;
  std::string key, field, value;
  std::vector<std::string> many;                        // del keys, lpush/sadd values
  std::vector<std::pair<std::string, uint32_t>> decls;  // hello
  std::string doc;                                      // install text
  int64_t a = 0, b = 0;                                 // lrange bounds
  double score = 0;
};

struct Trace {
  uint64_t seed = 0;
  std::vector<TraceCmd> cmds;
};

// ---- reply encoding ----------------------------------------------------------

inline std::string fmt_double(double d) {
  char b[64];
  std::snprintf(b, sizeof b, "%.17g", d);
  return b;
}

inline std::string bulk(const std::optional<Bytes>& v) { return v ? "$" + *v : "$-1"; }

inline std::string arr(const std::vector<Bytes>& v) {
  std::string o = "*" + std::to_string(v.size());
  for (const auto& s : v) {
    o += "|";
    o += s;
  }
  return o;
}

inline std::string arr(const HashPayload& h) {
  std::vector<Bytes> flat;
  for (const auto& [f, v] : h) {
    flat.push_back(f);
    flat.push_back(v);
  }
  return arr(flat);
}

// Replies that mean "this trace stepped outside the contract" (a transformer
// failed); the runner voids the comparison instead of calling it a bug.
inline const char* kVoid = "!VOID";

inline std::string exec_engine(Engine& e, uint64_t& sid, const TraceCmd& c) {
  using K = TraceCmd::K;
  try {
    switch (c.k) {
      case K::Hello: {
        e.close_session(sid);
        sid = e.open_session();
        auto h = e.hello(sid, c.decls);
        return h.ok ? "+OK" : "-MISMATCH " + h.prefix + " " + std::to_string(h.current);
      }
      case K::Install:
        e.install_update(parse_update_document(c.doc));
        return "+OK";
      case K::Get:
        return bulk(e.get(c.key));
      case K::Set:
        return e.set(c.key, c.value) ? "+OK" : "$-1";
      case K::SetNx:
        return e.set(c.key, c.value, SetMode::Nx) ? "+OK" : "$-1";
      case K::SetXx:
        return e.set(c.key, c.value, SetMode::Xx) ? "+OK" : "$-1";
      case K::Del:
        return ":" + std::to_string(e.del(c.many));
      case K::Exists:
        return ":" + std::to_string(e.exists(c.key) ? 1 : 0);
      case K::Lpush:
        return ":" + std::to_string(e.lpush(c.key, c.many));
      case K::Lpop:
        return bulk(e.lpop(c.key));
      case K::Lrange:
        return arr(e.lrange(c.key, c.a, c.b));
      case K::Sadd:
        return ":" + std::to_string(e.sadd(c.key, c.many));
      case K::Spop:
        return bulk(e.spop(c.key));
      case K::Smembers:
        return arr(e.smembers(c.key));
      case K::Hset:
        return ":" + std::to_string(e.hset(c.key, c.field, c.value));
      case K::Hget:
        return bulk(e.hget(c.key, c.field));
      case K::Hgetall:
        return arr(e.hgetall(c.key));
      case K::Zadd:
        return ":" + std::to_string(e.zadd(c.key, c.score, c.value));
      case K::Zscore: {
        auto s = e.zscore(c.key, c.value);
        return s ? "$" + fmt_double(*s) : "$-1";
      }
    }
  } catch (const TransformFailed&) {
    return kVoid;
  } catch (const CommandError& err) {
    return std::string("-ERR ") + err.what();
  } catch (const ParseError& err) {
    return std::string("-ERR ") + err.what();
  }
  return "-ERR unreachable";
}

inline std::string exec_model(Model& m, const TraceCmd& c) {
  using K = TraceCmd::K;
  try {
    switch (c.k) {
      case K::Hello: {
        auto h = m.hello(c.decls);
        return h.ok ? "+OK" : "-MISMATCH " + h.prefix + " " + std::to_string(h.current);
      }
      case K::Install:
        m.install(parse_update_document(c.doc));
        return "+OK";
      case K::Get:
        return bulk(m.get(c.key));
      case K::Set:
        return m.set(c.key, c.value, 0) ? "+OK" : "$-1";
      case K::SetNx:
        return m.set(c.key, c.value, 1) ? "+OK" : "$-1";
      case K::SetXx:
        return m.set(c.key, c.value, 2) ? "+OK" : "$-1";
      case K::Del:
        return ":" + std::to_string(m.del(c.many));
      case K::Exists:
        return ":" + std::to_string(m.exists(c.key) ? 1 : 0);
      case K::Lpush:
        return ":" + std::to_string(m.lpush(c.key, c.many));
      case K::Lpop:
        return bulk(m.lpop(c.key));
      case K::Lrange:
        return arr(m.lrange(c.key, c.a, c.b));
      case K::Sadd:
        return ":" + std::to_string(m.sadd(c.key, c.many));
      case K::Spop:
        return bulk(m.spop(c.key));
      case K::Smembers:
        return arr(m.smembers(c.key));
      case K::Hset:
        return ":" + std::to_string(m.hset(c.key, c.field, c.value));
      case K::Hget:
        return bulk(m.hget(c.key, c.field));
      case K::Hgetall:
        return arr(m.hgetall(c.key));
      case K::Zadd:
        return ":" + std::to_string(m.zadd(c.key, c.score, c.value));
      case K::Zscore: {
        auto s = m.zscore(c.key, c.value);
        return s ? "$" + fmt_double(*s) : "$-1";
      }
    }
  } catch (const TransformFailed&) {
    return kVoid;
  } catch (const CommandError& err) {
    return std::string("-ERR ") + err.what();
  } catch (const ParseError& err) {
    return std::string("-ERR ") + err.what();
  }
  return "-ERR unreachable";
}

// ---- running -----------------------------------------------------------------

struct Outcome {
  enum class S { Pass, Diverge, Invalid } s = S::Pass;
  size_t at = 0;
  std::string detail;
};

// Runs the trace against a fresh in-memory engine and the eager model,
// comparing every reply and, after a final eager flush, the store digests.
// `restart_at` (if inside the trace) tears the engine down and reopens it
// from `dir` at that command, exercising recovery mid-stream.
inline Outcome run_trace(const Trace& t, const std::filesystem::path& dir = {},
                         size_t restart_at = SIZE_MAX) {
  EngineConfig cfg;
  cfg.data_dir = dir;
  std::optional<Engine> eng;
  eng.emplace(cfg);
  Model mod;
  uint64_t sid = eng->open_session();
  for (size_t i = 0; i < t.cmds.size(); i++) {
    if (i == restart_at) {
      eng.reset();
      eng.emplace(cfg);
      sid = eng->open_session();
    }
    std::string re = exec_engine(*eng, sid, t.cmds[i]);
    std::string rm = exec_model(mod, t.cmds[i]);
    if (re == kVoid || rm == kVoid) return {Outcome::S::Invalid, i, "transformer failed"};
    if (re != rm) return {Outcome::S::Diverge, i, "engine=" + re + " model=" + rm};
  }
  auto flush = eng->eager_migrate_all();
  if (!flush.error.empty()) return {Outcome::S::Invalid, t.cmds.size(), flush.error};
  if (eng->store_digest() != mod.digest())
    return {Outcome::S::Diverge, t.cmds.size(),
            "digest: engine has " + std::to_string(eng->key_count()) + " keys, model " +
                std::to_string(mod.key_count())};
  return {};
}

// ---- generation ----------------------------------------------------------------

struct GenOpts {
  int cmds = 520;
  int prefixes = 6;  // floor; an overlap twin and an ungoverned one may add more
  int installs = 3;
};

namespace detail {

struct Rng {
  uint64_t s;
  explicit Rng(uint64_t seed) : s(seed * 0x9E3779B97F4A7C15ull + 1) {}
  uint64_t next() {
    s ^= s << 13;
    s ^= s >> 7;
    s ^= s << 17;
    return s;
  }
  uint64_t below(uint64_t n) { return next() % n; }
  bool chance(int pct) { return below(100) < static_cast<uint64_t>(pct); }
};

struct GenPrefix {
  std::string text;
  uint32_t version = 0;
  bool json = false;
  bool declared = true;
  std::vector<std::pair<std::string, char>> fields;  // json layout: name, 'n'|'s'
  std::vector<std::string> suffixes;
};

inline std::string json_value(Rng& rng, const GenPrefix& p) {
  // Hand-rolled object text; the engine stores bytes verbatim, and the
  // transformer normalizes order only when it actually runs.
  std::string o = "{";
  bool first = true;
  for (const auto& [name, type] : p.fields) {
    if (!first) o += ",";
    first = false;
    o += "\"" + name + "\":";
    if (type == 'n')
      o += std::to_string(rng.below(1000));
    else
      o += "\"v" + std::to_string(rng.below(1000)) + "\"";
  }
  if (rng.chance(25)) o += ",\"x" + std::to_string(rng.below(50)) + "\":" + std::to_string(rng.below(9));
  o += "}";
  return o;
}

inline std::string opaque_value(Rng& rng) {
  static const char cs[] = "abcdefghijklmnop0123456789\n\t\x01\x7f";
  std::string v;
  size_t n = rng.below(13);
  for (size_t i = 0; i < n; i++) v += cs[rng.below(sizeof(cs) - 1)];
  return v;
}

inline bool texts_clash(const std::string& a, const std::string& b) {
  if (a == b) return true;
  if (a.size() < b.size()) return b.compare(0, a.size(), a) == 0;
  return a.compare(0, b.size(), b) == 0;
}

}  // namespace detail

inline Trace gen_trace(uint64_t seed, GenOpts opts = {}) {
  using detail::GenPrefix;
  detail::Rng rng(seed);
  Trace t;
  t.seed = seed;

  std::vector<GenPrefix> prefixes;
  std::vector<std::string> used_texts;  // every text any chain ever wore
  auto add_prefix = [&](std::string text, bool declared) {
    GenPrefix p;
    p.text = std::move(text);
    p.declared = declared;
    p.json = rng.chance(40);
    p.fields = {{"f0", 'n'}, {"f1", 'n'}, {"f2", 's'}, {"f3", 's'}};
    for (int s = 0; s < 9; s++) p.suffixes.push_back(std::to_string(s));
    p.suffixes.push_back("a7");
    p.suffixes.push_back("b:1");
    p.suffixes.push_back("b:2");
    p.suffixes.push_back("x:0");
    p.suffixes.push_back("x:1");
    used_texts.push_back(p.text);
    prefixes.push_back(std::move(p));
  };

  static const char* stems[] = {"ord", "usr", "inv", "fs", "gr", "ses", "idx", "blk"};
  for (int i = 0; i < opts.prefixes; i++)
    add_prefix(std::string(stems[i % 8]) + std::to_string(i) + ":", true);
  if (rng.chance(40)) add_prefix(prefixes[0].text + "in:", true);  // declare-time overlap
  if (rng.chance(50)) add_prefix("und" + std::to_string(rng.below(10)) + ":", false);

  auto layout_pick = [&](GenPrefix& p, char type) -> std::string {
    std::vector<std::string> of_type;
    for (auto& [n, ty] : p.fields)
      if (ty == type) of_type.push_back(n);
    return of_type[rng.below(of_type.size())];
  };

  int xform_counter = 0;
  int field_counter = 0;
  int fresh_counter = 0;

  // One transformer body valid for this prefix at its current layout; the
  // layout is updated in place so later edges and values stay consistent.
  auto gen_transform = [&](GenPrefix& p) -> std::string {
    if (!p.json) {
      if (rng.chance(50)) return "compress;";
      // The document grammar has no way to spell an empty constant.
      std::string c = detail::opaque_value(rng) + static_cast<char>('a' + rng.below(26));
      return "set " + base64_encode(c) + ";";
    }
    std::string body;
    int steps = 1 + static_cast<int>(rng.below(2));
    for (int i = 0; i < steps; i++) {
      switch (rng.below(4)) {
        case 0: {  // numeric derivation
          std::string f = "g" + std::to_string(field_counter++);
          body += "add " + f + " = " + layout_pick(p, 'n') + " + " +
                  std::to_string(rng.below(90)) + "; ";
          p.fields.emplace_back(f, 'n');
          break;
        }
        case 1: {  // string concat
          std::string f = "g" + std::to_string(field_counter++);
          body += "add " + f + " = " + layout_pick(p, 's') + " + " + layout_pick(p, 's') + "; ";
          p.fields.emplace_back(f, 's');
          break;
        }
        case 2: {  // rename
          size_t at = rng.below(p.fields.size());
          std::string fresh = "g" + std::to_string(field_counter++);
          body += "rename " + p.fields[at].first + " " + fresh + "; ";
          p.fields[at].first = fresh;
          break;
        }
        default: {  // delete, keeping two of each type around
          int n = 0, s = 0;
          for (auto& [nm, ty] : p.fields) (ty == 'n' ? n : s)++;
          size_t at = rng.below(p.fields.size());
          char ty = p.fields[at].second;
          if ((ty == 'n' && n <= 2) || (ty == 's' && s <= 2)) {
            std::string f = "g" + std::to_string(field_counter++);
            body += "add " + f + " = " + std::to_string(rng.below(9)) + "; ";
            p.fields.emplace_back(f, 'n');
          } else {
            body += "delete " + p.fields[at].first + "; ";
            p.fields.erase(p.fields.begin() + static_cast<long>(at));
          }
          break;
        }
      }
    }
    return body;
  };

  auto fresh_text = [&](const GenPrefix& subject) -> std::string {
    for (int attempt = 0; attempt < 8; attempt++) {
      std::string cand;
      if (rng.chance(40))
        cand = subject.text + (rng.chance(50) ? "v2:" : "nx:");  // nested rename
      else
        cand = std::string("re") + std::to_string(rng.below(900)) + ":";
      bool ok = true;
      for (auto& other : prefixes) {
        if (&other == &subject) continue;
        if (detail::texts_clash(cand, other.text)) ok = false;
      }
      for (auto& u : used_texts)
        if (u != subject.text && detail::texts_clash(cand, u)) ok = false;
      if (ok) return cand;
    }
    return "zz" + std::to_string(fresh_counter++) + "q:";
  };

  auto hello_all = [&]() {
    TraceCmd c;
    c.k = TraceCmd::K::Hello;
    for (auto& p : prefixes)
      if (p.declared) c.decls.emplace_back(p.text, p.version);
    return c;
  };
  t.cmds.push_back(hello_all());

  for (auto& p : prefixes) {  // a few keys every chain is sure to have
    for (int s = 0; s < 3; s++) {
      TraceCmd c;
      c.k = TraceCmd::K::Set;
      c.key = p.text + std::to_string(s);
      c.value = p.json ? detail::json_value(rng, p) : detail::opaque_value(rng);
      t.cmds.push_back(std::move(c));
    }
  }

  std::set<size_t> install_at;
  int installs = 1 + static_cast<int>(rng.below(static_cast<uint64_t>(opts.installs)));
  while (static_cast<int>(install_at.size()) < installs)
    install_at.insert(opts.cmds / 5 + rng.below(static_cast<uint64_t>(opts.cmds) * 7 / 10));

  auto gen_key = [&](const GenPrefix& p) { return p.text + p.suffixes[rng.below(p.suffixes.size())]; };

  for (int i = 0; i < opts.cmds; i++) {
    if (install_at.count(static_cast<size_t>(i))) {
      TraceCmd c;
      c.k = TraceCmd::K::Install;
      int nchanges = rng.chance(25) ? 2 : 1;
      std::set<size_t> subjects;
      while (static_cast<int>(subjects.size()) < nchanges) subjects.insert(rng.below(prefixes.size()));
      std::string doc, xforms;
      for (size_t si : subjects) {
        GenPrefix& p = prefixes[si];
        int kind = static_cast<int>(rng.below(3));  // 0 rename, 1 transform, 2 both
        std::string new_text = kind == 1 ? p.text : fresh_text(p);
        std::string names;
        if (kind != 0) {
          std::string tn = "t" + std::to_string(xform_counter++);
          xforms += "transform " + tn + " { " + gen_transform(p) + " }\n";
          names = " " + tn;
        }
        doc += "change " + p.text + " " + new_text + " " + std::to_string(p.version) + " " +
               std::to_string(p.version + 1) + names + "\n";
        if (new_text != p.text) used_texts.push_back(new_text);
        p.text = new_text;
        p.version++;
        p.declared = true;  // an install adopts an ungoverned prefix
      }
      c.doc = doc + xforms;
      t.cmds.push_back(std::move(c));
      t.cmds.push_back(hello_all());
      for (size_t si : subjects) {  // make sure the new edges see traffic
        GenPrefix& p = prefixes[si];
        TraceCmd touch;
        touch.k = TraceCmd::K::Get;
        touch.key = p.text + std::to_string(rng.below(3));
        t.cmds.push_back(touch);
        touch.key = gen_key(p);
        t.cmds.push_back(std::move(touch));
      }
    }

    GenPrefix& p = prefixes[rng.below(prefixes.size())];
    TraceCmd c;
    c.key = gen_key(p);
    using K = TraceCmd::K;
    if (p.json) {
      switch (rng.below(10)) {
        case 0:
        case 1:
        case 2: c.k = K::Get; break;
        case 3:
        case 4:
        case 5: c.k = K::Set; c.value = detail::json_value(rng, p); break;
        case 6: c.k = K::SetNx; c.value = detail::json_value(rng, p); break;
        case 7: c.k = K::SetXx; c.value = detail::json_value(rng, p); break;
        case 8: c.k = K::Exists; break;
        default:
          c.k = K::Del;
          c.many.push_back(c.key);
          if (rng.chance(30)) {
            std::string other = gen_key(prefixes[rng.below(prefixes.size())]);
            if (other != c.key) c.many.push_back(other);
          }
          break;
      }
    } else {
      switch (rng.below(16)) {
        case 0:
        case 1: c.k = K::Get; break;
        case 2:
        case 3: c.k = K::Set; c.value = detail::opaque_value(rng); break;
        case 4: c.k = K::Exists; break;
        case 5:
          c.k = K::Del;
          c.many.push_back(c.key);
          break;
        case 6:
          c.k = K::Lpush;
          c.many = {detail::opaque_value(rng), detail::opaque_value(rng)};
          break;
        case 7: c.k = K::Lpop; break;
        case 8:
          c.k = K::Lrange;
          c.a = static_cast<int64_t>(rng.below(14)) - 5;
          c.b = static_cast<int64_t>(rng.below(14)) - 5;
          break;
        case 9:
          c.k = K::Sadd;
          c.many = {detail::opaque_value(rng), detail::opaque_value(rng)};
          break;
        case 10: c.k = K::Spop; break;
        case 11: c.k = K::Smembers; break;
        case 12:
          c.k = K::Hset;
          c.field = "h" + std::to_string(rng.below(5));
          c.value = detail::opaque_value(rng);
          break;
        case 13:
          c.k = K::Hget;
          c.field = "h" + std::to_string(rng.below(5));
          break;
        case 14:
          c.k = K::Zadd;
          c.value = "m" + std::to_string(rng.below(5));
          c.score = static_cast<double>(rng.below(200)) / 2.0;
          break;
        default:
          c.k = rng.chance(50) ? K::Zscore : K::Hgetall;
          if (c.k == K::Zscore) c.value = "m" + std::to_string(rng.below(5));
          break;
      }
    }
    t.cmds.push_back(std::move(c));
  }
  return t;
}

// ---- shrinking -----------------------------------------------------------------

// ddmin-lite over the command vector; a reduction counts only if it still
// diverges (invalid traces are rejected, they changed the failure).
inline Trace shrink_trace(Trace t, int budget = 500) {
  size_t chunk = t.cmds.size() / 2;
  while (chunk > 0 && budget > 0) {
    bool removed = false;
    size_t i = 0;
    while (i + chunk <= t.cmds.size() && budget > 0) {
      Trace c;
      c.seed = t.seed;
      c.cmds.assign(t.cmds.begin(), t.cmds.end());
      c.cmds.erase(c.cmds.begin() + static_cast<long>(i),
                   c.cmds.begin() + static_cast<long>(i + chunk));
      budget--;
      if (run_trace(c).s == Outcome::S::Diverge) {
        t = std::move(c);
        removed = true;
      } else {
        i += chunk;
      }
    }
    if (!removed) chunk /= 2;
  }
  return t;
}

inline std::string dump_cmd(const TraceCmd& c) {
  using K = TraceCmd::K;
  auto q = [](const std::string& s) { return "'" + s + "'"; };
  switch (c.k) {
    case K::Hello: {
      std::string o = "HELLO";
      for (auto& [p, v] : c.decls) o += " " + p + "=" + std::to_string(v);
      return o;
    }
    case K::Install: return "INSTALL <<" + c.doc + ">>";
    case K::Get: return "GET " + q(c.key);
    case K::Set: return "SET " + q(c.key) + " " + q(c.value);
    case K::SetNx: return "SET NX " + q(c.key) + " " + q(c.value);
    case K::SetXx: return "SET XX " + q(c.key) + " " + q(c.value);
    case K::Del: {
      std::string o = "DEL";
      for (auto& k : c.many) o += " " + q(k);
      return o;
    }
    case K::Exists: return "EXISTS " + q(c.key);
    case K::Lpush: {
      std::string o = "LPUSH " + q(c.key);
      for (auto& v : c.many) o += " " + q(v);
      return o;
    }
    case K::Lpop: return "LPOP " + q(c.key);
    case K::Lrange:
      return "LRANGE " + q(c.key) + " " + std::to_string(c.a) + " " + std::to_string(c.b);
    case K::Sadd: {
      std::string o = "SADD " + q(c.key);
      for (auto& v : c.many) o += " " + q(v);
      return o;
    }
    case K::Spop: return "SPOP " + q(c.key);
    case K::Smembers: return "SMEMBERS " + q(c.key);
    case K::Hset: return "HSET " + q(c.key) + " " + q(c.field) + " " + q(c.value);
    case K::Hget: return "HGET " + q(c.key) + " " + q(c.field);
    case K::Hgetall: return "HGETALL " + q(c.key);
    case K::Zadd: return "ZADD " + q(c.key) + " " + fmt_double(c.score) + " " + q(c.value);
    case K::Zscore: return "ZSCORE " + q(c.key) + " " + q(c.value);
  }
  return "?";
}

inline std::string dump_trace(const Trace& t) {
  std::string o;
  for (size_t i = 0; i < t.cmds.size(); i++)
    o += std::to_string(i) + ": " + dump_cmd(t.cmds[i]) + "\n";
  return o;
}

}  // namespace moltkv::testing
