#include "moltkv/transform.hpp"

#include <zlib.h>

#include <cmath>
#include <cstdlib>

#include <nlohmann/json.hpp>

#include "moltkv/errors.hpp"

using json = nlohmann::json;

namespace moltkv {

// ---- base64 ----------------------------------------------------------------

static const char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string base64_encode(std::string_view in) {
  std::string out;
  out.reserve((in.size() + 2) / 3 * 4);
  size_t i = 0;
  while (i + 3 <= in.size()) {
    uint32_t v = (uint8_t(in[i]) << 16) | (uint8_t(in[i + 1]) << 8) | uint8_t(in[i + 2]);
    out.push_back(kB64[(v >> 18) & 63]);
    out.push_back(kB64[(v >> 12) & 63]);
    out.push_back(kB64[(v >> 6) & 63]);
    out.push_back(kB64[v & 63]);
    i += 3;
  }
  size_t rest = in.size() - i;
  if (rest == 1) {
    uint32_t v = uint8_t(in[i]) << 16;
    out.push_back(kB64[(v >> 18) & 63]);
    out.push_back(kB64[(v >> 12) & 63]);
    out.append("==");
  } else if (rest == 2) {
    uint32_t v = (uint8_t(in[i]) << 16) | (uint8_t(in[i + 1]) << 8);
    out.push_back(kB64[(v >> 18) & 63]);
    out.push_back(kB64[(v >> 12) & 63]);
    out.push_back(kB64[(v >> 6) & 63]);
    out.push_back('=');
  }
  return out;
}

std::optional<std::string> base64_decode(std::string_view in) {
  if (in.size() % 4 != 0) return std::nullopt;
  static int8_t rev[256];
  static bool init = [] {
    for (int i = 0; i < 256; i++) rev[i] = -1;
    for (int i = 0; i < 64; i++) rev[uint8_t(kB64[i])] = int8_t(i);
    return true;
  }();
  (void)init;
  std::string out;
  out.reserve(in.size() / 4 * 3);
  for (size_t i = 0; i < in.size(); i += 4) {
    int pad = 0;
    uint32_t v = 0;
    for (int j = 0; j < 4; j++) {
      char ch = in[i + j];
      if (ch == '=' && i + 4 == in.size() && j >= 2) {
        pad++;
        v <<= 6;
        continue;
      }
      if (pad > 0) return std::nullopt;  // '=' only at the very end
      int8_t d = rev[uint8_t(ch)];
      if (d < 0) return std::nullopt;
      v = (v << 6) | uint32_t(d);
    }
    out.push_back(char((v >> 16) & 0xff));
    if (pad < 2) out.push_back(char((v >> 8) & 0xff));
    if (pad < 1) out.push_back(char(v & 0xff));
  }
  return out;
}

// ---- zlib ------------------------------------------------------------------

std::string zdeflate(std::string_view in) {
  z_stream zs{};
  if (deflateInit(&zs, Z_DEFAULT_COMPRESSION) != Z_OK) throw std::runtime_error("deflateInit failed");
  std::string out;
  out.resize(deflateBound(&zs, in.size()));
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(in.data()));
  zs.avail_in = static_cast<uInt>(in.size());
  zs.next_out = reinterpret_cast<Bytef*>(out.data());
  zs.avail_out = static_cast<uInt>(out.size());
  int rc = deflate(&zs, Z_FINISH);
  deflateEnd(&zs);
  if (rc != Z_STREAM_END) throw std::runtime_error("deflate failed");
  out.resize(out.size() - zs.avail_out);
  return out;
}

std::string zinflate(std::string_view in) {
  constexpr size_t kMaxOut = size_t(256) << 20;  // refuse absurd expansions
  z_stream zs{};
  if (inflateInit(&zs) != Z_OK) throw std::runtime_error("inflateInit failed");
  std::string out;
  out.resize(std::max<size_t>(64, in.size() * 3));
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(in.data()));
  zs.avail_in = static_cast<uInt>(in.size());
  size_t written = 0;
  int rc;
  for (;;) {
    zs.next_out = reinterpret_cast<Bytef*>(out.data() + written);
    zs.avail_out = static_cast<uInt>(out.size() - written);
    rc = inflate(&zs, Z_NO_FLUSH);
    written = out.size() - zs.avail_out;
    if (rc == Z_STREAM_END) break;
    if (rc == Z_OK || rc == Z_BUF_ERROR) {
      if (out.size() >= kMaxOut) {
        inflateEnd(&zs);
        throw std::runtime_error("inflated output too large");
      }
      if (zs.avail_out == 0) out.resize(out.size() * 2);
      else if (rc == Z_BUF_ERROR) {
        inflateEnd(&zs);
        throw std::runtime_error("truncated deflate stream");
      }
      continue;
    }
    inflateEnd(&zs);
    throw std::runtime_error("bad deflate stream");
  }
  bool trailing = zs.avail_in != 0;
  inflateEnd(&zs);
  if (trailing) throw std::runtime_error("trailing bytes after deflate stream");
  out.resize(written);
  return out;
}

// ---- parser ----------------------------------------------------------------

namespace {

struct Lexer {
  std::string_view src;
  size_t pos = 0;
  int line = 1;
  int col = 1;

  explicit Lexer(std::string_view s) : src(s) {}

  [[noreturn]] void fail(const std::string& msg) const { throw ParseError(line, col, msg); }

  bool eof() const { return pos >= src.size(); }
  char peek() const { return src[pos]; }

  char advance() {
    char ch = src[pos++];
    if (ch == '\n') {
      line++;
      col = 1;
    } else {
      col++;
    }
    return ch;
  }

  void skip_ws() {
    while (!eof()) {
      char ch = peek();
      if (ch == '#') {
        while (!eof() && peek() != '\n') advance();
      } else if (ch == ' ' || ch == '\t' || ch == '\r' || ch == '\n') {
        advance();
      } else {
        break;
      }
    }
  }

  // Bare token: statement keyword, field name, foreach path, base64 blob.
  // stop_eq lets `add name = expr` terminate the name at '='; elsewhere '='
  // stays part of the token (base64 padding).
  std::string word(bool stop_eq = false) {
    skip_ws();
    if (eof()) fail("unexpected end of program");
    std::string w;
    while (!eof()) {
      char ch = peek();
      if (ch == ' ' || ch == '\t' || ch == '\r' || ch == '\n' || ch == ';' || ch == '{' ||
          ch == '}' || ch == '#' || ch == '"' || (stop_eq && ch == '='))
        break;
      w.push_back(advance());
    }
    if (w.empty()) fail("expected a name");
    return w;
  }

  void expect(char ch, const char* what) {
    skip_ws();
    if (eof() || peek() != ch) fail(std::string("expected '") + ch + "' " + what);
    advance();
  }

  bool accept(char ch) {
    skip_ws();
    if (!eof() && peek() == ch) {
      advance();
      return true;
    }
    return false;
  }
};

std::shared_ptr<const Expr> parse_expr(Lexer& lx);

std::shared_ptr<const Expr> parse_factor(Lexer& lx) {
  lx.skip_ws();
  if (lx.eof()) lx.fail("unexpected end of expression");
  char ch = lx.peek();
  if (ch == '(') {
    lx.advance();
    auto e = parse_expr(lx);
    lx.expect(')', "to close group");
    return e;
  }
  if (ch == '-') {
    lx.advance();
    auto inner = parse_factor(lx);
    if (inner->kind == Expr::Kind::Num) {
      auto e = std::make_shared<Expr>();
      e->kind = Expr::Kind::Num;
      e->num = -inner->num;
      return e;
    }
    auto zero = std::make_shared<Expr>();
    zero->kind = Expr::Kind::Num;
    auto e = std::make_shared<Expr>();
    e->kind = Expr::Kind::BinOp;
    e->op = '-';
    e->lhs = zero;
    e->rhs = inner;
    return e;
  }
  if (ch == '"') {
    lx.advance();
    std::string s;
    for (;;) {
      if (lx.eof()) lx.fail("unterminated string literal");
      char c2 = lx.advance();
      if (c2 == '"') break;
      if (c2 == '\\') {
        if (lx.eof()) lx.fail("unterminated escape");
        char esc = lx.advance();
        switch (esc) {
          case 'n': s.push_back('\n'); break;
          case 't': s.push_back('\t'); break;
          case '"': s.push_back('"'); break;
          case '\\': s.push_back('\\'); break;
          default: lx.fail("unknown escape in string literal");
        }
      } else {
        s.push_back(c2);
      }
    }
    auto e = std::make_shared<Expr>();
    e->kind = Expr::Kind::Str;
    e->text = std::move(s);
    return e;
  }
  if ((ch >= '0' && ch <= '9') || ch == '.') {
    std::string num;
    while (!lx.eof()) {
      char c2 = lx.peek();
      if ((c2 >= '0' && c2 <= '9') || c2 == '.' || c2 == 'e' || c2 == 'E' ||
          ((c2 == '+' || c2 == '-') && !num.empty() && (num.back() == 'e' || num.back() == 'E'))) {
        num.push_back(lx.advance());
      } else {
        break;
      }
    }
    errno = 0;
    char* end = nullptr;
    double v = std::strtod(num.c_str(), &end);
    if (end != num.c_str() + num.size() || errno == ERANGE) lx.fail("bad number literal '" + num + "'");
    auto e = std::make_shared<Expr>();
    e->kind = Expr::Kind::Num;
    e->num = v;
    return e;
  }
  if ((ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') || ch == '_') {
    std::string id;
    while (!lx.eof()) {
      char c2 = lx.peek();
      if ((c2 >= 'a' && c2 <= 'z') || (c2 >= 'A' && c2 <= 'Z') || (c2 >= '0' && c2 <= '9') ||
          c2 == '_')
        id.push_back(lx.advance());
      else
        break;
    }
    auto e = std::make_shared<Expr>();
    e->kind = Expr::Kind::Field;
    e->text = std::move(id);
    return e;
  }
  lx.fail(std::string("unexpected character '") + ch + "' in expression");
}

std::shared_ptr<const Expr> parse_term(Lexer& lx) {
  auto e = parse_factor(lx);
  for (;;) {
    lx.skip_ws();
    if (lx.eof()) break;
    char ch = lx.peek();
    if (ch != '*' && ch != '/') break;
    lx.advance();
    auto rhs = parse_factor(lx);
    auto b = std::make_shared<Expr>();
    b->kind = Expr::Kind::BinOp;
    b->op = ch;
    b->lhs = e;
    b->rhs = rhs;
    e = b;
  }
  return e;
}

std::shared_ptr<const Expr> parse_expr(Lexer& lx) {
  auto e = parse_term(lx);
  for (;;) {
    lx.skip_ws();
    if (lx.eof()) break;
    char ch = lx.peek();
    if (ch != '+' && ch != '-') break;
    lx.advance();
    auto rhs = parse_term(lx);
    auto b = std::make_shared<Expr>();
    b->kind = Expr::Kind::BinOp;
    b->op = ch;
    b->lhs = e;
    b->rhs = rhs;
    e = b;
  }
  return e;
}

std::vector<TransformStep> parse_steps(Lexer& lx, bool in_block) {
  std::vector<TransformStep> steps;
  for (;;) {
    lx.skip_ws();
    if (lx.eof()) {
      if (in_block) lx.fail("missing '}'");
      break;
    }
    if (lx.peek() == '}') {
      if (!in_block) lx.fail("unmatched '}'");
      lx.advance();
      lx.accept(';');
      break;
    }
    std::string kw = lx.word();
    TransformStep s;
    if (kw == "rename") {
      s.op = TransformStep::Op::RenameField;
      s.a = lx.word();
      s.b = lx.word();
      lx.expect(';', "after rename");
    } else if (kw == "add") {
      s.op = TransformStep::Op::AddField;
      s.a = lx.word(/*stop_eq=*/true);
      lx.expect('=', "after field name");
      s.expr = parse_expr(lx);
      lx.expect(';', "after add expression");
    } else if (kw == "delete") {
      s.op = TransformStep::Op::DeleteField;
      s.a = lx.word();
      lx.expect(';', "after delete");
    } else if (kw == "foreach") {
      s.op = TransformStep::Op::ForEach;
      s.a = lx.word();
      lx.expect('{', "to open foreach block");
      s.body = parse_steps(lx, true);
    } else if (kw == "compress" || kw == "decompress" || kw == "set") {
      if (in_block) lx.fail(kw + " operates on whole values and cannot appear inside foreach");
      if (kw == "set") {
        s.op = TransformStep::Op::SetBytes;
        std::string b64 = lx.word();
        auto raw = base64_decode(b64);
        if (!raw) lx.fail("set expects base64 bytes");
        s.a = std::move(*raw);
      } else {
        s.op = kw == "compress" ? TransformStep::Op::Compress : TransformStep::Op::Decompress;
      }
      lx.expect(';', "after statement");
    } else {
      lx.fail("unknown statement '" + kw + "'");
    }
    steps.push_back(std::move(s));
  }
  return steps;
}

std::string step_text(const TransformStep& s) {
  switch (s.op) {
    case TransformStep::Op::RenameField: return "rename " + s.a + " " + s.b;
    case TransformStep::Op::AddField: return "add " + s.a;
    case TransformStep::Op::DeleteField: return "delete " + s.a;
    case TransformStep::Op::ForEach: return "foreach " + s.a;
    case TransformStep::Op::Compress: return "compress";
    case TransformStep::Op::Decompress: return "decompress";
    case TransformStep::Op::SetBytes: return "set";
  }
  return "?";
}

}  // namespace

TransformProgram parse_program(std::string_view source) {
  Lexer lx(source);
  TransformProgram p;
  p.steps = parse_steps(lx, false);
  p.source = std::string(source);
  return p;
}

// ---- evaluation ------------------------------------------------------------

namespace {

struct EvalValue {
  bool is_num;
  double num = 0;
  std::string str;
};

EvalValue eval_expr(const Expr& e, const json& ctx, const std::string& key, const std::string& step) {
  auto fail = [&](const std::string& why) -> EvalValue { throw TransformFailed(key, step, why); };
  switch (e.kind) {
    case Expr::Kind::Num:
      return {true, e.num, {}};
    case Expr::Kind::Str:
      return {false, 0, e.text};
    case Expr::Kind::Field: {
      if (!ctx.is_object()) return fail("expression context is not a JSON object");
      auto it = ctx.find(e.text);
      if (it == ctx.end()) return fail("field '" + e.text + "' missing");
      if (it->is_number()) return {true, it->get<double>(), {}};
      if (it->is_string()) return {false, 0, it->get<std::string>()};
      return fail("field '" + e.text + "' is neither number nor string");
    }
    case Expr::Kind::BinOp: {
      EvalValue l = eval_expr(*e.lhs, ctx, key, step);
      EvalValue r = eval_expr(*e.rhs, ctx, key, step);
      if (l.is_num && r.is_num) {
        switch (e.op) {
          case '+': return {true, l.num + r.num, {}};
          case '-': return {true, l.num - r.num, {}};
          case '*': return {true, l.num * r.num, {}};
          case '/':
            if (r.num == 0) return fail("division by zero");
            return {true, l.num / r.num, {}};
        }
      }
      if (!l.is_num && !r.is_num && e.op == '+') return {false, 0, l.str + r.str};
      return fail(std::string("operator '") + e.op + "' needs two numbers (or '+' on two strings)");
    }
  }
  return fail("bad expression");
}

void apply_json_steps(const std::vector<TransformStep>& steps, json& node, const std::string& key);

void apply_json_step(const TransformStep& s, json& node, const std::string& key) {
  const std::string st = step_text(s);
  auto fail = [&](const std::string& why) { throw TransformFailed(key, st, why); };
  switch (s.op) {
    case TransformStep::Op::RenameField: {
      if (!node.is_object()) fail("value is not a JSON object");
      auto it = node.find(s.a);
      if (it == node.end()) fail("field '" + s.a + "' missing");
      if (node.contains(s.b)) fail("field '" + s.b + "' already present");
      json moved = std::move(*it);
      node.erase(it);
      node[s.b] = std::move(moved);
      break;
    }
    case TransformStep::Op::AddField: {
      if (!node.is_object()) fail("value is not a JSON object");
      EvalValue v = eval_expr(*s.expr, node, key, st);
      node[s.a] = v.is_num ? json(v.num) : json(v.str);
      break;
    }
    case TransformStep::Op::DeleteField: {
      if (!node.is_object()) fail("value is not a JSON object");
      if (node.erase(s.a) == 0) fail("field '" + s.a + "' missing");
      break;
    }
    case TransformStep::Op::ForEach: {
      json* cur = &node;
      size_t start = 0;
      while (start <= s.a.size()) {
        size_t slash = s.a.find('/', start);
        std::string seg = s.a.substr(start, slash == std::string::npos ? std::string::npos : slash - start);
        if (seg.empty()) fail("empty path segment");
        if (!cur->is_object()) fail("path segment '" + seg + "' applied to non-object");
        auto it = cur->find(seg);
        if (it == cur->end()) fail("path segment '" + seg + "' missing");
        cur = &*it;
        if (slash == std::string::npos) break;
        start = slash + 1;
      }
      if (!cur->is_array()) fail("foreach target is not an array");
      for (auto& elem : *cur) apply_json_steps(s.body, elem, key);
      break;
    }
    default:
      fail("byte-level step in JSON context");
  }
}

void apply_json_steps(const std::vector<TransformStep>& steps, json& node, const std::string& key) {
  for (const auto& s : steps) apply_json_step(s, node, key);
}

bool is_byte_step(const TransformStep& s) {
  return s.op == TransformStep::Op::Compress || s.op == TransformStep::Op::Decompress ||
         s.op == TransformStep::Op::SetBytes;
}

std::string run_program(const TransformProgram& p, const std::string& key, std::string bytes) {
  std::optional<json> doc;
  auto to_bytes = [&] {
    if (doc) {
      bytes = doc->dump();
      doc.reset();
    }
  };
  for (const auto& s : p.steps) {
    if (is_byte_step(s)) {
      to_bytes();
      switch (s.op) {
        case TransformStep::Op::Compress:
          bytes = zdeflate(bytes);
          break;
        case TransformStep::Op::Decompress:
          try {
            bytes = zinflate(bytes);
          } catch (const std::runtime_error& e) {
            throw TransformFailed(key, "decompress", e.what());
          }
          break;
        case TransformStep::Op::SetBytes:
          bytes = s.a;
          break;
        default:
          break;
      }
    } else {
      if (!doc) {
        json parsed = json::parse(bytes, nullptr, false);
        if (parsed.is_discarded()) throw TransformFailed(key, step_text(s), "value is not valid JSON");
        doc = std::move(parsed);
      }
      apply_json_step(s, *doc, key);
    }
  }
  to_bytes();
  return bytes;
}

}  // namespace

// ---- registry and application ------------------------------------------------

void TransformerRegistry::put_program(const std::string& name, TransformProgram p) {
  by_name_[name] = std::move(p);
}

void TransformerRegistry::put_native(const std::string& name, NativeFn fn) {
  by_name_[name] = std::move(fn);
}

const Transformer* TransformerRegistry::find(const std::string& name) const {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : &it->second;
}

std::map<std::string, std::string> TransformerRegistry::program_sources() const {
  std::map<std::string, std::string> out;
  for (const auto& [name, t] : by_name_) {
    if (const auto* p = std::get_if<TransformProgram>(&t)) out[name] = p->source;
  }
  return out;
}

std::vector<std::string> TransformerRegistry::native_names() const {
  std::vector<std::string> out;
  for (const auto& [name, t] : by_name_) {
    if (std::holds_alternative<NativeFn>(t)) out.push_back(name);
  }
  return out;
}

Payload apply_transformer(const Transformer& t, const std::string& key, const Payload& value) {
  if (const auto* fn = std::get_if<NativeFn>(&t)) {
    try {
      return (*fn)(key, value);
    } catch (const TransformFailed&) {
      throw;
    } catch (const std::exception& e) {
      throw TransformFailed(key, "native", e.what());
    }
  }
  const auto& prog = std::get<TransformProgram>(t);
  auto one = [&](const Bytes& b) { return run_program(prog, key, b); };
  switch (kind_of(value)) {
    case PayloadKind::Str:
      return one(std::get<StrPayload>(value));
    case PayloadKind::List: {
      ListPayload out;
      out.reserve(std::get<ListPayload>(value).size());
      for (const auto& e : std::get<ListPayload>(value)) out.push_back(one(e));
      return out;
    }
    case PayloadKind::Set: {
      SetPayload out;
      for (const auto& e : std::get<SetPayload>(value)) out.insert(one(e));
      return out;
    }
    case PayloadKind::Hash: {
      HashPayload out;
      for (const auto& [f, v] : std::get<HashPayload>(value)) out[f] = one(v);
      return out;
    }
    case PayloadKind::ZSet: {
      // Member names are the transformed bytes; scores ride along. On a
      // collision the later (larger original) member's score wins.
      ZSetPayload out;
      for (const auto& [m, score] : std::get<ZSetPayload>(value)) out[one(m)] = score;
      return out;
    }
  }
  throw TransformFailed(key, "apply", "unknown payload kind");
}

Payload apply_chain(const TransformerRegistry& reg, const std::vector<std::string>& names,
                    const std::string& key, Payload value) {
  for (const auto& name : names) {
    const Transformer* t = reg.find(name);
    if (!t) throw TransformFailed(key, "chain", "transformer unavailable: " + name);
    value = apply_transformer(*t, key, value);
  }
  return value;
}

}  // namespace moltkv
