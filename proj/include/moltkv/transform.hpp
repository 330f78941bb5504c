#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "moltkv/payload.hpp"

namespace moltkv {

// Value transformers, written in a small declarative language or supplied as
// host-registered native functions. Transformers only see the key and the
// value; the signature gives them no handle to the rest of the store.
//
// Program grammar (this exact text is also the wire and on-disk form):
//
//   program    := { statement }
//   statement  := "rename" name name ";"
//               | "add" name "=" expr ";"
//               | "delete" name ";"
//               | "foreach" path "{" { statement } "}" [";"]
//               | "compress" ";"
//               | "decompress" ";"
//               | "set" base64 ";"
//   expr       := term { ("+"|"-") term }
//   term       := factor { ("*"|"/") factor }
//   factor     := number | string-literal | identifier | "(" expr ")"
//
// "#" starts a comment through end of line. rename/add/delete operate on the
// fields of the current JSON object: the document root, or each array element
// inside a foreach. foreach paths descend object fields, '/'-separated; the
// last component must be an array. Identifiers in expressions read sibling
// fields (numbers or strings); '+' concatenates strings. compress/decompress
// are zlib deflate over the raw value bytes; set replaces the bytes with a
// constant (base64-encoded in the source).

struct Expr;

struct TransformStep {
  enum class Op : uint8_t { RenameField, AddField, DeleteField, ForEach, Compress, Decompress, SetBytes };
  Op op;
  std::string a;                     // rename: old name; add/delete: name; foreach: path; set: raw bytes
  std::string b;                     // rename: new name
  std::shared_ptr<const Expr> expr;  // add
  std::vector<TransformStep> body;   // foreach
};

struct Expr {
  enum class Kind : uint8_t { Num, Str, Field, BinOp };
  Kind kind;
  double num = 0;
  std::string text;  // Str literal or Field name
  char op = 0;       // BinOp: + - * /
  std::shared_ptr<const Expr> lhs, rhs;
};

struct TransformProgram {
  std::vector<TransformStep> steps;
  std::string source;  // exact text the program was parsed from
};

// Throws ParseError with line/column on bad input.
TransformProgram parse_program(std::string_view source);

// Native transformers receive the (new-name) key and the stale payload.
using NativeFn = std::function<Payload(const std::string& key, const Payload& value)>;

using Transformer = std::variant<TransformProgram, NativeFn>;

// Known transformers by name. Programs arrive with updates; natives are
// registered by the host process. A name can be recorded in the version
// history while its native body is missing (e.g. after recovery in a host
// that never registered it); migrations through it fail until re-registered,
// everything else keeps working.
class TransformerRegistry {
 public:
  void put_program(const std::string& name, TransformProgram p);
  void put_native(const std::string& name, NativeFn fn);
  const Transformer* find(const std::string& name) const;
  bool contains(const std::string& name) const { return find(name) != nullptr; }

  // Declarative program sources plus the names of registered natives,
  // for snapshots.
  std::map<std::string, std::string> program_sources() const;
  std::vector<std::string> native_names() const;

 private:
  std::map<std::string, Transformer> by_name_;
};

// Applies one transformer. Containers are transformed element-wise: list
// elements, set members, hash values and zset member names each run the
// program; hash field names and zset scores pass through. All-or-nothing:
// throws TransformFailed and leaves no partial result.
Payload apply_transformer(const Transformer& t, const std::string& key, const Payload& value);

// Folds a chain of transformer names, oldest first. Throws TransformFailed
// if a name is missing from the registry.
Payload apply_chain(const TransformerRegistry& reg, const std::vector<std::string>& names,
                    const std::string& key, Payload value);

// zlib deflate helpers used by compress/decompress steps (and tests).
std::string zdeflate(std::string_view in);
std::string zinflate(std::string_view in);  // throws std::runtime_error on bad stream

std::string base64_encode(std::string_view in);
std::optional<std::string> base64_decode(std::string_view in);

}  // namespace moltkv
