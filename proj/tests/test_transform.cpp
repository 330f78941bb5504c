#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <nlohmann/json.hpp>
#include <random>

#include "moltkv/errors.hpp"
#include "moltkv/transform.hpp"

using namespace moltkv;
using json = nlohmann::json;

// Sample purchase-order document used across the suite. The discount update
// renames price to fullPrice and derives discountedPrice = fullPrice - 3.
static const char* kOrderDoc =
    R"({"_id":"4BD8AE97C47016442AF4A580","customerid":99999,"name":"Foo Sushi Inc","since":"12/12/2012",)"
    R"("order":{"orderid":"UXWE-122012","orderdate":"12/12/2001","orderItems":[{"product":"Cookies","price":19.99}]}})";

static const char* kOrderProgram = R"(
  foreach order/orderItems {
    rename price fullPrice;
    add discountedPrice = fullPrice - 3.0;
  }
)";

// Expected output, frozen. Field order is normalized (sorted) and numbers use
// the shortest round-tripping form.
static const char* kOrderExpected =
    R"({"_id":"4BD8AE97C47016442AF4A580","customerid":99999,"name":"Foo Sushi Inc",)"
    R"("order":{"orderItems":[{"discountedPrice":16.99,"fullPrice":19.99,"product":"Cookies"}],)"
    R"("orderdate":"12/12/2001","orderid":"UXWE-122012"},"since":"12/12/2012"})";

static Bytes apply_str(const Transformer& t, const std::string& key, const Bytes& in) {
  return std::get<StrPayload>(apply_transformer(t, key, StrPayload(in)));
}

TEST_CASE("19.99 minus 3 lands exactly on the parsed 16.99 double") {
  // Both values share the same binade so the subtraction is exact; the
  // golden output below depends on this.
  CHECK(19.99 - 3.0 == std::stod("16.99"));
}

TEST_CASE("purchase order golden transform") {
  Transformer t = parse_program(kOrderProgram);
  Bytes out = apply_str(t, "order:1001", kOrderDoc);
  CHECK(out == kOrderExpected);
  // Structural comparison too, in case the frozen string ever drifts.
  json expected = json::parse(kOrderExpected);
  CHECK(json::parse(out) == expected);
  CHECK(expected["order"]["orderItems"][0]["fullPrice"] == 19.99);
  CHECK(expected["order"]["orderItems"][0]["discountedPrice"] == 16.99);
  CHECK_FALSE(expected["order"]["orderItems"][0].contains("price"));
}

TEST_CASE("golden transform agrees with hand-built JSON edits") {
  // Independent path: do the same edits with raw json operations.
  json doc = json::parse(kOrderDoc);
  for (auto& item : doc["order"]["orderItems"]) {
    double price = item["price"].get<double>();
    item.erase("price");
    item["fullPrice"] = price;
    item["discountedPrice"] = price - 3.0;
  }
  Transformer t = parse_program(kOrderProgram);
  CHECK(json::parse(apply_str(t, "k:1", kOrderDoc)) == doc);
  CHECK(doc.dump() == kOrderExpected);
}

TEST_CASE("deterministic output: same input, same bytes") {
  Transformer t = parse_program(kOrderProgram);
  CHECK(apply_str(t, "k:1", kOrderDoc) == apply_str(t, "k:1", kOrderDoc));
}

TEST_CASE("deflate round-trips arbitrary byte strings") {
  std::mt19937_64 rng(7);
  for (size_t len : {size_t(0), size_t(1), size_t(37), size_t(1000), size_t(100000), size_t(1) << 20}) {
    std::string data(len, '\0');
    for (auto& ch : data) ch = static_cast<char>(rng());
    CHECK(zinflate(zdeflate(data)) == data);
  }
  // Compressible data too.
  std::string rep(1 << 20, 'a');
  std::string z = zdeflate(rep);
  CHECK(z.size() < rep.size() / 100);
  CHECK(zinflate(z) == rep);
}

TEST_CASE("compress/decompress steps round-trip through programs") {
  Transformer comp = parse_program("compress;");
  Transformer decomp = parse_program("decompress;");
  Bytes body = "file contents: not json at all \x01\x02";
  Bytes packed = apply_str(comp, "skx:NODE:9", body);
  CHECK(packed != body);
  CHECK(apply_str(decomp, "skx:NODE:9", packed) == body);
}

TEST_CASE("decompress rejects non-deflate bytes") {
  Transformer decomp = parse_program("decompress;");
  CHECK_THROWS_AS(apply_str(decomp, "k:1", "plainly not compressed"), TransformFailed);
}

TEST_CASE("set replaces value bytes with a constant") {
  std::string blob = "raw\x00squashed";
  Transformer t = parse_program("set " + base64_encode(blob) + ";");
  CHECK(apply_str(t, "k:1", "whatever") == blob);
}

TEST_CASE("base64 round-trip and rejection") {
  std::mt19937_64 rng(11);
  for (size_t len = 0; len < 40; len++) {
    std::string data(len, '\0');
    for (auto& ch : data) ch = static_cast<char>(rng());
    auto back = base64_decode(base64_encode(data));
    REQUIRE(back.has_value());
    CHECK(*back == data);
  }
  CHECK_FALSE(base64_decode("abc").has_value());      // bad length
  CHECK_FALSE(base64_decode("ab=c").has_value());     // pad in the middle
  CHECK_FALSE(base64_decode("!!!!").has_value());     // bad alphabet
}

TEST_CASE("chain application equals sequential application") {
  TransformerRegistry reg;
  reg.put_program("step1", parse_program("rename a b;"));
  reg.put_program("step2", parse_program("add c = b * 2;"));
  Bytes doc = R"({"a":21})";
  Bytes chained = std::get<StrPayload>(
      apply_chain(reg, {"step1", "step2"}, "k:1", StrPayload(doc)));
  Bytes stepwise = apply_str(*reg.find("step2"), "k:1", apply_str(*reg.find("step1"), "k:1", doc));
  CHECK(chained == stepwise);
  CHECK(json::parse(chained) == json::parse(R"({"b":21,"c":42})"));
  // Order matters: the reverse chain cannot find its fields.
  CHECK_THROWS_AS(apply_chain(reg, {"step2", "step1"}, "k:1", StrPayload(doc)), TransformFailed);
}

TEST_CASE("missing transformer name aborts the chain") {
  TransformerRegistry reg;
  reg.put_program("known", parse_program("add x = 1;"));
  try {
    apply_chain(reg, {"known", "ghost"}, "k:1", StrPayload("{}"));
    FAIL("expected TransformFailed");
  } catch (const TransformFailed& e) {
    CHECK(e.reason.find("ghost") != std::string::npos);
  }
}

TEST_CASE("native transformers participate by name") {
  TransformerRegistry reg;
  reg.put_native("upper", [](const std::string&, const Payload& v) -> Payload {
    auto s = std::get<StrPayload>(v);
    for (auto& ch : s) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    return s;
  });
  reg.put_program("tag", parse_program("set " + base64_encode("done") + ";"));
  auto out = apply_chain(reg, {"upper"}, "k:1", StrPayload("abc"));
  CHECK(std::get<StrPayload>(out) == "ABC");
  // Natives see the key they are invoked for.
  std::string seen;
  reg.put_native("spy", [&](const std::string& key, const Payload& v) -> Payload {
    seen = key;
    return v;
  });
  apply_chain(reg, {"spy"}, "user:42", StrPayload("x"));
  CHECK(seen == "user:42");
}

TEST_CASE("containers transform element-wise") {
  Transformer t = parse_program("rename v w;");
  SUBCASE("list keeps order") {
    Payload out = apply_transformer(t, "k:1", ListPayload{R"({"v":1})", R"({"v":2})"});
    CHECK(std::get<ListPayload>(out) == ListPayload{R"({"w":1})", R"({"w":2})"});
  }
  SUBCASE("set members rewritten") {
    Payload out = apply_transformer(t, "k:1", SetPayload{R"({"v":1})", R"({"v":2})"});
    CHECK(std::get<SetPayload>(out) == SetPayload{R"({"w":1})", R"({"w":2})"});
  }
  SUBCASE("hash values rewritten, field names kept") {
    Payload out = apply_transformer(t, "k:1", HashPayload{{"f1", R"({"v":1})"}, {"f2", R"({"v":2})"}});
    CHECK(std::get<HashPayload>(out) == HashPayload{{"f1", R"({"w":1})"}, {"f2", R"({"w":2})"}});
  }
  SUBCASE("zset member names rewritten, scores kept") {
    Transformer setter = parse_program("set " + base64_encode("same") + ";");
    Payload out = apply_transformer(t, "k:1", ZSetPayload{{R"({"v":1})", 1.5}, {R"({"v":2})", 2.5}});
    CHECK(std::get<ZSetPayload>(out) == ZSetPayload{{R"({"w":1})", 1.5}, {R"({"w":2})", 2.5}});
    // Collisions collapse deterministically: the later member's score wins.
    Payload collided = apply_transformer(setter, "k:1", ZSetPayload{{"a", 1.0}, {"b", 2.0}});
    CHECK(std::get<ZSetPayload>(collided) == ZSetPayload{{"same", 2.0}});
  }
  SUBCASE("element failure aborts the whole apply") {
    CHECK_THROWS_AS(apply_transformer(t, "k:1", ListPayload{R"({"v":1})", R"({"nope":2})"}),
                    TransformFailed);
  }
}

TEST_CASE("expression evaluation") {
  auto run = [](const std::string& expr, const std::string& doc) {
    Transformer t = parse_program("add out = " + expr + ";");
    return json::parse(apply_str(t, "k:1", doc))["out"];
  };
  CHECK(run("2 + 3 * 4", "{}") == 14.0);
  CHECK(run("(2 + 3) * 4", "{}") == 20.0);
  CHECK(run("10 / 4", "{}") == 2.5);
  CHECK(run("-5 + 1", "{}") == -4.0);
  CHECK(run("a - b", R"({"a":10,"b":4})") == 6.0);
  CHECK(run(R"("code-" + region)", R"({"region":"eu"})") == "code-eu");
  CHECK(run(R"("a\"b\\c")", "{}") == "a\"b\\c");
  CHECK_THROWS_AS(run("1 / 0", "{}"), TransformFailed);
  CHECK_THROWS_AS(run("missing + 1", "{}"), TransformFailed);
  CHECK_THROWS_AS(run("a + 1", R"({"a":{"nested":true}})"), TransformFailed);
  CHECK_THROWS_AS(run(R"(1 + "s")", "{}"), TransformFailed);
}

TEST_CASE("rename and delete are strict") {
  CHECK_THROWS_AS(apply_str(parse_program("rename a b;"), "k:1", R"({"x":1})"), TransformFailed);
  CHECK_THROWS_AS(apply_str(parse_program("rename a b;"), "k:1", R"({"a":1,"b":2})"), TransformFailed);
  CHECK_THROWS_AS(apply_str(parse_program("delete a;"), "k:1", R"({"x":1})"), TransformFailed);
  CHECK(json::parse(apply_str(parse_program("delete a;"), "k:1", R"({"a":1,"x":2})")) ==
        json::parse(R"({"x":2})"));
}

TEST_CASE("foreach paths and nesting") {
  Bytes doc = R"({"a":{"b":[{"rows":[{"n":1},{"n":2}]},{"rows":[{"n":3}]}]}})";
  Transformer t = parse_program("foreach a/b { foreach rows { add m = n * 10; delete n; } }");
  json out = json::parse(apply_str(t, "k:1", doc));
  CHECK(out == json::parse(R"({"a":{"b":[{"rows":[{"m":10},{"m":20}]},{"rows":[{"m":30}]}]}})"));

  CHECK_THROWS_AS(apply_str(parse_program("foreach nope { delete x; }"), "k:1", "{}"),
                  TransformFailed);
  CHECK_THROWS_AS(apply_str(parse_program("foreach a { delete x; }"), "k:1", R"({"a":{"o":1}})"),
                  TransformFailed);
  CHECK_THROWS_AS(apply_str(parse_program("foreach a { delete x; }"), "k:1", R"({"a":[1,2]})"),
                  TransformFailed);
}

TEST_CASE("JSON steps demand JSON values") {
  CHECK_THROWS_AS(apply_str(parse_program("add x = 1;"), "k:1", "not json"), TransformFailed);
  // Byte steps do not care.
  CHECK_NOTHROW(apply_str(parse_program("compress;"), "k:1", "not json"));
}

TEST_CASE("parse errors carry position and reason") {
  auto expect_error = [](const std::string& src, int line) {
    try {
      parse_program(src);
      FAIL_CHECK("expected ParseError for: " << src);
    } catch (const ParseError& e) {
      CHECK(e.line == line);
    }
  };
  expect_error("bogus a b;", 1);
  expect_error("rename a b", 1);                   // missing ';'
  expect_error("foreach p {\n rename a b;\n", 3);  // unclosed block
  expect_error("}", 1);
  expect_error("add x = ;", 1);
  expect_error("add x = 1 +;", 1);
  expect_error("set not-base64!;", 1);
  expect_error("foreach p { compress; }", 1);      // byte step inside foreach
  CHECK_THROWS_AS(parse_program("rename a b; \xc3\x28;"), ParseError);
}

TEST_CASE("comments and whitespace are free-form; source text is preserved") {
  std::string src = "# discount pass\nforeach order/orderItems {\n  rename price fullPrice; # old name\n}\n";
  TransformProgram p = parse_program(src);
  CHECK(p.source == src);
  CHECK(p.steps.size() == 1);
  CHECK(p.steps[0].body.size() == 1);
}

TEST_CASE("empty program is valid and is the identity on JSON-free bytes") {
  Transformer t = parse_program("");
  CHECK(apply_str(t, "k:1", "anything at all") == "anything at all");
}
