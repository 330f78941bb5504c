#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace moltkv {

// Line-oriented request framing with bulk escapes for binary args.
//
//   GET order:1001\r\n
//   SET $10 $23\r\n<10 bytes>\r\n<23 bytes>\r\n
//
// The command line is space-separated tokens; a token `$<n>` stands for a
// binary argument whose n bytes (plus a closing \r\n) follow the line, in
// marker order. Anything else is taken literally, so a bare REPL works for
// keys without spaces. Replies are typed by their first byte:
//
//   +OK            -ERR msg        :42
//   $5\r\nhello\r\n    $-1 (nil)       *2\r\n$1\r\na\r\n$1\r\nb\r\n
//
// -MISMATCH <current> <prefix> and -GOAWAY reuse the error channel; clients
// that care split on the code word.

struct Request {
  std::string verb;  // uppercased
  std::vector<std::string> args;
};

class RequestParser {
 public:
  // Appends raw bytes from the connection.
  void feed(const char* data, size_t n) { buf_.append(data, n); }

  // Returns the next complete request, std::nullopt when more bytes are
  // needed. Throws ProtocolError when the stream is unsalvageable.
  std::optional<Request> next();

  size_t buffered() const { return buf_.size(); }

 private:
  std::string buf_;
  size_t scan_ = 0;  // how far we looked for \n already

  // A parsed command line whose bulk payloads have not all arrived yet.
  struct Pending {
    Request req;
    std::vector<std::pair<size_t, size_t>> bulks;  // arg index, byte length
    size_t line_end = 0;                           // offset just past the line's \n
  };
  std::optional<Pending> pending_;

  static constexpr size_t kMaxLine = 1 << 16;
  static constexpr size_t kMaxBulk = 64u << 20;
  static constexpr size_t kMaxArgs = 1024;
};

// ---- replies ---------------------------------------------------------------

std::string reply_ok();
std::string reply_pong();
std::string reply_err(const std::string& msg);
std::string reply_mismatch(const std::string& prefix, uint32_t current);
std::string reply_goaway();
std::string reply_int(int64_t n);
std::string reply_bulk(const std::string& bytes);
std::string reply_nil();
std::string reply_array(const std::vector<std::string>& items);

struct Reply {
  enum class Kind : uint8_t { Status, Error, Int, Bulk, Nil, Array } kind = Kind::Status;
  std::string text;                // Status ("OK"), Error (full message)
  int64_t num = 0;                 // Int
  std::string bulk;                // Bulk
  std::vector<std::string> array;  // Array (elements are always bulks here)

  bool ok() const { return kind == Kind::Status; }
};

class ReplyParser {
 public:
  void feed(const char* data, size_t n) { buf_.append(data, n); }
  std::optional<Reply> next();

 private:
  std::optional<std::string> take_line();
  std::string buf_;
  size_t pos_ = 0;  // consumed prefix, compacted between replies

  // Array in progress.
  std::optional<Reply> arr_;
  size_t arr_want_ = 0;
};

}  // namespace moltkv
