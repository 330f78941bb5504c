#include "moltkv/protocol.hpp"

#include <cctype>
#include <cerrno>
#include <cstdlib>
#include <cstring>

#include "moltkv/errors.hpp"

namespace moltkv {

namespace {

// "$123" -> 123; anything else is a framing error.
size_t parse_bulk_len(const std::string& tok, size_t cap) {
  if (tok.size() < 2) throw ProtocolError("empty bulk marker");
  uint64_t n = 0;
  for (size_t i = 1; i < tok.size(); i++) {
    if (!std::isdigit(static_cast<unsigned char>(tok[i])))
      throw ProtocolError("bad bulk length '" + tok + "'");
    n = n * 10 + static_cast<uint64_t>(tok[i] - '0');
    if (n > cap) throw ProtocolError("bulk too large");
  }
  return static_cast<size_t>(n);
}

}  // namespace

std::optional<Request> RequestParser::next() {
  for (;;) {
    if (pending_) {
      size_t need = pending_->line_end;
      for (auto& [idx, len] : pending_->bulks) need += len + 2;
      if (buf_.size() < need) return std::nullopt;
      size_t at = pending_->line_end;
      for (auto& [idx, len] : pending_->bulks) {
        pending_->req.args[idx].assign(buf_, at, len);
        if (buf_[at + len] != '\r' || buf_[at + len + 1] != '\n')
          throw ProtocolError("bulk payload not \\r\\n terminated");
        at += len + 2;
      }
      Request req = std::move(pending_->req);
      pending_.reset();
      buf_.erase(0, at);
      scan_ = 0;
      return req;
    }

    const char* nl = static_cast<const char*>(memchr(buf_.data() + scan_, '\n', buf_.size() - scan_));
    if (!nl) {
      if (buf_.size() > kMaxLine) throw ProtocolError("command line too long");
      scan_ = buf_.size();
      return std::nullopt;
    }
    size_t line_end = static_cast<size_t>(nl - buf_.data()) + 1;
    size_t len = line_end - 1;
    if (len > 0 && buf_[len - 1] == '\r') len--;
    if (len > kMaxLine) throw ProtocolError("command line too long");

    if (len == 0) {  // blank keepalive line
      buf_.erase(0, line_end);
      scan_ = 0;
      continue;
    }

    Pending p;
    p.line_end = line_end;
    size_t i = 0;
    while (i < len) {
      while (i < len && buf_[i] == ' ') i++;
      if (i >= len) break;
      size_t start = i;
      while (i < len && buf_[i] != ' ') i++;
      std::string tok = buf_.substr(start, i - start);
      if (p.req.verb.empty() && p.req.args.empty() && p.bulks.empty()) {
        if (tok[0] == '$') throw ProtocolError("verb must be inline");
        for (char& c : tok) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
        p.req.verb = std::move(tok);
      } else if (tok[0] == '$') {
        p.bulks.emplace_back(p.req.args.size(), parse_bulk_len(tok, kMaxBulk));
        p.req.args.emplace_back();
      } else {
        p.req.args.push_back(std::move(tok));
      }
      if (p.req.args.size() > kMaxArgs) throw ProtocolError("too many arguments");
    }
    if (p.req.verb.empty()) throw ProtocolError("missing verb");

    if (p.bulks.empty()) {
      Request req = std::move(p.req);
      buf_.erase(0, line_end);
      scan_ = 0;
      return req;
    }
    pending_ = std::move(p);
    // Loop around; the payload may already be buffered.
  }
}

// ---- replies ---------------------------------------------------------------

namespace {

// Error text rides on the command line; newlines would desync the stream.
std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\r' || c == '\n') c = ' ';
  return s;
}

}  // namespace

std::string reply_ok() { return "+OK\r\n"; }
std::string reply_pong() { return "+PONG\r\n"; }

std::string reply_err(const std::string& msg) { return "-ERR " + one_line(msg) + "\r\n"; }

std::string reply_mismatch(const std::string& prefix, uint32_t current) {
  return "-MISMATCH " + std::to_string(current) + " " + one_line(prefix) + "\r\n";
}

std::string reply_goaway() { return "-GOAWAY superseded declaration\r\n"; }

std::string reply_int(int64_t n) { return ":" + std::to_string(n) + "\r\n"; }

std::string reply_bulk(const std::string& bytes) {
  return "$" + std::to_string(bytes.size()) + "\r\n" + bytes + "\r\n";
}

std::string reply_nil() { return "$-1\r\n"; }

std::string reply_array(const std::vector<std::string>& items) {
  std::string out = "*" + std::to_string(items.size()) + "\r\n";
  for (const auto& it : items) out += reply_bulk(it);
  return out;
}

// ---- reply parsing -----------------------------------------------------------

std::optional<Reply> ReplyParser::next() {
  size_t p = pos_;  // committed only when a whole reply is buffered

  auto line = [&]() -> std::optional<std::string> {
    const char* nl = static_cast<const char*>(memchr(buf_.data() + p, '\n', buf_.size() - p));
    if (!nl) return std::nullopt;
    size_t end = static_cast<size_t>(nl - buf_.data());
    size_t len = end - p;
    if (len > 0 && buf_[end - 1] == '\r') len--;
    std::string s = buf_.substr(p, len);
    p = end + 1;
    return s;
  };

  auto bulk_body = [&](const std::string& header) -> std::optional<std::optional<std::string>> {
    // Returns nullopt when incomplete; inner nullopt encodes nil.
    if (header == "$-1") return std::optional<std::string>{};
    size_t n = parse_bulk_len(header, 64u << 20);
    if (buf_.size() - p < n + 2) return std::nullopt;
    std::string body = buf_.substr(p, n);
    if (buf_[p + n] != '\r' || buf_[p + n + 1] != '\n') throw ProtocolError("bulk not terminated");
    p += n + 2;
    return std::optional<std::string>{std::move(body)};
  };

  auto l0 = line();
  if (!l0) return std::nullopt;
  if (l0->empty()) throw ProtocolError("empty reply line");

  Reply r;
  switch ((*l0)[0]) {
    case '+':
      r.kind = Reply::Kind::Status;
      r.text = l0->substr(1);
      break;
    case '-':
      r.kind = Reply::Kind::Error;
      r.text = l0->substr(1);
      break;
    case ':': {
      r.kind = Reply::Kind::Int;
      errno = 0;
      char* end = nullptr;
      r.num = std::strtoll(l0->c_str() + 1, &end, 10);
      if (end == l0->c_str() + 1 || *end != '\0' || errno == ERANGE)
        throw ProtocolError("bad integer reply");
      break;
    }
    case '$': {
      auto b = bulk_body(*l0);
      if (!b) return std::nullopt;
      if (*b) {
        r.kind = Reply::Kind::Bulk;
        r.bulk = std::move(**b);
      } else {
        r.kind = Reply::Kind::Nil;
      }
      break;
    }
    case '*': {
      size_t n = parse_bulk_len(*l0, 1u << 20);
      r.kind = Reply::Kind::Array;
      r.array.reserve(n);
      for (size_t i = 0; i < n; i++) {
        auto lh = line();
        if (!lh) return std::nullopt;
        if (lh->empty() || (*lh)[0] != '$') throw ProtocolError("array element must be a bulk");
        auto b = bulk_body(*lh);
        if (!b) return std::nullopt;
        if (!*b) throw ProtocolError("nil inside array");
        r.array.push_back(std::move(**b));
      }
      break;
    }
    default:
      throw ProtocolError("unknown reply type '" + l0->substr(0, 1) + "'");
  }

  pos_ = p;
  if (pos_ > 4096 && pos_ > buf_.size() / 2) {
    buf_.erase(0, pos_);
    pos_ = 0;
  }
  return r;
}

}  // namespace moltkv
