#include "moltkv/client.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstdlib>
#include <cstring>

#include "moltkv/errors.hpp"

namespace moltkv {

Client::~Client() { close(); }

Client::Client(Client&& o) noexcept
    : fd_(o.fd_),
      replies_(std::move(o.replies_)),
      outbox_(std::move(o.outbox_)),
      queued_(o.queued_),
      mismatch_(std::move(o.mismatch_)) {
  o.fd_ = -1;
  o.queued_ = 0;
}

Client& Client::operator=(Client&& o) noexcept {
  if (this != &o) {
    close();
    fd_ = o.fd_;
    replies_ = std::move(o.replies_);
    outbox_ = std::move(o.outbox_);
    queued_ = o.queued_;
    mismatch_ = std::move(o.mismatch_);
    o.fd_ = -1;
    o.queued_ = 0;
  }
  return *this;
}

void Client::connect(const std::string& host, uint16_t port) {
  close();
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) throw IoError("socket: " + std::string(strerror(errno)));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    close();
    throw IoError("bad address '" + host + "'");
  }
  if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    int e = errno;
    close();
    throw IoError("connect " + host + ":" + std::to_string(port) + ": " + strerror(e));
  }
  int one = 1;
  setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

void Client::close() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
  replies_ = ReplyParser();
  outbox_.clear();
  queued_ = 0;
}

std::string Client::encode(const std::string& verb, const std::vector<std::string>& args) {
  std::string line = verb;
  std::string payload;
  for (const auto& a : args) {
    line += " $" + std::to_string(a.size());
    payload += a;
    payload += "\r\n";
  }
  line += "\r\n";
  return line + payload;
}

void Client::send_raw(const std::string& data) {
  if (fd_ < 0) throw IoError("not connected");
  size_t off = 0;
  while (off < data.size()) {
    ssize_t n = ::send(fd_, data.data() + off, data.size() - off, MSG_NOSIGNAL);
    if (n <= 0) {
      if (n < 0 && errno == EINTR) continue;
      throw IoError("connection lost while sending");
    }
    off += static_cast<size_t>(n);
  }
}

Reply Client::read_reply() {
  for (;;) {
    if (auto r = replies_.next()) return *r;
    char buf[1 << 16];
    ssize_t n = ::recv(fd_, buf, sizeof buf, 0);
    if (n == 0) throw IoError("connection closed by server");
    if (n < 0) {
      if (errno == EINTR) continue;
      throw IoError("recv: " + std::string(strerror(errno)));
    }
    replies_.feed(buf, static_cast<size_t>(n));
  }
}

Reply Client::command(const std::string& verb, const std::vector<std::string>& args) {
  if (queued_ > 0) throw IoError("flush queued commands first");
  send_raw(encode(verb, args));
  return read_reply();
}

void Client::queue(const std::string& verb, const std::vector<std::string>& args) {
  outbox_ += encode(verb, args);
  queued_++;
}

std::vector<Reply> Client::flush() {
  send_raw(outbox_);
  outbox_.clear();
  std::vector<Reply> out;
  out.reserve(queued_);
  while (out.size() < queued_) out.push_back(read_reply());
  queued_ = 0;
  return out;
}

Reply Client::unwrap(Reply r) {
  if (r.kind == Reply::Kind::Error) throw CommandError(r.text);
  return r;
}

bool Client::hello(const std::vector<std::pair<std::string, uint32_t>>& decls) {
  std::vector<std::string> args;
  for (const auto& [prefix, version] : decls) {
    args.push_back(prefix);
    args.push_back(std::to_string(version));
  }
  Reply r = command("HELLO", args);
  if (r.kind == Reply::Kind::Error) {
    if (r.text.rfind("MISMATCH ", 0) == 0) {
      mismatch_ = r.text;
      return false;
    }
    throw CommandError(r.text);
  }
  return true;
}

void Client::auth(const std::string& token) { unwrap(command("AUTH", {token})); }

void Client::upgrade(const std::string& document) { unwrap(command("UPGRADE", {document})); }

uint64_t Client::migrate(const std::string& prefix) {
  Reply r = unwrap(command("MIGRATE", prefix.empty() ? std::vector<std::string>{}
                                                     : std::vector<std::string>{prefix}));
  return static_cast<uint64_t>(r.num);
}

std::vector<std::pair<std::string, uint64_t>> Client::stats() {
  Reply r = unwrap(command("STATS"));
  std::vector<std::pair<std::string, uint64_t>> out;
  for (const auto& item : r.array) {
    size_t eq = item.find('=');
    if (eq == std::string::npos) continue;
    out.emplace_back(item.substr(0, eq), std::strtoull(item.c_str() + eq + 1, nullptr, 10));
  }
  return out;
}

std::optional<std::string> Client::get(const std::string& key) {
  Reply r = unwrap(command("GET", {key}));
  if (r.kind == Reply::Kind::Nil) return std::nullopt;
  return std::move(r.bulk);
}

bool Client::set(const std::string& key, const std::string& value, const std::string& flag) {
  std::vector<std::string> args{key, value};
  if (!flag.empty()) args.push_back(flag);
  Reply r = unwrap(command("SET", args));
  return r.kind == Reply::Kind::Status;
}

uint64_t Client::del(const std::vector<std::string>& keys) {
  return static_cast<uint64_t>(unwrap(command("DEL", keys)).num);
}

bool Client::exists(const std::string& key) {
  return unwrap(command("EXISTS", {key})).num == 1;
}

}  // namespace moltkv
