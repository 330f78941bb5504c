#include "moltkv/server.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cctype>
#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <cstring>

#include "moltkv/errors.hpp"

namespace moltkv {

namespace {

bool send_all(int fd, const std::string& data) {
  size_t off = 0;
  while (off < data.size()) {
    ssize_t n = ::send(fd, data.data() + off, data.size() - off, MSG_NOSIGNAL);
    if (n <= 0) {
      if (n < 0 && errno == EINTR) continue;
      return false;
    }
    off += static_cast<size_t>(n);
  }
  return true;
}

int64_t parse_i64(const std::string& s) {
  errno = 0;
  char* end = nullptr;
  int64_t v = std::strtoll(s.c_str(), &end, 10);
  if (end == s.c_str() || *end != '\0' || errno == ERANGE)
    throw CommandError("value is not an integer");
  return v;
}

uint32_t parse_u32(const std::string& s) {
  int64_t v = parse_i64(s);
  if (v < 0 || v > 0xFFFFFFFFll) throw CommandError("value is not an integer");
  return static_cast<uint32_t>(v);
}

double parse_double(const std::string& s) {
  errno = 0;
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw CommandError("value is not a number");
  return v;
}

std::string fmt_double(double d) {
  char b[64];
  std::snprintf(b, sizeof b, "%.17g", d);
  return b;
}

[[noreturn]] void wrong_arity(const std::string& verb) {
  std::string lower = verb;
  for (char& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  throw CommandError("wrong number of arguments for '" + lower + "'");
}

}  // namespace

Server::Server(Engine& engine, ServerConfig cfg) : engine_(engine), cfg_(std::move(cfg)) {}

Server::~Server() { stop(); }

void Server::start() {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw IoError("socket: " + std::string(strerror(errno)));
  int one = 1;
  setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);

  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(cfg_.port);
  if (inet_pton(AF_INET, cfg_.host.c_str(), &addr.sin_addr) != 1)
    throw IoError("bad listen address '" + cfg_.host + "'");
  if (bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0)
    throw IoError("bind " + cfg_.host + ":" + std::to_string(cfg_.port) + ": " + strerror(errno));
  if (listen(listen_fd_, 64) != 0) throw IoError("listen: " + std::string(strerror(errno)));

  socklen_t alen = sizeof addr;
  getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &alen);
  port_ = ntohs(addr.sin_port);

  acceptor_ = std::thread([this] { accept_loop(); });
}

void Server::stop() {
  if (stopping_.exchange(true)) {
    if (acceptor_.joinable()) acceptor_.join();
    return;
  }
  if (listen_fd_ >= 0) {
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    listen_fd_ = -1;
  }
  {
    std::lock_guard<std::mutex> lk(mu_);
    for (int fd : live_fds_) ::shutdown(fd, SHUT_RDWR);
  }
  if (acceptor_.joinable()) acceptor_.join();
  std::vector<std::thread> ts;
  {
    std::lock_guard<std::mutex> lk(mu_);
    ts.swap(threads_);
  }
  for (auto& t : ts) t.join();
  shutdown_cv_.notify_all();
}

void Server::wait_for_shutdown() {
  std::unique_lock<std::mutex> lk(mu_);
  shutdown_cv_.wait(lk, [this] { return shutdown_requested_ || stopping_.load(); });
}

void Server::accept_loop() {
  for (;;) {
    int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) {
      if (errno == EINTR) continue;
      return;  // listener closed
    }
    if (stopping_.load()) {
      ::close(fd);
      return;
    }
    int one = 1;
    setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    std::lock_guard<std::mutex> lk(mu_);
    live_fds_.insert(fd);
    threads_.emplace_back([this, fd] { serve(fd); });
  }
}

void Server::serve(int fd) {
  Conn c;
  c.fd = fd;
  c.sid = engine_.open_session();
  c.authed = cfg_.admin_token.empty();

  RequestParser parser;
  std::string out;
  char buf[1 << 16];
  for (;;) {
    ssize_t n = ::recv(fd, buf, sizeof buf, 0);
    if (n == 0) break;
    if (n < 0) {
      if (errno == EINTR) continue;
      break;
    }
    parser.feed(buf, static_cast<size_t>(n));
    out.clear();
    try {
      while (auto req = parser.next()) {
        out += dispatch(c, *req);
        if (c.closing) break;
      }
    } catch (const ProtocolError& e) {
      out += reply_err(std::string("protocol: ") + e.what());
      c.closing = true;
    }
    if (!out.empty() && !send_all(fd, out)) break;
    if (c.closing) break;
  }

  engine_.close_session(c.sid);
  {
    std::lock_guard<std::mutex> lk(mu_);
    live_fds_.erase(fd);
  }
  ::close(fd);
}

std::string Server::dispatch(Conn& c, const Request& req) {
  const std::string& v = req.verb;
  try {
    if (v == "PING") {
      if (!req.args.empty()) wrong_arity(v);
      return reply_pong();
    }
    if (v == "AUTH") {
      if (req.args.size() != 1) wrong_arity(v);
      if (cfg_.admin_token.empty() || req.args[0] == cfg_.admin_token) {
        c.authed = true;
        return reply_ok();
      }
      return reply_err("bad admin token");
    }

    if (c.helloed && engine_.kicked(c.sid)) {
      c.closing = true;
      return reply_goaway();
    }

    if (v == "HELLO") {
      if (c.helloed) return reply_err("hello already sent on this connection");
      if (req.args.size() % 2 != 0) wrong_arity(v);
      std::vector<std::pair<std::string, uint32_t>> decls;
      for (size_t i = 0; i < req.args.size(); i += 2)
        decls.emplace_back(req.args[i], parse_u32(req.args[i + 1]));
      HelloResult h = engine_.hello(c.sid, decls);
      if (!h.ok) return reply_mismatch(h.prefix, h.current);
      c.helloed = true;
      return reply_ok();
    }
    if (!c.helloed) return reply_err("hello first");

    if (v == "UPGRADE" || v == "MIGRATE" || v == "SNAPSHOT" || v == "SHUTDOWN") {
      if (!c.authed) return reply_err("admin command needs AUTH");
      if (v == "UPGRADE") {
        if (req.args.size() != 1) wrong_arity(v);
        engine_.install_update(parse_update_document(req.args[0]));
        return reply_ok();
      }
      if (v == "MIGRATE") {
        if (req.args.size() > 1) wrong_arity(v);
        EagerResult r =
            req.args.empty() ? engine_.eager_migrate_all() : engine_.eager_migrate(req.args[0]);
        if (!r.error.empty()) return reply_err(r.error);
        return reply_int(static_cast<int64_t>(r.migrated));
      }
      if (v == "SNAPSHOT") {
        if (!req.args.empty()) wrong_arity(v);
        engine_.snapshot();
        return reply_ok();
      }
      // SHUTDOWN: acknowledge, close this connection, wake wait_for_shutdown.
      if (!req.args.empty()) wrong_arity(v);
      c.closing = true;
      {
        std::lock_guard<std::mutex> lk(mu_);
        shutdown_requested_ = true;
      }
      shutdown_cv_.notify_all();
      return reply_ok();
    }

    if (v == "STATS") {
      if (!req.args.empty()) wrong_arity(v);
      MigrationStats s = engine_.stats();
      std::vector<std::string> kv;
      auto put = [&](const char* name, uint64_t val) {
        kv.push_back(std::string(name) + "=" + std::to_string(val));
      };
      put("commands", s.commands);
      put("lazy_migrations", s.lazy_migrations);
      put("lazy_key_renames", s.lazy_key_renames);
      put("lazy_value_updates", s.lazy_value_updates);
      put("residue_deletes", s.residue_deletes);
      put("eager_migrations", s.eager_migrations);
      put("installs", s.installs);
      put("keys", engine_.key_count());
      put("bypass", engine_.bypassed() ? 1 : 0);
      return reply_array(kv);
    }

    return data_command(req);
  } catch (const CommandError& e) {
    return reply_err(e.what());
  } catch (const ParseError& e) {
    return reply_err(e.what());
  } catch (const IoError& e) {
    return reply_err(e.what());
  }
}

std::string Server::data_command(const Request& req) {
  const std::string& v = req.verb;
  const auto& a = req.args;

  if (v == "GET") {
    if (a.size() != 1) wrong_arity(v);
    auto r = engine_.get(a[0]);
    return r ? reply_bulk(*r) : reply_nil();
  }
  if (v == "SET") {
    SetMode mode = SetMode::Plain;
    if (a.size() == 3) {
      if (a[2] == "NX")
        mode = SetMode::Nx;
      else if (a[2] == "XX")
        mode = SetMode::Xx;
      else
        throw CommandError("syntax error");
    } else if (a.size() != 2) {
      wrong_arity(v);
    }
    return engine_.set(a[0], a[1], mode) ? reply_ok() : reply_nil();
  }
  if (v == "DEL") {
    if (a.empty()) wrong_arity(v);
    return reply_int(static_cast<int64_t>(engine_.del(a)));
  }
  if (v == "EXISTS") {
    if (a.size() != 1) wrong_arity(v);
    return reply_int(engine_.exists(a[0]) ? 1 : 0);
  }
  if (v == "LPUSH") {
    if (a.size() < 2) wrong_arity(v);
    return reply_int(engine_.lpush(a[0], {a.begin() + 1, a.end()}));
  }
  if (v == "LPOP") {
    if (a.size() != 1) wrong_arity(v);
    auto r = engine_.lpop(a[0]);
    return r ? reply_bulk(*r) : reply_nil();
  }
  if (v == "LRANGE") {
    if (a.size() != 3) wrong_arity(v);
    return reply_array(engine_.lrange(a[0], parse_i64(a[1]), parse_i64(a[2])));
  }
  if (v == "SADD") {
    if (a.size() < 2) wrong_arity(v);
    return reply_int(engine_.sadd(a[0], {a.begin() + 1, a.end()}));
  }
  if (v == "SPOP") {
    if (a.size() != 1) wrong_arity(v);
    auto r = engine_.spop(a[0]);
    return r ? reply_bulk(*r) : reply_nil();
  }
  if (v == "SMEMBERS") {
    if (a.size() != 1) wrong_arity(v);
    return reply_array(engine_.smembers(a[0]));
  }
  if (v == "HSET") {
    if (a.size() != 3) wrong_arity(v);
    return reply_int(engine_.hset(a[0], a[1], a[2]));
  }
  if (v == "HGET") {
    if (a.size() != 2) wrong_arity(v);
    auto r = engine_.hget(a[0], a[1]);
    return r ? reply_bulk(*r) : reply_nil();
  }
  if (v == "HGETALL") {
    if (a.size() != 1) wrong_arity(v);
    std::vector<std::string> flat;
    for (auto& [f, val] : engine_.hgetall(a[0])) {
      flat.push_back(f);
      flat.push_back(val);
    }
    return reply_array(flat);
  }
  if (v == "ZADD") {
    if (a.size() != 3) wrong_arity(v);
    return reply_int(engine_.zadd(a[0], parse_double(a[1]), a[2]));
  }
  if (v == "ZSCORE") {
    if (a.size() != 2) wrong_arity(v);
    auto r = engine_.zscore(a[0], a[1]);
    return r ? reply_bulk(fmt_double(*r)) : reply_nil();
  }

  std::string lower = v;
  for (char& ch : lower) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return reply_err("unknown command '" + lower + "'");
}

}  // namespace moltkv
