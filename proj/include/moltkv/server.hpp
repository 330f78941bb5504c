#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "moltkv/engine.hpp"
#include "moltkv/protocol.hpp"

namespace moltkv {

struct ServerConfig {
  std::string host = "127.0.0.1";
  uint16_t port = 0;        // 0: kernel picks, read back via port()
  std::string admin_token;  // empty: UPGRADE/MIGRATE/SNAPSHOT/SHUTDOWN need no AUTH
};

// TCP front end, one thread per connection. Connections must HELLO (possibly
// with no declarations) before anything but PING/AUTH; a session whose
// declaration was superseded by an install gets -GOAWAY instead of its next
// reply and is closed.
class Server {
 public:
  Server(Engine& engine, ServerConfig cfg = {});
  ~Server();

  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  void start();  // binds and begins accepting; throws IoError
  void stop();   // closes everything and joins; idempotent
  void wait_for_shutdown();  // blocks until a SHUTDOWN command lands

  uint16_t port() const { return port_; }

 private:
  struct Conn {
    int fd = -1;
    uint64_t sid = 0;
    bool helloed = false;
    bool authed = false;
    bool closing = false;  // reply already says goodbye
  };

  void accept_loop();
  void serve(int fd);
  std::string dispatch(Conn& c, const Request& req);
  std::string data_command(const Request& req);

  Engine& engine_;
  ServerConfig cfg_;
  int listen_fd_ = -1;
  uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};

  std::thread acceptor_;
  std::mutex mu_;
  std::vector<std::thread> threads_;
  std::set<int> live_fds_;
  bool shutdown_requested_ = false;
  std::condition_variable shutdown_cv_;
};

}  // namespace moltkv
