#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "moltkv/protocol.hpp"

namespace moltkv {

// Blocking TCP client. Every argument travels as a length-prefixed bulk, so
// keys and values are binary safe. command() is request/reply; queue()+flush()
// pipelines any number of requests over one round trip.
class Client {
 public:
  Client() = default;
  ~Client();

  Client(const Client&) = delete;
  Client& operator=(const Client&) = delete;
  Client(Client&& o) noexcept;
  Client& operator=(Client&& o) noexcept;

  void connect(const std::string& host, uint16_t port);  // throws IoError
  void close();
  bool connected() const { return fd_ >= 0; }

  Reply command(const std::string& verb, const std::vector<std::string>& args = {});

  void queue(const std::string& verb, const std::vector<std::string>& args = {});
  std::vector<Reply> flush();
  size_t queued() const { return queued_; }

  // ---- conveniences (throw CommandError on -ERR replies) --------------------
  // False (with mismatch detail) when the server rejects the declarations.
  bool hello(const std::vector<std::pair<std::string, uint32_t>>& decls = {});
  const std::string& mismatch() const { return mismatch_; }  // last HELLO rejection text

  void auth(const std::string& token);
  void upgrade(const std::string& document);
  uint64_t migrate(const std::string& prefix = {});  // empty: everything
  std::vector<std::pair<std::string, uint64_t>> stats();

  std::optional<std::string> get(const std::string& key);
  bool set(const std::string& key, const std::string& value, const std::string& flag = {});
  uint64_t del(const std::vector<std::string>& keys);
  bool exists(const std::string& key);

 private:
  static std::string encode(const std::string& verb, const std::vector<std::string>& args);
  void send_raw(const std::string& data);
  Reply read_reply();
  Reply unwrap(Reply r);  // throws CommandError on Error kind

  int fd_ = -1;
  ReplyParser replies_;
  std::string outbox_;
  size_t queued_ = 0;
  std::string mismatch_;
};

}  // namespace moltkv
