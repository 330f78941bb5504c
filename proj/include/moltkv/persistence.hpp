#pragma once

#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "moltkv/payload.hpp"
#include "moltkv/registry.hpp"

namespace moltkv {

// One operation inside a log frame.
struct LogOp {
  enum class Kind : uint8_t {
    DataWrite = 0,
    DataDelete = 1,
    Install = 2,
    SnapshotMark = 3,
    ChainCreate = 4,
  };
  Kind kind;

  std::string key;       // DataWrite, DataDelete
  Payload payload;       // DataWrite
  uint32_t version = 0;  // DataWrite, ChainCreate

  UpdateSpec spec;                              // Install
  std::map<std::string, std::string> programs;  // Install: declarative sources
  std::vector<std::string> natives;             // Install: names resolved to natives

  std::string prefix;  // ChainCreate

  static LogOp write(std::string key, Payload payload, uint32_t version);
  static LogOp del(std::string key);
  static LogOp chain_create(std::string prefix, uint32_t version);
};

// All operations of one frame committed together: a command's mutations are
// either all replayed or none. Frames carry strictly increasing sequence
// numbers and a CRC; replay stops at the first hole or damaged byte.
struct LogFrame {
  uint64_t seq = 0;
  std::vector<LogOp> ops;
};

struct LogReplay {
  std::vector<LogFrame> frames;
  uint64_t valid_bytes = 0;  // prefix of the file that parsed cleanly
};

// Missing file yields an empty replay; a bad header throws IoError.
LogReplay read_log(const std::filesystem::path& file);

// Append-only command log. Opening an existing log truncates any torn tail.
class Journal {
 public:
  explicit Journal(std::filesystem::path dir, uint32_t flush_every = 1);
  ~Journal();

  Journal(const Journal&) = delete;
  Journal& operator=(const Journal&) = delete;

  // sync forces the frame to disk before returning (installs, marks).
  uint64_t append(const std::vector<LogOp>& ops, bool sync);
  void flush(bool sync);

  uint64_t next_seq() const { return next_seq_; }
  uint64_t append_snapshot_mark();

  // Wipes the log down to a fresh header once a snapshot covering it has
  // been written. Sequence numbers keep counting up.
  void restart();

  const std::filesystem::path& log_path() const { return path_; }

 private:
  void write_header();

  std::filesystem::path path_;
  std::FILE* f_ = nullptr;
  uint64_t next_seq_ = 1;
  uint32_t flush_every_ = 1;
  uint32_t unflushed_ = 0;
};

// Point-in-time image of everything: registry, transformer sources, native
// names, and the full keyspace. mark_seq ties it to the log position it
// covers.
struct SnapshotData {
  uint64_t mark_seq = 0;
  RegistryImage registry;
  std::map<std::string, std::string> programs;
  std::vector<std::string> natives;
  std::vector<std::tuple<std::string, Payload, uint32_t>> entries;
};

// Written to a temp file and renamed into place; a crash never leaves a
// half-written snapshot under the final name.
void write_snapshot(const std::filesystem::path& dir, const SnapshotData& data);

// nullopt when no snapshot exists. Throws IoError when one exists but fails
// its checksum or structure; refusing a damaged snapshot beats loading lies.
std::optional<SnapshotData> read_snapshot(const std::filesystem::path& dir);

std::filesystem::path log_file(const std::filesystem::path& dir);
std::filesystem::path snapshot_file(const std::filesystem::path& dir);

}  // namespace moltkv
