#include "moltkv/persistence.hpp"

#include <zlib.h>

#include <cerrno>
#include <cstring>

#include <fcntl.h>
#include <unistd.h>

#include "moltkv/binio.hpp"
#include "moltkv/errors.hpp"

namespace moltkv {

namespace {

constexpr char kLogMagic[4] = {'K', 'V', 'L', 'G'};
constexpr char kSnapMagic[4] = {'K', 'V', 'L', 'V'};
constexpr uint16_t kFormat = 1;
constexpr size_t kMaxFrameBody = size_t(512) << 20;

uint32_t crc(std::string_view data) {
  return static_cast<uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(data.data()), static_cast<uInt>(data.size())));
}

void encode_op(std::string& out, const LogOp& op) {
  using namespace binio;
  put_u8(out, static_cast<uint8_t>(op.kind));
  switch (op.kind) {
    case LogOp::Kind::DataWrite:
      put_str(out, op.key);
      put_u32(out, op.version);
      encode_payload(out, op.payload);
      break;
    case LogOp::Kind::DataDelete:
      put_str(out, op.key);
      break;
    case LogOp::Kind::Install: {
      put_u16(out, static_cast<uint16_t>(op.spec.changes.size()));
      for (const auto& ch : op.spec.changes) {
        put_str(out, ch.old_prefix);
        put_str(out, ch.new_prefix);
        put_u32(out, ch.from_version);
        put_u32(out, ch.to_version);
        put_u16(out, static_cast<uint16_t>(ch.transformers.size()));
        for (const auto& t : ch.transformers) put_str(out, t);
      }
      put_u16(out, static_cast<uint16_t>(op.programs.size()));
      for (const auto& [name, src] : op.programs) {
        put_str(out, name);
        put_str(out, src);
      }
      put_u16(out, static_cast<uint16_t>(op.natives.size()));
      for (const auto& n : op.natives) put_str(out, n);
      break;
    }
    case LogOp::Kind::SnapshotMark:
      break;
    case LogOp::Kind::ChainCreate:
      put_str(out, op.prefix);
      put_u32(out, op.version);
      break;
  }
}

LogOp decode_op(binio::Cursor& c) {
  LogOp op;
  uint8_t kind = c.u8();
  if (kind > static_cast<uint8_t>(LogOp::Kind::ChainCreate))
    throw std::out_of_range("unknown log op kind");
  op.kind = static_cast<LogOp::Kind>(kind);
  switch (op.kind) {
    case LogOp::Kind::DataWrite: {
      op.key = c.str();
      op.version = c.u32();
      size_t pos = c.pos;
      op.payload = decode_payload(std::string_view(c.data, c.size), pos);
      c.pos = pos;
      break;
    }
    case LogOp::Kind::DataDelete:
      op.key = c.str();
      break;
    case LogOp::Kind::Install: {
      uint16_t nch = c.u16();
      for (uint16_t i = 0; i < nch; i++) {
        UpdateChange ch;
        ch.old_prefix = c.str();
        ch.new_prefix = c.str();
        ch.from_version = c.u32();
        ch.to_version = c.u32();
        uint16_t nt = c.u16();
        for (uint16_t j = 0; j < nt; j++) ch.transformers.push_back(c.str());
        op.spec.changes.push_back(std::move(ch));
      }
      uint16_t np = c.u16();
      for (uint16_t i = 0; i < np; i++) {
        auto name = c.str();
        op.programs[std::move(name)] = c.str();
      }
      uint16_t nn = c.u16();
      for (uint16_t i = 0; i < nn; i++) op.natives.push_back(c.str());
      break;
    }
    case LogOp::Kind::SnapshotMark:
      break;
    case LogOp::Kind::ChainCreate:
      op.prefix = c.str();
      op.version = c.u32();
      break;
  }
  return op;
}

std::string read_file(const std::filesystem::path& p) {
  std::FILE* f = std::fopen(p.c_str(), "rb");
  if (!f) throw IoError("cannot open " + p.string() + ": " + std::strerror(errno));
  std::string data;
  char buf[1 << 16];
  size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, f)) > 0) data.append(buf, n);
  bool err = std::ferror(f);
  std::fclose(f);
  if (err) throw IoError("read failed on " + p.string());
  return data;
}

void fsync_file(std::FILE* f) {
  std::fflush(f);
  ::fdatasync(::fileno(f));
}

void fsync_dir(const std::filesystem::path& dir) {
  int fd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY);
  if (fd >= 0) {
    ::fsync(fd);
    ::close(fd);
  }
}

}  // namespace

LogOp LogOp::write(std::string key, Payload payload, uint32_t version) {
  LogOp op;
  op.kind = Kind::DataWrite;
  op.key = std::move(key);
  op.payload = std::move(payload);
  op.version = version;
  return op;
}

LogOp LogOp::del(std::string key) {
  LogOp op;
  op.kind = Kind::DataDelete;
  op.key = std::move(key);
  return op;
}

LogOp LogOp::chain_create(std::string prefix, uint32_t version) {
  LogOp op;
  op.kind = Kind::ChainCreate;
  op.prefix = std::move(prefix);
  op.version = version;
  return op;
}

std::filesystem::path log_file(const std::filesystem::path& dir) { return dir / "store.log"; }
std::filesystem::path snapshot_file(const std::filesystem::path& dir) { return dir / "store.snap"; }

LogReplay read_log(const std::filesystem::path& file) {
  LogReplay out;
  if (!std::filesystem::exists(file)) return out;
  std::string data = read_file(file);
  if (data.size() < 6) {
    out.valid_bytes = 0;
    return out;
  }
  if (std::memcmp(data.data(), kLogMagic, 4) != 0)
    throw IoError(file.string() + " is not a log file");
  uint16_t fmt = uint8_t(data[4]) | (uint16_t(uint8_t(data[5])) << 8);
  if (fmt != kFormat) throw IoError("unsupported log format " + std::to_string(fmt));

  size_t pos = 6;
  uint64_t expect_seq = 0;  // first frame fixes it
  while (pos + 8 <= data.size()) {
    binio::Cursor hdr(std::string_view(data).substr(pos, 8));
    uint32_t len = hdr.u32();
    uint32_t want_crc = hdr.u32();
    if (len > kMaxFrameBody || pos + 8 + len > data.size()) break;
    std::string_view body(data.data() + pos + 8, len);
    if (crc(body) != want_crc) break;
    binio::Cursor c(body);
    LogFrame frame;
    bool ok = true;
    try {
      frame.seq = c.u64();
      uint16_t n = c.u16();
      for (uint16_t i = 0; i < n; i++) frame.ops.push_back(decode_op(c));
      if (!c.done()) ok = false;
    } catch (const std::out_of_range&) {
      ok = false;
    } catch (const IoError&) {
      ok = false;
    }
    // Sequence must strictly increase; anything else is damage.
    if (!ok || (expect_seq != 0 && frame.seq <= expect_seq)) break;
    expect_seq = frame.seq;
    out.frames.push_back(std::move(frame));
    pos += 8 + len;
  }
  out.valid_bytes = pos;
  return out;
}

Journal::Journal(std::filesystem::path dir, uint32_t flush_every)
    : path_(log_file(dir)), flush_every_(flush_every == 0 ? 1 : flush_every) {
  std::filesystem::create_directories(dir);
  if (std::filesystem::exists(path_)) {
    LogReplay replay = read_log(path_);
    if (!replay.frames.empty()) next_seq_ = replay.frames.back().seq + 1;
    if (replay.valid_bytes >= 6) {
      // Drop any torn tail so appends continue from a clean boundary.
      if (replay.valid_bytes < std::filesystem::file_size(path_))
        std::filesystem::resize_file(path_, replay.valid_bytes);
      f_ = std::fopen(path_.c_str(), "ab");
      if (!f_) throw IoError("cannot append to " + path_.string());
    } else {
      // Not even a full header survived; start over.
      f_ = std::fopen(path_.c_str(), "wb");
      if (!f_) throw IoError("cannot rewrite " + path_.string());
      write_header();
    }
  } else {
    f_ = std::fopen(path_.c_str(), "wb");
    if (!f_) throw IoError("cannot create " + path_.string());
    write_header();
    fsync_dir(dir);
  }
}

Journal::~Journal() {
  if (f_) {
    flush(true);
    std::fclose(f_);
  }
}

void Journal::write_header() {
  std::string hdr(kLogMagic, 4);
  binio::put_u16(hdr, kFormat);
  if (std::fwrite(hdr.data(), 1, hdr.size(), f_) != hdr.size())
    throw IoError("log header write failed");
  fsync_file(f_);
}

uint64_t Journal::append(const std::vector<LogOp>& ops, bool sync) {
  std::string body;
  binio::put_u64(body, next_seq_);
  binio::put_u16(body, static_cast<uint16_t>(ops.size()));
  for (const auto& op : ops) encode_op(body, op);

  std::string frame;
  binio::put_u32(frame, static_cast<uint32_t>(body.size()));
  binio::put_u32(frame, crc(body));
  frame += body;
  if (std::fwrite(frame.data(), 1, frame.size(), f_) != frame.size())
    throw IoError("log append failed: " + std::string(std::strerror(errno)));

  unflushed_++;
  if (sync) {
    fsync_file(f_);
    unflushed_ = 0;
  } else if (unflushed_ >= flush_every_) {
    std::fflush(f_);
    unflushed_ = 0;
  }
  return next_seq_++;
}

void Journal::flush(bool sync) {
  if (sync) fsync_file(f_);
  else std::fflush(f_);
  unflushed_ = 0;
}

uint64_t Journal::append_snapshot_mark() {
  LogOp op;
  op.kind = LogOp::Kind::SnapshotMark;
  return append({op}, /*sync=*/true);
}

void Journal::restart() {
  std::fclose(f_);
  f_ = std::fopen(path_.c_str(), "wb");
  if (!f_) throw IoError("cannot restart " + path_.string());
  write_header();
}

void write_snapshot(const std::filesystem::path& dir, const SnapshotData& data) {
  std::filesystem::create_directories(dir);
  std::string out(kSnapMagic, 4);
  using namespace binio;
  put_u16(out, kFormat);
  put_u64(out, data.mark_seq);

  put_u32(out, static_cast<uint32_t>(data.registry.size()));
  for (const auto& chain : data.registry) {
    put_u32(out, static_cast<uint32_t>(chain.size()));
    for (const auto& rec : chain) {
      put_str(out, rec.prefix);
      put_u32(out, rec.version);
      put_u16(out, static_cast<uint16_t>(rec.transformers.size()));
      for (const auto& t : rec.transformers) put_str(out, t);
    }
  }
  put_u32(out, static_cast<uint32_t>(data.programs.size()));
  for (const auto& [name, src] : data.programs) {
    put_str(out, name);
    put_str(out, src);
  }
  put_u32(out, static_cast<uint32_t>(data.natives.size()));
  for (const auto& n : data.natives) put_str(out, n);

  put_u64(out, data.entries.size());
  for (const auto& [key, payload, version] : data.entries) {
    put_str(out, key);
    put_u32(out, version);
    encode_payload(out, payload);
  }
  put_u32(out, crc(out));  // trailing checksum covers header through last record

  std::filesystem::path final = snapshot_file(dir);
  std::filesystem::path tmp = final;
  tmp += ".tmp";
  std::FILE* f = std::fopen(tmp.c_str(), "wb");
  if (!f) throw IoError("cannot create " + tmp.string());
  bool ok = std::fwrite(out.data(), 1, out.size(), f) == out.size();
  fsync_file(f);
  std::fclose(f);
  if (!ok) {
    std::filesystem::remove(tmp);
    throw IoError("snapshot write failed");
  }
  std::filesystem::rename(tmp, final);
  fsync_dir(dir);
}

std::optional<SnapshotData> read_snapshot(const std::filesystem::path& dir) {
  std::filesystem::path p = snapshot_file(dir);
  if (!std::filesystem::exists(p)) return std::nullopt;
  std::string data = read_file(p);
  if (data.size() < 10 || std::memcmp(data.data(), kSnapMagic, 4) != 0)
    throw IoError(p.string() + " is not a snapshot");
  std::string_view body(data.data(), data.size() - 4);
  binio::Cursor tail(std::string_view(data).substr(data.size() - 4));
  if (crc(body) != tail.u32()) throw IoError("snapshot checksum mismatch; refusing to load");

  try {
    binio::Cursor c(body);
    c.pos = 4;
    uint16_t fmt = c.u16();
    if (fmt != kFormat) throw IoError("unsupported snapshot format " + std::to_string(fmt));
    SnapshotData out;
    out.mark_seq = c.u64();
    uint32_t nchains = c.u32();
    for (uint32_t i = 0; i < nchains; i++) {
      ChainImage chain;
      uint32_t nrecs = c.u32();
      for (uint32_t j = 0; j < nrecs; j++) {
        RecordImage rec;
        rec.prefix = c.str();
        rec.version = c.u32();
        uint16_t nt = c.u16();
        for (uint16_t k = 0; k < nt; k++) rec.transformers.push_back(c.str());
        chain.push_back(std::move(rec));
      }
      out.registry.push_back(std::move(chain));
    }
    uint32_t np = c.u32();
    for (uint32_t i = 0; i < np; i++) {
      auto name = c.str();
      out.programs[std::move(name)] = c.str();
    }
    uint32_t nn = c.u32();
    for (uint32_t i = 0; i < nn; i++) out.natives.push_back(c.str());
    uint64_t ne = c.u64();
    for (uint64_t i = 0; i < ne; i++) {
      auto key = c.str();
      uint32_t ver = c.u32();
      size_t pos = c.pos;
      Payload payload = decode_payload(body, pos);
      c.pos = pos;
      out.entries.emplace_back(std::move(key), std::move(payload), ver);
    }
    if (!c.done()) throw IoError("snapshot has trailing bytes");
    return out;
  } catch (const std::out_of_range&) {
    throw IoError("snapshot is structurally damaged");
  }
}

}  // namespace moltkv
