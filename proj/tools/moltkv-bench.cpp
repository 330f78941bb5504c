#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "moltkv/client.hpp"
#include "moltkv/errors.hpp"

using namespace moltkv;
using Clock = std::chrono::steady_clock;

namespace {

int64_t ms_since(Clock::time_point t0) {
  return std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - t0).count();
}

std::string random_bytes(std::mt19937_64& rng, size_t n) {
  std::string v(n, '\0');
  for (auto& c : v) c = static_cast<char>('a' + rng() % 26);
  return v;
}

struct Options {
  std::string host = "127.0.0.1";
  uint16_t port = 7611;
  std::string token;
  std::string workload = "uniform";
  uint64_t keys = 100000;
  uint64_t ops = 1000000;
  size_t value_size = 64;
  unsigned pipeline = 16;
  double write_ratio = 0.2;
  std::string prefix = "k:";
  int trials = 5;
  std::string mode = "lazy";  // amico: lazy|eager
  int warmup_seconds = 3;
  int max_seconds = 120;
  uint64_t seed = 1;
};

Client connect_admin(const Options& o) {
  Client c;
  c.connect(o.host, o.port);
  if (!o.token.empty()) c.auth(o.token);
  if (!c.hello()) throw CommandError(c.mismatch());
  return c;
}

double measure_rtt_ms(Client& c) {
  auto t0 = Clock::now();
  for (int i = 0; i < 100; i++) c.command("PING");
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count() / 100.0;
}

void load_keys(Client& c, const std::string& prefix, uint64_t n, size_t value_size,
               uint64_t seed) {
  std::mt19937_64 rng(seed);
  const unsigned batch = 64;
  for (uint64_t i = 0; i < n;) {
    unsigned in_batch = 0;
    for (; in_batch < batch && i < n; in_batch++, i++)
      c.queue("SET", {prefix + std::to_string(i), random_bytes(rng, value_size)});
    for (auto& r : c.flush())
      if (r.kind == Reply::Kind::Error) throw CommandError("load failed: " + r.text);
  }
}

uint64_t stat_of(Client& admin, const char* name) {
  for (auto& [k, v] : admin.stats())
    if (k == name) return v;
  return 0;
}

// ---- uniform ----------------------------------------------------------------

int run_uniform(const Options& o) {
  Client admin = connect_admin(o);
  Client c;
  c.connect(o.host, o.port);
  if (!c.hello({{o.prefix, 0}}) && !c.hello()) throw CommandError(c.mismatch());

  std::fprintf(stderr, "loading %llu keys...\n", static_cast<unsigned long long>(o.keys));
  load_keys(c, o.prefix, o.keys, o.value_size, o.seed);

  double rtt = measure_rtt_ms(admin);
  std::printf("# rtt_ms=%.3f\n", rtt);
  std::printf("second,qps,lazy_per_sec,paused\n");

  std::mt19937_64 rng(o.seed + 1);
  std::string value = random_bytes(rng, o.value_size);
  uint64_t done = 0;
  auto t0 = Clock::now();
  int64_t printed_through = 0;
  uint64_t second_ops = 0;
  uint64_t lazy_before = stat_of(admin, "lazy_migrations");

  while (done < o.ops) {
    for (unsigned b = 0; b < o.pipeline && done + b < o.ops; b++) {
      std::string key = o.prefix + std::to_string(rng() % o.keys);
      if (static_cast<double>(rng() % 1000) / 1000.0 < o.write_ratio)
        c.queue("SET", {key, value});
      else
        c.queue("GET", {key});
    }
    size_t got = c.flush().size();
    done += got;
    second_ops += got;

    int64_t sec = ms_since(t0) / 1000;
    if (sec > printed_through) {
      uint64_t lazy_now = stat_of(admin, "lazy_migrations");
      std::printf("%lld,%llu,%llu,0\n", static_cast<long long>(printed_through),
                  static_cast<unsigned long long>(second_ops),
                  static_cast<unsigned long long>(lazy_now - lazy_before));
      lazy_before = lazy_now;
      second_ops = 0;
      printed_through = sec;
    }
  }
  double wall_ms = static_cast<double>(ms_since(t0));
  std::printf("total_ops=%llu wall_ms=%.0f qps=%.0f\n",
              static_cast<unsigned long long>(done), wall_ms, 1000.0 * double(done) / wall_ms);
  return 0;
}

// ---- amico (rename a populated prefix, compare eager pause vs lazy gap) -------

struct GapRecorder {
  std::vector<int64_t> done_us;  // completion stamps relative to t0
  Clock::time_point t0 = Clock::now();
  void note() {
    done_us.push_back(
        std::chrono::duration_cast<std::chrono::microseconds>(Clock::now() - t0).count());
  }
  // Longest gap between consecutive completions inside [from_us, to_us].
  int64_t longest_gap_us(int64_t from_us, int64_t to_us) const {
    int64_t best = 0, prev = from_us;
    for (int64_t t : done_us) {
      if (t < from_us || t > to_us) continue;
      best = std::max(best, t - prev);
      prev = t;
    }
    return best;
  }
};

int run_amico(const Options& o) {
  std::vector<double> pauses_ms;
  for (int trial = 0; trial < o.trials; trial++) {
    Client admin = connect_admin(o);
    std::string tag = std::to_string(o.seed) + "_" + std::to_string(trial) + ":";
    std::string old_prefix = "am" + tag;
    std::string new_prefix = "fr" + tag;

    Client loader;
    loader.connect(o.host, o.port);
    if (!loader.hello({{old_prefix, 0}})) throw CommandError(loader.mismatch());
    load_keys(loader, old_prefix, o.keys, o.value_size, o.seed + uint64_t(trial));
    loader.close();

    // The observer never declares anything, so it is never kicked; gaps in
    // its completion stream are genuine service stalls, which is what the
    // eager-vs-lazy comparison is about. The declared worker's gap measures
    // the client-side resync story instead.
    GapRecorder obs_rec;
    std::atomic<bool> stop{false};
    std::thread observer([&] {
      std::mt19937_64 rng(o.seed + 200 + uint64_t(trial));
      Client w;
      w.connect(o.host, o.port);
      if (!w.hello()) return;
      std::string obs_prefix = "obs" + tag;
      while (!stop.load(std::memory_order_relaxed)) {
        try {
          w.command("SET", {obs_prefix + std::to_string(rng() % 64), "x"});
          obs_rec.note();
        } catch (const IoError&) {
          return;
        }
      }
    });

    GapRecorder rec;
    rec.t0 = obs_rec.t0;  // one shared timeline
    std::atomic<long long> goaways{0};
    std::thread worker([&] {
      std::mt19937_64 rng(o.seed + 100 + uint64_t(trial));
      Client w;
      w.connect(o.host, o.port);
      if (!w.hello({{old_prefix, 0}})) return;
      bool renamed = false;
      while (!stop.load(std::memory_order_relaxed)) {
        std::string key =
            (renamed ? new_prefix : old_prefix) + std::to_string(rng() % o.keys);
        try {
          w.get(key);
          rec.note();
        } catch (const CommandError& e) {  // -GOAWAY lands here
          goaways++;
          renamed = true;
          w.close();
          for (;;) {
            try {
              w.connect(o.host, o.port);
              if (w.hello({{new_prefix, 1}})) break;
            } catch (const IoError&) {
            }
            w.close();
          }
        } catch (const IoError&) {
          if (stop.load()) return;
          w.close();
          try {
            w.connect(o.host, o.port);
            if (!w.hello({{renamed ? new_prefix : old_prefix, renamed ? 1u : 0u}})) return;
          } catch (const IoError&) {
            return;
          }
        }
      }
    });

    std::this_thread::sleep_for(std::chrono::milliseconds(400));
    int64_t upgrade_at_us =
        std::chrono::duration_cast<std::chrono::microseconds>(Clock::now() - rec.t0).count();
    admin.upgrade("change " + old_prefix + " " + new_prefix + " 0 1\n");
    double migrate_ms = 0;
    if (o.mode == "eager") {
      auto m0 = Clock::now();
      admin.migrate(new_prefix);
      migrate_ms = std::chrono::duration<double, std::milli>(Clock::now() - m0).count();
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(800));
    stop.store(true);
    worker.join();
    observer.join();

    int64_t window_end_us =
        upgrade_at_us + 2000000 + static_cast<int64_t>(migrate_ms * 1000.0);
    double pause_ms =
        static_cast<double>(obs_rec.longest_gap_us(upgrade_at_us - 200000, window_end_us)) /
        1000.0;
    double resync_ms =
        static_cast<double>(rec.longest_gap_us(upgrade_at_us - 200000, window_end_us)) / 1000.0;
    pauses_ms.push_back(pause_ms);
    std::printf("trial=%d mode=%s pause_ms=%.3f client_resync_ms=%.3f goaways=%lld "
                "migrate_ms=%.3f\n",
                trial, o.mode.c_str(), pause_ms, resync_ms, goaways.load(), migrate_ms);
  }

  std::sort(pauses_ms.begin(), pauses_ms.end());
  size_t n = pauses_ms.size();
  double median = pauses_ms[n / 2];
  double siqr = (pauses_ms[(3 * n) / 4] - pauses_ms[n / 4]) / 2.0;
  std::printf("pause_ms=%.3f trials=%d median=%.3f siqr=%.3f\n", median, o.trials, median, siqr);
  return 0;
}

// ---- redisfs (rename + compress under live traffic, watch the lazy tail) ------

int run_redisfs(const Options& o) {
  // Seed names the chain so repeated runs against one server don't collide.
  std::string old_prefix = "fsn" + std::to_string(o.seed) + ":";
  std::string new_prefix = "fsv" + std::to_string(o.seed) + ":";

  Client admin = connect_admin(o);
  Client c;
  c.connect(o.host, o.port);
  if (!c.hello({{old_prefix, 0}})) throw CommandError(c.mismatch());

  std::fprintf(stderr, "loading %llu keys...\n", static_cast<unsigned long long>(o.keys));
  load_keys(c, old_prefix, o.keys, o.value_size, o.seed);

  double rtt = measure_rtt_ms(admin);
  std::printf("# rtt_ms=%.3f\n", rtt);
  std::printf("second,qps,lazy_per_sec,paused\n");

  std::mt19937_64 rng(o.seed + 1);
  std::string value = random_bytes(rng, o.value_size);
  auto t0 = Clock::now();
  int64_t printed_through = 0;
  uint64_t second_ops = 0;
  uint64_t settled_before = 0;
  bool upgraded = false;
  int idle_seconds = 0;
  std::string live_prefix = old_prefix;

  auto settled_count = [&] {
    return stat_of(admin, "lazy_migrations") + stat_of(admin, "residue_deletes");
  };
  settled_before = settled_count();

  for (;;) {
    for (unsigned b = 0; b < o.pipeline; b++) {
      std::string key = live_prefix + std::to_string(rng() % o.keys);
      if (static_cast<double>(rng() % 1000) / 1000.0 < o.write_ratio)
        c.queue("SET", {key, value});
      else
        c.queue("GET", {key});
    }
    try {
      second_ops += c.flush().size();
    } catch (const IoError&) {  // kicked by the install
      c.close();
      c.connect(o.host, o.port);
      if (!c.hello({{new_prefix, 1}})) throw CommandError(c.mismatch());
      live_prefix = new_prefix;
    }

    int64_t sec = ms_since(t0) / 1000;
    if (sec > printed_through) {
      uint64_t settled_now = settled_count();
      std::printf("%lld,%llu,%llu,0\n", static_cast<long long>(printed_through),
                  static_cast<unsigned long long>(second_ops),
                  static_cast<unsigned long long>(settled_now - settled_before));
      if (upgraded) idle_seconds = settled_now == settled_before ? idle_seconds + 1 : 0;
      settled_before = settled_now;
      second_ops = 0;
      printed_through = sec;

      if (!upgraded && sec >= o.warmup_seconds) {
        admin.upgrade("change " + old_prefix + " " + new_prefix + " 0 1 crush\n" +
                      "transform crush { compress; }\n");
        upgraded = true;
      }
      if ((upgraded && idle_seconds >= 3) || sec >= o.max_seconds) break;
    }
  }

  uint64_t leftover = admin.migrate(new_prefix);
  std::printf("leftover_after_idle=%llu\n", static_cast<unsigned long long>(leftover));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"moltkv benchmark harness"};
  Options o;

  app.add_option("--host", o.host)->capture_default_str();
  app.add_option("--port", o.port)->capture_default_str();
  app.add_option("--auth", o.token, "AUTH token for admin commands");
  app.add_option("--workload", o.workload, "uniform | amico | redisfs")->capture_default_str();
  app.add_option("--keys", o.keys)->capture_default_str();
  app.add_option("--ops", o.ops)->capture_default_str();
  app.add_option("--value-size", o.value_size)->capture_default_str();
  app.add_option("--pipeline", o.pipeline)->capture_default_str();
  app.add_option("--write-ratio", o.write_ratio)->capture_default_str();
  app.add_option("--prefix", o.prefix)->capture_default_str();
  app.add_option("--trials", o.trials)->capture_default_str();
  app.add_option("--mode", o.mode, "amico: lazy | eager")->capture_default_str();
  app.add_option("--warmup-seconds", o.warmup_seconds)->capture_default_str();
  app.add_option("--max-seconds", o.max_seconds)->capture_default_str();
  app.add_option("--seed", o.seed)->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  try {
    if (o.workload == "uniform") return run_uniform(o);
    if (o.workload == "amico") return run_amico(o);
    if (o.workload == "redisfs") return run_redisfs(o);
    std::fprintf(stderr, "unknown workload '%s'\n", o.workload.c_str());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "moltkv-bench: %s\n", e.what());
    return 1;
  }
}
