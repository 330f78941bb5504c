#include <csignal>
#include <cstdio>
#include <thread>
#include <unistd.h>

#include <CLI11.hpp>

#include "moltkv/engine.hpp"
#include "moltkv/server.hpp"

int main(int argc, char** argv) {
  CLI::App app{"moltkv server"};

  moltkv::ServerConfig sc;
  moltkv::EngineConfig ec;
  std::string data_dir;
  sc.port = 7611;

  app.add_option("--listen", sc.host, "address to bind")->capture_default_str();
  app.add_option("--port", sc.port, "port to bind, 0 for ephemeral")->capture_default_str();
  app.add_option("--data", data_dir, "persistence directory (omit for memory-only)");
  app.add_option("--flush-every", ec.flush_every, "journal fsync cadence in frames")
      ->capture_default_str();
  app.add_option("--admin-token", sc.admin_token,
                 "require AUTH with this token for UPGRADE/MIGRATE/SNAPSHOT/SHUTDOWN");
  app.add_flag("--bypass", ec.bypass, "disable the version interceptor (plain key-value store)");
  app.add_flag("--absent-sentinels", ec.absent_sentinels, "cache misses under governed prefixes");
  CLI11_PARSE(app, argc, argv);
  ec.data_dir = data_dir;

  // Signals are consumed by a dedicated waiter so connection threads never
  // see them mid-syscall.
  sigset_t sigs;
  sigemptyset(&sigs);
  sigaddset(&sigs, SIGINT);
  sigaddset(&sigs, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &sigs, nullptr);

  try {
    moltkv::Engine engine(ec);
    moltkv::Server server(engine, sc);
    server.start();
    std::fprintf(stderr, "moltkv-server listening on %s:%u%s%s\n", sc.host.c_str(),
                 unsigned(server.port()), data_dir.empty() ? " (memory only)" : ", data in ",
                 data_dir.empty() ? "" : data_dir.c_str());
    std::fflush(stderr);

    std::thread sig_waiter([&] {
      int sig = 0;
      sigwait(&sigs, &sig);
      server.stop();  // wakes wait_for_shutdown
    });

    server.wait_for_shutdown();
    server.stop();
    kill(getpid(), SIGTERM);  // unblocks the waiter if SHUTDOWN came over the wire
    sig_waiter.join();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "moltkv-server: %s\n", e.what());
    return 1;
  }
  return 0;
}
