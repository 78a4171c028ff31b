#include <csignal>
#include <cstdio>
#include <memory>

#include "CLI11.hpp"
#include "navhop/blob_store.hpp"
#include "navhop/clock.hpp"
#include "navhop/events.hpp"
#include "navhop/net.hpp"
#include "navhop/scheduler.hpp"

namespace {

volatile std::sig_atomic_t g_stop = 0;

void on_signal(int) { g_stop = 1; }

}  // namespace

int main(int argc, char** argv) {
  using namespace navhop;

  CLI::App cli{"job scheduler"};
  std::string listen = "127.0.0.1:0";
  std::string journal;
  int lease_secs = 30;
  std::string store_root;
  std::string events_addr;
  cli.add_option("--listen", listen, "host:port to serve on")->envname("NAVHOP_LISTEN");
  cli.add_option("--journal", journal, "append-only journal file; empty runs in-memory")
      ->envname("NAVHOP_JOURNAL");
  cli.add_option("--lease-secs", lease_secs, "claim lease in seconds")
      ->envname("NAVHOP_LEASE_SECS");
  cli.add_option("--store-root", store_root,
                 "blob store root; when set, published keys are verified")
      ->envname("NAVHOP_STORE_ROOT");
  cli.add_option("--events", events_addr, "host:port of an event collector")
      ->envname("NAVHOP_EVENTS");
  CLI11_PARSE(cli, argc, argv);

  ignore_sigpipe();
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);

  try {
    std::unique_ptr<DirStore> store;
    if (!store_root.empty()) store = std::make_unique<DirStore>(store_root);

    auto events = make_event_sink(events_addr);
    Registry::Options opts;
    opts.journal_path = journal;
    opts.lease_secs = lease_secs;
    opts.store = store.get();
    opts.events = events;
    Registry registry(std::move(opts));

    SchedulerServer server(registry, events);
    server.start(HostPort::parse(listen));
    std::printf("READY %s\n", server.address().str().c_str());
    std::fflush(stdout);

    while (!g_stop) sleep_ms(100);
    server.stop();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "scheduler: %s\n", e.what());
    return 1;
  }
  return 0;
}
