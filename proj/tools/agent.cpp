#include <csignal>
#include <cstdio>

#include "CLI11.hpp"
#include "navhop/agent.hpp"
#include "navhop/clock.hpp"
#include "navhop/net.hpp"
#include "navhop/strings.hpp"

namespace {

volatile std::sig_atomic_t g_stop = 0;

void on_signal(int) { g_stop = 1; }

}  // namespace

int main(int argc, char** argv) {
  using namespace navhop;

  CLI::App cli{"per-node task agent"};
  std::string node_id;
  std::string claim_id;
  std::string listen = "127.0.0.1:0";
  std::string store_root;
  std::string scheduler;
  std::string apps = "colocation";
  std::string peers;
  int capacity = 2;
  int grace_ms = 500;
  int lease_secs = 30;
  std::string events_addr;

  cli.add_option("--node-id", node_id, "this node's name")
      ->required()
      ->envname("NAVHOP_NODE_ID");
  cli.add_option("--claim-id", claim_id,
                 "scheduler claim identity; defaults to --node-id")
      ->envname("NAVHOP_CLAIM_ID");
  cli.add_option("--listen", listen, "host:port to serve on")->envname("NAVHOP_LISTEN");
  cli.add_option("--store-root", store_root, "shared blob store root")
      ->required()
      ->envname("NAVHOP_STORE_ROOT");
  cli.add_option("--scheduler", scheduler, "scheduler host:port")
      ->required()
      ->envname("NAVHOP_SCHEDULER");
  cli.add_option("--apps", apps, "comma-separated app names to register")
      ->envname("NAVHOP_APPS");
  cli.add_option("--peers", peers, "comma-separated NODE=host:port cluster peers")
      ->envname("NAVHOP_PEERS");
  cli.add_option("--capacity", capacity, "max concurrent jobs")->envname("NAVHOP_CAPACITY");
  cli.add_option("--grace-ms", grace_ms, "notice-kill drain window in ms")
      ->envname("NAVHOP_GRACE_MS");
  cli.add_option("--lease-secs", lease_secs, "scheduler claim lease in seconds")
      ->envname("NAVHOP_LEASE_SECS");
  cli.add_option("--events", events_addr, "host:port of an event collector")
      ->envname("NAVHOP_EVENTS");
  CLI11_PARSE(cli, argc, argv);

  ignore_sigpipe();
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);

  try {
    AgentConfig cfg;
    cfg.node_id = node_id;
    cfg.claim_id = claim_id;
    cfg.listen = HostPort::parse(listen);
    cfg.store_root = store_root;
    cfg.scheduler = HostPort::parse(scheduler);
    for (const auto& a : split(apps, ',')) {
      std::string name = trim(a);
      if (!name.empty()) cfg.apps.push_back(name);
    }
    for (const auto& p : split(peers, ',')) {
      std::string entry = trim(p);
      if (entry.empty()) continue;
      auto eq = entry.find('=');
      if (eq == std::string::npos) {
        raise(Errc::kInvalidArgument, "--peers entries look like NODE=host:port");
      }
      cfg.peers.push_back(
          NodeDescriptor{trim(entry.substr(0, eq)), HostPort::parse(trim(entry.substr(eq + 1)))});
    }
    cfg.max_concurrent_jobs = capacity;
    cfg.grace_ms = grace_ms;
    cfg.lease_secs = lease_secs;
    cfg.events_addr = events_addr;

    Agent agent(std::move(cfg));
    agent.start();
    std::printf("READY %s\n", agent.address().str().c_str());
    std::fflush(stdout);

    while (!g_stop) sleep_ms(100);
    agent.stop();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "agent: %s\n", e.what());
    return 1;
  }
  return 0;
}
