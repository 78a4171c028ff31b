#include <unistd.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "navhop/harness.hpp"
#include "navhop/net.hpp"
#include "navhop/sha256.hpp"

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) navhop::raise(navhop::Errc::kNotFound, "cannot read " + path);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

std::string self_dir() {
  char buf[4096];
  ssize_t n = ::readlink("/proc/self/exe", buf, sizeof(buf) - 1);
  if (n <= 0) return ".";
  buf[n] = '\0';
  std::string path(buf);
  auto slash = path.rfind('/');
  return slash == std::string::npos ? "." : path.substr(0, slash);
}

// Cross-run product comparison happens on digests recorded in a previous
// report, so a baseline file is all that a re-run needs.
std::vector<std::string> compare_to_baseline(const navhop::RunReport& report,
                                             const std::string& baseline_path) {
  std::vector<std::string> v;
  nlohmann::json base = nlohmann::json::parse(read_file(baseline_path));
  if (!base.contains("jobs")) {
    v.push_back("baseline " + baseline_path + " has no jobs section");
    return v;
  }
  for (const auto& [job_id, bj] : base["jobs"].items()) {
    auto it = report.jobs.find(job_id);
    if (it == report.jobs.end()) {
      v.push_back("baseline job " + job_id + " absent from this run");
      continue;
    }
    std::string want_sha = bj.value("product_sha256", "");
    std::uint64_t want_bytes = bj.value("product_bytes", std::uint64_t{0});
    std::string got_sha =
        it->second.product.empty() ? "" : navhop::sha256_hex(it->second.product);
    if (got_sha != want_sha || it->second.product.size() != want_bytes) {
      v.push_back("job " + job_id + " product differs from baseline (" + got_sha + "/" +
                  std::to_string(it->second.product.size()) + " vs " + want_sha + "/" +
                  std::to_string(want_bytes) + ")");
    }
  }
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace navhop;

  CLI::App cli{"scenario runner: spawns a cluster, injects preemptions, verifies the run"};
  cli.require_subcommand(1);
  CLI::App* run = cli.add_subcommand("run", "execute one scenario");

  std::string topology_path, scenario_path, report_path;
  std::string workdir, baseline_path;
  std::string agent_bin = self_dir() + "/agent";
  std::string scheduler_bin = self_dir() + "/scheduler";
  run->add_option("--topology", topology_path, "topology file")->required();
  run->add_option("--scenario", scenario_path, "scenario file")->required();
  run->add_option("--report", report_path, "where to write the JSON report")->required();
  run->add_option("--workdir", workdir, "scratch directory (default: a fresh /tmp dir)");
  run->add_option("--baseline", baseline_path,
                  "previous report to compare product digests against");
  run->add_option("--agent-bin", agent_bin, "agent binary");
  run->add_option("--scheduler-bin", scheduler_bin, "scheduler binary");
  CLI11_PARSE(cli, argc, argv);

  ignore_sigpipe();

  try {
    Topology topology = parse_topology(read_file(topology_path));
    Scenario scenario = parse_scenario(read_file(scenario_path));
    if (scenario.name.empty()) {
      auto slash = scenario_path.rfind('/');
      scenario.name = slash == std::string::npos ? scenario_path : scenario_path.substr(slash + 1);
    }

    if (workdir.empty()) {
      char tmpl[] = "/tmp/navhop-harness-XXXXXX";
      if (::mkdtemp(tmpl) == nullptr) raise(Errc::kIoError, "mkdtemp failed");
      workdir = tmpl;
    }

    HarnessPaths paths{agent_bin, scheduler_bin, workdir};
    RunReport report = run_scenario(topology, scenario, paths);

    std::vector<std::string> violations = replay_verify(report, {});
    if (!baseline_path.empty()) {
      for (auto& v : compare_to_baseline(report, baseline_path)) {
        violations.push_back(std::move(v));
      }
    }

    std::string json = report_to_json(report, violations);
    std::ofstream out(report_path, std::ios::binary | std::ios::trunc);
    if (!out) raise(Errc::kIoError, "cannot write " + report_path);
    out << json;
    out.close();

    for (const auto& v : violations) std::fprintf(stderr, "violation: %s\n", v.c_str());
    std::printf("%s %s: %zu jobs, %zu events, recompute %.3f, workdir %s\n",
                violations.empty() ? "PASS" : "FAIL", scenario.name.c_str(),
                report.jobs.size(), report.events.size(), report.recompute_ratio,
                workdir.c_str());
    return violations.empty() ? 0 : 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "harness: %s\n", e.what());
    return 2;
  }
}
