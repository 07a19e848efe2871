#pragma once

// The dnsfp command line. run() returns the process exit code:
// 0 success, 1 data error, 2 usage error.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dnsfp/attack.hpp"
#include "dnsfp/dataset_io.hpp"
#include "dnsfp/error.hpp"
#include "dnsfp/eval.hpp"
#include "dnsfp/ingest.hpp"
#include "dnsfp/padprobe.hpp"
#include "dnsfp/parallel.hpp"
#include "dnsfp/rng.hpp"
#include "dnsfp/synth.hpp"

namespace dnsfp::cli {

namespace detail {

struct Globals {
  std::uint64_t seed = 0;
  unsigned threads = 0;
  std::string out;
  bool no_timestamps = false;
};

struct ModelFlags {
  std::string attack;
  int trees = 100;
  int max_depth = 0;
  int min_leaf = 1;
  std::size_t k = 1;
  std::string costs = "1,1,1,1";
  int segram_threshold = 5;

  void add_to(CLI::App& cmd, bool attack_required = true) {
    auto* a = cmd.add_option("--attack", attack, "freq|ngrams|bnr|segram");
    if (attack_required) a->required();
    a->check(CLI::IsMember({"freq", "ngrams", "bnr", "segram"}));
    cmd.add_option("--trees", trees, "Random-forest size")->check(CLI::PositiveNumber);
    cmd.add_option("--max-depth", max_depth, "Tree depth limit (0: unlimited)")->check(CLI::NonNegativeNumber);
    cmd.add_option("--min-leaf", min_leaf, "Minimum samples per leaf")->check(CLI::PositiveNumber);
    cmd.add_option("--k", k, "Neighbours for bnr")->check(CLI::PositiveNumber);
    cmd.add_option("--costs", costs, "bnr edit costs: ins,del,sub,trans");
    cmd.add_option("--segram-threshold", segram_threshold, "Smallest log2 gap bin kept by segram")
        ->check(CLI::NonNegativeNumber);
  }

  AttackConfig config(const std::string& name) const {
    AttackConfig cfg = AttackConfig::of(*parse_attack(name));
    cfg.forest.n_trees = trees;
    if (max_depth > 0) cfg.forest.max_depth = max_depth;
    cfg.forest.min_samples_leaf = min_leaf;
    cfg.k = k;
    cfg.segram_threshold = segram_threshold;
    std::vector<double> c;
    std::stringstream ss(costs);
    for (std::string item; std::getline(ss, item, ',');) {
      try {
        c.push_back(std::stod(item));
      } catch (const std::logic_error&) {
        throw Error("invalid --costs '" + costs + "'");
      }
    }
    if (c.size() != 4) throw Error("--costs needs four comma-separated values");
    cfg.costs = {c[0], c[1], c[2], c[3]};
    return cfg;
  }
  AttackConfig config() const { return config(attack); }
};

inline std::string now_utc() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

class Output {
public:
  Output(const Globals& g, std::ostream& stdout_stream) : g_(g), stdout_(stdout_stream) {}

  void write(const std::string& path, const std::string& text) const {
    if (path.empty() || path == "-") {
      stdout_ << text;
      stdout_.flush();
      return;
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot write " + path);
    f << text;
    if (!f) throw Error("write failed for " + path);
  }
  void write(const std::string& text) const { write(g_.out, text); }

  void json(nlohmann::json j, const char* kind) const {
    nlohmann::json doc{{"report", kind}};
    if (!g_.no_timestamps) doc["generated_at"] = now_utc();
    doc.update(j);
    write(doc.dump(2) + "\n");
  }

private:
  const Globals& g_;
  std::ostream& stdout_;
};

inline std::vector<std::string> read_app_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open app list " + path);
  std::vector<std::string> apps;
  for (std::string line; std::getline(in, line);) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) line.pop_back();
    const auto start = line.find_first_not_of(" \t");
    if (start == std::string::npos || line[start] == '#') continue;
    apps.push_back(line.substr(start));
  }
  return apps;
}

/// At most n traces per app, picked by seed; original order is kept.
inline Dataset subsample_per_app(const Dataset& ds, std::size_t n, std::uint64_t seed) {
  if (n == 0) return ds;
  std::vector<std::size_t> keep;
  for (const auto& [label, members] : ds.label_index()) {
    auto idx = members;
    if (idx.size() > n) {
      Rng rng(derive_seed(seed, {fnv1a(label)}));
      rng.shuffle(idx);
      idx.resize(n);
    }
    keep.insert(keep.end(), idx.begin(), idx.end());
  }
  std::sort(keep.begin(), keep.end());
  return ds.subset(keep);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

} // namespace detail

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  using namespace detail;
  CLI::App app{"Encrypted-DNS app fingerprinting toolkit", "dnsfp"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Seed for every random choice");
  app.add_option("--threads", g.threads, "Worker thread cap (0: all cores)");
  app.add_option("--out", g.out, "Output file (default: stdout)");
  app.add_flag("--no-timestamps", g.no_timestamps, "Omit generation timestamps from reports");

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Reduce packet captures to a JSONL trace dataset");
  std::vector<std::string> pcaps;
  std::string resolver_ips, protocol = "dot", app_label, resolver_id = "resolver", trace_id;
  int port = 0;
  ingest->add_option("--pcap", pcaps, "Capture file (repeatable; one trace per file)")->required();
  ingest->add_option("--resolver-ip", resolver_ips, "Resolver address(es), comma separated")->required();
  ingest->add_option("--port", port, "Resolver port (default 853 for dot, 443 for doh)")->check(CLI::Range(1, 65535));
  ingest->add_option("--protocol", protocol, "dot|doh")->check(CLI::IsMember({"dot", "doh"}));
  ingest->add_option("--app", app_label, "App label of the capture(s)")->required();
  ingest->add_option("--resolver-id", resolver_id, "Resolver name stored in the traces");
  ingest->add_option("--trace-id", trace_id, "Trace id (single capture only; default: file stem)");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic trace dataset");
  std::size_t n_apps = 20, per_app = 30;
  std::string padding = "none", cache = "cold";
  double overlap = 0.2;
  synth->add_option("--apps", n_apps, "Number of apps")->check(CLI::PositiveNumber);
  synth->add_option("--traces-per-app", per_app, "Launches per app")->check(CLI::PositiveNumber);
  synth->add_option("--padding", padding, "none|edns|custom:<req>,<resp>");
  synth->add_option("--cache", cache, "cold|warm:<hit probability>");
  synth->add_option("--overlap", overlap, "Fraction of query slots from the shared pool")->check(CLI::Range(0.0, 1.0));

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate an attack");
  eval->require_subcommand(1);
  std::string traces;
  std::size_t per_app_cap = 0;

  auto* closed = eval->add_subcommand("closed", "Stratified k-fold closed-world evaluation");
  ModelFlags closed_model;
  std::size_t folds = 5;
  closed->add_option("--traces", traces, "JSONL dataset")->required();
  closed->add_option("--folds", folds, "Number of folds")->check(CLI::Range(2, 1000));
  closed->add_option("--per-app", per_app_cap, "Use at most N traces per app (0: all)");
  closed_model.add_to(*closed);

  OpenWorldSplit split;
  std::string monitored_file, unmonitored_file, unknown_file, split_name = "standard", csv_path, baseline_csv;
  std::size_t iterations = 4;
  std::map<std::string, std::size_t> counts;
  auto add_open_world = [&](CLI::App* cmd, ModelFlags& model) {
    cmd->add_option("--traces", traces, "JSONL dataset")->required();
    cmd->add_option("--monitored", monitored_file, "Monitored app list (one label per line)")->required();
    cmd->add_option("--unmonitored", unmonitored_file, "Unmonitored app list")->required();
    cmd->add_option("--unknown", unknown_file, "Unknown app list")->required();
    cmd->add_option("--split", split_name, "Default counts: standard|caching")
        ->check(CLI::IsMember({"standard", "caching"}));
    for (const char* name : {"monitored-apps", "monitored-train", "monitored-test", "unmonitored-apps",
                             "unmonitored-train", "unknown-apps", "unknown-test"})
      cmd->add_option(std::string("--") + name, counts[name], "Override the split's count");
    model.add_to(*cmd);
  };
  auto* open_binary = eval->add_subcommand("open-binary", "Open-world monitored/unmonitored precision-recall");
  ModelFlags binary_model;
  add_open_world(open_binary, binary_model);
  open_binary->add_option("--iterations", iterations, "Monitored-set resamplings")->check(CLI::PositiveNumber);
  open_binary->add_option("--csv", csv_path, "Also write the PR curve as CSV");
  open_binary->add_option("--baseline-csv", baseline_csv, "Also write the random baseline as CSV");
  auto* open_multi = eval->add_subcommand("open-multi", "Open-world multi-class evaluation");
  ModelFlags multi_model;
  add_open_world(open_multi, multi_model);

  auto* cross = eval->add_subcommand("cross", "Train on one dataset, test on another");
  ModelFlags cross_model;
  std::string train_path, test_path;
  cross->add_option("--train", train_path, "Training JSONL dataset")->required();
  cross->add_option("--test", test_path, "Test JSONL dataset")->required();
  cross_model.add_to(*cross);

  // bench
  auto* bench = app.add_subcommand("bench", "Time classification of held-out queries");
  ModelFlags bench_model;
  std::string attacks = "segram,bnr";
  std::size_t n_queries = 100, repeats = 10;
  bench->add_option("--traces", traces, "JSONL dataset")->required();
  bench->add_option("--attacks", attacks, "Comma-separated attacks");
  bench->add_option("--queries", n_queries, "Held-out traces of distinct apps")->check(CLI::PositiveNumber);
  bench->add_option("--repeats", repeats, "Timed repetitions")->check(CLI::PositiveNumber);
  bench_model.add_to(*bench, false);

  // probe
  auto* probe_cmd = app.add_subcommand("probe", "Probe resolvers for their response padding");
  std::string targets_path;
  std::size_t concurrency = 8;
  bool insecure = false;
  int timeout_ms = 0;
  probe_cmd->add_option("--targets", targets_path, "Targets CSV")->required();
  probe_cmd->add_option("--concurrency", concurrency, "Targets probed at once")->check(CLI::PositiveNumber);
  probe_cmd->add_flag("--insecure", insecure, "Skip TLS certificate verification for every target");
  probe_cmd->add_option("--timeout-ms", timeout_ms, "Per-target timeout override")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    set_max_threads(g.threads);
    const Output output(g, out);

    if (*ingest) {
      if (!trace_id.empty() && pcaps.size() != 1) throw Error("--trace-id needs exactly one --pcap");
      ResolverSpec spec;
      spec.resolver_id = resolver_id;
      spec.protocol = *parse_protocol(protocol);
      spec.port = port != 0 ? port : spec.protocol == Protocol::DoT ? 853 : 443;
      for (const auto& ip : split_list(resolver_ips)) spec.ips.insert(ip);
      spec.validate();
      std::vector<Trace> out_traces(pcaps.size());
      parallel_for(pcaps.size(), [&](std::size_t i) {
        const std::string id = trace_id.empty() ? std::filesystem::path(pcaps[i]).stem().string() : trace_id;
        out_traces[i] = filter_capture(pcaps[i], spec, app_label, id);
      });
      std::ostringstream buf;
      write_dataset(Dataset(std::move(out_traces)), buf);
      output.write(buf.str());
      return 0;
    }

    if (*synth) {
      const auto profiles = generate_profiles(n_apps, g.seed, overlap);
      const auto ds = generate_dataset(profiles, per_app, parse_padding(padding), parse_cache(cache), g.seed);
      std::ostringstream buf;
      write_dataset(ds, buf);
      output.write(buf.str());
      return 0;
    }

    auto build_split = [&]() {
      OpenWorldSplit s = split_name == "caching" ? OpenWorldSplit::with_caching() : OpenWorldSplit::standard();
      s.monitored.apps = read_app_list(monitored_file);
      s.unmonitored.apps = read_app_list(unmonitored_file);
      s.unknown.apps = read_app_list(unknown_file);
      auto over = [&](const char* name, std::size_t& field) {
        if (counts[name] != 0) field = counts[name];
      };
      over("monitored-apps", s.monitored.n_apps);
      over("monitored-train", s.monitored.train_per_app);
      over("monitored-test", s.monitored.test_per_app);
      over("unmonitored-apps", s.unmonitored.n_apps);
      over("unmonitored-train", s.unmonitored.train_per_app);
      over("unknown-apps", s.unknown.n_apps);
      over("unknown-test", s.unknown.test_per_app);
      s.validate();
      return s;
    };

    if (*closed) {
      const auto ds = subsample_per_app(read_dataset(traces), per_app_cap, g.seed);
      output.json(to_json(closed_world(ds, closed_model.config(), folds, g.seed)), "closed-world");
      return 0;
    }
    if (*open_binary) {
      const auto ds = read_dataset(traces);
      const auto s = build_split();
      const auto thresholds = default_thresholds();
      const auto curve = open_world_binary(s, ds, binary_model.config(), thresholds, iterations, g.seed);
      if (!csv_path.empty()) {
        std::ostringstream buf;
        write_pr_csv(buf, curve.points);
        output.write(csv_path, buf.str());
      }
      if (!baseline_csv.empty()) {
        std::ostringstream buf;
        write_pr_csv(buf, curve.baseline);
        output.write(baseline_csv, buf.str());
      }
      output.json(to_json(curve), "open-world-binary");
      return 0;
    }
    if (*open_multi) {
      const auto ds = read_dataset(traces);
      output.json(to_json(open_world_multiclass(build_split(), ds, multi_model.config(), g.seed)),
                  "open-world-multiclass");
      return 0;
    }
    if (*cross) {
      const auto train = read_dataset(train_path);
      const auto test = read_dataset(test_path);
      output.json(to_json(cross_resolver(train, test, cross_model.config(), g.seed)), "cross-resolver");
      return 0;
    }
    if (*bench) {
      std::vector<AttackConfig> cfgs;
      for (const auto& name : split_list(attacks)) {
        if (!parse_attack(name)) throw Error("unknown attack '" + name + "'");
        cfgs.push_back(bench_model.config(name));
      }
      if (cfgs.empty()) throw Error("--attacks is empty");
      const auto ds = read_dataset(traces);
      output.json(to_json(benchmark(ds, cfgs, n_queries, repeats, g.seed)), "benchmark");
      return 0;
    }
    if (*probe_cmd) {
      auto targets = read_targets(targets_path);
      for (auto& t : targets) {
        if (insecure) t.insecure = true;
        if (timeout_ms > 0) t.timeout_ms = timeout_ms;
      }
      const auto results = probe_all(targets, default_probe_specs(), concurrency);
      if (g.out.ends_with(".json")) {
        output.json(to_json(results), "padding-probe");
      } else {
        std::ostringstream buf;
        write_probe_csv(results, buf);
        output.write(buf.str());
      }
      for (const auto& [proto, s] : summarize(results)) {
        err << proto << ": " << s.total << " targets";
        for (auto v : {Verdict::NoPadding, Verdict::Custom, Verdict::Edns468, Verdict::Invalid})
          err << "  " << to_string(v) << ' ' << s.fraction(v);
        err << '\n';
      }
      return 0;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  err << app.help();
  return 2;
}

} // namespace dnsfp::cli
