#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "npuvsim/scenario.hpp"

namespace {

int log_level() {
  const char* v = std::getenv("NPUVSIM_LOG");
  if (!v) return 0;
  std::string s(v);
  if (s == "debug") return 2;
  if (s == "info") return 1;
  return 0;
}

void log_info(const std::string& msg) {
  if (log_level() >= 1) std::cerr << "[npuvsim] " << msg << "\n";
}

void write_file(const std::filesystem::path& p, const std::string& content) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write " + p.string());
  }
  out << content;
}

npuvsim::Json parse_value(const std::string& s) {
  try {
    return npuvsim::Json::parse(s);
  } catch (...) {
    return npuvsim::Json(s);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cycle-level simulator for virtualized inter-core connected NPUs"};
  app.require_subcommand(1);

  std::string scenario_path;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
  std::vector<std::string> modes;
  std::string knob;
  std::vector<std::string> values;

  auto add_common = [&](CLI::App* cmd, bool need_out) {
    cmd->add_option("--scenario", scenario_path, "scenario JSON file")->required();
    if (need_out) cmd->add_option("--out", out_dir, "output directory");
    cmd->add_option("--seed", seed, "override the scenario seed");
  };

  CLI::App* run = app.add_subcommand("run", "run one scenario and write metrics");
  add_common(run, true);
  run->add_option("--mode", modes, "deployment mode (vnpu, baremetal, mig, uvm)");

  CLI::App* cmp = app.add_subcommand("compare", "run a scenario under several modes");
  add_common(cmp, true);
  cmp->add_option("--mode", modes, "modes to compare (repeatable, at least two)")
      ->expected(-1);

  CLI::App* swp = app.add_subcommand("sweep", "sweep one knob over a value list");
  add_common(swp, true);
  swp->add_option("--mode", modes, "deployment mode");
  swp->add_option("--knob", knob, "knob to sweep")->required();
  swp->add_option("--values", values, "values to sweep over")->required()->expected(-1);

  CLI::App* val = app.add_subcommand("validate", "check a scenario file");
  add_common(val, false);

  CLI11_PARSE(app, argc, argv);

  try {
    npuvsim::Json sc = npuvsim::load_json_file(scenario_path);
    std::filesystem::path out(out_dir);

    if (val->parsed()) {
      auto errs = npuvsim::validate_scenario(sc);
      if (errs.empty()) {
        std::cout << "ok: " << scenario_path << "\n";
        return 0;
      }
      for (const auto& e : errs) std::cerr << "error: " << e << "\n";
      return 1;
    }

    if (run->parsed()) {
      std::optional<std::string> mode;
      if (!modes.empty()) mode = modes.front();
      log_info("running " + scenario_path);
      auto res = npuvsim::run_scenario(sc, mode, seed);
      write_file(out / "metrics.json", res.metrics.dump(2) + "\n");
      write_file(out / "metrics.csv", res.csv);
      std::cout << res.metrics["chip"].dump() << "\n";
      return 0;
    }

    if (cmp->parsed()) {
      log_info("comparing " + std::to_string(modes.size()) + " modes");
      auto res = npuvsim::compare_modes(sc, modes, seed);
      write_file(out / "compare.json", res.dump(2) + "\n");
      std::cout << res["cycle_ratios"].dump() << "\n";
      return 0;
    }

    if (swp->parsed()) {
      std::optional<std::string> mode;
      if (!modes.empty()) mode = modes.front();
      std::vector<npuvsim::Json> vals;
      for (const auto& v : values) {
        std::stringstream ss(v);
        std::string item;
        while (std::getline(ss, item, ',')) {
          if (!item.empty()) vals.push_back(parse_value(item));
        }
      }
      log_info("sweeping " + knob + " over " + std::to_string(vals.size()) + " values");
      auto res = npuvsim::sweep_scenario(sc, knob, vals, mode, seed);
      write_file(out / "sweep.json", res.dump(2) + "\n");
      std::cout << "points: " << res["points"].size() << "\n";
      return 0;
    }
  } catch (const npuvsim::SimError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
