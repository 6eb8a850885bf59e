#pragma once

// Batch front end: ingest, indicators, direct, fit, aggregate, simulate,
// evaluate, plus synth for generating a synthetic raw fixture.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sae/simulation.hpp"

namespace sae::cli {

// Exit codes: 0 success, 1 runtime error (with module provenance on err),
// 2 bad arguments.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

std::string sha256_file(const std::filesystem::path& path);

// Records everything needed to rerun a command. No timestamps, so identical
// runs give identical manifests.
class Manifest {
 public:
  explicit Manifest(std::string command);

  void input(const std::string& role, const std::filesystem::path& path);
  void output(const std::filesystem::path& dir, const std::string& name);
  nlohmann::json& config() { return config_; }
  void note(const std::string& key, nlohmann::json value) { notes_[key] = std::move(value); }

  nlohmann::json to_json() const;
  void write(const std::filesystem::path& dir) const;

 private:
  std::string command_;
  nlohmann::json inputs_ = nlohmann::json::object();
  nlohmann::json outputs_ = nlohmann::json::object();
  nlohmann::json config_ = nlohmann::json::object();
  nlohmann::json notes_ = nlohmann::json::object();
};

// Raw survey files whose energy indicator reproduces the synthetic population
// outcome exactly: households, members, consumption, composition, units,
// requirements, indicator config, areas, adjacency and truth. Returns the
// file names written.
std::vector<std::string> write_fixture(const simulation::SyntheticConfig& config,
                                       const std::filesystem::path& dir);

}  // namespace sae::cli
