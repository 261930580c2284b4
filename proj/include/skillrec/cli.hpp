#pragma once

// Command-line front end: init | warmup | evaluate | ablate | inspect.

#include <exception>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "skillrec/eval_harness.hpp"

namespace skillrec {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitBackend = 4;
inline constexpr int kExitPartial = 5;

int exit_code_for(const std::exception& e);

// Written by `init` at `<store>/meta.json`.
struct StoreMeta {
    std::string dataset;  // absolute dataset directory
    EvalConfig config;    // configuration resolved at init time
};
StoreMeta read_store_meta(const std::filesystem::path& store);
void write_store_meta(const std::filesystem::path& store, const StoreMeta& meta);

struct BackendOptions {
    std::string kind = "oracle";  // oracle | live
    std::string oracle_script;
    LiveConfig live;
    std::string audit_log;
};

std::unique_ptr<Gateway> make_gateway(const BackendOptions& options, const std::filesystem::path& data_dir);

// Line diff between two texts, "+ " / "- " / "  " prefixed.
std::string line_diff(const std::string& before, const std::string& after);

// Revision-by-revision markdown for one user: a tier table across retained
// revisions followed by the diff between consecutive revisions.
std::string render_trajectory(const SkillStore& store, const std::string& user_id);

// Runs the CLI; returns the process exit code. Output goes to `out`,
// diagnostics to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace skillrec
