#pragma once

// Command-line front end: gen, train, eval, verify.

#include <ostream>
#include <string>
#include <vector>

#include "gksn/invariants.hpp"
#include "gksn/network.hpp"

namespace gksn::cli {

/// Parses and runs one command. Returns the process exit code; usage errors
/// print to `err` and return 2.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Accepts on/off, true/false, T/F, 1/0.
bool parse_switch(const std::string& s);

/// Display name such as "O(n) KAN(F,T)" or "π O(n) MLP(F,T)".
std::string model_name(ModelKind kind, bool perm, const FeatureConfig& config,
                       const Metric& metric);

/// Writes `text` to `path` through a temporary file and a rename.
void write_atomic(const std::string& path, const std::string& text);

/// Named seed sub-streams derived from the single --seed flag.
enum class SeedStream : unsigned { generation = 1, init = 2, shuffle = 3, split = 4 };
std::uint64_t sub_seed(std::uint64_t seed, SeedStream stream);

}  // namespace gksn::cli
