#pragma once

#include "npi/certify.hpp"
#include "npi/train.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace npi {

// ------------------------------------------------------------------ INI

/// One `key = value` line. Keys may repeat within a section.
struct IniEntry {
    std::string key;
    std::string value;
    int line = 0;
};

struct IniSection {
    std::string name;
    int line = 0;
    std::vector<IniEntry> entries;
};

/// `[section]` headers, `key = value` pairs, `#` or `;` comments to end of
/// line. Entries before the first header land in a section named "".
/// Throws ConfigError with the offending line.
std::vector<IniSection> parse_ini(std::istream& is);

// ----------------------------------------------------------- experiments

struct PlantSpec {
    std::string kind = "platoon"; // platoon | power
    Index nodes = 5;
    std::uint64_t seed = 1;       // parameter draw, fixed across experiment seeds
    std::string file;             // optional model parameter file; overrides the draw
};

struct ExperimentConfig {
    std::string name = "experiment";
    std::uint64_t seed = 1; // controller init, training batches, certification samples
    std::string out_dir = "out";
    PlantSpec plant;
    ControllerSpec controller;
    RolloutConfig rollout;   // training horizon
    ScenarioOptions scenarios;
    TrainConfig train;
    bool default_loss = true;
    LossSpec loss;           // used when default_loss is false
    SuiteOptions certify;
    double eval_horizon = 15.0; // seconds, for steady-state cost and evaluation rollouts
    int test_rollouts = 100;
    std::uint64_t test_seed = 1000;
    std::string source_dir; // directory of the config file, for relative paths
};

/// Reads a config. Unknown sections or keys are errors, as are values that
/// fail to parse or validate.
ExperimentConfig parse_experiment(std::istream& is, const std::string& source_dir = ".");
ExperimentConfig load_experiment(const std::string& path);

/// Canonical text of every setting; the config hash is computed from it, so
/// comments and key order do not change the hash.
std::string canonical_text(const ExperimentConfig& cfg);
std::string config_hash(const ExperimentConfig& cfg);

/// Plant from the config: the parameter file when given, else a seeded draw.
PlantModel make_plant(const ExperimentConfig& cfg);
LossSpec make_loss(const ExperimentConfig& cfg, const PlantModel& model);
/// Training rollout config and the longer evaluation config (eval_horizon seconds).
RolloutConfig eval_rollout(const ExperimentConfig& cfg);
std::string resolve_path(const ExperimentConfig& cfg, const std::string& path);

// ---------------------------------------------------------- model files

/// Plant parameter file: INI with a [plant] section of per-node vectors and
/// an [edges] section of `edge = tail head weight` lines.
void write_plant(std::ostream& os, const PlantModel& model);
PlantModel read_plant(std::istream& is);
PlantModel load_plant(const std::string& path);

// ----------------------------------------------------------- checkpoints

struct CheckpointMeta {
    std::string config_hash;
    std::uint64_t seed = 0;
    ControllerKind kind = ControllerKind::neural_pi;
    int epoch = 0;
};

inline constexpr int checkpoint_version = 1;

void write_checkpoint(std::ostream& os, const PiController& ctrl, const CheckpointMeta& meta);
PiController read_checkpoint(std::istream& is, CheckpointMeta* meta = nullptr);
void save_checkpoint(const std::string& path, const PiController& ctrl, const CheckpointMeta& meta);
PiController load_checkpoint(const std::string& path, CheckpointMeta* meta = nullptr);

// ------------------------------------------------------------------- CSV

/// `# npi config_hash=<hash> seed=<seed>` provenance line written ahead of
/// every CSV header.
std::string provenance_line(const std::string& hash, std::uint64_t seed);

void write_loss_csv(std::ostream& os, const std::vector<EpochStat>& history);

/// %.17g
std::string format_double(double v);

/// Writes `text` to `path`, creating parent directories.
void write_file(const std::string& path, const std::string& text);
std::string read_file(const std::string& path);

} // namespace npi
