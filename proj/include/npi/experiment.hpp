#pragma once

#include "npi/io.hpp"

#include <string>
#include <vector>

namespace npi {

/// Replaces the experiment seed everywhere it is used.
void set_seed(ExperimentConfig& cfg, std::uint64_t seed);

/// Untrained controller for the config's seed, setpoint = lower setpoint bound.
PiController initial_controller(const ExperimentConfig& cfg, const PlantModel& model);

/// Shared evaluation batch: cfg.test_rollouts scenarios drawn from cfg.test_seed.
std::vector<Scenario> test_scenarios(const ExperimentConfig& cfg, const PlantModel& model);
/// Certification batch, drawn from the experiment seed.
std::vector<Scenario> certify_scenarios(const ExperimentConfig& cfg, const PlantModel& model);

/// Per-scenario transient cost J (training loss over the first K steps) and
/// steady-state cost C at the evaluation horizon, from one evaluation rollout.
struct Evaluation {
    std::vector<double> transient;
    std::vector<double> steady;
    int nonfinite = 0;
};

Evaluation evaluate(const ExperimentConfig& cfg, const PlantModel& model, const PiController& ctrl,
                    const std::vector<Scenario>& scenarios);

struct Summary {
    double mean = 0.0;
    double std = 0.0; // population standard deviation
    int count = 0;    // finite values used
};

/// Mean and spread of the finite entries.
Summary summarize(const std::vector<double>& v);

/// One row of the comparison table.
struct CompareRow {
    std::string name;
    std::string controller;
    std::string partition;
    std::string checkpoint;
    bool present = false;
    Summary transient;
    Summary steady;
    int nonfinite = 0;
};

void write_compare_csv(std::ostream& os, const std::vector<CompareRow>& rows);

} // namespace npi
