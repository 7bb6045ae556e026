// npi: train, simulate, certify and compare Neural-PI controllers.
//
// Exit status: 0 success, 1 certification failure (or a run that could not
// finish, e.g. training diverged), 2 usage or configuration error.

#include "npi/experiment.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using namespace npi;

namespace {

constexpr int exit_ok = 0;
constexpr int exit_cert_fail = 1;
constexpr int exit_config = 2;

#ifndef NPI_CONFIG_DIR
#define NPI_CONFIG_DIR "configs"
#endif

std::string preset_path(const std::string& name)
{
    std::vector<fs::path> dirs;
    if (const char* env = std::getenv("NPI_CONFIG_DIR")) {
        dirs.emplace_back(env);
    }
    dirs.emplace_back("configs");
    dirs.emplace_back(NPI_CONFIG_DIR);
    for (const auto& d : dirs) {
        const fs::path p = d / (name + ".cfg");
        if (fs::exists(p)) {
            return p.string();
        }
    }
    throw ConfigError("unknown preset '" + name + "' (looked for " + name + ".cfg in $NPI_CONFIG_DIR, ./configs, " +
                      NPI_CONFIG_DIR + ")");
}

struct Common {
    std::string config;
    std::string preset;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::optional<double> horizon;
};

void add_common(CLI::App* cmd, Common& c, bool with_horizon = true)
{
    cmd->add_option("--config", c.config, "experiment config file (.cfg)");
    cmd->add_option("--preset", c.preset, "named config from the configs directory, e.g. platoon-desk");
    cmd->add_option("--seed", c.seed, "override the experiment seed");
    cmd->add_option("--out", c.out, "output directory (default: the config's out)");
    if (with_horizon) {
        cmd->add_option("--eval-horizon-s", c.horizon, "evaluation horizon in seconds (default 15)");
    }
}

ExperimentConfig load(const Common& c)
{
    if (c.config.empty() == c.preset.empty()) {
        throw ConfigError("give exactly one of --config or --preset");
    }
    ExperimentConfig cfg = load_experiment(c.config.empty() ? preset_path(c.preset) : c.config);
    if (c.seed) {
        set_seed(cfg, *c.seed);
    }
    if (!c.out.empty()) {
        cfg.out_dir = c.out;
    }
    if (c.horizon) {
        if (!(*c.horizon > 0)) {
            throw ConfigError("--eval-horizon-s must be positive");
        }
        cfg.eval_horizon = *c.horizon;
        cfg.certify.settle_time = *c.horizon;
    }
    return cfg;
}

std::string in_out(const ExperimentConfig& cfg, const std::string& file)
{
    return (fs::path(cfg.out_dir) / file).string();
}

PiController controller_for(const ExperimentConfig& cfg, const PlantModel& model, const std::string& checkpoint,
                            CheckpointMeta* meta)
{
    if (checkpoint.empty()) {
        return initial_controller(cfg, model);
    }
    PiController c = load_checkpoint(checkpoint, meta);
    if (c.dim() != plant_dim(model)) {
        throw ConfigError("checkpoint '" + checkpoint + "' has dimension " + std::to_string(c.dim()) + ", plant has " +
                          std::to_string(plant_dim(model)));
    }
    return c;
}

bool print_reports(const std::vector<CertReport>& reports)
{
    bool all = true;
    for (const auto& r : reports) {
        std::printf("%-26s %s  worst %.3e  tol %.1e  samples %ld\n", r.check.c_str(), r.pass ? "PASS" : "FAIL",
                    r.worst_margin, r.tolerance, r.samples);
        for (const auto& n : r.notes) {
            std::printf("    %s\n", n.c_str());
        }
        all = all && r.pass;
    }
    return all;
}

bool run_certify(const ExperimentConfig& cfg, const PlantModel& model, const PiController& ctrl, const std::string& hash,
                 const std::string& path)
{
    const auto scenarios = certify_scenarios(cfg, model);
    const auto reports = certify_suite(model, ctrl, scenarios, cfg.rollout, cfg.certify);
    write_file(path, reports_to_json(reports, hash, cfg.seed));
    const bool ok = print_reports(reports);
    std::printf("certificate: %s (%s)\n", ok ? "PASS" : "FAIL", path.c_str());
    return ok;
}

int cmd_train(const Common& c, bool certify)
{
    const ExperimentConfig cfg = load(c);
    const PlantModel model = make_plant(cfg);
    const LossSpec loss = make_loss(cfg, model);
    const std::string hash = config_hash(cfg);
    write_file(in_out(cfg, "config.cfg"), "# " + cfg.name + " hash " + hash + "\n" + canonical_text(cfg));

    const PiController init = initial_controller(cfg, model);
    CheckpointMeta meta{hash, cfg.seed, cfg.controller.kind, 0};
    save_checkpoint(in_out(cfg, "checkpoint_init.txt"), init, meta);
    std::printf("training %s: %s, %d epochs x %d rollouts, %ld parameters, seed %llu\n", cfg.name.c_str(),
                to_string(cfg.controller.kind).c_str(), cfg.train.epochs, cfg.train.batch,
                static_cast<long>(param_count(init)), static_cast<unsigned long long>(cfg.seed));
    const TrainResult res = train(model, init, cfg.train, loss, [&](int epoch, const PiController& ctrl) {
        char name[64];
        std::snprintf(name, sizeof name, "checkpoints/epoch_%04d.txt", epoch);
        meta.epoch = epoch;
        save_checkpoint(in_out(cfg, name), ctrl, meta);
    });
    meta.epoch = cfg.train.epochs;
    save_checkpoint(in_out(cfg, "checkpoint.txt"), res.controller, meta);
    std::ostringstream csv;
    csv << provenance_line(hash, cfg.seed);
    write_loss_csv(csv, res.history);
    write_file(in_out(cfg, "loss.csv"), csv.str());
    std::printf("loss: epoch 1 %.6g -> epoch %d %.6g\n", res.history.front().mean_loss, res.history.back().epoch,
                res.history.back().mean_loss);
    if (!certify) {
        return exit_ok;
    }
    return run_certify(cfg, model, res.controller, hash, in_out(cfg, "cert_report.json")) ? exit_ok : exit_cert_fail;
}

int cmd_certify(const Common& c, const std::string& checkpoint)
{
    const ExperimentConfig cfg = load(c);
    const PlantModel model = make_plant(cfg);
    const PiController ctrl = controller_for(cfg, model, checkpoint, nullptr);
    return run_certify(cfg, model, ctrl, config_hash(cfg), in_out(cfg, "cert_report.json")) ? exit_ok
                                                                                            : exit_cert_fail;
}

int cmd_simulate(const Common& c, const std::string& checkpoint, int rollouts)
{
    ExperimentConfig cfg = load(c);
    const PlantModel model = make_plant(cfg);
    const PiController ctrl = controller_for(cfg, model, checkpoint, nullptr);
    const std::string hash = config_hash(cfg);
    cfg.test_rollouts = rollouts;
    const auto scenarios = test_scenarios(cfg, model);
    const RolloutConfig rc = eval_rollout(cfg);
    const Evaluation ev = evaluate(cfg, model, ctrl, scenarios);
    std::ostringstream summary;
    summary << provenance_line(hash, cfg.seed) << "rollout,transient_cost,steady_state_cost,finite,file\n";
    for (std::size_t i = 0; i < scenarios.size(); ++i) {
        const Trajectory t = run_scenario(model, ctrl, scenarios[i], rc);
        char name[64];
        std::snprintf(name, sizeof name, "traj_%03zu.csv", i);
        std::ostringstream os;
        os << provenance_line(hash, cfg.seed);
        write_trajectory_csv(os, t);
        write_file(in_out(cfg, name), os.str());
        summary << i << ',' << format_double(ev.transient[i]) << ',' << format_double(ev.steady[i]) << ','
                << (t.finite() ? 1 : 0) << ',' << name << '\n';
    }
    write_file(in_out(cfg, "simulate_summary.csv"), summary.str());
    std::printf("wrote %zu trajectories to %s\n", scenarios.size(), cfg.out_dir.c_str());
    return exit_ok;
}

int cmd_compare(const std::vector<std::string>& configs, const std::vector<std::string>& presets,
                const std::vector<std::string>& checkpoints, const Common& c)
{
    std::vector<std::string> paths = configs;
    for (const auto& p : presets) {
        paths.push_back(preset_path(p));
    }
    if (paths.empty()) {
        throw ConfigError("compare needs at least one --config or --preset");
    }
    if (!checkpoints.empty() && checkpoints.size() != paths.size()) {
        throw ConfigError("give one --checkpoint per config, or none to use <out>/checkpoint.txt");
    }
    std::vector<ExperimentConfig> cfgs;
    for (const auto& p : paths) {
        ExperimentConfig cfg = load_experiment(p);
        if (c.horizon) {
            cfg.eval_horizon = *c.horizon;
        }
        cfgs.push_back(std::move(cfg));
    }
    // One shared test batch: the first config's plant and scenario distribution.
    ExperimentConfig& first = cfgs.front();
    if (c.seed) {
        first.test_seed = *c.seed;
    }
    const PlantModel model = make_plant(first);
    const auto scenarios = test_scenarios(first, model);
    std::vector<CompareRow> rows;
    for (std::size_t i = 0; i < cfgs.size(); ++i) {
        ExperimentConfig& cfg = cfgs[i];
        if (config_hash(cfg) != config_hash(first) && canonical_text(cfg).find("[plant]") != std::string::npos) {
            const PlantModel other = make_plant(cfg);
            if (other.index() != model.index() || plant_dim(other) != plant_dim(model)) {
                throw ConfigError(paths[i] + ": plant differs from the first config's; compare needs a shared plant");
            }
        }
        CompareRow row;
        row.name = cfg.name;
        row.controller = to_string(cfg.controller.kind);
        row.partition = to_string(cfg.controller.partition);
        row.checkpoint = checkpoints.empty() ? in_out(cfg, "checkpoint.txt") : checkpoints[i];
        if (fs::exists(row.checkpoint)) {
            const PiController ctrl = controller_for(cfg, model, row.checkpoint, nullptr);
            // Same batch and horizons for every row.
            ExperimentConfig eval_cfg = cfg;
            eval_cfg.rollout.dt = first.rollout.dt;
            eval_cfg.rollout.steps = first.rollout.steps;
            eval_cfg.eval_horizon = first.eval_horizon;
            eval_cfg.default_loss = first.default_loss;
            eval_cfg.loss = first.loss;
            const Evaluation ev = evaluate(eval_cfg, model, ctrl, scenarios);
            row.present = true;
            row.transient = summarize(ev.transient);
            row.steady = summarize(ev.steady);
            row.nonfinite = ev.nonfinite;
        }
        rows.push_back(row);
        if (row.present) {
            std::printf("%-24s J = %.6g +- %.3g   C = %.6g +- %.3g\n", row.name.c_str(), row.transient.mean,
                        row.transient.std, row.steady.mean, row.steady.std);
        } else {
            std::printf("%-24s absent (%s)\n", row.name.c_str(), row.checkpoint.c_str());
        }
    }
    std::ostringstream csv;
    csv << provenance_line(config_hash(first), first.test_seed);
    write_compare_csv(csv, rows);
    const std::string out = (fs::path(c.out.empty() ? std::string(".") : c.out) / "compare.csv").string();
    write_file(out, csv.str());
    std::printf("wrote %s\n", out.c_str());
    return exit_ok;
}

// Per-file `t,y_1..y_m,u_1..u_m`; with several inputs also a merged table keyed on t.
int cmd_export(const std::vector<std::string>& files, const std::string& out_dir)
{
    if (files.empty()) {
        throw ConfigError("export needs at least one trajectory file");
    }
    struct Loaded {
        std::string stem;
        std::string provenance;
        Trajectory traj;
    };
    std::vector<Loaded> all;
    for (const auto& f : files) {
        const std::string text = read_file(f);
        std::istringstream is(text);
        Loaded l;
        l.stem = fs::path(f).stem().string();
        if (text.rfind("# ", 0) == 0) {
            l.provenance = text.substr(0, text.find('\n') + 1);
        }
        try {
            l.traj = read_trajectory_csv(is);
        } catch (const ConfigError& e) {
            throw ConfigError(f + ": " + e.what(), e.line());
        }
        all.push_back(std::move(l));
    }
    const std::string dir = out_dir.empty() ? "." : out_dir;
    for (const auto& l : all) {
        std::ostringstream os;
        os << l.provenance << 't';
        const Index m = l.traj.size() ? l.traj.states.front().output.size() : 0;
        for (const char* name : {"y", "u"}) {
            for (Index i = 1; i <= m; ++i) {
                os << ',' << name << '_' << i;
            }
        }
        os << '\n';
        for (std::size_t k = 0; k < l.traj.size(); ++k) {
            os << format_double(l.traj.times[k]);
            for (const Vec* v : {&l.traj.states[k].output, &l.traj.control[k]}) {
                for (Index i = 0; i < m; ++i) {
                    os << ',' << format_double((*v)[i]);
                }
            }
            os << '\n';
        }
        write_file((fs::path(dir) / (l.stem + "_nodes.csv")).string(), os.str());
    }
    if (all.size() > 1) {
        std::map<double, std::vector<std::string>> rows;
        std::ostringstream os;
        os << all.front().provenance << 't';
        std::size_t width = 0;
        for (const auto& l : all) {
            const Index m = l.traj.size() ? l.traj.states.front().output.size() : 0;
            for (const char* name : {"y", "u"}) {
                for (Index i = 1; i <= m; ++i) {
                    os << ',' << l.stem << ':' << name << '_' << i;
                }
            }
            for (std::size_t k = 0; k < l.traj.size(); ++k) {
                auto& cells = rows[l.traj.times[k]];
                cells.resize(width + 2 * static_cast<std::size_t>(m));
                for (Index i = 0; i < m; ++i) {
                    cells[width + static_cast<std::size_t>(i)] = format_double(l.traj.states[k].output[i]);
                    cells[width + static_cast<std::size_t>(m + i)] = format_double(l.traj.control[k][i]);
                }
            }
            width += 2 * static_cast<std::size_t>(m);
        }
        os << '\n';
        for (auto& [t, cells] : rows) {
            cells.resize(width);
            os << format_double(t);
            for (const auto& cell : cells) {
                os << ',' << cell;
            }
            os << '\n';
        }
        write_file((fs::path(dir) / "merged.csv").string(), os.str());
    }
    std::printf("exported %zu file(s) to %s\n", all.size(), dir.c_str());
    return exit_ok;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Neural-PI controllers: train, simulate, certify, compare, export"};
    app.require_subcommand(1);

    Common train_opts, sim_opts, cert_opts, cmp_opts;
    bool no_certify = false;
    auto* train = app.add_subcommand("train", "train a controller; writes checkpoints, loss.csv and cert_report.json");
    add_common(train, train_opts);
    train->add_flag("--no-certify", no_certify, "skip the final certification run");

    std::string sim_ckpt, cert_ckpt;
    int sim_rollouts = 3;
    auto* sim = app.add_subcommand("simulate", "roll out a controller on test scenarios; writes trajectory CSVs");
    add_common(sim, sim_opts);
    sim->add_option("--checkpoint", sim_ckpt, "controller checkpoint (default: untrained controller)");
    sim->add_option("--rollouts", sim_rollouts, "number of test scenarios")->check(CLI::PositiveNumber);

    auto* cert = app.add_subcommand("certify", "run the certification suite; exit 1 on any failed check");
    add_common(cert, cert_opts);
    cert->add_option("--checkpoint", cert_ckpt, "controller checkpoint (default: untrained controller)");

    std::vector<std::string> cmp_configs, cmp_presets, cmp_ckpts;
    auto* cmp = app.add_subcommand("compare", "evaluate several trained configs on one shared test batch");
    cmp->add_option("--config", cmp_configs, "experiment config (repeatable)");
    cmp->add_option("--preset", cmp_presets, "named config (repeatable)");
    cmp->add_option("--checkpoint", cmp_ckpts, "checkpoint per config, in order (default <out>/checkpoint.txt)");
    cmp->add_option("--seed", cmp_opts.seed, "test batch seed (default: the first config's)");
    cmp->add_option("--out", cmp_opts.out, "directory for compare.csv (default .)");
    cmp->add_option("--eval-horizon-s", cmp_opts.horizon, "evaluation horizon in seconds (default 15)");

    std::vector<std::string> exp_files;
    std::string exp_out;
    auto* exp = app.add_subcommand("export", "reshape trajectory CSVs into per-node y/u tables");
    exp->add_option("files", exp_files, "trajectory CSV files")->required();
    exp->add_option("--out", exp_out, "output directory (default .)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? exit_ok : exit_config;
    }

    try {
        if (*train) return cmd_train(train_opts, !no_certify);
        if (*sim) return cmd_simulate(sim_opts, sim_ckpt, sim_rollouts);
        if (*cert) return cmd_certify(cert_opts, cert_ckpt);
        if (*cmp) return cmd_compare(cmp_configs, cmp_presets, cmp_ckpts, cmp_opts);
        if (*exp) return cmd_export(exp_files, exp_out);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "npi: error: %s\n", e.what());
        return exit_config;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "npi: failed: %s\n", e.what());
        return exit_cert_fail;
    }
    return exit_config;
}
