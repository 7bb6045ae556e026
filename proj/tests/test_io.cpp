#include "npi/io.hpp"

#include <doctest.h>

#include <sstream>

using namespace npi;

namespace {

ExperimentConfig parse(const std::string& text)
{
    std::istringstream is(text);
    return parse_experiment(is);
}

int error_line(const std::string& text)
{
    try {
        parse(text);
    } catch (const ConfigError& e) {
        return e.line();
    }
    return -1;
}

std::string checkpoint_text(const PiController& c, const CheckpointMeta& meta = {})
{
    std::ostringstream os;
    write_checkpoint(os, c, meta);
    return os.str();
}

PiController reread(const std::string& text, CheckpointMeta* meta = nullptr)
{
    std::istringstream is(text);
    return read_checkpoint(is, meta);
}

const char* power_cfg = R"(# desk power
[experiment]
name = power-test
seed = 4

[plant]
kind = power   ; ring network
nodes = 6

[controller]
partition = groups
groups = 0 1 2 | 3 | 4 5
hidden = 8 8

[rollout]
dt = 0.01
steps = 200

[train]
epochs = 3
threads = 2
)";

} // namespace

TEST_CASE("INI parsing")
{
    std::istringstream is("top = 1\n[a]\nx = 1 2 3 # trailing\n\n; note\nx = 4\n[ b ]\ny=z\n");
    const auto s = parse_ini(is);
    REQUIRE(s.size() == 3);
    CHECK(s[0].name.empty());
    CHECK(s[0].entries[0].key == "top");
    CHECK(s[1].entries.size() == 2);
    CHECK(s[1].entries[0].value == "1 2 3");
    CHECK(s[1].entries[1].line == 6);
    CHECK(s[2].name == "b");
    CHECK(s[2].entries[0].value == "z");

    for (const auto& [text, line] : std::vector<std::pair<std::string, int>>{
             {"[a]\nnot a pair\n", 2}, {"[a\n", 1}, {"[a]\n[a]\n", 2}, {"[a]\nk =\n", 2}, {"[a]\n = v\n", 2}}) {
        std::istringstream bad(text);
        try {
            parse_ini(bad);
            FAIL("expected ConfigError for " << text);
        } catch (const ConfigError& e) {
            CHECK(e.line() == line);
        }
    }
}

TEST_CASE("experiment configs")
{
    const ExperimentConfig c = parse(power_cfg);
    CHECK(c.name == "power-test");
    CHECK(c.seed == 4);
    CHECK(c.train.seed == 4);
    CHECK(c.plant.kind == "power");
    CHECK(c.scenarios.setpoint_lo == 60.0);
    CHECK(c.scenarios.max_disturbed == 3);
    CHECK(c.controller.partition == PartitionKind::custom);
    CHECK(c.controller.groups == std::vector<std::vector<Index>>{{0, 1, 2}, {3}, {4, 5}});
    CHECK(c.controller.hidden == std::vector<int>{8, 8});
    CHECK(c.train.rollout.steps == 200);
    CHECK(eval_rollout(c).steps == 1500);
    CHECK(std::holds_alternative<PowerModel>(make_plant(c)));
    CHECK(make_loss(c, make_plant(c)).nadir_weight == 1.0);

    // Canonical text re-parses to itself; the hash ignores comments, order and threads.
    const std::string canon = canonical_text(c);
    CHECK(canonical_text(parse(canon)) == canon);
    std::string shuffled = power_cfg;
    shuffled.replace(shuffled.find("threads = 2"), 11, "threads = 1");
    shuffled += "[controller_unused_check]\n";
    CHECK(error_line(shuffled) == 22);
    shuffled.erase(shuffled.find("[controller_unused_check]"));
    shuffled = "# another comment\n" + shuffled;
    CHECK(config_hash(parse(shuffled)) == config_hash(c));
    std::string reseeded = power_cfg;
    reseeded.replace(reseeded.find("seed = 4"), 8, "seed = 5");
    CHECK(config_hash(parse(reseeded)) != config_hash(c));
    CHECK(config_hash(c).size() == 16);

    CHECK(error_line("[plant]\nkind = boat\n") == 2);
    CHECK(error_line("[train]\nepochs = 0\n") == 2);
    CHECK(error_line("[train]\n\nlr = fast\n") == 3);
    CHECK(error_line("[rollout]\ndt = 0.01\nsteps = 10\nmystery = 1\n") == 4);
    CHECK(error_line("[controller]\nkind = lstm\n") == 2);
    CHECK(error_line("[controller]\ngroups = 0 1\n") == 2); // needs partition = groups
    CHECK(error_line("[plant]\nnodes = 3\n[controller]\npartition = groups\ngroups = 0 0 | 1\n") == 5);
    CHECK(error_line("[weird]\n") == 1);
    CHECK_THROWS_AS(load_experiment("/nonexistent/x.cfg"), ConfigError);
}

TEST_CASE("checkpoints round-trip bit-exactly")
{
    const PlantModel plant = generate_platoon(4, 1);
    std::vector<PiController> ctrls;
    for (ControllerKind kind : {ControllerKind::neural_pi, ControllerKind::linear_pi, ControllerKind::dense_nn_pi}) {
        ControllerSpec spec;
        spec.kind = kind;
        spec.hidden = {5, 3};
        spec.partition = PartitionKind::half;
        spec.init.bias_scale = 0.4;
        ctrls.push_back(build_controller(spec, 4, Vec::Constant(4, 5.0), 9));
    }
    ControllerSpec raw;
    raw.kind = ControllerKind::linear_pi;
    raw.unconstrained = true;
    ctrls.push_back(build_controller(raw, 4, Vec::Constant(4, 5.0), 9));
    // Perturb so values are not round numbers.
    for (auto& c : ctrls) {
        Vec t = controller_params(c);
        t += Vec::LinSpaced(t.size(), -0.3, 0.7).array().sin().matrix() / 3.0;
        set_controller_params(c, t);
        c.integral_state = Vec{{0.1, -1.0 / 3.0, 2.0, 1e-300}};
    }
    const CheckpointMeta meta{"00ff00ff00ff00ff", 42, ControllerKind::neural_pi, 7};
    for (const auto& c : ctrls) {
        const std::string text = checkpoint_text(c, meta);
        CheckpointMeta back_meta;
        const PiController back = reread(text, &back_meta);
        CHECK(controller_params(back) == controller_params(c));
        CHECK(back.setpoint == c.setpoint);
        CHECK(back.integral_state == c.integral_state);
        CHECK(back_meta.config_hash == meta.config_hash);
        CHECK(back_meta.seed == 42);
        CHECK(back_meta.epoch == 7);
        CHECK(checkpoint_text(back, meta) == text);
        const Vec y = Vec{{5.3, 4.9, 5.1, 5.0}};
        CHECK(pi_control(back, y) == pi_control(c, y));
    }
    const std::string text = checkpoint_text(ctrls[0], meta);
    CHECK(text.find("version 1") != std::string::npos);
    CHECK(text.find("beta_pre") != std::string::npos);
    CHECK(text.find("matrix hidden_pre_1 3 5") != std::string::npos);
}

TEST_CASE("corrupted checkpoints are line-anchored parse errors")
{
    ControllerSpec spec;
    spec.hidden = {3};
    const std::string text = checkpoint_text(build_controller(spec, 3, Vec::Constant(3, 5.0), 1));
    auto line_of_error = [](const std::string& t) {
        try {
            reread(t);
        } catch (const ConfigError& e) {
            return e.line();
        }
        return -1;
    };
    CHECK(line_of_error(text.substr(0, text.size() / 2)) > 0);
    std::string bad_number = text;
    const auto at = bad_number.find("beta_pre ") + 9;
    bad_number.replace(at, 3, "x.y");
    int expect_line = 1 + static_cast<int>(std::count(bad_number.begin(), bad_number.begin() + at, '\n'));
    CHECK(line_of_error(bad_number) == expect_line);
    std::string version = text;
    version.replace(version.find("version 1"), 9, "version 9");
    CHECK(line_of_error(version) == 2);
    CHECK(line_of_error("hello\n") == 1);
    CHECK(line_of_error(text + "extra\n") > 0);
    CHECK_THROWS_AS(load_checkpoint("/nonexistent/ckpt.txt"), ConfigError);
}

TEST_CASE("plant files round-trip")
{
    for (const PlantModel& model : {PlantModel(generate_platoon(5, 2)), PlantModel(generate_power(6, 3))}) {
        std::ostringstream os;
        write_plant(os, model);
        std::istringstream is(os.str());
        const PlantModel back = read_plant(is);
        REQUIRE(back.index() == model.index());
        std::ostringstream again;
        write_plant(again, back);
        CHECK(again.str() == os.str());
        std::visit(overloaded{[&](const PlatoonModel& p) {
                                  const auto& q = std::get<PlatoonModel>(back);
                                  CHECK(q.incidence == p.incidence);
                                  CHECK(q.distance_gain == p.distance_gain);
                                  CHECK(q.default_velocity == p.default_velocity);
                              },
                              [&](const PowerModel& p) {
                                  const auto& q = std::get<PowerModel>(back);
                                  CHECK(q.incidence == p.incidence);
                                  CHECK(q.susceptance == p.susceptance);
                                  CHECK(q.load == p.load);
                              }},
                   model);
    }
    std::istringstream short_vec("[plant]\nkind = power\nnodes = 2\ninertia = 1\ndamping = 1 1\nload = 0 0\n"
                                 "[edges]\nedge = 0 1 5\n");
    try {
        read_plant(short_vec);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(e.line() == 4);
    }
    std::istringstream bad_edge("[plant]\nkind = platoon\nnodes = 2\nsensitivity = 1 1\ngain = 1 1\n"
                                "default_velocity = 5 5\n[edges]\nedge = 0 7 1\n");
    CHECK_THROWS_AS(read_plant(bad_edge), ConfigError);
}

TEST_CASE("loss history CSV and provenance")
{
    std::ostringstream os;
    write_loss_csv(os, {{1, 2.5, 0}, {2, 1.0 / 3.0, 1}});
    CHECK(os.str() == "epoch,mean_loss,dropped_rollouts\n1,2.5,0\n2,0.33333333333333331,1\n");
    CHECK(provenance_line("abc", 3) == "# npi config_hash=abc seed=3\n");

    // Trajectory CSVs may carry the provenance line.
    const PlantModel model = generate_platoon(2, 1);
    RolloutConfig cfg;
    cfg.steps = 3;
    const Trajectory t = rollout_constant(model, Vec::Zero(2), PlantState{Vec::Zero(2), Vec::Constant(2, 5.0)}, cfg);
    std::ostringstream csv;
    csv << provenance_line("abc", 3);
    write_trajectory_csv(csv, t);
    std::istringstream in(csv.str());
    CHECK(read_trajectory_csv(in).size() == 4);
}
