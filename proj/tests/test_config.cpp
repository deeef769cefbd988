#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "test_support.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "cwgf/config.hpp"
#include "cwgf/errors.hpp"
#include "cwgf/experiments.hpp"

using namespace cwgf;

namespace {

std::string error_text(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const ConfigError& err) {
        return err.what();
    }
    return "";
}

} // namespace

TEST_CASE("parses sections, comments, and typed values") {
    Config config = Config::parse_string("# leading comment\n"
                                         "\n"
                                         "[solver]\n"
                                         "iterations = 12   # trailing comment\n"
                                         "eta_r = 0.25\n"
                                         "trace = true\n"
                                         "label = fast run\n"
                                         "\n"
                                         "[plan]\n"
                                         "base_set = 999, 499, 139\n"
                                         "scales = 0.5,1.0,2.0\n"
                                         "seed = 18446744073709551615\n");

    CHECK(config.has("solver", "iterations"));
    CHECK(!config.has("solver", "missing"));
    CHECK(config.get_int("solver", "iterations") == 12);
    CHECK(config.get_double("solver", "eta_r") == 0.25);
    CHECK(config.get_bool("solver", "trace", false) == true);
    CHECK(config.get_string("solver", "label") == "fast run");
    CHECK(config.get_int_list("plan", "base_set", {}) == std::vector<int>{999, 499, 139});
    CHECK(config.get_double_list("plan", "scales") == std::vector<double>{0.5, 1.0, 2.0});
    CHECK(config.get_uint64("plan", "seed", 0) == 18446744073709551615ULL);
    CHECK_NOTHROW(config.require_consumed());
}

TEST_CASE("fallbacks cover absent keys only") {
    Config config = Config::parse_string("[solver]\n"
                                         "particles = 32\n");
    CHECK(config.get_int("solver", "particles", 8) == 32);
    CHECK(config.get_int("solver", "iterations", 16) == 16);
    CHECK(config.get_double("solver", "sigma_y", 0.01) == 0.01);
    CHECK(config.get_string("solver", "kind", "gaussian") == "gaussian");
    CHECK(config.get_bool("solver", "trace", false) == false);
    CHECK(config.get_double_list("plan", "scales", {1.0}) == std::vector<double>{1.0});
    CHECK_NOTHROW(config.require_consumed());
}

TEST_CASE("duplicate keys are rejected with both line numbers") {
    const std::string text = "[solver]\n"
                             "eta_r = 0.1\n"
                             "eta_r = 0.2\n";
    CHECK_THROWS_AS(Config::parse_string(text), ConfigError);
    const std::string what = error_text([&] { Config::parse_string(text); });
    CHECK(what.find("duplicate") != std::string::npos);
    CHECK(what.find("line 2") != std::string::npos);
    CHECK(what.find("line 3") != std::string::npos);
    CHECK(what.find("solver.eta_r") != std::string::npos);
}

TEST_CASE("unknown keys surface with their line numbers") {
    Config config = Config::parse_string("[solver]\n"
                                         "iterations = 4\n"
                                         "etc = 1\n"
                                         "[plan]\n"
                                         "mistyped_mode = cyclic\n");
    CHECK(config.get_int("solver", "iterations") == 4);
    CHECK_THROWS_AS(config.require_consumed(), ConfigError);
    const std::string what = error_text([&] { config.require_consumed(); });
    CHECK(what.find("solver.etc") != std::string::npos);
    CHECK(what.find("line 3") != std::string::npos);
    CHECK(what.find("plan.mistyped_mode") != std::string::npos);
    CHECK(what.find("line 5") != std::string::npos);
}

TEST_CASE("type errors carry line and field") {
    Config config = Config::parse_string("[solver]\n"
                                         "eta_r = frog\n"
                                         "iterations = 2.5\n"
                                         "trace = maybe\n"
                                         "seed = -3\n"
                                         "huge = 99999999999\n"
                                         "scales = 0.5, frog, 2.0\n");

    SUBCASE("invalid double") {
        const std::string what = error_text([&] { config.get_double("solver", "eta_r"); });
        CHECK(what.find("frog") != std::string::npos);
        CHECK(what.find("line 2") != std::string::npos);
        CHECK(what.find("solver.eta_r") != std::string::npos);
    }
    SUBCASE("invalid integer") {
        const std::string what = error_text([&] { config.get_int("solver", "iterations"); });
        CHECK(what.find("line 3") != std::string::npos);
        CHECK(what.find("solver.iterations") != std::string::npos);
    }
    SUBCASE("invalid bool") {
        CHECK_THROWS_AS(config.get_bool("solver", "trace", false), ConfigError);
    }
    SUBCASE("negative unsigned") {
        CHECK_THROWS_AS(config.get_uint64("solver", "seed", 0), ConfigError);
    }
    SUBCASE("integer out of range") {
        const std::string what = error_text([&] { config.get_int("solver", "huge"); });
        CHECK(what.find("out of range") != std::string::npos);
    }
    SUBCASE("invalid list element") {
        const std::string what =
            error_text([&] { config.get_double_list("solver", "scales"); });
        CHECK(what.find("frog") != std::string::npos);
        CHECK(what.find("line 7") != std::string::npos);
    }
    SUBCASE("typed accessors report the structured location") {
        try {
            config.get_double("solver", "eta_r");
            FAIL("expected a config error");
        } catch (const ConfigError& err) {
            CHECK(err.line() == 2);
            CHECK(err.field() == "solver.eta_r");
        }
    }
}

TEST_CASE("structural errors name the offending line") {
    CHECK_THROWS_AS(Config::parse_string("[solver]\niterations 8\n"), ConfigError);
    CHECK_THROWS_AS(Config::parse_string("iterations = 8\n"), ConfigError);
    CHECK_THROWS_AS(Config::parse_string("[solver\niterations = 8\n"), ConfigError);
    CHECK_THROWS_AS(Config::parse_string("[]\n"), ConfigError);
    CHECK_THROWS_AS(Config::parse_string("[solver]\n= 8\n"), ConfigError);

    const std::string what =
        error_text([] { Config::parse_string("[solver]\n\niterations 8\n"); });
    CHECK(what.find("line 3") != std::string::npos);
}

TEST_CASE("missing required fields name the dotted key") {
    Config config = Config::parse_string("[solver]\niterations = 8\n");
    const std::string what = error_text([&] { config.get_string("experiment", "kind"); });
    CHECK(what.find("experiment.kind") != std::string::npos);
}

TEST_CASE("overrides replace or insert entries") {
    Config config = Config::parse_string("[solver]\n"
                                         "iterations = 8\n");
    config.override_value("solver.iterations", "24");
    config.override_value("experiment.seed", "7");
    CHECK(config.get_int("solver", "iterations") == 24);
    CHECK(config.get_uint64("experiment", "seed", 1) == 7);
    CHECK_NOTHROW(config.require_consumed());

    CHECK_THROWS_AS(config.override_value("iterations", "3"), ConfigError);

    // An override that nothing reads is still an unknown key.
    Config leftover = Config::parse_string("[solver]\niterations = 8\n");
    leftover.override_value("solver.bogus", "1");
    CHECK(leftover.get_int("solver", "iterations") == 8);
    CHECK_THROWS_AS(leftover.require_consumed(), ConfigError);
}

TEST_CASE("file parsing matches string parsing") {
    const std::string path = "test_config_roundtrip.cfg";
    {
        std::ofstream out(path);
        out << "[experiment]\nkind = gaussian\nseed = 3\n";
    }
    Config config = Config::parse_file(path);
    CHECK(config.get_string("experiment", "kind") == "gaussian");
    CHECK(config.get_uint64("experiment", "seed", 1) == 3);
    std::remove(path.c_str());

    CHECK_THROWS_AS(Config::parse_file("does_not_exist.cfg"), ConfigError);
}

TEST_CASE("minimal gaussian experiment fills documented defaults") {
    Config config = Config::parse_string("[experiment]\nkind = gaussian\n");
    Experiment exp = build_experiment(config);
    CHECK_NOTHROW(config.require_consumed());

    CHECK(exp.kind == "gaussian");
    CHECK(exp.seed == 1);
    CHECK(exp.solver.iterations == 16);
    CHECK(exp.solver.particles == 8);
    CHECK(exp.solver.eta_r == 1.0);
    CHECK(exp.solver.eta_l == 1.0);
    CHECK(exp.solver.eta_c == 1.0);
    CHECK(exp.solver.sigma_y == 0.01);
    CHECK(exp.solver.prompt_radius == 15.0);
    CHECK(exp.solver.trace == false);
    CHECK(exp.solver.rescale_prior_rate == false);
    CHECK(exp.solver.plan.mode == TimestepPlan::Mode::cyclic);
    CHECK(exp.solver.plan.base_set ==
          std::vector<int>{999, 879, 759, 639, 499, 379, 259, 139});
    CHECK(exp.solver.plan.iterations == 16);
    CHECK(exp.solver.sched.beta_min == 0.1);
    CHECK(exp.solver.sched.beta_max == 20.0);
    CHECK(exp.solver.sched.t_max == 1.0);
    CHECK(exp.solver.weights.w_floor == 0.1);
    CHECK(exp.solver.weights.w_slope == 0.8);

    REQUIRE(exp.gaussian != nullptr);
    CHECK(exp.gaussian->latent_dim() == 4);
    CHECK(exp.gaussian->prompt_dim() == 4);
    CHECK(exp.vae->sigma_dec() == 0.1);
    CHECK(exp.vae->lambda() == 1e-4);
    CHECK(exp.vae->pixel_dim() == 4);
    CHECK(exp.op->kind() == "mask");
    CHECK(exp.op->output_dim() == 4);

    Vec prompt_true(4);
    prompt_true << 1.5, -1.0, 1.5, -1.0;
    CHECK((exp.prompt_true - prompt_true).norm() == 0.0);
    CHECK(exp.prompt_init.norm() == 0.0);
    CHECK(exp.z_true.size() == 4);
    CHECK(exp.x_true.size() == 4);
    CHECK(exp.y.size() == 4);
    CHECK(exp.particles0.rows() == 4);
    CHECK(exp.particles0.cols() == 8);
    CHECK(exp.particles0.allFinite());
}

TEST_CASE("experiment construction is deterministic in the seed") {
    const std::string text = "[experiment]\nkind = gaussian\nseed = 11\n"
                             "[prior]\ncovariance = random_spd\n"
                             "[vae]\nweight = random\nbias = random\n"
                             "[operator]\nkind = mask\nkeep_fraction = 0.75\n";
    Config a = Config::parse_string(text);
    Config b = Config::parse_string(text);
    Experiment ea = build_experiment(a);
    Experiment eb = build_experiment(b);
    CHECK((ea.y - eb.y).norm() == 0.0);
    CHECK((ea.z_true - eb.z_true).norm() == 0.0);
    CHECK((ea.particles0 - eb.particles0).norm() == 0.0);
    CHECK(ea.solver.seed == eb.solver.seed);

    Config c = Config::parse_string(text);
    c.override_value("experiment.seed", "12");
    Experiment ec = build_experiment(c);
    CHECK((ea.y - ec.y).norm() > 0.0);
}

TEST_CASE("gmm experiment defaults mask the separated coordinate") {
    Config config = Config::parse_string("[experiment]\nkind = gmm_inpaint\n");
    Experiment exp = build_experiment(config);
    CHECK_NOTHROW(config.require_consumed());

    REQUIRE(exp.gmm != nullptr);
    CHECK(exp.gmm_mode == "joint");
    CHECK(exp.independent_runs == 256);
    CHECK(exp.op->kind() == "mask");
    CHECK(exp.world().latent_dim() == 2);
    // The observation sees only the second coordinate.
    Vec probe(2);
    probe << 1.0, 2.0;
    const Vec seen = exp.op->apply(probe);
    CHECK(seen[0] == 0.0);
    CHECK(seen[1] == 2.0);
}

TEST_CASE("experiment validation rejects inconsistent blocks") {
    SUBCASE("unknown kind") {
        Config config = Config::parse_string("[experiment]\nkind = frog\n");
        CHECK_THROWS_AS(build_experiment(config), ConfigError);
    }
    SUBCASE("diag spectrum length") {
        Config config = Config::parse_string("[experiment]\nkind = gaussian\n"
                                             "[prior]\ncovariance = diag\ndiag = 1.0, 2.0\n");
        CHECK_THROWS_AS(build_experiment(config), ConfigError);
    }
    SUBCASE("nonpositive spectrum entry") {
        Config config =
            Config::parse_string("[experiment]\nkind = gaussian\n"
                                 "[prior]\ncovariance = diag\ndiag = 1.0, -2.0, 1.0, 1.0\n");
        CHECK_THROWS_AS(build_experiment(config), ConfigError);
    }
    SUBCASE("mask keeps nothing") {
        Config config = Config::parse_string("[experiment]\nkind = gaussian\n"
                                             "[operator]\nkind = mask\nkeep = 0, 0, 0, 0\n");
        CHECK_THROWS_AS(build_experiment(config), ConfigError);
    }
    SUBCASE("mask entries outside 0/1") {
        Config config = Config::parse_string("[experiment]\nkind = gaussian\n"
                                             "[operator]\nkind = mask\nkeep = 1, 0, 2, 1\n");
        CHECK_THROWS_AS(build_experiment(config), ConfigError);
    }
    SUBCASE("identity decoder needs matching dimensions") {
        Config config = Config::parse_string("[experiment]\nkind = gaussian\n"
                                             "[vae]\nrows = 5\n");
        CHECK_THROWS_AS(build_experiment(config), ConfigError);
    }
    SUBCASE("prompt vector length") {
        Config config = Config::parse_string("[experiment]\nkind = gaussian\n"
                                             "[prior]\nprompt_init = 0.0, 0.0\n");
        CHECK_THROWS_AS(build_experiment(config), ConfigError);
    }
    SUBCASE("gmm mode") {
        Config config = Config::parse_string("[experiment]\nkind = gmm_inpaint\n"
                                             "[gmm]\nmode = batched\n");
        CHECK_THROWS_AS(build_experiment(config), ConfigError);
    }
}
