#include <catch2/catch.hpp>

#include <cstdlib>
#include <fstream>

#include "vlkd/config.hpp"

using namespace vlkd;

TEST_CASE("empty config carries the documented defaults") {
    auto cfg = RunConfig::parse(std::nullopt, {});
    CHECK(cfg.effective()["gamma"].get<double>() == 1000.0);
    CHECK(cfg.effective()["warmup_fraction"].get<double>() == Approx(0.02));
    CHECK(cfg.effective()["mask_count_caption"].get<int>() == 6);
    CHECK(cfg.effective()["mask_count_vqa"].get<int>() == 2);
    CHECK(cfg.effective()["base_lr"].get<double>() == Approx(2.4e-4));
    CHECK(cfg.effective()["grad_clip"].get<double>() == 3.0);
    CHECK(cfg.effective()["finetune_grad_clip"].get<double>() == 5.0);
    CHECK(cfg.effective()["adam_eps"].get<double>() == Approx(1e-6));
    CHECK(cfg.effective()["finetune_adam_eps"].get<double>() == Approx(1e-8));
    CHECK(cfg.effective()["label_smoothing"].get<double>() == Approx(0.1));
    CHECK(cfg.effective()["epochs"].get<int>() == 10);
    // the temperature itself initializes inside the projections
    Rng rng(1);
    auto proj = init_projections<double>(cfg.teacher_config().d1, cfg.student_config().d2, rng);
    CHECK(proj.tau() == Approx(0.07).epsilon(1e-12));
}

TEST_CASE("overrides win over the config file") {
    const std::string path = "test_cfg.json";
    std::ofstream(path) << R"({"gamma": 250.0, "epochs": 3})";
    auto cfg = RunConfig::parse(path, {{"gamma", "500"}});
    CHECK(cfg.effective()["gamma"].get<double>() == 500.0);
    CHECK(cfg.effective()["epochs"].get<int>() == 3);
    std::remove(path.c_str());
}

TEST_CASE("unknown keys are rejected by name") {
    try {
        RunConfig::parse(std::nullopt, {{"warmup_fractoin", "0.02"}});
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("warmup_fractoin") != std::string::npos);
    }
}

TEST_CASE("invariant violations name the field") {
    try {
        RunConfig::parse(std::nullopt, {{"warmup_fraction", "1.5"}});
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("warmup_fraction") != std::string::npos);
    }
    CHECK_THROWS_AS(RunConfig::parse(std::nullopt, {{"visual_context_mode", "resnet"}}), ParseError);
    CHECK_THROWS_AS(RunConfig::parse(std::nullopt, {{"d1", "128"}}), ParseError); // d1 > d2
    CHECK_THROWS_AS(RunConfig::parse(std::nullopt, {{"gamma", "\"high\""}}), ParseError);
}

TEST_CASE("VLKD_SEED environment variable overrides the seed") {
    setenv("VLKD_SEED", "777", 1);
    auto cfg = RunConfig::parse(std::nullopt, {{"seed", "5"}});
    CHECK(cfg.seed() == 777);
    unsetenv("VLKD_SEED");
    auto cfg2 = RunConfig::parse(std::nullopt, {{"seed", "5"}});
    CHECK(cfg2.seed() == 5);
}

TEST_CASE("typed sub-configs reflect the effective values") {
    auto cfg = RunConfig::parse(std::nullopt, {{"visual_context_mode", "full_sequence"}, {"grid", "2"}});
    CHECK(cfg.teacher_config().mode == VisualMode::full_sequence);
    CHECK(cfg.teacher_config().patches == 4);
    CHECK(cfg.finetune_config().base_lr == Approx(1e-4));
    CHECK(cfg.finetune_config().grad_clip == 5.0);
    CHECK(cfg.distill_config().grad_clip == 3.0);
}
