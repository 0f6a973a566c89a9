#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "vlkd/checkpoint.hpp"
#include "vlkd/corruption.hpp"
#include "vlkd/decode.hpp"
#include "vlkd/linalg.hpp"
#include "vlkd/ops.hpp"
#include "vlkd/optimizer.hpp"
#include "vlkd/projections.hpp"
#include "vlkd/prompt.hpp"

namespace vlkd {

struct SelfCheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

// Fast end-to-end invariant sweep (a few seconds): gradient spot checks,
// loss oracles, corruption statistics, schedule shape, serialization.
inline std::vector<SelfCheckResult> run_selfchecks() {
    std::vector<SelfCheckResult> results;
    auto run = [&](const std::string& name, const std::function<std::string()>& body) {
        SelfCheckResult r;
        r.name = name;
        try {
            r.detail = body();
            r.passed = true;
        } catch (const std::exception& e) {
            r.passed = false;
            r.detail = e.what();
        }
        results.push_back(std::move(r));
    };
    auto expect = [](bool ok, const std::string& msg) {
        if (!ok) throw std::runtime_error(msg);
    };

    run("matmul-gradient-vs-finite-differences", [&] {
        Rng rng(1);
        auto a = make_tensor<double>({4, 5}, true);
        auto b = make_tensor<double>({5, 3}, true);
        for (auto& x : a->v) x = rng.normal();
        for (auto& x : b->v) x = rng.normal();
        auto eval = [&] {
            Tape<double> tape;
            auto loss = sum_all(&tape, matmul(&tape, a, b));
            return std::pair{loss, std::move(tape)};
        };
        auto [loss, tape] = eval();
        tape.backward(loss);
        const double h = 1e-5;
        double worst = 0;
        for (size_t i = 0; i < a->v.size(); ++i) {
            const double orig = a->v[i];
            a->v[i] = orig + h;
            const double fp = eval().first->v[0];
            a->v[i] = orig - h;
            const double fm = eval().first->v[0];
            a->v[i] = orig;
            worst = std::max(worst, std::abs((fp - fm) / (2 * h) - a->g[i]));
        }
        expect(worst < 1e-6, "matmul gradient error " + std::to_string(worst));
        return "max abs error " + std::to_string(worst);
    });

    run("softmax-simplex-and-stability", [&] {
        auto x = tensor_from<double>({3}, {1000.0, 0.0, -1000.0});
        auto y = softmax<double>(nullptr, x, 0);
        double total = 0;
        for (double v : y->v) {
            expect(std::isfinite(v) && v >= 0.0, "softmax produced a bad value");
            total += v;
        }
        expect(std::abs(total - 1.0) < 1e-9, "softmax does not sum to one");
        return "ok";
    });

    run("stop-gradient-blocks-flow", [&] {
        auto x = tensor_from<double>({3}, {1, 2, 3}, true);
        auto y = tensor_from<double>({3}, {4, 5, 6}, true);
        Tape<double> tape;
        auto loss = sum_all(&tape, mul(&tape, stop_gradient(x), y));
        tape.backward(loss);
        expect(x->grad_all_zero(), "gradient leaked through stop_gradient");
        return "ok";
    });

    run("pseudo-inverse-residual", [&] {
        Rng rng(7);
        auto w = make_tensor<double>({8, 12});
        for (auto& x : w->v) x = rng.normal() / std::sqrt(12.0);
        auto inv = pseudo_inverse(w);
        auto prod = matmul<double>(nullptr, w, inv);
        double fro = 0;
        for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 8; ++j) {
                const double d = prod->at(i, j) - (i == j ? 1 : 0);
                fro += d * d;
            }
        expect(std::sqrt(fro) <= 1e-6, "residual " + std::to_string(std::sqrt(fro)));
        return "residual " + std::to_string(std::sqrt(fro));
    });

    run("itcl-two-pair-oracle", [&] {
        auto a = tensor_from<double>({2, 2}, {1, 0, 0, 1});
        auto tau = scalar_tensor<double>(0.0);
        Tape<double> tape;
        auto loss = symmetric_info_nce(&tape, a, a, tau);
        const double expected = std::log(1.0 + std::exp(-1.0));
        expect(std::abs(loss->v[0] - expected) < 1e-9, "loss " + std::to_string(loss->v[0]));
        return "ok";
    });

    run("ttdm-bounds", [&] {
        auto u = tensor_from<double>({1, 2}, {0.6, 0.8});
        auto anti = tensor_from<double>({1, 2}, {-0.6, -0.8});
        Tape<double> tape;
        expect(std::abs(loss_ttdm(&tape, u, anti)->v[0] - 4.0) < 1e-12, "antipodal case");
        expect(loss_ttdm(&tape, u, u)->v[0] == 0.0, "identical case");
        return "ok";
    });

    run("corruption-budget-and-roundtrip", [&] {
        std::vector<std::string> pool{"a", "red", "circle", "above", "blue", "square"};
        std::vector<std::string> words;
        for (int i = 0; i < 20; ++i) words.push_back(pool[static_cast<size_t>(i) % pool.size()]);
        auto vocab = Vocab::build({join_words(words)});
        auto toks = vocab.tokenize(join_words(words), TextKind::student_text);
        Rng rng(3);
        for (int t = 0; t < 300; ++t) {
            auto out = corrupt_spans(toks, rng);
            int masked = 0;
            for (auto& [s, l] : out.span_log) masked += l;
            expect(masked == 3, "budget violated");
            expect(vocab.detokenize(out.target) == join_words(words), "target corrupted");
        }
        return "ok";
    });

    run("prompt-mask-counts", [&] {
        auto vocab = Vocab::build({"a picture of answer : . what color is the circle ?"});
        for (int m : {1, 6, 8}) {
            auto p = build_prompt(vocab, PromptTask::caption, nullptr, m);
            int masks = 0;
            for (int id : p.ids) masks += id == Vocab::mask_id ? 1 : 0;
            expect(masks == m, "mask count mismatch");
        }
        return "ok";
    });

    run("lr-schedule-shape", [&] {
        expect(std::abs(lr_at(20, 1000, 2.4e-4, 0.02) - 2.4e-4) < 1e-18, "warmup peak");
        expect(lr_at(1000, 1000, 2.4e-4, 0.02) == 0.0, "final decay");
        expect(std::abs(lr_at(10, 1000, 2.4e-4, 0.02) - 1.2e-4) < 1e-18, "warmup midpoint");
        return "ok";
    });

    run("grad-clip-cases", [&] {
        auto p = tensor_from<float>({2}, {0.0f, 0.0f}, true);
        p->g = {6.0f, 0.0f};
        ParamList<float> params{{"w", p, true, false}};
        const double norm = clip_grad_norm(params, 3.0);
        expect(std::abs(norm - 6.0) < 1e-6 && std::abs(p->g[0] - 3.0f) < 1e-6, "rescale");
        return "ok";
    });

    run("adamw-hand-step", [&] {
        auto p = tensor_from<float>({1}, {1.0f}, true);
        p->g = {0.5f};
        AdamW<float> opt({{"w", p, true, false}}, AdamConfig{});
        opt.step(0.1);
        const double mhat = 0.5, vhat = 0.25;
        const double expected = 1.0 - 0.1 * (mhat / (std::sqrt(vhat) + 1e-6) + 0.01);
        expect(std::abs(p->v[0] - expected) < 1e-6, "update mismatch");
        return "ok";
    });

    run("checkpoint-roundtrip", [&] {
        const std::string dir = "selfcheck_ckpt";
        auto a = tensor_from<float>({2}, {1.5f, -2.5f}, true);
        ParamList<float> params{{"w", a, true, false}};
        nlohmann::ordered_json meta;
        meta["seed"] = 5;
        save_checkpoint(dir, params, meta);
        auto loaded = load_checkpoint(dir);
        expect(loaded.tensors.size() == 1 && loaded.tensors[0].values == a->v, "values changed");
        std::filesystem::remove_all(dir);
        return "ok";
    });

    run("beam-one-equals-greedy", [&] {
        auto scorer = [](const std::vector<int>& prefix) {
            std::vector<double> logp(5, -3.0);
            logp[(prefix.size() * 2 + 1) % 5] = -0.1;
            if (prefix.size() >= 3) logp[Vocab::eos_id] = -0.05;
            return logp;
        };
        auto g = greedy_decode_scored(scorer, 6);
        auto b = beam_search_scored(scorer, 1, 6);
        expect(g.ids == b.ids, "sequences differ");
        return "ok";
    });

    return results;
}

} // namespace vlkd
