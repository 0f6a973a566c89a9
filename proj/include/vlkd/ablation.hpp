#pragma once

#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "vlkd/trainloop.hpp"

namespace vlkd {

// One study arm: which objectives are removed, how much distillation data is
// kept, whether the teacher is (wrongly) unfrozen.
struct AblationVariant {
    std::string name;
    bool disable_ttdm = false;
    bool disable_itcl = false;
    bool disable_icti = false; // rejected by validation, present so the rejection is testable
    double data_fraction = 1.0;
    bool unfreeze_teacher = false;
};

inline std::vector<AblationVariant> default_ablation_variants() {
    return {
        {"full", false, false, false, 1.0, false},
        {"wo_ttdm", true, false, false, 1.0, false},
        {"wo_itcl", false, true, false, 1.0, false},
        {"wo_both", true, true, false, 1.0, false},
        {"data_third", false, false, false, 1.0 / 3.0, false},
        {"data_tiny", false, false, false, 0.1, false},
        {"unfrozen_teacher", false, false, false, 1.0, true},
    };
}

struct AblationConfig {
    int grid = 3;
    int train_pairs = 640;
    int eval_pairs = 64;
    uint64_t data_seed_base = 50000;
    TeacherConfig teacher_cfg;
    StudentConfig student_cfg;
    TeacherPretrainConfig teacher_pretrain;
    StudentPretrainConfig student_pretrain;
    TrainConfig distill;
};

struct AblationArm {
    std::string name;
    std::vector<double> vqa;
    std::vector<double> caption_f1;
    double mean_vqa = 0.0;
    double mean_caption_f1 = 0.0;
};

// Reduced-scale preset shared by the CLI and the acceptance suite: small
// enough that seven arms x three seeds finish in minutes, large enough that
// the objective/data/frozen orderings are visible.
inline AblationConfig desk_ablation_config() {
    AblationConfig cfg;
    cfg.grid = 3;
    cfg.train_pairs = 512;
    cfg.eval_pairs = 64;
    cfg.data_seed_base = 50000;
    cfg.teacher_pretrain.epochs = 10;
    cfg.teacher_pretrain.batch_size = 32;
    cfg.student_pretrain.epochs = 4;
    cfg.student_pretrain.batch_size = 32;
    cfg.distill.epochs = 4;
    cfg.distill.batch_size = 32;
    return cfg;
}

struct AblationTable {
    std::vector<uint64_t> seeds;
    std::vector<AblationArm> arms;

    const AblationArm& arm(const std::string& name) const {
        for (const auto& a : arms)
            if (a.name == name) return a;
        throw ContractError("ablation table: no arm named '" + name + "'");
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["seeds"] = seeds;
        nlohmann::ordered_json rows = nlohmann::ordered_json::array();
        for (const auto& a : arms) {
            nlohmann::ordered_json r;
            r["name"] = a.name;
            r["mean_vqa_accuracy"] = a.mean_vqa;
            r["mean_caption_f1"] = a.mean_caption_f1;
            r["vqa_accuracy_per_seed"] = a.vqa;
            r["caption_f1_per_seed"] = a.caption_f1;
            rows.push_back(r);
        }
        j["arms"] = rows;
        return j;
    }

    std::string to_text() const {
        std::ostringstream os;
        os << std::left << std::setw(20) << "variant" << std::right << std::setw(12) << "vqa_acc"
           << std::setw(14) << "caption_f1" << "\n";
        os << std::string(46, '-') << "\n";
        for (const auto& a : arms) {
            os << std::left << std::setw(20) << a.name << std::right << std::fixed << std::setprecision(4)
               << std::setw(12) << a.mean_vqa << std::setw(14) << a.mean_caption_f1 << "\n";
        }
        return os.str();
    }
};

// Shared-seed ablation study. Per seed, the teacher and student are
// pretrained once and snapshotted; every variant restores the snapshots,
// reinitializes the projections identically, runs its own distillation, and
// is scored zero-shot on the held-out pool.
template <typename T>
AblationTable ablation_run(const AblationConfig& cfg, const std::vector<AblationVariant>& variants,
                           const std::vector<uint64_t>& seeds, std::ostream* log = nullptr) {
    for (const auto& v : variants)
        if (v.disable_icti)
            throw ContractError("ablation_run: variant '" + v.name + "' disables ICTI, which is required");
    if (seeds.empty()) throw ContractError("ablation_run: no seeds");

    AblationTable table;
    table.seeds = seeds;
    for (const auto& v : variants) table.arms.push_back({v.name, {}, {}, 0.0, 0.0});

    for (uint64_t seed : seeds) {
        const uint64_t data_base = cfg.data_seed_base + seed * 1000000ull;
        auto train = generate_dataset(data_base, cfg.train_pairs, cfg.grid);
        auto eval = generate_unique_caption_dataset(data_base + 500000ull, cfg.eval_pairs, cfg.grid);
        auto corpus = pretraining_texts(train);
        {
            auto extra = pretraining_texts(eval);
            corpus.insert(corpus.end(), extra.begin(), extra.end());
        }
        auto vocab = Vocab::build(corpus);

        Teacher<T> teacher(cfg.teacher_cfg, vocab.size(), seed);
        auto tpt = cfg.teacher_pretrain;
        tpt.seed = seed;
        pretrain_teacher(teacher, vocab, train, {}, tpt);

        Student<T> student(cfg.student_cfg, vocab.size(), seed + 1);
        auto spt = cfg.student_pretrain;
        spt.seed = seed;
        auto pretrain_report = pretrain_student(student, vocab, pretraining_texts(train), spt);

        auto teacher_params = teacher.parameters();
        auto student_params = student.parameters();
        const auto teacher_snap = snapshot_params(teacher_params);
        const auto student_snap = snapshot_params(student_params);

        for (size_t vi = 0; vi < variants.size(); ++vi) {
            const auto& v = variants[vi];
            restore_params(teacher_params, teacher_snap);
            restore_params(student_params, student_snap);
            Rng proj_rng(seed ^ 0xab1a7e5ull);
            auto proj = init_projections<T>(cfg.teacher_cfg.d1, cfg.student_cfg.d2, proj_rng);

            const int keep = std::max(1, static_cast<int>(std::ceil(v.data_fraction * train.size())));
            std::vector<PairRecord> subset(train.begin(), train.begin() + keep);

            TrainConfig tc = cfg.distill;
            tc.seed = seed;
            tc.disable_ttdm = v.disable_ttdm;
            tc.disable_itcl = v.disable_itcl;
            tc.unfreeze_teacher = v.unfreeze_teacher;
            run_distillation(teacher, student, proj, vocab, subset, {}, PerplexityProbe{}, tc, nullptr);

            ZeroShotContext<T> zs{teacher, student, proj, vocab, tc.noise_sigma};
            GenerationConfig gen;
            gen.strategy = GenerationConfig::Strategy::greedy; // 21 arms; beam adds nothing to the ordering
            gen.beam_size = 1;
            auto ev = zero_shot_eval(zs, eval, tc.caption_mask_count, tc.vqa_mask_count, gen);
            table.arms[vi].vqa.push_back(ev.vqa_accuracy);
            table.arms[vi].caption_f1.push_back(ev.caption_f1);
            if (log)
                *log << "seed " << seed << " variant " << v.name << " vqa " << ev.vqa_accuracy << " f1 "
                     << ev.caption_f1 << "\n";
        }
        (void)pretrain_report;
    }
    for (auto& arm : table.arms) {
        for (double x : arm.vqa) arm.mean_vqa += x;
        for (double x : arm.caption_f1) arm.mean_caption_f1 += x;
        arm.mean_vqa /= static_cast<double>(arm.vqa.size());
        arm.mean_caption_f1 /= static_cast<double>(arm.caption_f1.size());
    }
    return table;
}

} // namespace vlkd
