#pragma once

#include <cmath>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vlkd/checkpoint.hpp"
#include "vlkd/inference.hpp"
#include "vlkd/optimizer.hpp"
#include "vlkd/projections.hpp"

namespace vlkd {

struct TrainConfig {
    int epochs = 10;
    int batch_size = 32;
    double base_lr = 2.4e-4;
    double warmup_fraction = 0.02;
    double grad_clip = 3.0;
    double weight_decay = 0.01;
    double adam_eps = 1e-6;
    double gamma = 1000.0;
    uint64_t seed = 1;
    bool disable_ttdm = false;
    bool disable_itcl = false;
    bool unfreeze_teacher = false;
    double corruption_rate = 0.15;
    double poisson_lambda = 3.0;
    double noise_sigma = 0.1;
    double eval_cadence_fraction = 0.10;
    // finetuning knobs (Table 9 values by default)
    double label_smoothing = 0.1;
    int vqa_mask_count = 2;
    int caption_mask_count = 6;

    void validate() const {
        auto positive = [](double v, const char* field) {
            if (!(v > 0.0)) throw ContractError(std::string("train config: ") + field + " must be positive");
        };
        if (epochs <= 0) throw ContractError("train config: epochs must be positive");
        if (batch_size <= 0) throw ContractError("train config: batch_size must be positive");
        positive(base_lr, "base_lr");
        if (!(warmup_fraction > 0.0 && warmup_fraction < 1.0))
            throw ContractError("train config: warmup_fraction must lie in (0,1)");
        positive(grad_clip, "grad_clip");
        positive(adam_eps, "adam_eps");
        positive(gamma, "gamma");
        if (!(corruption_rate > 0.0 && corruption_rate < 1.0))
            throw ContractError("train config: corruption_rate must lie in (0,1)");
        positive(poisson_lambda, "poisson_lambda");
        if (noise_sigma < 0.0) throw ContractError("train config: noise_sigma must be nonnegative");
        if (!(eval_cadence_fraction > 0.0 && eval_cadence_fraction <= 1.0))
            throw ContractError("train config: eval_cadence_fraction must lie in (0,1]");
        if (label_smoothing < 0.0 || label_smoothing >= 1.0)
            throw ContractError("train config: label_smoothing must lie in [0,1)");
        if (vqa_mask_count < 1 || caption_mask_count < 1)
            throw ContractError("train config: mask counts must be >= 1");
    }
};

struct EvalRecord {
    int64_t step = 0;
    double r1_i2t = 0.0;
    double r1_t2i = 0.0;
    double vqa_accuracy = 0.0;
    double perplexity = 0.0;
};

struct DistillReport {
    int64_t steps = 0;
    double first_window_avg = 0.0; // mean total loss over the first 10 steps
    double last_window_avg = 0.0;  // mean total loss over the last 10 steps
    EvalRecord pre_eval;
    EvalRecord post_eval;
    std::vector<EvalRecord> evals;
    uint64_t teacher_hash_before = 0;
    uint64_t teacher_hash_after = 0;
    int64_t metrics_step_lines = 0;
    int64_t metrics_eval_lines = 0;
    LossBreakdown last_breakdown;
};

namespace detail {

inline void write_step_line(std::ostream* metrics, int64_t step, double lr, const LossBreakdown& b,
                            double grad_norm) {
    if (!metrics) return;
    nlohmann::ordered_json j;
    j["step"] = step;
    j["lr"] = lr;
    j["ttdm"] = b.ttdm;
    j["itcl"] = b.itcl;
    j["icti"] = b.icti;
    j["total"] = b.total;
    j["tau"] = b.tau_value;
    j["grad_norm"] = grad_norm;
    *metrics << j.dump() << "\n";
}

inline void write_eval_line(std::ostream* metrics, const EvalRecord& e) {
    if (!metrics) return;
    nlohmann::ordered_json j;
    j["step"] = e.step;
    nlohmann::ordered_json ev;
    ev["r1_i2t"] = e.r1_i2t;
    ev["r1_t2i"] = e.r1_t2i;
    ev["vqa_accuracy"] = e.vqa_accuracy;
    ev["perplexity"] = e.perplexity;
    j["eval"] = ev;
    *metrics << j.dump() << "\n";
}

} // namespace detail

// The distillation driver: fresh corruption every epoch, the combined
// three-term loss, global-norm clipping, AdamW with warmup/decay, JSONL
// metrics, periodic evaluation, and a frozen-teacher integrity check.
template <typename T>
DistillReport run_distillation(Teacher<T>& teacher, Student<T>& student, Projections<T>& proj,
                               const Vocab& vocab, const std::vector<PairRecord>& train,
                               const std::vector<PairRecord>& eval_records, const PerplexityProbe& probe,
                               const TrainConfig& cfg, std::ostream* metrics = nullptr) {
    cfg.validate();
    if (train.empty()) throw ContractError("run_distillation: empty training set");

    teacher.set_requires_grad(cfg.unfreeze_teacher);
    ParamList<T> trainable;
    for (auto& p : student.parameters()) trainable.push_back(p);
    for (auto& p : proj.parameters()) trainable.push_back(p);
    if (cfg.unfreeze_teacher)
        for (auto& p : teacher.parameters()) trainable.push_back(p);

    AdamConfig adam;
    adam.eps = cfg.adam_eps;
    adam.weight_decay = cfg.weight_decay;
    AdamW<T> opt(trainable, adam);

    VlkdLossOptions loss_opt;
    loss_opt.gamma = cfg.gamma;
    loss_opt.disable_ttdm = cfg.disable_ttdm;
    loss_opt.disable_itcl = cfg.disable_itcl;
    loss_opt.unfreeze_teacher = cfg.unfreeze_teacher;
    loss_opt.corruption_rate = cfg.corruption_rate;
    loss_opt.poisson_lambda = cfg.poisson_lambda;
    loss_opt.noise_sigma = cfg.noise_sigma;

    const int64_t steps_per_epoch = (static_cast<int64_t>(train.size()) + cfg.batch_size - 1) / cfg.batch_size;
    const int64_t total_steps = steps_per_epoch * cfg.epochs;
    const int64_t eval_every =
        std::max<int64_t>(1, static_cast<int64_t>(std::llround(cfg.eval_cadence_fraction * total_steps)));

    DistillReport report;
    report.teacher_hash_before = params_hash(teacher.parameters());

    ZeroShotContext<T> zs{teacher, student, proj, vocab, cfg.noise_sigma};
    const size_t vqa_subset = std::min<size_t>(32, eval_records.size());
    auto evaluate = [&](int64_t step) {
        EvalRecord e;
        e.step = step;
        if (!eval_records.empty()) {
            auto ret = retrieval_eval(zs, eval_records, 1);
            e.r1_i2t = ret.r_at_k_i2t;
            e.r1_t2i = ret.r_at_k_t2i;
            std::vector<PairRecord> subset(eval_records.begin(),
                                           eval_records.begin() + static_cast<long>(vqa_subset));
            e.vqa_accuracy = vqa_accuracy(zs, subset, cfg.vqa_mask_count);
        }
        if (!probe.sentences.empty())
            e.perplexity = heldout_infill_perplexity(student, vocab, probe.sentences, probe.rate, probe.seed);
        return e;
    };

    report.pre_eval = evaluate(0);
    detail::write_eval_line(metrics, report.pre_eval);
    ++report.metrics_eval_lines;

    Rng rng(cfg.seed ^ 0xd157111ull);
    std::vector<int> index(train.size());
    for (size_t i = 0; i < index.size(); ++i) index[i] = static_cast<int>(i);
    std::vector<double> totals;
    int64_t step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng epoch_rng = rng.fork(static_cast<uint64_t>(epoch));
        epoch_rng.shuffle(index);
        for (size_t lo = 0; lo < index.size(); lo += static_cast<size_t>(cfg.batch_size)) {
            const size_t hi = std::min(index.size(), lo + static_cast<size_t>(cfg.batch_size));
            std::vector<PairRecord> batch;
            batch.reserve(hi - lo);
            for (size_t i = lo; i < hi; ++i) batch.push_back(train[static_cast<size_t>(index[i])]);

            Tape<T> tape;
            auto res = vlkd_loss(&tape, batch, teacher, student, proj, vocab, epoch_rng, loss_opt);
            if (std::isnan(res.breakdown.total))
                throw TrainingError("run_distillation: NaN loss at step " + std::to_string(step));
            opt.zero_grad();
            tape.backward(res.total);
            const double grad_norm = clip_grad_norm(opt.params(), cfg.grad_clip);
            const double lr = lr_at(step + 1, total_steps, cfg.base_lr, cfg.warmup_fraction);
            opt.step(lr);
            ++step;
            totals.push_back(res.breakdown.total);
            report.last_breakdown = res.breakdown;
            detail::write_step_line(metrics, step, lr, res.breakdown, grad_norm);
            ++report.metrics_step_lines;

            if (step % eval_every == 0 && step < total_steps) {
                if (!cfg.unfreeze_teacher && params_hash(teacher.parameters()) != report.teacher_hash_before)
                    throw InvariantViolation("run_distillation: teacher parameters changed at step " +
                                             std::to_string(step));
                auto e = evaluate(step);
                report.evals.push_back(e);
                detail::write_eval_line(metrics, e);
                ++report.metrics_eval_lines;
            }
        }
    }
    report.steps = step;
    report.teacher_hash_after = params_hash(teacher.parameters());
    if (!cfg.unfreeze_teacher && report.teacher_hash_after != report.teacher_hash_before)
        throw InvariantViolation("run_distillation: teacher parameters changed during training");

    const size_t window = std::min<size_t>(10, totals.size());
    double first = 0, last = 0;
    for (size_t i = 0; i < window; ++i) {
        first += totals[i];
        last += totals[totals.size() - 1 - i];
    }
    report.first_window_avg = first / static_cast<double>(window);
    report.last_window_avg = last / static_cast<double>(window);

    report.post_eval = evaluate(step);
    report.evals.push_back(report.post_eval);
    detail::write_eval_line(metrics, report.post_eval);
    ++report.metrics_eval_lines;
    return report;
}

// ------------------------------------------------------------- finetuning

enum class FinetuneTask { vqa, caption };

struct FinetuneReport {
    int64_t steps = 0;
    double first_loss = 0.0;
    double final_loss = 0.0;
};

// Generative finetuning with the zero-shot input format: the encoder sees
// the mask prompt, the decoder is teacher-forced on the filled sentence with
// label smoothing 0.1. The teacher stays frozen. Optional per-example
// weights scale each item's loss.
template <typename T>
FinetuneReport finetune_generative(Teacher<T>& teacher, Student<T>& student, Projections<T>& proj,
                                   const Vocab& vocab, const std::vector<PairRecord>& data, FinetuneTask task,
                                   const TrainConfig& cfg, const std::vector<double>& weights = {}) {
    cfg.validate();
    if (data.empty()) throw ContractError("finetune_generative: empty dataset");
    if (!weights.empty() && weights.size() != data.size())
        throw ContractError("finetune_generative: weight list does not match dataset size");

    teacher.set_requires_grad(false);
    ParamList<T> trainable;
    for (auto& p : student.parameters()) trainable.push_back(p);
    for (auto& p : proj.parameters()) trainable.push_back(p);
    AdamConfig adam;
    adam.eps = cfg.adam_eps;
    adam.weight_decay = cfg.weight_decay;
    AdamW<T> opt(trainable, adam);

    const uint64_t teacher_hash = params_hash(teacher.parameters());
    const int64_t steps_per_epoch = (static_cast<int64_t>(data.size()) + cfg.batch_size - 1) / cfg.batch_size;
    const int64_t total_steps = steps_per_epoch * cfg.epochs;

    auto example_loss = [&](Tape<T>* tape, const PairRecord& rec, size_t record_index, Rng& noise_rng) {
        auto patches = render_patches(rec.sample.scene, noise_rng.next_u64(), teacher.cfg.d_img, cfg.noise_sigma);
        auto img = teacher.encode_image(nullptr, patches);
        TokenSequence prompt;
        std::string target_text;
        if (task == FinetuneTask::vqa) {
            const auto& qa = pick_question(rec, record_index);
            prompt = build_prompt(vocab, PromptTask::vqa, &qa.question, cfg.vqa_mask_count);
            target_text = qa_text(qa);
        } else {
            prompt = build_prompt(vocab, PromptTask::caption, nullptr, cfg.caption_mask_count);
            target_text = pair_text(rec.sample.caption);
        }
        auto enc = student.encode(tape, prompt);
        auto context = build_decoder_context(tape, stop_gradient(img.V), enc, proj, teacher.cfg.mode);
        auto target = to_decoder_target(vocab.tokenize(target_text, TextKind::student_text));
        auto logits = student.decode_logits(tape, context, target);
        return cross_entropy_smoothed(tape, logits, target.ids, cfg.label_smoothing, Vocab::pad_id);
    };

    FinetuneReport report;
    Rng rng(cfg.seed ^ 0xf17e7a1ull);
    std::vector<int> index(data.size());
    for (size_t i = 0; i < index.size(); ++i) index[i] = static_cast<int>(i);
    int64_t step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng epoch_rng = rng.fork(static_cast<uint64_t>(epoch));
        epoch_rng.shuffle(index);
        for (size_t lo = 0; lo < index.size(); lo += static_cast<size_t>(cfg.batch_size)) {
            const size_t hi = std::min(index.size(), lo + static_cast<size_t>(cfg.batch_size));
            Tape<T> tape;
            std::vector<TensorPtr<T>> parts;
            for (size_t i = lo; i < hi; ++i) {
                const size_t ri = static_cast<size_t>(index[i]);
                auto l = example_loss(&tape, data[ri], ri, epoch_rng);
                const double w = weights.empty() ? 1.0 : weights[ri];
                parts.push_back(w == 1.0 ? l : scale(&tape, l, w));
            }
            auto loss = mean_scalars(&tape, parts);
            const double loss_v = static_cast<double>(loss->v[0]);
            if (std::isnan(loss_v))
                throw TrainingError("finetune_generative: NaN loss at step " + std::to_string(step));
            if (step == 0) report.first_loss = loss_v;
            report.final_loss = loss_v;
            opt.zero_grad();
            tape.backward(loss);
            clip_grad_norm(opt.params(), cfg.grad_clip);
            opt.step(lr_at(step + 1, total_steps, cfg.base_lr, cfg.warmup_fraction));
            ++step;
        }
    }
    report.steps = step;
    if (params_hash(teacher.parameters()) != teacher_hash)
        throw InvariantViolation("finetune_generative: teacher parameters changed during finetuning");
    return report;
}

// ----------------------------------------------------- parameter snapshots

template <typename T>
std::vector<std::vector<T>> snapshot_params(const ParamList<T>& params) {
    std::vector<std::vector<T>> out;
    out.reserve(params.size());
    for (const auto& p : params) out.push_back(p.tensor->v);
    return out;
}

template <typename T>
void restore_params(const ParamList<T>& params, const std::vector<std::vector<T>>& snapshot) {
    if (params.size() != snapshot.size())
        throw ContractError("restore_params: snapshot does not match parameter list");
    for (size_t i = 0; i < params.size(); ++i) {
        if (params[i].tensor->v.size() != snapshot[i].size())
            throw ContractError("restore_params: size mismatch for '" + params[i].name + "'");
        params[i].tensor->v = snapshot[i];
        params[i].tensor->zero_grad();
    }
}

} // namespace vlkd
