#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "vlkd/contrastive.hpp"
#include "vlkd/optimizer.hpp"
#include "vlkd/scene.hpp"
#include "vlkd/transformer.hpp"
#include "vlkd/vocab.hpp"

namespace vlkd {

enum class VisualMode { cls_only, full_sequence };

inline std::string visual_mode_name(VisualMode m) {
    return m == VisualMode::cls_only ? "cls_only" : "full_sequence";
}

struct TeacherConfig {
    int d1 = 64;
    int layers = 2;
    int heads = 4;
    int ffn = 128;
    int max_text_len = 32; // tokens including SOS/EOS
    int d_img = 16;
    int patches = 9; // n1
    VisualMode mode = VisualMode::cls_only;

    void validate() const {
        if (d1 % heads != 0)
            throw ContractError("teacher config: d1 " + std::to_string(d1) + " not divisible by heads " +
                                std::to_string(heads));
    }
};

template <typename T>
struct TeacherImageOut {
    TensorPtr<T> V;     // normalized context rows; 1 x d1 (cls_only) or (n1+1) x d1 (full_sequence)
    TensorPtr<T> v_cls; // [1, d1], unit norm
};

template <typename T>
struct TeacherTextOut {
    TensorPtr<T> T_emb; // normalized per-position embeddings, L x d1
    TensorPtr<T> t_eos; // [1, d1], unit norm
};

// Dual-stream contrastive teacher: a patch transformer and a causal text
// transformer aligned in a joint d1-dimensional space. Pre-trained once on
// synthetic pairs, then frozen for the whole distillation.
template <typename T>
struct Teacher {
    TeacherConfig cfg;
    int vocab_size = 0;

    Linear<T> patch_proj;
    TensorPtr<T> cls_token; // [1, d1]
    TensorPtr<T> img_pos;   // [patches+1, d1]
    std::vector<EncoderLayer<T>> img_layers;
    LayerNormParams<T> img_ln;
    MultiHeadAttention<T> attn_pool; // full_sequence mode only

    TensorPtr<T> tok_embed; // [vocab, d1]
    TensorPtr<T> txt_pos;   // [max_text_len, d1]
    std::vector<EncoderLayer<T>> txt_layers;
    LayerNormParams<T> txt_ln;

    TensorPtr<T> log_inv_tau; // teacher's own pretraining temperature

    Teacher(TeacherConfig c, int vocab, uint64_t seed) : cfg(c), vocab_size(vocab) {
        cfg.validate();
        Rng rng(seed ^ 0x7eacbe11ull);
        patch_proj.init(cfg.d_img, cfg.d1, rng);
        cls_token = param_tensor<T>({1, cfg.d1}, rng, 0.02);
        img_pos = param_tensor<T>({cfg.patches + 1, cfg.d1}, rng, 0.02);
        img_layers.resize(static_cast<size_t>(cfg.layers));
        for (auto& l : img_layers) l.init(cfg.d1, cfg.heads, cfg.ffn, rng);
        img_ln.init(cfg.d1);
        if (cfg.mode == VisualMode::full_sequence) attn_pool.init(cfg.d1, cfg.heads, rng);
        tok_embed = param_tensor<T>({vocab_size, cfg.d1}, rng, 0.02);
        txt_pos = param_tensor<T>({cfg.max_text_len, cfg.d1}, rng, 0.02);
        txt_layers.resize(static_cast<size_t>(cfg.layers));
        for (auto& l : txt_layers) l.init(cfg.d1, cfg.heads, cfg.ffn, rng);
        txt_ln.init(cfg.d1);
        log_inv_tau = scalar_tensor<T>(static_cast<T>(-std::log(0.07)), true);
    }

    TeacherImageOut<T> encode_image(Tape<T>* tape, const PatchSequence& patches) const {
        if (patches.count != cfg.patches || patches.dim != cfg.d_img)
            throw ShapeError("teacher encode_image: got " + std::to_string(patches.count) + "x" +
                             std::to_string(patches.dim) + " patches, config expects " + std::to_string(cfg.patches) +
                             "x" + std::to_string(cfg.d_img));
        auto x = make_tensor<T>({patches.count, patches.dim});
        for (size_t i = 0; i < patches.data.size(); ++i) x->v[i] = static_cast<T>(patches.data[i]);
        auto h = concat_rows(tape, {cls_token, patch_proj.forward(tape, x)});
        h = add(tape, h, slice_rows(tape, img_pos, 0, patches.count + 1));
        for (const auto& layer : img_layers) h = layer.forward(tape, h, nullptr);
        h = img_ln.forward(tape, h);
        TeacherImageOut<T> out;
        if (cfg.mode == VisualMode::cls_only) {
            out.v_cls = l2_normalize(tape, slice_rows(tape, h, 0, 1), 1);
            out.V = out.v_cls;
        } else {
            auto pooled = attn_pool.forward(tape, h, h, nullptr);
            out.V = l2_normalize(tape, pooled, 1);
            out.v_cls = slice_rows(tape, out.V, 0, 1);
        }
        return out;
    }

    TeacherTextOut<T> encode_text(Tape<T>* tape, const TokenSequence& tokens) const {
        if (tokens.kind != TextKind::teacher_text)
            throw ContractError("teacher encode_text: expected teacher-text input");
        const int len = tokens.length();
        if (len > cfg.max_text_len)
            throw LengthError("teacher encode_text: length " + std::to_string(len) + " exceeds max " +
                              std::to_string(cfg.max_text_len));
        if (tokens.ids.back() != Vocab::eos_id)
            throw ContractError("teacher encode_text: sequence does not end with EOS");
        auto h = embed_rows(tape, tok_embed, tokens.ids);
        h = add(tape, h, slice_rows(tape, txt_pos, 0, len));
        auto causal = causal_mask<T>(len);
        for (const auto& layer : txt_layers) h = layer.forward(tape, h, causal);
        h = txt_ln.forward(tape, h);
        TeacherTextOut<T> out;
        out.T_emb = l2_normalize(tape, h, 1);
        out.t_eos = slice_rows(tape, out.T_emb, len - 1, len);
        return out;
    }

    // context rows fed to the decoder through W_i: the single CLS row in
    // cls_only mode, the n1 pooled patch rows in full_sequence mode
    TensorPtr<T> context_rows(Tape<T>* tape, const TeacherImageOut<T>& img) const {
        if (cfg.mode == VisualMode::cls_only) return img.V;
        return slice_rows(tape, img.V, 1, img.V->shape[0]);
    }

    ParamList<T> parameters(bool frozen = false) const {
        ParamList<T> out;
        patch_proj.collect("teacher.img.patch_proj", out);
        out.push_back({"teacher.img.cls_token", cls_token, true, false});
        out.push_back({"teacher.img.pos", img_pos, true, false});
        for (size_t i = 0; i < img_layers.size(); ++i)
            img_layers[i].collect("teacher.img.layer" + std::to_string(i), out);
        img_ln.collect("teacher.img.ln", out);
        if (cfg.mode == VisualMode::full_sequence) attn_pool.collect("teacher.img.attn_pool", out);
        out.push_back({"teacher.txt.tok_embed", tok_embed, true, false});
        out.push_back({"teacher.txt.pos", txt_pos, true, false});
        for (size_t i = 0; i < txt_layers.size(); ++i)
            txt_layers[i].collect("teacher.txt.layer" + std::to_string(i), out);
        txt_ln.collect("teacher.txt.ln", out);
        out.push_back({"teacher.log_inv_tau", log_inv_tau, false, false});
        for (auto& p : out) p.frozen = frozen;
        return out;
    }

    void set_requires_grad(bool on) {
        for (auto& p : parameters()) {
            p.tensor->requires_grad = on;
            if (on)
                p.tensor->ensure_grad();
            else
                p.tensor->g.clear();
        }
    }
};

// in-batch symmetric InfoNCE over v_cls / t_eos rows
template <typename T>
TensorPtr<T> teacher_contrastive_loss(Tape<T>* tape, const TensorPtr<T>& v_cls_batch,
                                      const TensorPtr<T>& t_eos_batch, const TensorPtr<T>& log_inv_tau) {
    return symmetric_info_nce(tape, v_cls_batch, t_eos_batch, log_inv_tau);
}

// fraction of queries whose matched index ranks in the top k of its row
inline double recall_at_k(const std::vector<std::vector<double>>& sim, int k) {
    const int n = static_cast<int>(sim.size());
    int hits = 0;
    for (int i = 0; i < n; ++i) {
        int better = 0;
        for (int j = 0; j < n; ++j)
            if (j != i && sim[static_cast<size_t>(i)][static_cast<size_t>(j)] >=
                              sim[static_cast<size_t>(i)][static_cast<size_t>(i)])
                ++better;
        if (better < k) ++hits;
    }
    return static_cast<double>(hits) / n;
}

struct TeacherPretrainConfig {
    int epochs = 24;
    int batch_size = 32;
    double base_lr = 1e-3;
    double warmup_fraction = 0.02;
    double grad_clip = 3.0;
    double weight_decay = 0.01;
    double adam_eps = 1e-6;
    double noise_sigma = 0.1;
    uint64_t seed = 1;
};

struct TeacherPretrainReport {
    std::vector<double> epoch_losses;
    double initial_loss = 0.0;
    double final_loss = 0.0;
    double heldout_r1_i2t = 0.0;
    double heldout_r1_t2i = 0.0;
    int64_t steps = 0;
};

template <typename T>
TeacherPretrainReport pretrain_teacher(Teacher<T>& teacher, const Vocab& vocab,
                                       const std::vector<PairRecord>& train,
                                       const std::vector<PairRecord>& heldout, const TeacherPretrainConfig& cfg) {
    if (train.empty()) throw ContractError("pretrain_teacher: empty dataset");
    AdamConfig adam;
    adam.eps = cfg.adam_eps;
    adam.weight_decay = cfg.weight_decay;
    AdamW<T> opt(teacher.parameters(), adam);
    Rng rng(cfg.seed ^ 0x7e8c9e70ull);

    const int64_t steps_per_epoch = (static_cast<int64_t>(train.size()) + cfg.batch_size - 1) / cfg.batch_size;
    const int64_t total_steps = steps_per_epoch * cfg.epochs;
    TeacherPretrainReport report;

    auto batch_loss = [&](Tape<T>* tape, const std::vector<int>& index, size_t lo, size_t hi, Rng& noise_rng) {
        std::vector<TensorPtr<T>> v_rows, t_rows;
        for (size_t i = lo; i < hi; ++i) {
            const auto& rec = train[static_cast<size_t>(index[i])];
            auto patches = render_patches(rec.sample.scene, noise_rng.next_u64(), teacher.cfg.d_img,
                                          cfg.noise_sigma);
            v_rows.push_back(teacher.encode_image(tape, patches).v_cls);
            auto toks = vocab.tokenize(pair_text(rec.sample.caption), TextKind::teacher_text);
            t_rows.push_back(teacher.encode_text(tape, toks).t_eos);
        }
        return teacher_contrastive_loss(tape, concat_rows(tape, v_rows), concat_rows(tape, t_rows),
                                        teacher.log_inv_tau);
    };

    int64_t step = 0;
    std::vector<int> index(train.size());
    for (size_t i = 0; i < index.size(); ++i) index[i] = static_cast<int>(i);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng epoch_rng = rng.fork(static_cast<uint64_t>(epoch));
        epoch_rng.shuffle(index);
        double epoch_total = 0.0;
        int64_t epoch_batches = 0;
        for (size_t lo = 0; lo < index.size(); lo += static_cast<size_t>(cfg.batch_size)) {
            const size_t hi = std::min(index.size(), lo + static_cast<size_t>(cfg.batch_size));
            Tape<T> tape;
            auto loss = batch_loss(&tape, index, lo, hi, epoch_rng);
            const double loss_v = static_cast<double>(loss->v[0]);
            if (std::isnan(loss_v))
                throw TrainingError("pretrain_teacher: NaN loss at step " + std::to_string(step));
            if (step == 0) report.initial_loss = loss_v;
            opt.zero_grad();
            tape.backward(loss);
            clip_grad_norm(opt.params(), cfg.grad_clip);
            opt.step(lr_at(step + 1, total_steps, cfg.base_lr, cfg.warmup_fraction));
            epoch_total += loss_v;
            ++epoch_batches;
            ++step;
        }
        report.epoch_losses.push_back(epoch_total / static_cast<double>(epoch_batches));
    }
    report.final_loss = report.epoch_losses.empty() ? 0.0 : report.epoch_losses.back();
    report.steps = step;

    if (!heldout.empty()) {
        std::vector<std::vector<double>> sim(heldout.size(), std::vector<double>(heldout.size(), 0.0));
        std::vector<std::vector<T>> v_all, t_all;
        for (const auto& rec : heldout) {
            auto patches = render_patches(rec.sample.scene, 7, teacher.cfg.d_img, cfg.noise_sigma);
            v_all.push_back(teacher.encode_image(nullptr, patches).v_cls->v);
            auto toks = vocab.tokenize(pair_text(rec.sample.caption), TextKind::teacher_text);
            t_all.push_back(teacher.encode_text(nullptr, toks).t_eos->v);
        }
        for (size_t i = 0; i < heldout.size(); ++i)
            for (size_t j = 0; j < heldout.size(); ++j) {
                double s = 0.0;
                for (size_t k = 0; k < v_all[i].size(); ++k)
                    s += static_cast<double>(v_all[i][k]) * static_cast<double>(t_all[j][k]);
                sim[i][j] = s;
            }
        report.heldout_r1_i2t = recall_at_k(sim, 1);
        std::vector<std::vector<double>> simT(sim.size(), std::vector<double>(sim.size()));
        for (size_t i = 0; i < sim.size(); ++i)
            for (size_t j = 0; j < sim.size(); ++j) simT[i][j] = sim[j][i];
        report.heldout_r1_t2i = recall_at_k(simT, 1);
    }
    return report;
}

} // namespace vlkd
