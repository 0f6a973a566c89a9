#pragma once

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "vlkd/contrastive.hpp"
#include "vlkd/corruption.hpp"
#include "vlkd/linalg.hpp"
#include "vlkd/student.hpp"
#include "vlkd/teacher.hpp"

namespace vlkd {

// The trainable distillation glue: W_e maps the student encoder into the
// teacher's joint space, W_i and W_e' map visual context and round-tripped
// text back to the decoder width. W_e' starts as the pseudo-inverse of W_e
// so the text path is closest to identity at step zero. The contrastive
// temperature lives as log_inv_tau with tau = exp(-log_inv_tau): positive by
// construction, never clamped.
template <typename T>
struct Projections {
    int d1 = 0, d2 = 0;
    TensorPtr<T> w_e;         // [d1, d2]
    TensorPtr<T> w_i;         // [d2, d1]
    TensorPtr<T> w_e_prime;   // [d2, d1]
    TensorPtr<T> log_inv_tau; // scalar

    double tau() const { return std::exp(-static_cast<double>(log_inv_tau->v[0])); }

    ParamList<T> parameters(bool frozen = false) const {
        ParamList<T> out;
        out.push_back({"proj.w_e", w_e, true, frozen});
        out.push_back({"proj.w_i", w_i, true, frozen});
        out.push_back({"proj.w_e_prime", w_e_prime, true, frozen});
        out.push_back({"proj.log_inv_tau", log_inv_tau, false, frozen});
        return out;
    }
};

// W_e' starts as the pseudo-inverse so W_e'W_e E is closest to the raw
// encoder space. W_i gets the same initialization: teacher-space vectors are
// aligned with W_e-projected student embeddings, so the map that lands them
// closest to the decoder's native manifold is the same pseudo-inverse.
template <typename T>
Projections<T> init_projections(int d1, int d2, Rng& rng) {
    if (d1 > d2)
        throw ContractError("init_projections: d1 " + std::to_string(d1) + " must not exceed d2 " +
                            std::to_string(d2));
    Projections<T> p;
    p.d1 = d1;
    p.d2 = d2;
    p.w_e = param_tensor<T>({d1, d2}, rng, 1.0 / std::sqrt(static_cast<double>(d2)));
    p.w_e_prime = pseudo_inverse(p.w_e);
    p.w_e_prime->requires_grad = true;
    p.w_e_prime->ensure_grad();
    p.w_i = std::make_shared<Tensor<T>>(*p.w_e_prime);
    p.w_i->requires_grad = true;
    p.w_i->ensure_grad();
    p.log_inv_tau = scalar_tensor<T>(static_cast<T>(-std::log(0.07)), true);
    return p;
}

// e_norm = W_e e / ||W_e e||: mean of the encoder rows over the non-pad
// positions (specials included), projected and normalized.
template <typename T>
TensorPtr<T> student_sentence_embedding(Tape<T>* tape, const StudentEncoding<T>& enc,
                                        const Projections<T>& proj) {
    const int len = enc.E->shape[0];
    int live = 0;
    for (char p : enc.pad)
        if (!p) ++live;
    if (live == 0) throw ContractError("student_sentence_embedding: no non-pad positions");
    auto weights = make_tensor<T>({1, len});
    for (int i = 0; i < len; ++i)
        if (!enc.pad[static_cast<size_t>(i)]) weights->at(0, i) = T(1) / static_cast<T>(live);
    auto mean = matmul(tape, weights, enc.E);           // [1, d2]
    auto projected = matmul_nt(tape, mean, proj.w_e);   // [1, d1]
    return l2_normalize(tape, projected, 1);
}

// mean squared Euclidean distance between matched unit-vector rows
template <typename T>
TensorPtr<T> loss_ttdm(Tape<T>* tape, const TensorPtr<T>& t_eos_batch, const TensorPtr<T>& e_norm_batch) {
    if (t_eos_batch->shape != e_norm_batch->shape || t_eos_batch->shape.size() != 2)
        throw ShapeError("loss_ttdm: batch shapes disagree, " + shape_str(t_eos_batch->shape) + " vs " +
                         shape_str(e_norm_batch->shape));
    auto diff = sub(tape, t_eos_batch, e_norm_batch);
    return scale(tape, sum_all(tape, mul(tape, diff, diff)),
                 1.0 / static_cast<double>(t_eos_batch->shape[0]));
}

// symmetric InfoNCE between teacher image rows and projected student rows
template <typename T>
TensorPtr<T> loss_itcl(Tape<T>* tape, const TensorPtr<T>& v_cls_batch, const TensorPtr<T>& e_norm_batch,
                       const TensorPtr<T>& log_inv_tau) {
    return symmetric_info_nce(tape, v_cls_batch, e_norm_batch, log_inv_tau);
}

// C = concat(W_i V, W_e' W_e E): visual rows first (the CLS row alone in
// cls_only mode, the n1 pooled patch rows in full_sequence mode), then every
// encoder row round-tripped through W_e and W_e'.
template <typename T>
TensorPtr<T> build_decoder_context(Tape<T>* tape, const TensorPtr<T>& V, const StudentEncoding<T>& enc,
                                   const Projections<T>& proj, VisualMode mode) {
    if (V->shape.size() != 2 || V->shape[1] != proj.d1)
        throw ShapeError("build_decoder_context: V " + shape_str(V->shape) + " does not match joint dim " +
                         std::to_string(proj.d1));
    TensorPtr<T> vis_rows = V;
    if (mode == VisualMode::full_sequence) {
        if (V->shape[0] < 2)
            throw ShapeError("build_decoder_context: full_sequence mode expects pooled patch rows, got " +
                             shape_str(V->shape));
        vis_rows = slice_rows(tape, V, 1, V->shape[0]);
    } else if (V->shape[0] != 1) {
        throw ShapeError("build_decoder_context: cls_only mode expects a single context row, got " +
                         shape_str(V->shape));
    }
    auto visual = matmul_nt(tape, vis_rows, proj.w_i);
    auto text = matmul_nt(tape, matmul_nt(tape, enc.E, proj.w_e), proj.w_e_prime);
    return concat_rows(tape, {visual, text});
}

// teacher-forced NLL of the full uncorrupted sentence given the context
template <typename T>
TensorPtr<T> loss_icti(Tape<T>* tape, const Student<T>& student, const TensorPtr<T>& context,
                       const TokenSequence& original) {
    auto target = to_decoder_target(original);
    auto logits = student.decode_logits(tape, context, target);
    return cross_entropy_smoothed(tape, logits, target.ids, 0.0, Vocab::pad_id);
}

struct LossBreakdown {
    double ttdm = 0.0;
    double itcl = 0.0;
    double icti = 0.0;
    double total = 0.0;
    double tau_value = 0.0;
    double gamma = 0.0;
};

struct VlkdLossOptions {
    double gamma = 1000.0;
    bool disable_ttdm = false;
    bool disable_itcl = false;
    bool disable_icti = false; // rejected: ICTI is load-bearing
    bool unfreeze_teacher = false;
    double corruption_rate = 0.15;
    double poisson_lambda = 3.0;
    double noise_sigma = 0.1;
};

template <typename T>
struct VlkdLossResult {
    TensorPtr<T> total; // graph node for backward
    LossBreakdown breakdown;
};

// One optimization step's worth of loss: corrupt each caption, run the
// frozen teacher (outputs behind stop_gradient), encode the corrupted text
// once and derive all three objectives from that single encoding.
// total = gamma * ttdm + itcl + icti, evaluated in that fixed order.
template <typename T>
VlkdLossResult<T> vlkd_loss(Tape<T>* tape, const std::vector<PairRecord>& batch, const Teacher<T>& teacher,
                            const Student<T>& student, const Projections<T>& proj, const Vocab& vocab,
                            Rng& rng, const VlkdLossOptions& opt) {
    if (opt.disable_icti) throw ContractError("vlkd_loss: ICTI cannot be disabled");
    if (batch.empty()) throw ContractError("vlkd_loss: empty batch");

    const bool want_ttdm = !opt.disable_ttdm;
    const bool want_itcl = !opt.disable_itcl;
    Tape<T>* teacher_tape = opt.unfreeze_teacher ? tape : nullptr;

    std::vector<TensorPtr<T>> t_rows, v_rows, e_rows, icti_parts;
    for (const auto& rec : batch) {
        auto patches = render_patches(rec.sample.scene, rng.next_u64(), teacher.cfg.d_img, opt.noise_sigma);
        auto img = teacher.encode_image(teacher_tape, patches);
        TensorPtr<T> V = img.V;
        TensorPtr<T> v_cls = img.v_cls;
        if (!opt.unfreeze_teacher) {
            V = stop_gradient(V);
            v_cls = stop_gradient(v_cls);
        }

        const std::string text = pair_text(rec.sample.caption);
        auto outcome = corrupt_spans(vocab.tokenize(text, TextKind::student_text), rng, opt.corruption_rate,
                                     opt.poisson_lambda);
        auto enc = student.encode(tape, outcome.corrupted);

        if (want_ttdm) {
            auto txt = teacher.encode_text(teacher_tape, vocab.tokenize(text, TextKind::teacher_text));
            t_rows.push_back(opt.unfreeze_teacher ? txt.t_eos : stop_gradient(txt.t_eos));
        }
        if (want_ttdm || want_itcl) e_rows.push_back(student_sentence_embedding(tape, enc, proj));
        if (want_itcl) v_rows.push_back(v_cls);

        auto context = build_decoder_context(tape, V, enc, proj, teacher.cfg.mode);
        icti_parts.push_back(loss_icti(tape, student, context, outcome.target));
    }

    TensorPtr<T> e_batch;
    if (want_ttdm || want_itcl) e_batch = concat_rows(tape, e_rows);
    auto ttdm_node = want_ttdm ? loss_ttdm(tape, concat_rows(tape, t_rows), e_batch) : scalar_tensor<T>(T(0));
    auto itcl_node = want_itcl ? loss_itcl(tape, concat_rows(tape, v_rows), e_batch, proj.log_inv_tau)
                               : scalar_tensor<T>(T(0));
    auto icti_node = mean_scalars(tape, icti_parts);
    auto total = add(tape, add(tape, scale(tape, ttdm_node, opt.gamma), itcl_node), icti_node);

    VlkdLossResult<T> out;
    out.total = total;
    out.breakdown.ttdm = static_cast<double>(ttdm_node->v[0]);
    out.breakdown.itcl = static_cast<double>(itcl_node->v[0]);
    out.breakdown.icti = static_cast<double>(icti_node->v[0]);
    out.breakdown.total = static_cast<double>(total->v[0]);
    out.breakdown.tau_value = proj.tau();
    out.breakdown.gamma = opt.gamma;
    return out;
}

} // namespace vlkd
