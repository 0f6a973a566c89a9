#include <catch2/catch.hpp>

#include <cmath>

#include "vlkd/student.hpp"
#include "vlkd/teacher.hpp"

using namespace vlkd;

namespace {

TeacherConfig tiny_teacher_cfg() {
    TeacherConfig cfg;
    cfg.d1 = 16;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.ffn = 32;
    cfg.d_img = 8;
    cfg.patches = 4; // 2x2 grid
    cfg.max_text_len = 32;
    return cfg;
}

StudentConfig tiny_student_cfg() {
    StudentConfig cfg;
    cfg.d2 = 24;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.ffn = 48;
    cfg.max_len = 32;
    return cfg;
}

Vocab test_vocab() {
    auto records = generate_dataset(77, 200, 2);
    return Vocab::build(pretraining_texts(records));
}

double norm_of(const std::vector<float>& v) {
    double s = 0;
    for (float x : v) s += static_cast<double>(x) * x;
    return std::sqrt(s);
}

} // namespace

TEST_CASE("teacher image encoding basics") {
    auto vocab = test_vocab();
    Teacher<float> teacher(tiny_teacher_cfg(), vocab.size(), 3);
    auto sample = generate_scene(5, 2);
    auto patches = render_patches(sample.scene, 9, 8, 0.1);

    auto out = teacher.encode_image(nullptr, patches);
    CHECK(norm_of(out.v_cls->v) == Approx(1.0).epsilon(1e-5));
    CHECK(out.V->shape == Shape{1, 16}); // cls_only: a single context row

    SECTION("positional encoding: permuting two patches moves v_cls") {
        auto swapped = patches;
        for (int j = 0; j < 8; ++j) std::swap(swapped.data[j], swapped.data[8 + j]);
        auto out2 = teacher.encode_image(nullptr, swapped);
        double diff = 0;
        for (size_t i = 0; i < out.v_cls->v.size(); ++i)
            diff += std::abs(out.v_cls->v[i] - out2.v_cls->v[i]);
        CHECK(diff > 1e-6);
    }
    SECTION("patch count mismatch raises") {
        auto bad = patches;
        bad.count = 3;
        bad.data.resize(3 * 8);
        CHECK_THROWS_AS(teacher.encode_image(nullptr, bad), ShapeError);
    }
}

TEST_CASE("teacher full_sequence mode exposes pooled patch rows") {
    auto vocab = test_vocab();
    auto cfg = tiny_teacher_cfg();
    cfg.mode = VisualMode::full_sequence;
    Teacher<float> teacher(cfg, vocab.size(), 3);
    auto sample = generate_scene(5, 2);
    auto patches = render_patches(sample.scene, 9, 8, 0.1);
    auto out = teacher.encode_image(nullptr, patches);
    CHECK(out.V->shape == Shape{5, 16}); // n1 + 1 pooled rows
    for (int r = 0; r < 5; ++r) {
        double s = 0;
        for (int c = 0; c < 16; ++c) s += static_cast<double>(out.V->at(r, c)) * out.V->at(r, c);
        CHECK(std::sqrt(s) == Approx(1.0).epsilon(1e-5));
    }
    auto ctx = teacher.context_rows(nullptr, out);
    CHECK(ctx->shape == Shape{4, 16}); // the n1 patch rows feed the decoder context
    CHECK(out.v_cls->v == std::vector<float>(out.V->v.begin(), out.V->v.begin() + 16));
}

TEST_CASE("teacher text encoding basics") {
    auto vocab = test_vocab();
    Teacher<float> teacher(tiny_teacher_cfg(), vocab.size(), 3);
    auto toks = vocab.tokenize("a red circle", TextKind::teacher_text);

    auto out = teacher.encode_text(nullptr, toks);
    CHECK(norm_of(out.t_eos->v) == Approx(1.0).epsilon(1e-5));
    CHECK(out.T_emb->shape == Shape{toks.length(), 16});

    auto out2 = teacher.encode_text(nullptr, toks);
    CHECK(out.t_eos->v == out2.t_eos->v);

    auto other = teacher.encode_text(nullptr, vocab.tokenize("a blue square", TextKind::teacher_text));
    double cosine = 0;
    for (size_t i = 0; i < out.t_eos->v.size(); ++i)
        cosine += static_cast<double>(out.t_eos->v[i]) * other.t_eos->v[i];
    CHECK(cosine < 1.0 - 1e-6);

    CHECK_THROWS_AS(teacher.encode_text(nullptr, vocab.tokenize("a red circle", TextKind::student_text)),
                    ContractError);
    TokenSequence overlong;
    overlong.kind = TextKind::teacher_text;
    overlong.ids.assign(40, Vocab::sos_id);
    overlong.ids.back() = Vocab::eos_id;
    CHECK_THROWS_AS(teacher.encode_text(nullptr, overlong), LengthError);
}

namespace {

// independent dense evaluation of the symmetric InfoNCE loss
double info_nce_brute(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b,
                      double tau, double* i2t_out = nullptr, double* t2i_out = nullptr) {
    const size_t batch = a.size();
    std::vector<std::vector<double>> s(batch, std::vector<double>(batch));
    for (size_t k = 0; k < batch; ++k)
        for (size_t j = 0; j < batch; ++j) {
            double dot = 0;
            for (size_t d = 0; d < a[k].size(); ++d) dot += a[k][d] * b[j][d];
            s[k][j] = dot / tau;
        }
    double i2t = 0, t2i = 0;
    for (size_t k = 0; k < batch; ++k) {
        double denom_row = 0, denom_col = 0;
        for (size_t j = 0; j < batch; ++j) {
            denom_row += std::exp(s[k][j]);
            denom_col += std::exp(s[j][k]);
        }
        i2t += -std::log(std::exp(s[k][k]) / denom_row);
        t2i += -std::log(std::exp(s[k][k]) / denom_col);
    }
    i2t /= static_cast<double>(batch);
    t2i /= static_cast<double>(batch);
    if (i2t_out) *i2t_out = i2t;
    if (t2i_out) *t2i_out = t2i;
    return 0.5 * (i2t + t2i);
}

} // namespace

TEST_CASE("contrastive loss oracles") {
    SECTION("single pair gives exactly zero") {
        auto a = tensor_from<double>({1, 3}, {1, 0, 0});
        auto b = tensor_from<double>({1, 3}, {0.2, 0.5, 0.1});
        auto tau = scalar_tensor<double>(0.0);
        Tape<double> tape;
        auto loss = teacher_contrastive_loss(&tape, a, b, tau);
        CHECK(loss->v[0] == 0.0);
    }
    SECTION("two orthonormal matched pairs at tau=1") {
        auto a = tensor_from<double>({2, 2}, {1, 0, 0, 1});
        auto b = tensor_from<double>({2, 2}, {1, 0, 0, 1});
        auto tau = scalar_tensor<double>(0.0); // log_inv_tau = 0 -> tau = 1
        Tape<double> tape;
        auto loss = teacher_contrastive_loss(&tape, a, b, tau);
        CHECK(loss->v[0] == Approx(std::log(1.0 + std::exp(-1.0))).epsilon(1e-9));
        double i2t, t2i;
        info_nce_brute({{1, 0}, {0, 1}}, {{1, 0}, {0, 1}}, 1.0, &i2t, &t2i);
        CHECK(i2t == Approx(t2i).margin(1e-12)); // symmetric case
    }
    SECTION("random batches match the brute-force oracle") {
        Rng rng(55);
        for (int batch = 1; batch <= 4; ++batch) {
            std::vector<std::vector<double>> av(static_cast<size_t>(batch)), bv(static_cast<size_t>(batch));
            auto a = make_tensor<double>({batch, 5});
            auto b = make_tensor<double>({batch, 5});
            for (int i = 0; i < batch; ++i) {
                for (int d = 0; d < 5; ++d) {
                    a->at(i, d) = rng.normal();
                    b->at(i, d) = rng.normal();
                    av[static_cast<size_t>(i)].push_back(a->at(i, d));
                    bv[static_cast<size_t>(i)].push_back(b->at(i, d));
                }
            }
            const double tau = 0.31;
            auto litau = scalar_tensor<double>(-std::log(tau));
            Tape<double> tape;
            auto loss = teacher_contrastive_loss(&tape, a, b, litau);
            CHECK(std::abs(loss->v[0] - info_nce_brute(av, bv, tau)) <= 1e-9);
        }
    }
    SECTION("batch order permutation leaves the value unchanged") {
        Rng rng(66);
        auto a = make_tensor<double>({4, 6});
        auto b = make_tensor<double>({4, 6});
        for (auto& x : a->v) x = rng.normal();
        for (auto& x : b->v) x = rng.normal();
        auto tau = scalar_tensor<double>(1.3);
        Tape<double> t1;
        auto l1 = teacher_contrastive_loss(&t1, a, b, tau);
        const std::vector<int> perm{2, 0, 3, 1};
        auto ap = make_tensor<double>({4, 6});
        auto bp = make_tensor<double>({4, 6});
        for (int i = 0; i < 4; ++i)
            for (int d = 0; d < 6; ++d) {
                ap->at(i, d) = a->at(perm[static_cast<size_t>(i)], d);
                bp->at(i, d) = b->at(perm[static_cast<size_t>(i)], d);
            }
        Tape<double> t2;
        auto l2 = teacher_contrastive_loss(&t2, ap, bp, tau);
        CHECK(std::abs(l1->v[0] - l2->v[0]) <= 1e-12);
    }
}

TEST_CASE("teacher pretraining improves the contrastive loss deterministically") {
    auto records = generate_dataset(300, 64, 2);
    auto vocab = test_vocab();
    TeacherPretrainConfig pt;
    pt.epochs = 4;
    pt.batch_size = 16;
    pt.seed = 11;

    Teacher<float> teacher(tiny_teacher_cfg(), vocab.size(), 11);
    auto report = pretrain_teacher(teacher, vocab, records, {}, pt);
    CHECK(report.final_loss < report.initial_loss);
    CHECK(report.steps == 4 * 4);

    Teacher<float> teacher2(tiny_teacher_cfg(), vocab.size(), 11);
    pretrain_teacher(teacher2, vocab, records, {}, pt);
    CHECK(params_hash(teacher.parameters()) == params_hash(teacher2.parameters()));
}

TEST_CASE("student encoding basics") {
    auto vocab = test_vocab();
    Student<float> student(tiny_student_cfg(), vocab.size(), 21);
    auto toks = vocab.tokenize("a red circle above a blue square .", TextKind::student_text);

    auto enc = student.encode(nullptr, toks);
    CHECK(enc.E->shape == Shape{toks.length(), 24});

    auto enc2 = student.encode(nullptr, toks);
    CHECK(enc.E->v == enc2.E->v);

    SECTION("bidirectionality: the last token influences the first row") {
        auto toks2 = toks;
        toks2.ids[toks2.ids.size() - 2] = vocab.id_of("star");
        auto encb = student.encode(nullptr, toks2);
        double diff = 0;
        for (int c = 0; c < 24; ++c) diff += std::abs(enc.E->at(0, c) - encb.E->at(0, c));
        CHECK(diff > 1e-6);
    }
    SECTION("pad positions do not influence non-pad outputs") {
        auto padded = toks;
        padded.ids.push_back(Vocab::pad_id);
        padded.ids.push_back(Vocab::pad_id);
        auto encp = student.encode(nullptr, padded);
        for (int r = 0; r < toks.length(); ++r)
            for (int c = 0; c < 24; ++c) CHECK(encp.E->at(r, c) == Approx(enc.E->at(r, c)).margin(1e-9));
    }
    SECTION("contract and length errors") {
        CHECK_THROWS_AS(student.encode(nullptr, vocab.tokenize("a red circle", TextKind::teacher_text)),
                        ContractError);
        TokenSequence overlong;
        overlong.kind = TextKind::student_text;
        overlong.ids.assign(40, Vocab::bos_id);
        CHECK_THROWS_AS(student.encode(nullptr, overlong), LengthError);
    }
}

TEST_CASE("student decoder respects causality and its context") {
    auto vocab = test_vocab();
    Student<float> student(tiny_student_cfg(), vocab.size(), 23);
    Rng rng(5);
    auto context = make_tensor<float>({5, 24});
    for (auto& x : context->v) x = static_cast<float>(rng.normal());

    auto target = to_decoder_target(vocab.tokenize("a red circle above a blue square .", TextKind::student_text));
    auto logits = student.decode_logits(nullptr, context, target);
    CHECK(logits->shape == Shape{target.length(), vocab.size()});

    SECTION("editing target position j leaves logits at positions <= j unchanged") {
        const int j = 3;
        auto edited = target;
        edited.ids[static_cast<size_t>(j)] = vocab.id_of("star");
        auto logits2 = student.decode_logits(nullptr, context, edited);
        for (int r = 0; r <= j; ++r)
            for (int c = 0; c < vocab.size(); ++c) CHECK(logits2->at(r, c) == logits->at(r, c));
        double diff = 0;
        for (int c = 0; c < vocab.size(); ++c) diff += std::abs(logits2->at(j + 1, c) - logits->at(j + 1, c));
        CHECK(diff > 1e-8);
    }
    SECTION("cross-attention is live: context changes move the logits") {
        auto zero_ctx = make_tensor<float>({5, 24});
        auto logits2 = student.decode_logits(nullptr, zero_ctx, target);
        double diff = 0;
        for (size_t i = 0; i < logits->v.size(); ++i) diff += std::abs(logits->v[i] - logits2->v[i]);
        CHECK(diff > 1e-6);
    }
    SECTION("context width is checked") {
        auto bad = make_tensor<float>({5, 23});
        CHECK_THROWS_AS(student.decode_logits(nullptr, bad, target), ShapeError);
    }
}

TEST_CASE("untrained infilling loss sits near the uniform baseline") {
    auto vocab = test_vocab();
    Student<float> student(tiny_student_cfg(), vocab.size(), 29);
    Rng rng(31);
    auto toks = vocab.tokenize("a red circle above a blue square .", TextKind::student_text);
    auto outcome = corrupt_spans(toks, rng);
    Tape<float> tape;
    auto loss = infill_loss(&tape, student, outcome);
    const double uniform = std::log(static_cast<double>(vocab.size()));
    CHECK(loss->v[0] > 0.85 * uniform);
    CHECK(loss->v[0] < 1.15 * uniform);
}

TEST_CASE("student pretraining lowers held-out perplexity and is deterministic") {
    auto records = generate_dataset(900, 48, 2);
    auto vocab = test_vocab();
    auto corpus = pretraining_texts(records);
    StudentPretrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 16;
    cfg.seed = 7;

    Student<float> student(tiny_student_cfg(), vocab.size(), 7);
    auto report = pretrain_student(student, vocab, corpus, cfg);
    REQUIRE(report.heldout_perplexities.size() == 3);
    CHECK(report.heldout_perplexities.back() < report.heldout_perplexities.front());
    CHECK(report.p0 == report.heldout_perplexities.back());
    CHECK(report.p0 >= 1.0);

    Student<float> student2(tiny_student_cfg(), vocab.size(), 7);
    auto report2 = pretrain_student(student2, vocab, corpus, cfg);
    CHECK(params_hash(student.parameters()) == params_hash(student2.parameters()));
    CHECK(report.p0 == report2.p0);
}

TEST_CASE("to_decoder_target strips the leading BOS only") {
    auto vocab = test_vocab();
    auto st = vocab.tokenize("a red circle", TextKind::student_text);
    auto dt = to_decoder_target(st);
    CHECK(dt.kind == TextKind::decoder_target);
    CHECK(dt.ids.size() == st.ids.size() - 1);
    CHECK(dt.ids.front() == vocab.id_of("a"));
    CHECK(dt.ids.back() == Vocab::eos_id);
    CHECK_THROWS_AS(to_decoder_target(dt), ContractError);
}
