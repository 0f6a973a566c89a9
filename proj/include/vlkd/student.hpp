#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "vlkd/corruption.hpp"
#include "vlkd/optimizer.hpp"
#include "vlkd/scene.hpp"
#include "vlkd/transformer.hpp"
#include "vlkd/vocab.hpp"

namespace vlkd {

struct StudentConfig {
    int d2 = 96; // model width, shared by encoder and decoder
    int layers = 2;
    int heads = 4;
    int ffn = 192;
    int max_len = 48; // tokens including specials

    void validate() const {
        if (d2 % heads != 0)
            throw ContractError("student config: d2 " + std::to_string(d2) + " not divisible by heads " +
                                std::to_string(heads));
    }
};

template <typename T>
struct StudentEncoding {
    TensorPtr<T> E;        // [L, d2] raw (unnormalized) encoder output
    std::vector<char> pad; // per-position pad flags
    std::vector<int> ids;  // echo of the encoded ids
};

// decoder targets drop the leading BOS; the decoder input is the target
// shifted right with BOS prepended, so logits[i] conditions on target[<i]
inline TokenSequence to_decoder_target(const TokenSequence& student_text) {
    if (student_text.kind != TextKind::student_text)
        throw ContractError("to_decoder_target: expected student-text input");
    TokenSequence out;
    out.kind = TextKind::decoder_target;
    out.ids.assign(student_text.ids.begin() + 1, student_text.ids.end());
    return out;
}

// Encoder-decoder student: bidirectional encoder, causal decoder with
// cross-attention, embeddings tied to the LM head.
template <typename T>
struct Student {
    StudentConfig cfg;
    int vocab_size = 0;

    TensorPtr<T> tok_embed; // [vocab, d2], tied with the LM head
    TensorPtr<T> enc_pos, dec_pos;
    std::vector<EncoderLayer<T>> enc_layers;
    LayerNormParams<T> enc_ln;
    std::vector<DecoderLayer<T>> dec_layers;
    LayerNormParams<T> dec_ln;
    TensorPtr<T> lm_bias; // [vocab]

    Student(StudentConfig c, int vocab, uint64_t seed) : cfg(c), vocab_size(vocab) {
        cfg.validate();
        Rng rng(seed ^ 0x57d0e27ull);
        tok_embed = param_tensor<T>({vocab_size, cfg.d2}, rng, 0.02);
        enc_pos = param_tensor<T>({cfg.max_len, cfg.d2}, rng, 0.02);
        dec_pos = param_tensor<T>({cfg.max_len, cfg.d2}, rng, 0.02);
        enc_layers.resize(static_cast<size_t>(cfg.layers));
        for (auto& l : enc_layers) l.init(cfg.d2, cfg.heads, cfg.ffn, rng);
        enc_ln.init(cfg.d2);
        dec_layers.resize(static_cast<size_t>(cfg.layers));
        for (auto& l : dec_layers) l.init(cfg.d2, cfg.heads, cfg.ffn, rng);
        dec_ln.init(cfg.d2);
        lm_bias = make_tensor<T>({vocab_size}, true);
    }

    StudentEncoding<T> encode(Tape<T>* tape, const TokenSequence& tokens) const {
        if (tokens.kind != TextKind::student_text)
            throw ContractError("student encode: expected student-text input");
        const int len = tokens.length();
        if (len > cfg.max_len)
            throw LengthError("student encode: length " + std::to_string(len) + " exceeds max " +
                              std::to_string(cfg.max_len));
        StudentEncoding<T> out;
        out.ids = tokens.ids;
        out.pad.resize(static_cast<size_t>(len));
        bool any_pad = false;
        for (int i = 0; i < len; ++i) {
            out.pad[static_cast<size_t>(i)] = tokens.ids[static_cast<size_t>(i)] == Vocab::pad_id;
            any_pad = any_pad || out.pad[static_cast<size_t>(i)];
        }
        auto h = add(tape, embed_rows(tape, tok_embed, tokens.ids), slice_rows(tape, enc_pos, 0, len));
        TensorPtr<T> mask = any_pad ? key_pad_mask<T>(len, out.pad) : nullptr;
        for (const auto& layer : enc_layers) h = layer.forward(tape, h, mask);
        out.E = enc_ln.forward(tape, h);
        return out;
    }

    // teacher-forced logits: row i is the distribution of target[i] given
    // target[<i] and the cross-attention context
    TensorPtr<T> decode_logits(Tape<T>* tape, const TensorPtr<T>& context,
                               const std::vector<int>& target) const {
        if (context->shape.size() != 2 || context->shape[1] != cfg.d2)
            throw ShapeError("student decode_logits: context " + shape_str(context->shape) +
                             " does not match decoder dim " + std::to_string(cfg.d2));
        const int len = static_cast<int>(target.size());
        if (len == 0) throw ContractError("student decode_logits: empty target");
        if (len > cfg.max_len)
            throw LengthError("student decode_logits: length " + std::to_string(len) + " exceeds max " +
                              std::to_string(cfg.max_len));
        std::vector<int> input(static_cast<size_t>(len));
        input[0] = Vocab::bos_id;
        for (int i = 1; i < len; ++i) input[static_cast<size_t>(i)] = target[static_cast<size_t>(i - 1)];
        auto h = add(tape, embed_rows(tape, tok_embed, input), slice_rows(tape, dec_pos, 0, len));
        auto causal = causal_mask<T>(len);
        for (const auto& layer : dec_layers) h = layer.forward(tape, h, causal, context);
        h = dec_ln.forward(tape, h);
        return add_rowvec(tape, matmul_nt(tape, h, tok_embed), lm_bias);
    }

    TensorPtr<T> decode_logits(Tape<T>* tape, const TensorPtr<T>& context, const TokenSequence& target) const {
        if (target.kind != TextKind::decoder_target)
            throw ContractError("student decode_logits: expected decoder-target input");
        return decode_logits(tape, context, target.ids);
    }

    ParamList<T> parameters(bool frozen = false) const {
        ParamList<T> out;
        out.push_back({"student.tok_embed", tok_embed, true, false});
        out.push_back({"student.enc_pos", enc_pos, true, false});
        out.push_back({"student.dec_pos", dec_pos, true, false});
        for (size_t i = 0; i < enc_layers.size(); ++i)
            enc_layers[i].collect("student.enc.layer" + std::to_string(i), out);
        enc_ln.collect("student.enc.ln", out);
        for (size_t i = 0; i < dec_layers.size(); ++i)
            dec_layers[i].collect("student.dec.layer" + std::to_string(i), out);
        dec_ln.collect("student.dec.ln", out);
        out.push_back({"student.lm_bias", lm_bias, false, false});
        for (auto& p : out) p.frozen = frozen;
        return out;
    }
};

// Text-only span-infilling loss: decoder reconstructs the full original
// sentence cross-attending the encoding of the corrupted one. This is the
// student's own pretraining objective and the NLP-retention probe.
template <typename T>
TensorPtr<T> infill_loss(Tape<T>* tape, const Student<T>& student, const CorruptionOutcome& outcome,
                         double smoothing = 0.0) {
    auto enc = student.encode(tape, outcome.corrupted);
    auto target = to_decoder_target(outcome.target);
    auto logits = student.decode_logits(tape, enc.E, target);
    return cross_entropy_smoothed(tape, logits, target.ids, smoothing, Vocab::pad_id);
}


struct StudentPretrainConfig {
    int epochs = 8;
    int batch_size = 32;
    double base_lr = 3e-4;
    double warmup_fraction = 0.02;
    double grad_clip = 3.0;
    double weight_decay = 0.01;
    double adam_eps = 1e-6;
    double corruption_rate = 0.30; // heavier than distillation's 0.15
    double poisson_lambda = 3.0;
    double holdout_fraction = 0.1;
    int max_corpus_sentences = 2400; // template language saturates early
    int max_probe_sentences = 120;
    int max_distractor_rows = 10; // context-robustness augmentation
    double summary_noise = 0.1;   // jitter on pooled summary rows
    uint64_t seed = 1;
};

// everything needed to recompute the held-out perplexity bit-identically
// after distillation
struct PerplexityProbe {
    std::vector<std::string> sentences;
    double rate = 0.30;
    uint64_t seed = 0;
};

struct StudentPretrainReport {
    std::vector<double> epoch_losses;
    std::vector<double> heldout_perplexities; // one entry per epoch
    double p0 = 0.0;                          // final held-out perplexity, the NLP-retention anchor
    int64_t steps = 0;
    PerplexityProbe probe;
};

// fixed-corruption held-out perplexity; reusable after distillation for the
// NLP-retention comparison
template <typename T>
double heldout_infill_perplexity(const Student<T>& student, const Vocab& vocab,
                                 const std::vector<std::string>& sentences, double rate, uint64_t eval_seed) {
    if (sentences.empty()) throw ContractError("heldout_infill_perplexity: no sentences");
    Rng rng(eval_seed);
    double total = 0.0;
    for (const auto& s : sentences) {
        auto outcome = corrupt_spans(vocab.tokenize(s, TextKind::student_text), rng, rate);
        Tape<T> tape;
        auto loss = infill_loss(&tape, student, outcome);
        total += static_cast<double>(loss->v[0]);
    }
    return std::exp(total / static_cast<double>(sentences.size()));
}

// The pooled, unit-normalized encoding of a sentence, plus jitter: the text
// stand-in for an aligned image embedding projected into decoder space.
template <typename T>
TensorPtr<T> summary_row(const Student<T>& student, const Vocab& vocab, const std::string& text, Rng& rng,
                         double noise) {
    auto enc = student.encode(nullptr, vocab.tokenize(text, TextKind::student_text));
    const int len = enc.E->shape[0], d = enc.E->shape[1];
    auto row = make_tensor<T>({1, d});
    for (int i = 0; i < len; ++i)
        for (int j = 0; j < d; ++j) row->v[static_cast<size_t>(j)] += enc.E->at(i, j);
    double sq = 0.0;
    for (auto& x : row->v) sq += static_cast<double>(x) * x;
    const double inv = 1.0 / std::sqrt(std::max(sq, 1e-12));
    for (auto& x : row->v) x = static_cast<T>(x * inv + noise * rng.normal());
    return row;
}

template <typename T>
StudentPretrainReport pretrain_student(Student<T>& student, const Vocab& vocab,
                                       const std::vector<PretrainExample>& corpus,
                                       const StudentPretrainConfig& cfg) {
    if (corpus.empty()) throw ContractError("pretrain_student: empty corpus");
    auto examples = corpus;
    Rng split_rng(cfg.seed ^ 0x5b117ull);
    split_rng.shuffle(examples);
    if (cfg.max_corpus_sentences > 0 && examples.size() > static_cast<size_t>(cfg.max_corpus_sentences))
        examples.resize(static_cast<size_t>(cfg.max_corpus_sentences));
    size_t holdout = std::max<size_t>(4, static_cast<size_t>(cfg.holdout_fraction * examples.size()));
    holdout = std::min(holdout, examples.size() / 2);
    if (cfg.max_probe_sentences > 0)
        holdout = std::min(holdout, static_cast<size_t>(cfg.max_probe_sentences));
    StudentPretrainReport report;
    for (size_t i = examples.size() - holdout; i < examples.size(); ++i)
        report.probe.sentences.push_back(examples[i].sentence);
    report.probe.rate = cfg.corruption_rate;
    examples.resize(examples.size() - holdout);

    AdamConfig adam;
    adam.eps = cfg.adam_eps;
    adam.weight_decay = cfg.weight_decay;
    AdamW<T> opt(student.parameters(), adam);

    const int64_t steps_per_epoch =
        (static_cast<int64_t>(examples.size()) + cfg.batch_size - 1) / cfg.batch_size;
    const int64_t total_steps = steps_per_epoch * cfg.epochs;
    Rng rng(cfg.seed ^ 0x5b3a1445ull);
    const uint64_t eval_seed = cfg.seed ^ 0xe7a1ull;
    report.probe.seed = eval_seed;

    int64_t step = 0;
    std::vector<int> index(examples.size());
    for (size_t i = 0; i < index.size(); ++i) index[i] = static_cast<int>(i);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng epoch_rng = rng.fork(static_cast<uint64_t>(epoch));
        epoch_rng.shuffle(index);
        double epoch_total = 0.0;
        int64_t batches = 0;
        for (size_t lo = 0; lo < index.size(); lo += static_cast<size_t>(cfg.batch_size)) {
            const size_t hi = std::min(index.size(), lo + static_cast<size_t>(cfg.batch_size));
            Tape<T> tape;
            std::vector<TensorPtr<T>> losses;
            TensorPtr<T> previous_enc; // distractor source: the preceding example's encoding
            for (size_t i = lo; i < hi; ++i) {
                const auto& ex = examples[static_cast<size_t>(index[i])];
                auto toks = vocab.tokenize(ex.sentence, TextKind::student_text);
                auto outcome = corrupt_spans(toks, epoch_rng, cfg.corruption_rate, cfg.poisson_lambda);
                // context mode: bare, summary-prefixed, or distractor-prefixed
                TensorPtr<T> prefix;
                const double u = epoch_rng.next_double();
                if (!ex.summary_source.empty()) {
                    if (u < 0.75)
                        prefix = summary_row(student, vocab, ex.summary_source, epoch_rng, cfg.summary_noise);
                } else if (u < 0.35) {
                    // bare
                } else if (u < 0.70) {
                    prefix = summary_row(student, vocab, ex.sentence, epoch_rng, cfg.summary_noise);
                } else if (previous_enc) {
                    const int rows = 1 + epoch_rng.next_int(std::max(1, cfg.max_distractor_rows));
                    const int take = std::min(rows, previous_enc->shape[0]);
                    prefix = slice_rows<T>(nullptr, stop_gradient(previous_enc), 0, take);
                }
                auto enc = student.encode(&tape, outcome.corrupted);
                auto target = to_decoder_target(outcome.target);
                auto context = prefix ? concat_rows(&tape, {prefix, enc.E}) : enc.E;
                auto logits = student.decode_logits(&tape, context, target);
                losses.push_back(cross_entropy_smoothed(&tape, logits, target.ids, 0.0, Vocab::pad_id));
                previous_enc = enc.E;
            }
            auto loss = mean_scalars(&tape, losses);
            const double loss_v = static_cast<double>(loss->v[0]);
            if (std::isnan(loss_v))
                throw TrainingError("pretrain_student: NaN loss at step " + std::to_string(step));
            opt.zero_grad();
            tape.backward(loss);
            clip_grad_norm(opt.params(), cfg.grad_clip);
            opt.step(lr_at(step + 1, total_steps, cfg.base_lr, cfg.warmup_fraction));
            epoch_total += loss_v;
            ++batches;
            ++step;
        }
        report.epoch_losses.push_back(epoch_total / static_cast<double>(batches));
        report.heldout_perplexities.push_back(
            heldout_infill_perplexity(student, vocab, report.probe.sentences, cfg.corruption_rate, eval_seed));
    }
    report.steps = step;
    report.p0 = report.heldout_perplexities.empty() ? 0.0 : report.heldout_perplexities.back();
    return report;
}

template <typename T>
StudentPretrainReport pretrain_student(Student<T>& student, const Vocab& vocab,
                                       const std::vector<std::string>& sentences,
                                       const StudentPretrainConfig& cfg) {
    std::vector<PretrainExample> examples;
    examples.reserve(sentences.size());
    for (const auto& s : sentences) examples.push_back({s, ""});
    return pretrain_student(student, vocab, examples, cfg);
}

} // namespace vlkd
