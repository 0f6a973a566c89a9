#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "vlkd/decode.hpp"
#include "vlkd/projections.hpp"
#include "vlkd/prompt.hpp"

namespace vlkd {

struct GenerationConfig {
    enum class Strategy { greedy, beam };
    Strategy strategy = Strategy::beam;
    int beam_size = 6;       // captioning default; VQA uses greedy (beam 1)
    int extra_length = 10;   // max_length = prompt length + extra
    double length_bonus = 0.0;

    void validate() const {
        if (beam_size < 1) throw ContractError("generation config: beam_size must be >= 1");
        if (extra_length < 1) throw ContractError("generation config: extra_length must be >= 1");
    }
};

inline constexpr uint64_t kEvalRenderSeed = 7; // fixed render noise for evaluation passes

// ---------------------------------------------------------- text utilities

inline bool is_punct_word(const std::string& w) { return w == "." || w == "?" || w == ":"; }

// lowercase, strip punctuation, collapse whitespace; the toy vocabulary is
// already lowercase so this mostly drops punctuation tokens
inline std::string normalize_answer(const std::string& text) {
    std::vector<std::string> kept;
    for (auto& w : split_words(text)) {
        std::string lower = w;
        std::transform(lower.begin(), lower.end(), lower.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        if (!is_punct_word(lower)) kept.push_back(lower);
    }
    return join_words(kept);
}

struct ExtractionResult {
    std::string text;
    bool used_fallback = false; // template marker missing, returned the full generation
};

// inverse of the captioning prompt: strip the literal "a picture of" prefix
// and the terminal period
inline ExtractionResult extract_caption(const Vocab& vocab, const std::vector<int>& generated) {
    auto words = vocab.content_words(generated);
    ExtractionResult res;
    if (words.size() >= 3 && words[0] == "a" && words[1] == "picture" && words[2] == "of") {
        std::vector<std::string> body(words.begin() + 3, words.end());
        while (!body.empty() && is_punct_word(body.back())) body.pop_back();
        res.text = join_words(body);
        return res;
    }
    res.used_fallback = true;
    res.text = normalize_answer(join_words(words));
    return res;
}

// inverse of the VQA prompt: everything after the "answer" marker (and its
// colon) up to the closing period
inline ExtractionResult extract_answer(const Vocab& vocab, const std::vector<int>& generated) {
    auto words = vocab.content_words(generated);
    ExtractionResult res;
    for (size_t i = 0; i < words.size(); ++i) {
        if (words[i] == "answer") {
            size_t j = i + 1;
            if (j < words.size() && words[j] == ":") ++j;
            std::vector<std::string> body;
            for (; j < words.size() && words[j] != "."; ++j) body.push_back(words[j]);
            res.text = normalize_answer(join_words(body));
            return res;
        }
    }
    res.used_fallback = true;
    res.text = normalize_answer(join_words(words));
    return res;
}

// ------------------------------------------------------------- generation

template <typename T>
struct ZeroShotContext {
    const Teacher<T>& teacher;
    const Student<T>& student;
    const Projections<T>& proj;
    const Vocab& vocab;
    double noise_sigma = 0.1;
};

template <typename T>
TensorPtr<T> prompt_context(const ZeroShotContext<T>& zs, const SceneSpec& scene, const TokenSequence& prompt) {
    auto patches = render_patches(scene, kEvalRenderSeed, zs.teacher.cfg.d_img, zs.noise_sigma);
    auto img = zs.teacher.encode_image(nullptr, patches);
    auto enc = zs.student.encode(nullptr, prompt);
    return build_decoder_context<T>(nullptr, img.V, enc, zs.proj, zs.teacher.cfg.mode);
}

// Zero-shot generation recovers only the [MASK] positions: the prompt's
// visible tokens are forced into the decoder, the masked slot free-runs
// until the closing period (each mask may expand to a few tokens).

template <typename T>
ExtractionResult zero_shot_caption(const ZeroShotContext<T>& zs, const SceneSpec& scene, int mask_count = 6,
                                   const GenerationConfig& gen = {}) {
    gen.validate();
    auto prompt = build_prompt(zs.vocab, PromptTask::caption, nullptr, mask_count);
    auto context = prompt_context(zs, scene, prompt);
    std::vector<int> forced{zs.vocab.id_of("a"), zs.vocab.id_of("picture"), zs.vocab.id_of("of")};
    const std::vector<int> stops{zs.vocab.id_of("."), Vocab::eos_id};
    const int beam = gen.strategy == GenerationConfig::Strategy::greedy ? 1 : gen.beam_size;
    auto out = infill_decode_scored(student_scorer(zs.student, context), forced, stops,
                                    3 * mask_count + 1, beam, gen.length_bonus);
    return extract_caption(zs.vocab, out.ids);
}

template <typename T>
ExtractionResult zero_shot_vqa(const ZeroShotContext<T>& zs, const SceneSpec& scene, const std::string& question,
                               int mask_count = 2) {
    auto prompt = build_prompt(zs.vocab, PromptTask::vqa, &question, mask_count);
    auto context = prompt_context(zs, scene, prompt);
    std::vector<int> forced;
    for (const auto& w : split_words(question)) forced.push_back(zs.vocab.id_of(w));
    forced.push_back(zs.vocab.id_of("answer"));
    forced.push_back(zs.vocab.id_of(":"));
    const std::vector<int> stops{zs.vocab.id_of("."), Vocab::eos_id};
    // Table 9: greedy decoding for VQA
    auto out = infill_decode_scored(student_scorer(zs.student, context), forced, stops, 3 * mask_count + 1, 1);
    return extract_answer(zs.vocab, out.ids);
}

// --------------------------------------------------------------- retrieval

template <typename T>
std::vector<T> student_caption_embedding(const Student<T>& student, const Projections<T>& proj,
                                         const Vocab& vocab, const std::string& caption) {
    auto toks = vocab.tokenize(pair_text(caption), TextKind::student_text);
    auto enc = student.encode(nullptr, toks);
    auto e = student_sentence_embedding<T>(nullptr, enc, proj);
    return e->v;
}

struct RetrievalReport {
    double r_at_k_i2t = 0.0;
    double r_at_k_t2i = 0.0;
    int k = 1;
    int count = 0;
};

// similarity = v_cls . e_norm between every scene and every caption
template <typename T>
RetrievalReport retrieval_eval(const ZeroShotContext<T>& zs, const std::vector<PairRecord>& records, int k) {
    if (records.empty()) throw ContractError("retrieval_eval: empty evaluation set");
    std::set<std::string> captions;
    for (const auto& r : records)
        if (!captions.insert(r.sample.caption).second)
            throw ContractError("retrieval_eval: duplicate caption '" + r.sample.caption +
                                "' makes the ground truth ambiguous");
    const size_t n = records.size();
    std::vector<std::vector<T>> img(n), txt(n);
    for (size_t i = 0; i < n; ++i) {
        auto patches = render_patches(records[i].sample.scene, kEvalRenderSeed, zs.teacher.cfg.d_img,
                                      zs.noise_sigma);
        img[i] = zs.teacher.encode_image(nullptr, patches).v_cls->v;
        txt[i] = student_caption_embedding(zs.student, zs.proj, zs.vocab, records[i].sample.caption);
    }
    std::vector<std::vector<double>> sim(n, std::vector<double>(n));
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < n; ++j) {
            double s = 0;
            for (size_t d = 0; d < img[i].size(); ++d)
                s += static_cast<double>(img[i][d]) * static_cast<double>(txt[j][d]);
            sim[i][j] = s;
        }
    RetrievalReport rep;
    rep.k = k;
    rep.count = static_cast<int>(n);
    rep.r_at_k_i2t = recall_at_k(sim, k);
    std::vector<std::vector<double>> simT(n, std::vector<double>(n));
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < n; ++j) simT[i][j] = sim[j][i];
    rep.r_at_k_t2i = recall_at_k(simT, k);
    return rep;
}

// ------------------------------------------------------------ text metrics

inline double exact_match(const std::string& prediction, const std::string& reference) {
    return normalize_answer(prediction) == normalize_answer(reference) ? 1.0 : 0.0;
}

// unigram F1 with count overlap
inline double unigram_f1(const std::string& prediction, const std::string& reference) {
    auto p = split_words(normalize_answer(prediction));
    auto r = split_words(normalize_answer(reference));
    if (p.empty() || r.empty()) return p.empty() && r.empty() ? 1.0 : 0.0;
    std::map<std::string, int> counts;
    for (const auto& w : r) ++counts[w];
    int overlap = 0;
    for (const auto& w : p) {
        auto it = counts.find(w);
        if (it != counts.end() && it->second > 0) {
            --it->second;
            ++overlap;
        }
    }
    if (overlap == 0) return 0.0;
    const double precision = static_cast<double>(overlap) / static_cast<double>(p.size());
    const double recall = static_cast<double>(overlap) / static_cast<double>(r.size());
    return 2.0 * precision * recall / (precision + recall);
}

struct TextMetrics {
    double exact_match = 0.0;
    double unigram_f1 = 0.0;
    int count = 0;
};

inline TextMetrics eval_metrics(const std::vector<std::string>& predictions,
                                const std::vector<std::string>& references) {
    if (predictions.size() != references.size())
        throw ContractError("eval_metrics: " + std::to_string(predictions.size()) + " predictions vs " +
                            std::to_string(references.size()) + " references");
    TextMetrics m;
    m.count = static_cast<int>(predictions.size());
    for (size_t i = 0; i < predictions.size(); ++i) {
        m.exact_match += exact_match(predictions[i], references[i]);
        m.unigram_f1 += unigram_f1(predictions[i], references[i]);
    }
    if (m.count > 0) {
        m.exact_match /= m.count;
        m.unigram_f1 /= m.count;
    }
    return m;
}

// accuracy of always answering the most frequent reference answer
inline double majority_answer_baseline(const std::vector<std::string>& references) {
    std::map<std::string, int> counts;
    for (const auto& r : references) ++counts[normalize_answer(r)];
    int best = 0;
    for (const auto& [answer, c] : counts) best = std::max(best, c);
    return references.empty() ? 0.0 : static_cast<double>(best) / static_cast<double>(references.size());
}

// ------------------------------------------------------------- evaluation

// one question per scene, cycled by record index for balance
inline const QaPair& pick_question(const PairRecord& rec, size_t index) {
    return rec.sample.qa[index % rec.sample.qa.size()];
}

struct ZeroShotEval {
    double vqa_accuracy = 0.0;
    double vqa_majority_baseline = 0.0;
    double caption_f1 = 0.0;
    double caption_random_baseline = 0.0;
    double caption_fallback_rate = 0.0;
    int count = 0;
};

template <typename T>
double vqa_accuracy(const ZeroShotContext<T>& zs, const std::vector<PairRecord>& records, int mask_count = 2) {
    std::vector<std::string> preds, refs;
    for (size_t i = 0; i < records.size(); ++i) {
        const auto& qa = pick_question(records[i], i);
        preds.push_back(zero_shot_vqa(zs, records[i].sample.scene, qa.question, mask_count).text);
        refs.push_back(qa.answer);
    }
    return eval_metrics(preds, refs).exact_match;
}

template <typename T>
ZeroShotEval zero_shot_eval(const ZeroShotContext<T>& zs, const std::vector<PairRecord>& records,
                            int caption_masks = 6, int vqa_masks = 2, const GenerationConfig& gen = {}) {
    ZeroShotEval ev;
    ev.count = static_cast<int>(records.size());
    std::vector<std::string> vqa_preds, vqa_refs, cap_preds, cap_refs;
    int fallbacks = 0;
    for (size_t i = 0; i < records.size(); ++i) {
        const auto& qa = pick_question(records[i], i);
        vqa_preds.push_back(zero_shot_vqa(zs, records[i].sample.scene, qa.question, vqa_masks).text);
        vqa_refs.push_back(qa.answer);
        auto cap = zero_shot_caption(zs, records[i].sample.scene, caption_masks, gen);
        fallbacks += cap.used_fallback ? 1 : 0;
        cap_preds.push_back(cap.text);
        cap_refs.push_back(records[i].sample.caption);
    }
    ev.vqa_accuracy = eval_metrics(vqa_preds, vqa_refs).exact_match;
    ev.vqa_majority_baseline = majority_answer_baseline(vqa_refs);
    ev.caption_f1 = eval_metrics(cap_preds, cap_refs).unigram_f1;
    // random-caption baseline: score every caption against a rotated reference
    std::vector<std::string> rotated = cap_refs;
    std::rotate(rotated.begin(), rotated.begin() + rotated.size() / 2, rotated.end());
    ev.caption_random_baseline = eval_metrics(rotated, cap_refs).unigram_f1;
    ev.caption_fallback_rate = records.empty() ? 0.0 : static_cast<double>(fallbacks) / records.size();
    return ev;
}

// greedy text-only infilling: fraction of masked words reproduced verbatim
template <typename T>
double masked_word_recovery(const Student<T>& student, const Vocab& vocab,
                            const std::vector<std::string>& sentences, double rate, uint64_t seed) {
    Rng rng(seed);
    int recovered = 0, masked_total = 0;
    for (const auto& s : sentences) {
        auto outcome = corrupt_spans(vocab.tokenize(s, TextKind::student_text), rng, rate);
        auto enc = student.encode(nullptr, outcome.corrupted);
        auto target = to_decoder_target(outcome.target);
        auto decoded = greedy_decode(student, enc.E, target.length() + 6);
        std::vector<char> is_masked; // per word of the original sentence
        {
            auto words = vocab.content_words(outcome.target.ids);
            is_masked.assign(words.size(), 0);
            for (const auto& [start, len] : outcome.span_log)
                for (int k = start; k < start + len; ++k) is_masked[static_cast<size_t>(k)] = 1;
        }
        auto target_words = vocab.content_words(outcome.target.ids);
        auto decoded_words = vocab.content_words(decoded.ids);
        for (size_t w = 0; w < target_words.size(); ++w) {
            if (!is_masked[w]) continue;
            ++masked_total;
            if (w < decoded_words.size() && decoded_words[w] == target_words[w]) ++recovered;
        }
    }
    return masked_total > 0 ? static_cast<double>(recovered) / masked_total : 1.0;
}

} // namespace vlkd
