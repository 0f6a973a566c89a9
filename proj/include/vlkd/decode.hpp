#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "vlkd/student.hpp"

namespace vlkd {

// Next-token log-probabilities given the generated prefix (BOS excluded).
// Decoding is written against this closure so toy scorers can drive the
// oracle tests and the student just wraps its decoder.
using NextTokenScorer = std::function<std::vector<double>(const std::vector<int>& prefix)>;

template <typename T>
NextTokenScorer student_scorer(const Student<T>& student, const TensorPtr<T>& context) {
    return [&student, context](const std::vector<int>& prefix) {
        std::vector<int> probe = prefix;
        probe.push_back(Vocab::pad_id); // placeholder row; causality keeps it inert
        auto logits = student.decode_logits(nullptr, context, probe);
        const int row = static_cast<int>(prefix.size());
        const int vsz = logits->shape[1];
        std::vector<double> out(static_cast<size_t>(vsz));
        double mx = logits->at(row, 0);
        for (int j = 1; j < vsz; ++j) mx = std::max(mx, static_cast<double>(logits->at(row, j)));
        double denom = 0;
        for (int j = 0; j < vsz; ++j) denom += std::exp(static_cast<double>(logits->at(row, j)) - mx);
        const double lse = mx + std::log(denom);
        for (int j = 0; j < vsz; ++j) out[static_cast<size_t>(j)] = static_cast<double>(logits->at(row, j)) - lse;
        return out;
    };
}

struct DecodeResult {
    std::vector<int> ids; // generated tokens, EOS included when produced
    double score = 0.0;   // total log-probability
};

// argmax per step, ties broken toward the lowest token id
inline DecodeResult greedy_decode_scored(const NextTokenScorer& scorer, int max_length,
                                         int eos_id = Vocab::eos_id) {
    DecodeResult res;
    for (int step = 0; step < max_length; ++step) {
        auto logp = scorer(res.ids);
        int best = 0;
        for (size_t j = 1; j < logp.size(); ++j)
            if (logp[j] > logp[static_cast<size_t>(best)]) best = static_cast<int>(j);
        res.ids.push_back(best);
        res.score += logp[static_cast<size_t>(best)];
        if (best == eos_id) break;
    }
    return res;
}

// Length-unnormalized log-probability beam. Hypotheses that emit EOS retire
// into the finished pool; the best finished hypothesis wins, falling back to
// the best live one if nothing finished within max_length.
inline DecodeResult beam_search_scored(const NextTokenScorer& scorer, int beam_size, int max_length,
                                       int eos_id = Vocab::eos_id, double length_bonus = 0.0) {
    if (beam_size < 1) throw ContractError("beam_search: beam_size must be >= 1");
    struct Hyp {
        std::vector<int> ids;
        double score = 0.0;
    };
    auto better = [](const Hyp& a, const Hyp& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.ids < b.ids; // deterministic tie-break
    };
    std::vector<Hyp> live{Hyp{}};
    std::vector<Hyp> finished;
    for (int step = 0; step < max_length && !live.empty(); ++step) {
        std::vector<Hyp> candidates;
        for (const auto& hyp : live) {
            auto logp = scorer(hyp.ids);
            for (size_t j = 0; j < logp.size(); ++j) {
                Hyp next;
                next.ids = hyp.ids;
                next.ids.push_back(static_cast<int>(j));
                next.score = hyp.score + logp[j];
                candidates.push_back(std::move(next));
            }
        }
        std::sort(candidates.begin(), candidates.end(), better);
        if (static_cast<int>(candidates.size()) > beam_size) candidates.resize(static_cast<size_t>(beam_size));
        live.clear();
        for (auto& c : candidates) {
            if (c.ids.back() == eos_id)
                finished.push_back(std::move(c));
            else
                live.push_back(std::move(c));
        }
    }
    auto ranked = [&](const Hyp& h) { return h.score + length_bonus * static_cast<double>(h.ids.size()); };
    const Hyp* best = nullptr;
    for (const auto& h : finished)
        if (!best || ranked(h) > ranked(*best) || (ranked(h) == ranked(*best) && h.ids < best->ids)) best = &h;
    if (!best)
        for (const auto& h : live)
            if (!best || ranked(h) > ranked(*best) || (ranked(h) == ranked(*best) && h.ids < best->ids)) best = &h;
    DecodeResult res;
    if (best) {
        res.ids = best->ids;
        res.score = best->score;
    }
    return res;
}

template <typename T>
TokenSequence greedy_decode(const Student<T>& student, const TensorPtr<T>& context, int max_length) {
    auto res = greedy_decode_scored(student_scorer(student, context), max_length);
    TokenSequence out;
    out.kind = TextKind::decoder_target;
    out.ids = res.ids;
    return out;
}

// Mask-slot infilling: the visible template tokens are forced, the decoder
// free-runs only in the masked region until it emits a stop token. Returns
// the assembled sequence (forced prefix + generated slot).
inline DecodeResult infill_decode_scored(const NextTokenScorer& scorer, const std::vector<int>& forced_prefix,
                                         const std::vector<int>& stop_ids, int max_free_tokens, int beam_size,
                                         double length_bonus = 0.0) {
    auto slot_scorer = [&](const std::vector<int>& slot) {
        std::vector<int> full = forced_prefix;
        full.insert(full.end(), slot.begin(), slot.end());
        return scorer(full);
    };
    auto is_stop = [&](int id) {
        return std::find(stop_ids.begin(), stop_ids.end(), id) != stop_ids.end();
    };
    DecodeResult slot;
    if (beam_size <= 1) {
        for (int step = 0; step < max_free_tokens; ++step) {
            auto logp = slot_scorer(slot.ids);
            int best = 0;
            for (size_t j = 1; j < logp.size(); ++j)
                if (logp[j] > logp[static_cast<size_t>(best)]) best = static_cast<int>(j);
            slot.ids.push_back(best);
            slot.score += logp[static_cast<size_t>(best)];
            if (is_stop(best)) break;
        }
    } else {
        struct Hyp {
            std::vector<int> ids;
            double score = 0.0;
        };
        auto better = [](const Hyp& a, const Hyp& b) {
            if (a.score != b.score) return a.score > b.score;
            return a.ids < b.ids;
        };
        std::vector<Hyp> live{Hyp{}};
        std::vector<Hyp> finished;
        for (int step = 0; step < max_free_tokens && !live.empty(); ++step) {
            std::vector<Hyp> candidates;
            for (const auto& hyp : live) {
                auto logp = slot_scorer(hyp.ids);
                for (size_t j = 0; j < logp.size(); ++j) {
                    Hyp next{hyp.ids, hyp.score + logp[j]};
                    next.ids.push_back(static_cast<int>(j));
                    candidates.push_back(std::move(next));
                }
            }
            std::sort(candidates.begin(), candidates.end(), better);
            if (static_cast<int>(candidates.size()) > beam_size)
                candidates.resize(static_cast<size_t>(beam_size));
            live.clear();
            for (auto& c : candidates) {
                if (is_stop(c.ids.back()))
                    finished.push_back(std::move(c));
                else
                    live.push_back(std::move(c));
            }
        }
        auto ranked = [&](const Hyp& h) { return h.score + length_bonus * static_cast<double>(h.ids.size()); };
        const Hyp* best = nullptr;
        for (const auto& h : finished)
            if (!best || ranked(h) > ranked(*best)) best = &h;
        if (!best)
            for (const auto& h : live)
                if (!best || ranked(h) > ranked(*best)) best = &h;
        if (best) slot = {best->ids, best->score};
    }
    DecodeResult out;
    out.ids = forced_prefix;
    out.ids.insert(out.ids.end(), slot.ids.begin(), slot.ids.end());
    out.score = slot.score;
    return out;
}

template <typename T>
TokenSequence beam_search(const Student<T>& student, const TensorPtr<T>& context, int beam_size,
                          int max_length, double length_bonus = 0.0) {
    auto res = beam_search_scored(student_scorer(student, context), beam_size, max_length, Vocab::eos_id,
                                  length_bonus);
    TokenSequence out;
    out.kind = TextKind::decoder_target;
    out.ids = res.ids;
    return out;
}

} // namespace vlkd
