#pragma once

#include <cmath>
#include <map>
#include <vector>

#include "vlkd/errors.hpp"
#include "vlkd/rng.hpp"
#include "vlkd/vocab.hpp"

namespace vlkd {

// BART-style span corruption: mask whole words until a 15% budget is met,
// span lengths drawn from Poisson(lambda=3). Each span, including the
// zero-length ones inserted between words, becomes exactly one MASK token.

struct CorruptionOutcome {
    TokenSequence corrupted;                    // student-text with MASK tokens
    TokenSequence target;                       // the original student-text
    std::vector<std::pair<int, int>> span_log;  // (start word index, word count); length 0 = insertion
    std::vector<int> sampled_positive_lengths;  // raw positive Poisson draws before budget truncation
};

inline CorruptionOutcome corrupt_spans(const TokenSequence& tokens, Rng& rng, double rate = 0.15,
                                       double lambda = 3.0) {
    if (tokens.kind != TextKind::student_text)
        throw ContractError("corrupt_spans: input must be student-text");
    if (!(rate > 0.0 && rate < 1.0))
        throw ContractError("corrupt_spans: rate must lie in (0,1), got " + std::to_string(rate));

    CorruptionOutcome out;
    out.target = tokens;
    out.corrupted = tokens;

    // word positions, specials excluded
    std::vector<int> word_tokens;
    for (int id : tokens.ids)
        if (!Vocab::is_special(id)) word_tokens.push_back(id);
    const int n = static_cast<int>(word_tokens.size());
    if (n < 2) return out; // too short to corrupt

    const int budget = static_cast<int>(std::ceil(rate * n));
    if (budget <= 0) return out;

    std::vector<char> masked(static_cast<size_t>(n), 0);
    std::vector<std::pair<int, int>> spans;       // positive spans (start, len)
    std::vector<int> insert_gaps;                 // zero-length spans, MASK inserted before word g
    int total_masked = 0;
    while (total_masked < budget) {
        const int drawn = rng.poisson(lambda);
        if (drawn == 0) {
            insert_gaps.push_back(rng.next_int(n + 1));
            out.span_log.emplace_back(insert_gaps.back(), 0);
            continue;
        }
        out.sampled_positive_lengths.push_back(drawn);
        int len = std::min(drawn, budget - total_masked);
        // shrink until a run of unmasked words can hold the span
        std::vector<int> starts;
        while (len >= 1) {
            starts.clear();
            for (int s = 0; s + len <= n; ++s) {
                bool free = true;
                for (int k = s; k < s + len; ++k)
                    if (masked[static_cast<size_t>(k)]) {
                        free = false;
                        break;
                    }
                if (free) starts.push_back(s);
            }
            if (!starts.empty()) break;
            --len;
        }
        const int start = starts[static_cast<size_t>(rng.next_int(static_cast<int>(starts.size())))];
        for (int k = start; k < start + len; ++k) masked[static_cast<size_t>(k)] = 1;
        spans.emplace_back(start, len);
        out.span_log.emplace_back(start, len);
        total_masked += len;
    }

    // rebuild the corrupted sequence: one MASK per span, inserted masks at
    // their gap, specials untouched
    std::map<int, int> span_at_start;
    for (size_t i = 0; i < spans.size(); ++i) span_at_start[spans[i].first] = static_cast<int>(i);
    std::map<int, int> inserts_at_gap;
    for (int g : insert_gaps) ++inserts_at_gap[g];

    std::vector<int> body;
    int w = 0;
    while (w <= n) {
        if (auto it = inserts_at_gap.find(w); it != inserts_at_gap.end())
            for (int k = 0; k < it->second; ++k) body.push_back(Vocab::mask_id);
        if (w == n) break;
        if (auto it = span_at_start.find(w); it != span_at_start.end()) {
            body.push_back(Vocab::mask_id);
            const int len = spans[static_cast<size_t>(it->second)].second;
            // insertion gaps that fall strictly inside the replaced span
            // still contribute their own MASK, right after the span's
            for (int g = w + 1; g < w + len; ++g)
                if (auto ins = inserts_at_gap.find(g); ins != inserts_at_gap.end())
                    for (int k = 0; k < ins->second; ++k) body.push_back(Vocab::mask_id);
            w += len;
        } else {
            body.push_back(word_tokens[static_cast<size_t>(w)]);
            ++w;
        }
    }
    out.corrupted.ids.clear();
    out.corrupted.ids.push_back(Vocab::bos_id);
    out.corrupted.ids.insert(out.corrupted.ids.end(), body.begin(), body.end());
    out.corrupted.ids.push_back(Vocab::eos_id);
    return out;
}

} // namespace vlkd
