#pragma once

#include <string>

#include "vlkd/errors.hpp"
#include "vlkd/vocab.hpp"

namespace vlkd {

enum class PromptTask { caption, vqa };

// Zero-shot prompts: captioning uses "a picture of" followed by m masks,
// VQA appends "answer :" and n masks to the question. Both end with a
// period, mirroring the sentences seen in training.
inline TokenSequence build_prompt(const Vocab& vocab, PromptTask task, const std::string* question,
                                  int mask_count) {
    if (mask_count < 1)
        throw ContractError("build_prompt: mask_count must be >= 1, got " + std::to_string(mask_count));
    TokenSequence seq;
    seq.kind = TextKind::student_text;
    seq.ids.push_back(Vocab::bos_id);
    if (task == PromptTask::caption) {
        for (const char* w : {"a", "picture", "of"}) seq.ids.push_back(vocab.id_of(w));
    } else {
        if (!question || question->empty()) throw ContractError("build_prompt: vqa task requires a question");
        for (const auto& w : split_words(*question)) seq.ids.push_back(vocab.id_of(w));
        seq.ids.push_back(vocab.id_of("answer"));
        seq.ids.push_back(vocab.id_of(":"));
    }
    for (int i = 0; i < mask_count; ++i) seq.ids.push_back(Vocab::mask_id);
    seq.ids.push_back(vocab.id_of("."));
    seq.ids.push_back(Vocab::eos_id);
    return seq;
}

} // namespace vlkd
