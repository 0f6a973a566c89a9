#include <catch2/catch.hpp>

#include <algorithm>
#include <cmath>
#include <set>

#include "vlkd/corruption.hpp"
#include "vlkd/prompt.hpp"
#include "vlkd/scene.hpp"
#include "vlkd/vocab.hpp"

using namespace vlkd;

TEST_CASE("vocab building is deterministic with fixed reserved ids") {
    auto v = Vocab::build({"red circle"});
    CHECK(v.size() == Vocab::reserved_count + 2);
    CHECK(v.id_of("circle") == 5); // sorted: circle < red
    CHECK(v.id_of("red") == 6);

    auto v2 = Vocab::build({"red circle"});
    CHECK(v2.id_of("circle") == v.id_of("circle"));
    CHECK(v2.id_of("red") == v.id_of("red"));

    const std::set<int> reserved{Vocab::pad_id, Vocab::bos_id, Vocab::eos_id, Vocab::mask_id, Vocab::sos_id};
    CHECK(reserved.size() == static_cast<size_t>(Vocab::reserved_count));

    CHECK_THROWS_AS(Vocab::build({}), ContractError);
}

TEST_CASE("full synthetic corpus vocab matches the catalog-derived count") {
    auto records = generate_dataset(100, 500);
    auto vocab = Vocab::build(pretraining_texts(records));
    // independent enumeration: attribute catalogs plus the fixed template words
    std::set<std::string> expected;
    for (const auto& w : shape_catalog()) expected.insert(w);
    for (const auto& w : color_catalog()) expected.insert(w);
    for (const auto& w : count_catalog()) expected.insert(w);
    for (const char* w : {"a", "picture", "of", ".", "above", "beside", "and", "what", "color", "is",
                          "the", "?", "shape", "thing", "how", "many", "things", "are", "there",
                          "in", "answer", ":"})
        expected.insert(w);
    CHECK(vocab.size() == Vocab::reserved_count + static_cast<int>(expected.size()));
    for (const auto& w : expected) CHECK(vocab.contains(w));
}

TEST_CASE("tokenize round trip and special-token conventions") {
    auto v = Vocab::build({"a red circle above a blue square ."});
    const std::string s = "a red circle above a blue square .";
    CHECK(v.detokenize(v.tokenize(s, TextKind::student_text)) == s);

    auto st = v.tokenize("a red circle", TextKind::student_text);
    CHECK(st.ids.front() == Vocab::bos_id);
    CHECK(st.ids.back() == Vocab::eos_id);

    auto tt = v.tokenize("a red circle", TextKind::teacher_text);
    CHECK(tt.ids.front() == Vocab::sos_id);
    CHECK(tt.ids.back() == Vocab::eos_id);

    auto dt = v.tokenize("a red circle", TextKind::decoder_target);
    CHECK(dt.ids.front() == v.id_of("a"));
    CHECK(dt.ids.back() == Vocab::eos_id);

    CHECK_THROWS_AS(v.tokenize("xyzzy", TextKind::student_text), VocabError);
}

TEST_CASE("generate_scene is a pure function of the seed") {
    for (uint64_t seed : {1ull, 42ull, 999ull}) {
        auto a = generate_scene(seed);
        auto b = generate_scene(seed);
        CHECK(a.caption == b.caption);
        CHECK(a.qa.size() == b.qa.size());
        for (size_t i = 0; i < a.qa.size(); ++i) {
            CHECK(a.qa[i].question == b.qa[i].question);
            CHECK(a.qa[i].answer == b.qa[i].answer);
        }
        for (size_t i = 0; i < a.scene.cells.size(); ++i) {
            CHECK(a.scene.cells[i].shape == b.scene.cells[i].shape);
            CHECK(a.scene.cells[i].color == b.scene.cells[i].color);
        }
    }
}

TEST_CASE("single-object caption names both attributes") {
    SceneSpec scene;
    scene.grid = 3;
    scene.cells.assign(9, SceneCell{});
    scene.cells[4].shape = 0; // circle
    scene.cells[4].color = 3; // red
    const auto caption = caption_for(scene);
    CHECK(caption.find("red") != std::string::npos);
    CHECK(caption.find("circle") != std::string::npos);

    auto qa = qa_for(scene);
    bool found = false;
    for (const auto& p : qa)
        if (p.question == "what color is the circle ?") {
            found = true;
            CHECK(p.answer == "red");
        }
    CHECK(found);
}

TEST_CASE("every shape-color combination appears across 1000 seeds") {
    std::set<std::pair<int, int>> seen;
    for (uint64_t seed = 0; seed < 1000; ++seed) {
        auto s = generate_scene(seed);
        for (const auto& c : s.scene.cells)
            if (c.occupied()) seen.insert({c.shape, c.color});
    }
    CHECK(seen.size() == shape_catalog().size() * color_catalog().size());
}

TEST_CASE("render_patches determinism and locality") {
    auto sample = generate_scene(7);
    SECTION("sigma zero ignores the noise seed") {
        auto a = render_patches(sample.scene, 1, 16, 0.0);
        auto b = render_patches(sample.scene, 2, 16, 0.0);
        CHECK(a.data == b.data);
    }
    SECTION("same scene and seed reproduce bit-identical patches") {
        auto a = render_patches(sample.scene, 5, 16, 0.1);
        auto b = render_patches(sample.scene, 5, 16, 0.1);
        CHECK(a.data == b.data);
    }
    SECTION("a one-cell change only touches that patch at sigma zero") {
        auto scene2 = sample.scene;
        int target = -1;
        for (size_t i = 0; i < scene2.cells.size(); ++i)
            if (!scene2.cells[i].occupied()) {
                target = static_cast<int>(i);
                break;
            }
        REQUIRE(target >= 0);
        scene2.cells[static_cast<size_t>(target)] = SceneCell{1, 1};
        auto a = render_patches(sample.scene, 0, 16, 0.0);
        auto b = render_patches(scene2, 0, 16, 0.0);
        for (int p = 0; p < a.count; ++p) {
            bool same = true;
            for (int j = 0; j < a.dim; ++j)
                if (a.data[static_cast<size_t>(p) * a.dim + j] != b.data[static_cast<size_t>(p) * b.dim + j])
                    same = false;
            CHECK(same == (p != target));
        }
    }
}

TEST_CASE("same-scene renders are closer than cross-scene renders on average") {
    auto cosine = [](const PatchSequence& a, const PatchSequence& b) {
        double dot = 0, na = 0, nb = 0;
        for (size_t i = 0; i < a.data.size(); ++i) {
            dot += a.data[i] * b.data[i];
            na += a.data[i] * a.data[i];
            nb += b.data[i] * b.data[i];
        }
        return dot / std::sqrt(na * nb);
    };
    double same_total = 0, cross_total = 0;
    const int n = 100;
    for (int i = 0; i < n; ++i) {
        auto s1 = generate_scene(static_cast<uint64_t>(2000 + i));
        auto s2 = generate_scene(static_cast<uint64_t>(3000 + i));
        auto r1a = render_patches(s1.scene, 10, 16, 0.1);
        auto r1b = render_patches(s1.scene, 11, 16, 0.1);
        auto r2 = render_patches(s2.scene, 10, 16, 0.1);
        same_total += cosine(r1a, r1b);
        cross_total += cosine(r1a, r2);
    }
    CHECK(same_total / n > cross_total / n);
}

namespace {

std::string make_sentence(int words) {
    static const std::vector<std::string> pool{"a",    "red",   "circle", "above", "blue",
                                               "square", "green", "star",  "beside", "yellow"};
    std::vector<std::string> out;
    for (int i = 0; i < words; ++i) out.push_back(pool[static_cast<size_t>(i) % pool.size()]);
    return join_words(out);
}

int count_masks(const TokenSequence& seq) {
    int c = 0;
    for (int id : seq.ids)
        if (id == Vocab::mask_id) ++c;
    return c;
}

int count_word_tokens(const TokenSequence& seq) {
    int c = 0;
    for (int id : seq.ids)
        if (!Vocab::is_special(id)) ++c;
    return c;
}

} // namespace

TEST_CASE("corruption meets its budget exactly and preserves the target") {
    auto vocab = Vocab::build({make_sentence(60)});
    const std::string text = make_sentence(20);
    auto tokens = vocab.tokenize(text, TextKind::student_text);
    Rng rng(123);
    for (int trial = 0; trial < 50; ++trial) {
        auto out = corrupt_spans(tokens, rng, 0.15, 3.0);
        // ceil(0.15 * 20) = 3 words masked, every time
        CHECK(count_word_tokens(tokens) - count_word_tokens(out.corrupted) == 3);
        int masked_words = 0;
        for (const auto& [start, len] : out.span_log) masked_words += len;
        CHECK(masked_words == 3);
        CHECK(vocab.detokenize(out.target) == text);
        // one MASK per logged span
        CHECK(count_masks(out.corrupted) == static_cast<int>(out.span_log.size()));
    }
}

TEST_CASE("corruption spans are pairwise disjoint and never touch specials") {
    auto vocab = Vocab::build({make_sentence(60)});
    auto tokens = vocab.tokenize(make_sentence(30), TextKind::student_text);
    Rng rng(77);
    for (int trial = 0; trial < 200; ++trial) {
        auto out = corrupt_spans(tokens, rng);
        std::vector<std::pair<int, int>> positive;
        for (auto& s : out.span_log)
            if (s.second > 0) positive.push_back(s);
        std::sort(positive.begin(), positive.end());
        for (size_t i = 1; i < positive.size(); ++i)
            CHECK(positive[i - 1].first + positive[i - 1].second <= positive[i].first);
        CHECK(out.corrupted.ids.front() == Vocab::bos_id);
        CHECK(out.corrupted.ids.back() == Vocab::eos_id);
    }
}

TEST_CASE("corruption statistics match the configured distribution") {
    auto vocab = Vocab::build({make_sentence(60)});
    auto tokens = vocab.tokenize(make_sentence(50), TextKind::student_text);
    Rng rng(2024);
    const int trials = 10000;
    int64_t total_masked_words = 0;
    int64_t positive_spans = 0;
    int64_t sampled_sum = 0, sampled_count = 0;
    for (int t = 0; t < trials; ++t) {
        auto out = corrupt_spans(tokens, rng, 0.15, 3.0);
        for (const auto& [start, len] : out.span_log)
            if (len > 0) {
                total_masked_words += len;
                ++positive_spans;
            }
        for (int l : out.sampled_positive_lengths) {
            sampled_sum += l;
            ++sampled_count;
        }
        CHECK(vocab.detokenize(out.target) == vocab.detokenize(tokens));
    }
    const double masked_fraction = static_cast<double>(total_masked_words) / (50.0 * trials);
    CHECK(masked_fraction >= 0.14);
    CHECK(masked_fraction <= 0.16 + 1e-12);
    // the positive-length sampler follows Poisson(3) conditioned on >= 1
    const double conditional_mean = 3.0 / (1.0 - std::exp(-3.0));
    const double sample_mean = static_cast<double>(sampled_sum) / static_cast<double>(sampled_count);
    CHECK(std::abs(sample_mean - conditional_mean) < 0.2);
    CHECK(positive_spans > 0);
}

TEST_CASE("short sentences are returned uncorrupted") {
    auto vocab = Vocab::build({"red circle"});
    auto tokens = vocab.tokenize("red", TextKind::student_text);
    Rng rng(5);
    auto out = corrupt_spans(tokens, rng);
    CHECK(out.corrupted.ids == tokens.ids);
    CHECK(out.span_log.empty());
}

TEST_CASE("corruption rejects bad inputs") {
    auto vocab = Vocab::build({"red circle"});
    auto teacher = vocab.tokenize("red circle", TextKind::teacher_text);
    Rng rng(5);
    CHECK_THROWS_AS(corrupt_spans(teacher, rng), ContractError);
    auto student = vocab.tokenize("red circle", TextKind::student_text);
    CHECK_THROWS_AS(corrupt_spans(student, rng, 0.0), ContractError);
    CHECK_THROWS_AS(corrupt_spans(student, rng, 1.0), ContractError);
}

TEST_CASE("corruption is reproducible under a fixed rng seed") {
    auto vocab = Vocab::build({make_sentence(60)});
    auto tokens = vocab.tokenize(make_sentence(24), TextKind::student_text);
    Rng r1(99), r2(99);
    for (int i = 0; i < 20; ++i) {
        auto a = corrupt_spans(tokens, r1);
        auto b = corrupt_spans(tokens, r2);
        CHECK(a.corrupted.ids == b.corrupted.ids);
        CHECK(a.span_log == b.span_log);
    }
}

TEST_CASE("prompt construction") {
    auto records = generate_dataset(0, 200);
    auto vocab = Vocab::build(pretraining_texts(records));

    SECTION("caption prompt carries exactly m masks") {
        for (int m : {5, 6, 7, 8}) {
            auto p = build_prompt(vocab, PromptTask::caption, nullptr, m);
            CHECK(count_masks(p) == m);
            CHECK(p.ids[0] == Vocab::bos_id);
            CHECK(p.ids[1] == vocab.id_of("a"));
            CHECK(p.ids[2] == vocab.id_of("picture"));
            CHECK(p.ids[3] == vocab.id_of("of"));
            CHECK(p.ids[p.ids.size() - 2] == vocab.id_of("."));
            CHECK(p.ids.back() == Vocab::eos_id);
        }
    }
    SECTION("vqa prompt is question, answer marker, n masks, period") {
        const std::string q = "what color is the circle ?";
        auto p = build_prompt(vocab, PromptTask::vqa, &q, 2);
        CHECK(count_masks(p) == 2);
        std::vector<int> expected{Vocab::bos_id};
        for (const auto& w : split_words(q)) expected.push_back(vocab.id_of(w));
        expected.push_back(vocab.id_of("answer"));
        expected.push_back(vocab.id_of(":"));
        expected.push_back(Vocab::mask_id);
        expected.push_back(Vocab::mask_id);
        expected.push_back(vocab.id_of("."));
        expected.push_back(Vocab::eos_id);
        CHECK(p.ids == expected);
    }
    SECTION("contract violations") {
        CHECK_THROWS_AS(build_prompt(vocab, PromptTask::caption, nullptr, 0), ContractError);
        CHECK_THROWS_AS(build_prompt(vocab, PromptTask::vqa, nullptr, 2), ContractError);
    }
}

TEST_CASE("dataset JSONL round trip") {
    auto records = generate_dataset(500, 25);
    const std::string path = "test_dataset.jsonl";
    export_jsonl(path, records);
    auto back = import_jsonl(path);
    REQUIRE(back.size() == records.size());
    for (size_t i = 0; i < records.size(); ++i) {
        CHECK(back[i].seed == records[i].seed);
        CHECK(back[i].sample.caption == records[i].sample.caption);
    }
    std::remove(path.c_str());
}

TEST_CASE("unique-caption datasets have no duplicates") {
    auto records = generate_unique_caption_dataset(9000, 100);
    std::set<std::string> captions;
    for (const auto& r : records) captions.insert(r.sample.caption);
    CHECK(captions.size() == records.size());
}
