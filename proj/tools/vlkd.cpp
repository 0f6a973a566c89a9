// Command-line front end: dataset generation, the three training stages,
// evaluation, the ablation study, and a fast selftest gate.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "vlkd/ablation.hpp"
#include "vlkd/config.hpp"
#include "vlkd/selfcheck.hpp"

namespace fs = std::filesystem;
using Model = float;

namespace {

struct CommonArgs {
    std::string workdir = ".";
    std::optional<std::string> config_path;
    std::map<std::string, std::string> overrides;

    std::string join(const std::string& path) const {
        if (path.empty() || fs::path(path).is_absolute()) return path;
        return (fs::path(workdir) / path).string();
    }

    vlkd::RunConfig load() const {
        std::optional<std::string> resolved;
        if (config_path) resolved = join(*config_path);
        return vlkd::RunConfig::parse(resolved, overrides);
    }
};

void attach_common(CLI::App* cmd, CommonArgs& args, std::vector<std::string>& set_pairs) {
    cmd->add_option("--workdir", args.workdir, "base directory for relative paths");
    cmd->add_option("--config", args.config_path, "JSON config file");
    cmd->add_option("--set", set_pairs, "override a config key, e.g. --set gamma=500")->take_all();
    // dedicated flags for the usual suspects; they funnel into the same override map
    auto direct = [cmd, &args](const std::string& flag, const std::string& key) {
        cmd->add_option_function<std::string>(
            flag, [&args, key](const std::string& v) { args.overrides[key] = v; });
    };
    direct("--seed", "seed");
    direct("--pairs", "pairs");
    direct("--eval-pairs", "eval_pairs");
    direct("--epochs", "epochs");
    direct("--batch-size", "batch_size");
    direct("--gamma", "gamma");
    direct("--base-lr", "base_lr");
    direct("--visual-context-mode", "visual_context_mode");
    direct("--disable-ttdm", "disable_ttdm");
    direct("--disable-itcl", "disable_itcl");
    direct("--unfreeze-teacher", "unfreeze_teacher");
}

void fold_set_pairs(CommonArgs& args, const std::vector<std::string>& set_pairs) {
    for (const auto& kv : set_pairs) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw vlkd::ParseError("config: --set expects key=value, got '" + kv + "'");
        args.overrides[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
}

void echo_config(const vlkd::RunConfig& cfg) { std::cout << "config: " << cfg.effective().dump() << "\n"; }

nlohmann::ordered_json teacher_arch_json(const vlkd::TeacherConfig& t) {
    nlohmann::ordered_json j;
    j["d1"] = t.d1;
    j["layers"] = t.layers;
    j["heads"] = t.heads;
    j["ffn"] = t.ffn;
    j["max_text_len"] = t.max_text_len;
    j["d_img"] = t.d_img;
    j["patches"] = t.patches;
    j["mode"] = vlkd::visual_mode_name(t.mode);
    return j;
}

vlkd::TeacherConfig teacher_arch_from_json(const nlohmann::ordered_json& j) {
    vlkd::TeacherConfig t;
    t.d1 = j.at("d1").get<int>();
    t.layers = j.at("layers").get<int>();
    t.heads = j.at("heads").get<int>();
    t.ffn = j.at("ffn").get<int>();
    t.max_text_len = j.at("max_text_len").get<int>();
    t.d_img = j.at("d_img").get<int>();
    t.patches = j.at("patches").get<int>();
    t.mode = j.at("mode").get<std::string>() == "full_sequence" ? vlkd::VisualMode::full_sequence
                                                                : vlkd::VisualMode::cls_only;
    return t;
}

nlohmann::ordered_json student_arch_json(const vlkd::StudentConfig& s) {
    nlohmann::ordered_json j;
    j["d2"] = s.d2;
    j["layers"] = s.layers;
    j["heads"] = s.heads;
    j["ffn"] = s.ffn;
    j["max_len"] = s.max_len;
    return j;
}

vlkd::StudentConfig student_arch_from_json(const nlohmann::ordered_json& j) {
    vlkd::StudentConfig s;
    s.d2 = j.at("d2").get<int>();
    s.layers = j.at("layers").get<int>();
    s.heads = j.at("heads").get<int>();
    s.ffn = j.at("ffn").get<int>();
    s.max_len = j.at("max_len").get<int>();
    return s;
}

nlohmann::ordered_json probe_json(const vlkd::PerplexityProbe& p) {
    nlohmann::ordered_json j;
    j["sentences"] = p.sentences;
    j["rate"] = p.rate;
    j["seed"] = p.seed;
    return j;
}

vlkd::PerplexityProbe probe_from_json(const nlohmann::ordered_json& j) {
    vlkd::PerplexityProbe p;
    for (const auto& s : j.at("sentences")) p.sentences.push_back(s.get<std::string>());
    p.rate = j.at("rate").get<double>();
    p.seed = j.at("seed").get<uint64_t>();
    return p;
}

std::vector<vlkd::PairRecord> load_records(const CommonArgs& args, const std::string& data_path) {
    const auto path = args.join(data_path);
    if (!fs::exists(path)) throw vlkd::FormatError("missing-dataset '" + path + "'");
    return vlkd::import_jsonl(path);
}

vlkd::LoadedCheckpoint load_ckpt(const CommonArgs& args, const std::string& dir, const std::string& slug) {
    const auto path = args.join(dir);
    if (!fs::exists(path + "/manifest.json")) throw vlkd::FormatError(slug + " '" + path + "'");
    return vlkd::load_checkpoint(path);
}

void write_json(const std::string& path, const nlohmann::ordered_json& j) {
    std::ofstream out(path);
    if (!out) throw vlkd::FormatError("cannot write '" + path + "'");
    out << j.dump(2) << "\n";
}

uint64_t eval_seed_base(const vlkd::RunConfig& cfg) { return cfg.seed() * 1000003ull + 900000ull; }

// ------------------------------------------------------------- subcommands

int cmd_gen_data(const CommonArgs& args, const std::string& out_path) {
    auto cfg = args.load();
    echo_config(cfg);
    auto records = vlkd::generate_dataset(cfg.seed() * 1000003ull, cfg.pairs(), cfg.grid());
    vlkd::export_jsonl(args.join(out_path), records);
    std::cout << "gen-data: wrote " << records.size() << " records to " << args.join(out_path) << "\n";
    return 0;
}

int cmd_pretrain_teacher(const CommonArgs& args, const std::string& data_path, const std::string& out_dir) {
    auto cfg = args.load();
    echo_config(cfg);
    auto records = load_records(args, data_path);
    auto vocab = vlkd::Vocab::build(vlkd::pretraining_texts(records));
    auto heldout = vlkd::generate_unique_caption_dataset(eval_seed_base(cfg), cfg.eval_pairs(), cfg.grid());

    vlkd::Teacher<Model> teacher(cfg.teacher_config(), vocab.size(), cfg.seed());
    auto report = vlkd::pretrain_teacher(teacher, vocab, records, heldout, cfg.teacher_pretrain_config());

    nlohmann::ordered_json meta;
    meta["kind"] = "teacher";
    meta["seed"] = cfg.seed();
    meta["vocab_size"] = vocab.size();
    meta["teacher"] = teacher_arch_json(teacher.cfg);
    meta["pretrain"] = {{"initial_loss", report.initial_loss},
                        {"final_loss", report.final_loss},
                        {"heldout_r1_i2t", report.heldout_r1_i2t},
                        {"heldout_r1_t2i", report.heldout_r1_t2i},
                        {"steps", report.steps}};
    meta["config"] = cfg.effective();
    vlkd::save_checkpoint(args.join(out_dir), teacher.parameters(true), meta);
    std::cout << "pretrain-teacher: final loss " << report.final_loss << ", held-out R@1 i2t "
              << report.heldout_r1_i2t << ", checkpoint " << args.join(out_dir) << "\n";
    return 0;
}

int cmd_pretrain_student(const CommonArgs& args, const std::string& data_path, const std::string& out_dir) {
    auto cfg = args.load();
    echo_config(cfg);
    auto records = load_records(args, data_path);
    auto vocab = vlkd::Vocab::build(vlkd::pretraining_texts(records));

    vlkd::Student<Model> student(cfg.student_config(), vocab.size(), cfg.seed() + 1);
    auto report = vlkd::pretrain_student(student, vocab, vlkd::pretraining_texts(records),
                                         cfg.student_pretrain_config());

    nlohmann::ordered_json meta;
    meta["kind"] = "student";
    meta["seed"] = cfg.seed();
    meta["vocab_size"] = vocab.size();
    meta["student"] = student_arch_json(student.cfg);
    meta["p0"] = report.p0;
    meta["probe"] = probe_json(report.probe);
    meta["pretrain"] = {{"steps", report.steps}, {"heldout_perplexities", report.heldout_perplexities}};
    meta["config"] = cfg.effective();
    vlkd::save_checkpoint(args.join(out_dir), student.parameters(), meta);
    std::cout << "pretrain-student: P0 " << report.p0 << ", checkpoint " << args.join(out_dir) << "\n";
    return 0;
}

int cmd_distill(const CommonArgs& args, const std::string& data_path, const std::string& teacher_dir,
                const std::string& student_dir, const std::string& out_dir, const std::string& metrics_path,
                const std::string& report_path) {
    auto cfg = args.load();
    echo_config(cfg);
    auto records = load_records(args, data_path);
    auto vocab = vlkd::Vocab::build(vlkd::pretraining_texts(records));

    auto teacher_ckpt = load_ckpt(args, teacher_dir, "missing-teacher-checkpoint");
    auto student_ckpt = load_ckpt(args, student_dir, "missing-student-checkpoint");
    if (teacher_ckpt.meta.at("vocab_size").get<int>() != vocab.size() ||
        student_ckpt.meta.at("vocab_size").get<int>() != vocab.size())
        throw vlkd::FormatError("checkpoint vocab size does not match the dataset's vocabulary");

    vlkd::Teacher<Model> teacher(teacher_arch_from_json(teacher_ckpt.meta.at("teacher")), vocab.size(), 0);
    vlkd::apply_checkpoint(teacher_ckpt, teacher.parameters());
    vlkd::Student<Model> student(student_arch_from_json(student_ckpt.meta.at("student")), vocab.size(), 0);
    vlkd::apply_checkpoint(student_ckpt, student.parameters());
    auto probe = probe_from_json(student_ckpt.meta.at("probe"));
    const double p0 = student_ckpt.meta.at("p0").get<double>();

    vlkd::Rng proj_rng(cfg.seed() ^ 0xab1a7e5ull);
    auto proj = vlkd::init_projections<Model>(teacher.cfg.d1, student.cfg.d2, proj_rng);

    auto eval_set = vlkd::generate_unique_caption_dataset(eval_seed_base(cfg), cfg.eval_pairs(), cfg.grid());
    std::ofstream metrics;
    std::ostream* metrics_ptr = nullptr;
    if (!metrics_path.empty()) {
        metrics.open(args.join(metrics_path));
        if (!metrics) throw vlkd::FormatError("cannot write '" + args.join(metrics_path) + "'");
        metrics_ptr = &metrics;
    }

    auto report = vlkd::run_distillation(teacher, student, proj, vocab, records, eval_set, probe,
                                         cfg.distill_config(), metrics_ptr);

    vlkd::ParamList<Model> all;
    for (auto& p : teacher.parameters(true)) all.push_back(p);
    for (auto& p : student.parameters()) all.push_back(p);
    for (auto& p : proj.parameters()) all.push_back(p);
    nlohmann::ordered_json meta;
    meta["kind"] = "distilled";
    meta["seed"] = cfg.seed();
    meta["vocab_size"] = vocab.size();
    meta["teacher"] = teacher_ckpt.meta.at("teacher");
    meta["student"] = student_ckpt.meta.at("student");
    meta["p0"] = p0;
    meta["probe"] = probe_json(probe);
    meta["config"] = cfg.effective();
    vlkd::save_checkpoint(args.join(out_dir), all, meta);

    nlohmann::ordered_json rj;
    rj["seed"] = cfg.seed();
    rj["steps"] = report.steps;
    rj["first_window_avg"] = report.first_window_avg;
    rj["last_window_avg"] = report.last_window_avg;
    rj["pre"] = {{"r1_i2t", report.pre_eval.r1_i2t},
                 {"r1_t2i", report.pre_eval.r1_t2i},
                 {"vqa_accuracy", report.pre_eval.vqa_accuracy},
                 {"perplexity", report.pre_eval.perplexity}};
    rj["post"] = {{"r1_i2t", report.post_eval.r1_i2t},
                  {"r1_t2i", report.post_eval.r1_t2i},
                  {"vqa_accuracy", report.post_eval.vqa_accuracy},
                  {"perplexity", report.post_eval.perplexity}};
    rj["p0"] = p0;
    rj["teacher_hash_unchanged"] = report.teacher_hash_before == report.teacher_hash_after;
    rj["config"] = cfg.effective();
    if (!report_path.empty()) write_json(args.join(report_path), rj);
    std::cout << "distill: steps " << report.steps << ", total " << report.first_window_avg << " -> "
              << report.last_window_avg << ", R@1 i2t " << report.pre_eval.r1_i2t << " -> "
              << report.post_eval.r1_i2t << ", checkpoint " << args.join(out_dir) << "\n";
    return 0;
}

struct RebuiltStack {
    vlkd::Vocab vocab;
    vlkd::Teacher<Model> teacher;
    vlkd::Student<Model> student;
    vlkd::Projections<Model> proj;
    vlkd::PerplexityProbe probe;
    double p0 = 0.0;
};

RebuiltStack rebuild_from_distilled(const CommonArgs& args, const vlkd::RunConfig& cfg,
                                    const vlkd::LoadedCheckpoint& ckpt) {
    auto records = vlkd::generate_dataset(cfg.seed() * 1000003ull, cfg.pairs(), cfg.grid());
    auto vocab = vlkd::Vocab::build(vlkd::pretraining_texts(records));
    if (ckpt.meta.at("vocab_size").get<int>() != vocab.size())
        throw vlkd::FormatError("checkpoint vocab size does not match the configured dataset");
    RebuiltStack stack{
        vocab,
        vlkd::Teacher<Model>(teacher_arch_from_json(ckpt.meta.at("teacher")), vocab.size(), 0),
        vlkd::Student<Model>(student_arch_from_json(ckpt.meta.at("student")), vocab.size(), 0),
        vlkd::Projections<Model>{},
        {},
        0.0};
    vlkd::apply_checkpoint(ckpt, stack.teacher.parameters());
    vlkd::apply_checkpoint(ckpt, stack.student.parameters());
    vlkd::Rng proj_rng(1);
    stack.proj = vlkd::init_projections<Model>(stack.teacher.cfg.d1, stack.student.cfg.d2, proj_rng);
    vlkd::apply_checkpoint(ckpt, stack.proj.parameters());
    if (ckpt.meta.contains("probe")) stack.probe = probe_from_json(ckpt.meta.at("probe"));
    if (ckpt.meta.contains("p0")) stack.p0 = ckpt.meta.at("p0").get<double>();
    (void)args;
    return stack;
}

int cmd_finetune(const CommonArgs& args, const std::string& task_name, const std::string& data_path,
                 const std::string& ckpt_dir, const std::string& out_dir) {
    auto cfg = args.load();
    echo_config(cfg);
    if (task_name != "vqa" && task_name != "caption")
        throw vlkd::ContractError("finetune: task must be vqa or caption, got '" + task_name + "'");
    auto records = load_records(args, data_path);
    auto ckpt = load_ckpt(args, ckpt_dir, "missing-checkpoint");
    auto stack = rebuild_from_distilled(args, cfg, ckpt);

    auto eval_set =
        vlkd::generate_unique_caption_dataset(eval_seed_base(cfg) + 7777ull, cfg.eval_pairs(), cfg.grid());
    vlkd::ZeroShotContext<Model> zs{stack.teacher, stack.student, stack.proj, stack.vocab, cfg.noise_sigma()};
    const auto ft_cfg = cfg.finetune_config();
    const double before = task_name == "vqa"
                              ? vlkd::vqa_accuracy(zs, eval_set, ft_cfg.vqa_mask_count)
                              : vlkd::zero_shot_eval(zs, eval_set, ft_cfg.caption_mask_count,
                                                     ft_cfg.vqa_mask_count, cfg.generation_config())
                                    .caption_f1;

    auto report = vlkd::finetune_generative(stack.teacher, stack.student, stack.proj, stack.vocab, records,
                                            task_name == "vqa" ? vlkd::FinetuneTask::vqa
                                                               : vlkd::FinetuneTask::caption,
                                            ft_cfg);

    const double after = task_name == "vqa"
                             ? vlkd::vqa_accuracy(zs, eval_set, ft_cfg.vqa_mask_count)
                             : vlkd::zero_shot_eval(zs, eval_set, ft_cfg.caption_mask_count,
                                                    ft_cfg.vqa_mask_count, cfg.generation_config())
                                   .caption_f1;

    vlkd::ParamList<Model> all;
    for (auto& p : stack.teacher.parameters(true)) all.push_back(p);
    for (auto& p : stack.student.parameters()) all.push_back(p);
    for (auto& p : stack.proj.parameters()) all.push_back(p);
    nlohmann::ordered_json meta = ckpt.meta;
    meta["kind"] = "finetuned-" + task_name;
    meta["config"] = cfg.effective();
    meta["finetune"] = {{"task", task_name},
                        {"steps", report.steps},
                        {"first_loss", report.first_loss},
                        {"final_loss", report.final_loss},
                        {"metric_before", before},
                        {"metric_after", after}};
    vlkd::save_checkpoint(args.join(out_dir), all, meta);
    std::cout << "finetune(" << task_name << "): metric " << before << " -> " << after << ", checkpoint "
              << args.join(out_dir) << "\n";
    return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& ckpt_dir, const std::string& report_path) {
    auto cfg = args.load();
    echo_config(cfg);
    auto ckpt = load_ckpt(args, ckpt_dir, "missing-checkpoint");
    auto stack = rebuild_from_distilled(args, cfg, ckpt);

    auto eval_set = vlkd::generate_unique_caption_dataset(eval_seed_base(cfg), cfg.eval_pairs(), cfg.grid());
    vlkd::ZeroShotContext<Model> zs{stack.teacher, stack.student, stack.proj, stack.vocab, cfg.noise_sigma()};

    auto r1 = vlkd::retrieval_eval(zs, eval_set, 1);
    auto r5 = vlkd::retrieval_eval(zs, eval_set, 5);
    const auto dist_cfg = cfg.distill_config();
    auto ev = vlkd::zero_shot_eval(zs, eval_set, dist_cfg.caption_mask_count, dist_cfg.vqa_mask_count,
                                   cfg.generation_config());
    double ppl = 0.0;
    if (!stack.probe.sentences.empty())
        ppl = vlkd::heldout_infill_perplexity(stack.student, stack.vocab, stack.probe.sentences,
                                              stack.probe.rate, stack.probe.seed);

    nlohmann::ordered_json rj;
    rj["retrieval"] = {{"r1_i2t", r1.r_at_k_i2t},
                       {"r1_t2i", r1.r_at_k_t2i},
                       {"r5_i2t", r5.r_at_k_i2t},
                       {"r5_t2i", r5.r_at_k_t2i},
                       {"candidates", r1.count}};
    rj["zero_shot"] = {{"vqa_accuracy", ev.vqa_accuracy},
                       {"vqa_majority_baseline", ev.vqa_majority_baseline},
                       {"caption_f1", ev.caption_f1},
                       {"caption_random_baseline", ev.caption_random_baseline},
                       {"caption_fallback_rate", ev.caption_fallback_rate}};
    rj["text_only_perplexity"] = ppl;
    rj["p0"] = stack.p0;
    rj["config"] = cfg.effective();
    if (!report_path.empty()) write_json(args.join(report_path), rj);

    std::cout << "eval: R@1 i2t " << r1.r_at_k_i2t << " t2i " << r1.r_at_k_t2i << "\n";
    std::cout << "eval: zero-shot VQA " << ev.vqa_accuracy << " (majority " << ev.vqa_majority_baseline
              << ")\n";
    std::cout << "eval: caption F1 " << ev.caption_f1 << " (random " << ev.caption_random_baseline << ")\n";
    std::cout << "eval: text-only perplexity " << ppl << " (P0 " << stack.p0 << ")\n";
    return 0;
}

int cmd_ablate(const CommonArgs& args, const std::string& out_path) {
    auto cfg = args.load();
    echo_config(cfg);
    auto acfg = vlkd::desk_ablation_config();
    acfg.teacher_cfg = cfg.teacher_config();
    acfg.student_cfg = cfg.student_config();
    acfg.grid = cfg.grid();
    auto table = vlkd::ablation_run<Model>(acfg, vlkd::default_ablation_variants(), {1, 2, 3}, &std::cout);
    std::cout << table.to_text();
    nlohmann::ordered_json j = table.to_json();
    j["config"] = cfg.effective();
    if (!out_path.empty()) write_json(args.join(out_path), j);
    return 0;
}

int cmd_selftest() {
    auto results = vlkd::run_selfchecks();
    bool all = true;
    for (const auto& r : results) {
        std::cout << (r.passed ? "[PASS] " : "[FAIL] ") << r.name;
        if (!r.detail.empty() && r.detail != "ok") std::cout << " (" << r.detail << ")";
        std::cout << "\n";
        all = all && r.passed;
    }
    std::cout << (all ? "selftest: all checks passed\n" : "selftest: failures detected\n");
    return all ? 0 : 1;
}

std::string slug_for(const std::exception& e) {
    if (dynamic_cast<const vlkd::ParseError*>(&e)) return "config-parse-error";
    if (dynamic_cast<const vlkd::FormatError*>(&e)) {
        const std::string what = e.what();
        if (what.rfind("missing-", 0) == 0) return what.substr(0, what.find(' '));
        return "format-error";
    }
    if (dynamic_cast<const vlkd::InvariantViolation*>(&e)) return "invariant-violation";
    if (dynamic_cast<const vlkd::TrainingError*>(&e)) return "training-error";
    if (dynamic_cast<const vlkd::ContractError*>(&e)) return "contract-error";
    if (dynamic_cast<const vlkd::VocabError*>(&e)) return "vocab-error";
    if (dynamic_cast<const vlkd::ShapeError*>(&e)) return "shape-error";
    if (dynamic_cast<const vlkd::LengthError*>(&e)) return "length-error";
    if (dynamic_cast<const vlkd::NumericError*>(&e)) return "numeric-error";
    if (dynamic_cast<const vlkd::IndexError*>(&e)) return "index-error";
    if (dynamic_cast<const vlkd::DegenerateInputError*>(&e)) return "degenerate-input";
    return "internal-error";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale vision-language knowledge distillation"};
    app.require_subcommand(1);

    CommonArgs args;
    std::vector<std::string> set_pairs;

    std::string out_path, data_path, teacher_dir, student_dir, ckpt_dir, metrics_path, report_path, task;

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic image-text dataset");
    attach_common(gen, args, set_pairs);
    gen->add_option("--out", out_path, "output JSONL path")->required();

    auto* pt = app.add_subcommand("pretrain-teacher", "contrastively pretrain the dual-stream teacher");
    attach_common(pt, args, set_pairs);
    pt->add_option("--data", data_path, "dataset JSONL")->required();
    pt->add_option("--out", out_path, "checkpoint directory")->required();

    auto* ps = app.add_subcommand("pretrain-student", "pretrain the encoder-decoder student on text only");
    attach_common(ps, args, set_pairs);
    ps->add_option("--data", data_path, "dataset JSONL")->required();
    ps->add_option("--out", out_path, "checkpoint directory")->required();

    auto* di = app.add_subcommand("distill", "run vision-language knowledge distillation");
    attach_common(di, args, set_pairs);
    di->add_option("--data", data_path, "dataset JSONL")->required();
    di->add_option("--teacher", teacher_dir, "teacher checkpoint directory")->required();
    di->add_option("--student", student_dir, "student checkpoint directory")->required();
    di->add_option("--out", out_path, "output checkpoint directory")->required();
    di->add_option("--metrics", metrics_path, "JSONL metrics log");
    di->add_option("--report", report_path, "JSON report path");

    auto* ft = app.add_subcommand("finetune", "generative finetuning on vqa or caption");
    attach_common(ft, args, set_pairs);
    ft->add_option("--task", task, "vqa or caption")->required();
    ft->add_option("--data", data_path, "dataset JSONL")->required();
    ft->add_option("--ckpt", ckpt_dir, "distilled checkpoint directory")->required();
    ft->add_option("--out", out_path, "output checkpoint directory")->required();

    auto* ev = app.add_subcommand("eval", "retrieval, zero-shot and perplexity evaluation");
    attach_common(ev, args, set_pairs);
    ev->add_option("--ckpt", ckpt_dir, "checkpoint directory")->required();
    ev->add_option("--report", report_path, "JSON report path");

    auto* ab = app.add_subcommand("ablate", "objective/data-size/frozen-teacher ablation study");
    attach_common(ab, args, set_pairs);
    ab->add_option("--out", out_path, "JSON table path");

    auto* st = app.add_subcommand("selftest", "run the fast invariant suite");
    attach_common(st, args, set_pairs);

    CLI11_PARSE(app, argc, argv);

    try {
        fold_set_pairs(args, set_pairs);
        if (gen->parsed()) return cmd_gen_data(args, out_path);
        if (pt->parsed()) return cmd_pretrain_teacher(args, data_path, out_path);
        if (ps->parsed()) return cmd_pretrain_student(args, data_path, out_path);
        if (di->parsed())
            return cmd_distill(args, data_path, teacher_dir, student_dir, out_path, metrics_path, report_path);
        if (ft->parsed()) return cmd_finetune(args, task, data_path, ckpt_dir, out_path);
        if (ev->parsed()) return cmd_eval(args, ckpt_dir, report_path);
        if (ab->parsed()) return cmd_ablate(args, out_path);
        if (st->parsed()) return cmd_selftest();
    } catch (const std::exception& e) {
        std::cout << "error: " << slug_for(e) << ": " << e.what() << "\n";
        return 1;
    }
    std::cout << "error: usage: no subcommand\n";
    return 2;
}
