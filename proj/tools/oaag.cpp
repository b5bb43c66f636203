// Pipeline driver: prepare data, train, generate answers, evaluate them,
// and run the release verification suite.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "oaag/corpus.hpp"
#include "oaag/generator.hpp"
#include "oaag/metrics.hpp"
#include "oaag/training.hpp"
#include "oaag/verify.hpp"

namespace {

using nlohmann::json;

// One config surface for every subcommand: the training recipe plus data
// preparation, decoding, and file-location options. Flags mirror the keys
// and win over the file.
struct RunConfig {
    oaag::TrainConfig train;
    int snippet_len = 50;
    double bm25_k1 = 1.2;
    double bm25_b = 0.75;
    std::string strategy = "greedy";
    int beam_width = 4;
    std::string qa;
    std::string reviews;
    std::string data_dir;
    std::string out_dir;
    std::string checkpoint;
    std::string resume;
    std::string report;
};

void assign_config_key(RunConfig& rc, const std::string& key, const json& v) {
    oaag::TrainConfig& t = rc.train;
    if (key == "learning_rate") t.learning_rate = v.get<double>();
    else if (key == "accumulator_init") t.accumulator_init = v.get<double>();
    else if (key == "dropout") t.dropout = v.get<double>();
    else if (key == "batch_size") t.batch_size = v.get<int>();
    else if (key == "epochs") t.epochs = v.get<int>();
    else if (key == "lambda") t.lambda = v.get<double>();
    else if (key == "grad_clip_norm") t.grad_clip_norm = v.get<double>();
    else if (key == "vocab_cap") t.vocab_cap = v.get<int>();
    else if (key == "emb_dim") t.emb_dim = v.get<int>();
    else if (key == "d_h") t.d_h = v.get<int>();
    else if (key == "d_a") t.d_a = v.get<int>();
    else if (key == "num_reviews") t.num_reviews = v.get<int>();
    else if (key == "max_answer_len") t.max_answer_len = v.get<int>();
    else if (key == "seed") t.seed = v.get<std::uint64_t>();
    else if (key == "mode") t.mode = oaag::fusion_mode_from_string(v.get<std::string>());
    else if (key == "precision") t.precision = v.get<std::string>();
    else if (key == "deterministic_log") t.deterministic_log = v.get<bool>();
    else if (key == "snippet_len") rc.snippet_len = v.get<int>();
    else if (key == "bm25_k1") rc.bm25_k1 = v.get<double>();
    else if (key == "bm25_b") rc.bm25_b = v.get<double>();
    else if (key == "strategy") rc.strategy = v.get<std::string>();
    else if (key == "beam_width") rc.beam_width = v.get<int>();
    else if (key == "qa") rc.qa = v.get<std::string>();
    else if (key == "reviews") rc.reviews = v.get<std::string>();
    else if (key == "data_dir") rc.data_dir = v.get<std::string>();
    else if (key == "out_dir") rc.out_dir = v.get<std::string>();
    else if (key == "checkpoint") rc.checkpoint = v.get<std::string>();
    else if (key == "resume") rc.resume = v.get<std::string>();
    else if (key == "report") rc.report = v.get<std::string>();
    else throw std::runtime_error("config: unknown key \"" + key + "\"");
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
    if (!j.is_object()) throw std::runtime_error(path + ": config root must be an object");
    RunConfig rc;
    for (const auto& [key, value] : j.items()) {
        try {
            assign_config_key(rc, key, value);
        } catch (const json::exception&) {
            throw std::runtime_error("config: bad value for key \"" + key + "\"");
        }
    }
    return rc;
}

// Flag values land here and overwrite whatever the config file said.
struct Overrides {
    std::optional<double> learning_rate, accumulator_init, dropout, lambda, grad_clip_norm,
        bm25_k1, bm25_b;
    std::optional<int> batch_size, epochs, vocab_cap, emb_dim, d_h, d_a, num_reviews,
        max_answer_len, snippet_len, beam_width;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> mode, precision, strategy;
    std::optional<bool> deterministic_log;
    std::optional<std::string> qa, reviews, data_dir, out_dir, checkpoint, resume, report;

    void apply(RunConfig& rc) const {
        oaag::TrainConfig& t = rc.train;
        if (learning_rate) t.learning_rate = *learning_rate;
        if (accumulator_init) t.accumulator_init = *accumulator_init;
        if (dropout) t.dropout = *dropout;
        if (lambda) t.lambda = *lambda;
        if (grad_clip_norm) t.grad_clip_norm = *grad_clip_norm;
        if (batch_size) t.batch_size = *batch_size;
        if (epochs) t.epochs = *epochs;
        if (vocab_cap) t.vocab_cap = *vocab_cap;
        if (emb_dim) t.emb_dim = *emb_dim;
        if (d_h) t.d_h = *d_h;
        if (d_a) t.d_a = *d_a;
        if (num_reviews) t.num_reviews = *num_reviews;
        if (max_answer_len) t.max_answer_len = *max_answer_len;
        if (seed) t.seed = *seed;
        if (mode) t.mode = oaag::fusion_mode_from_string(*mode);
        if (precision) t.precision = *precision;
        if (deterministic_log) t.deterministic_log = *deterministic_log;
        if (snippet_len) rc.snippet_len = *snippet_len;
        if (bm25_k1) rc.bm25_k1 = *bm25_k1;
        if (bm25_b) rc.bm25_b = *bm25_b;
        if (strategy) rc.strategy = *strategy;
        if (beam_width) rc.beam_width = *beam_width;
        if (qa) rc.qa = *qa;
        if (reviews) rc.reviews = *reviews;
        if (data_dir) rc.data_dir = *data_dir;
        if (out_dir) rc.out_dir = *out_dir;
        if (checkpoint) rc.checkpoint = *checkpoint;
        if (resume) rc.resume = *resume;
        if (report) rc.report = *report;
    }
};

void add_override_flags(CLI::App& cmd, Overrides& o) {
    cmd.add_option("--learning-rate", o.learning_rate);
    cmd.add_option("--accumulator-init", o.accumulator_init);
    cmd.add_option("--dropout", o.dropout);
    cmd.add_option("--batch-size", o.batch_size);
    cmd.add_option("--epochs", o.epochs);
    cmd.add_option("--lambda", o.lambda);
    cmd.add_option("--grad-clip-norm", o.grad_clip_norm);
    cmd.add_option("--vocab-cap", o.vocab_cap);
    cmd.add_option("--emb-dim", o.emb_dim);
    cmd.add_option("--d-h", o.d_h);
    cmd.add_option("--d-a", o.d_a);
    cmd.add_option("--num-reviews", o.num_reviews);
    cmd.add_option("--max-answer-len", o.max_answer_len);
    cmd.add_option("--seed", o.seed);
    cmd.add_option("--mode", o.mode)->check(CLI::IsMember({"none", "static", "dynamic"}));
    cmd.add_option("--precision", o.precision)->check(CLI::IsMember({"f32", "f64"}));
    cmd.add_option("--deterministic-log", o.deterministic_log);
    cmd.add_option("--snippet-len", o.snippet_len);
    cmd.add_option("--bm25-k1", o.bm25_k1);
    cmd.add_option("--bm25-b", o.bm25_b);
    cmd.add_option("--strategy", o.strategy)->check(CLI::IsMember({"greedy", "beam"}));
    cmd.add_option("--beam-width", o.beam_width);
    cmd.add_option("--qa", o.qa);
    cmd.add_option("--reviews", o.reviews);
    cmd.add_option("--data-dir", o.data_dir);
    cmd.add_option("--out-dir", o.out_dir);
    cmd.add_option("--checkpoint", o.checkpoint);
    cmd.add_option("--resume", o.resume);
    cmd.add_option("--report", o.report);
}

RunConfig resolve_config(const std::string& config_path, const Overrides& o) {
    RunConfig rc = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    o.apply(rc);
    return rc;
}

void require_file(const std::string& path, const std::string& what) {
    if (path.empty()) throw std::runtime_error(what + " path not set");
    if (!std::filesystem::exists(path))
        throw std::runtime_error(what + " not found: " + path);
}

void require_set(const std::string& path, const std::string& what) {
    if (path.empty()) throw std::runtime_error(what + " path not set");
}

std::vector<std::string> answer_tokens(const oaag::QASample& s, const oaag::Vocabulary& vocab) {
    std::vector<std::string> out;
    for (int id : s.answer_ids) {
        if (id == oaag::kEosId) break;
        out.push_back(oaag::decode_id(id, vocab, s.oov_tokens));
    }
    return out;
}

// ---------------------------------------------------------------- prepare

int cmd_prepare(const RunConfig& rc) {
    require_file(rc.qa, "qa file");
    require_file(rc.reviews, "reviews file");
    require_set(rc.out_dir, "out_dir");

    const std::vector<oaag::RawRecord> qa = oaag::load_qa_records(rc.qa);
    if (qa.empty()) throw std::runtime_error("empty corpus: " + rc.qa);
    const std::vector<oaag::ReviewRecord> reviews = oaag::load_review_records(rc.reviews);

    oaag::PrepareOptions opt;
    opt.num_reviews = rc.train.num_reviews;
    opt.vocab_cap = rc.train.vocab_cap;
    opt.snippet_len = rc.snippet_len;
    opt.max_answer_len = rc.train.max_answer_len;
    opt.bm25_k1 = rc.bm25_k1;
    opt.bm25_b = rc.bm25_b;
    const oaag::PreparedCorpus prepared = oaag::prepare_corpus(qa, reviews, opt);

    std::filesystem::create_directories(rc.out_dir);
    oaag::save_samples(rc.out_dir + "/samples.jsonl", prepared.samples);
    prepared.vocab.save(rc.out_dir + "/vocab.txt");

    double q_tokens = 0.0, a_tokens = 0.0;
    std::set<std::string> products;
    for (const oaag::RawRecord& r : qa) {
        q_tokens += static_cast<double>(oaag::tokenize(r.question_text).size());
        a_tokens += static_cast<double>(oaag::tokenize(r.answer_text).size());
        products.insert(r.product_id);
    }
    long snippets = 0;
    for (const oaag::QASample& s : prepared.samples)
        for (const oaag::EncodedReview& r : s.reviews)
            if (!r.is_pad) ++snippets;
    json stats = {
        {"pairs", qa.size()},
        {"products", products.size()},
        {"avg_question_tokens", q_tokens / static_cast<double>(qa.size())},
        {"avg_answer_tokens", a_tokens / static_cast<double>(qa.size())},
        {"vocab_size", prepared.vocab.size()},
        {"retained_snippets", snippets},
    };
    std::ofstream out(rc.out_dir + "/stats.json");
    out << stats.dump(2) << "\n";
    std::cout << "prepared " << prepared.samples.size() << " samples, vocabulary "
              << prepared.vocab.size() << " -> " << rc.out_dir << "\n";
    return 0;
}

// ------------------------------------------------------------------ train

int cmd_train(const RunConfig& rc) {
    require_set(rc.data_dir, "data_dir");
    require_file(rc.data_dir + "/samples.jsonl", "prepared samples");
    require_file(rc.data_dir + "/vocab.txt", "vocabulary");
    require_set(rc.out_dir, "out_dir");

    const oaag::Vocabulary vocab = oaag::Vocabulary::load(rc.data_dir + "/vocab.txt");
    const std::vector<oaag::QASample> samples =
        oaag::load_samples(rc.data_dir + "/samples.jsonl");
    for (std::size_t i = 0; i < samples.size(); ++i)
        if (static_cast<int>(samples[i].reviews.size()) != rc.train.num_reviews) {
            std::ostringstream msg;
            msg << "config/data mismatch: num_reviews is " << rc.train.num_reviews
                << " but sample " << i << " carries " << samples[i].reviews.size();
            throw std::runtime_error(msg.str());
        }

    oaag::Checkpoint resumed;
    const oaag::Checkpoint* resume = nullptr;
    if (!rc.resume.empty()) {
        require_file(rc.resume, "resume checkpoint");
        resumed = oaag::load_checkpoint(rc.resume);
        const oaag::ModelConfig want = rc.train.model_config(vocab.size());
        if (resumed.model.vocab_size != want.vocab_size || resumed.model.emb_dim != want.emb_dim ||
            resumed.model.d_h != want.d_h || resumed.model.d_a != want.d_a ||
            resumed.model.num_reviews != want.num_reviews)
            throw std::runtime_error("config/checkpoint dimension mismatch on resume");
        resume = &resumed;
    }

    std::filesystem::create_directories(rc.out_dir);
    const std::string log_path = rc.out_dir + "/train_log.jsonl";
    const std::string ckpt_path = rc.out_dir + "/checkpoint.json";
    if (resume == nullptr) std::ofstream(log_path, std::ios::trunc);

    auto on_epoch = [&](const oaag::Checkpoint& ckpt, const oaag::EpochStats& stats) {
        oaag::append_train_log(log_path, stats);
        oaag::save_checkpoint(ckpt_path, ckpt);
        std::cout << "epoch " << stats.epoch << "  l_om " << stats.l_om << "  l_ag "
                  << stats.l_ag << "  l " << stats.l << "\n";
    };
    const oaag::Checkpoint final_ckpt =
        oaag::train(samples, vocab.size(), rc.train, on_epoch, resume);
    oaag::save_checkpoint(ckpt_path, final_ckpt);
    std::cout << "trained through epoch " << final_ckpt.epoch << " -> " << ckpt_path << "\n";
    return 0;
}

// --------------------------------------------------------------- generate

int cmd_generate(const RunConfig& rc, const std::string& out_path) {
    require_file(rc.checkpoint, "checkpoint");
    require_set(rc.data_dir, "data_dir");
    require_file(rc.data_dir + "/samples.jsonl", "prepared samples");
    require_file(rc.data_dir + "/vocab.txt", "vocabulary");
    require_set(out_path, "output");
    if (rc.beam_width < 1) throw std::runtime_error("beam_width must be at least 1");

    const oaag::Checkpoint ckpt = oaag::load_checkpoint(rc.checkpoint);
    const oaag::Vocabulary vocab = oaag::Vocabulary::load(rc.data_dir + "/vocab.txt");
    const std::vector<oaag::QASample> samples =
        oaag::load_samples(rc.data_dir + "/samples.jsonl");
    if (ckpt.model.vocab_size != vocab.size())
        throw std::runtime_error("checkpoint/data dimension mismatch: checkpoint vocabulary " +
                                 std::to_string(ckpt.model.vocab_size) + ", data vocabulary " +
                                 std::to_string(vocab.size()));
    oaag::set_precision(oaag::precision_from_string(ckpt.config.precision));

    const oaag::FusionMode mode = rc.train.mode;
    const int max_len = rc.train.max_answer_len;
    if (auto parent = std::filesystem::path(out_path).parent_path(); !parent.empty())
        std::filesystem::create_directories(parent);
    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("cannot write " + out_path);

    for (std::size_t i = 0; i < samples.size(); ++i) {
        const oaag::QASample& s = samples[i];
        const std::vector<int> ids =
            rc.strategy == "beam"
                ? oaag::decode_beam(s, ckpt.params, mode, rc.beam_width, max_len)
                : oaag::decode_greedy(s, ckpt.params, mode, max_len);
        std::vector<std::string> tokens;
        for (int id : ids) tokens.push_back(oaag::decode_id(id, vocab, s.oov_tokens));

        // replay the emitted sequence to dump the per-step mix weights and
        // the review weights actually used
        const oaag::SampleContext ctx = oaag::build_sample_context(s, ckpt.params);
        const std::vector<oaag::StepTrace> trace =
            oaag::trace_sequence(s, ckpt.params, mode, ids);
        json steps = json::array();
        std::vector<std::vector<double>> beta_hats;
        {
            oaag::DecoderState st = oaag::init_state(ctx.o_hat, ckpt.params);
            int prev = oaag::kSosId;
            for (std::size_t t = 0; t < ids.size(); ++t) {
                auto [step, next] = oaag::decode_step(st, prev, ctx, mode, ckpt.params);
                if (mode == oaag::FusionMode::Dynamic)
                    beta_hats.push_back(step.beta_hat.values());
                st = next;
                prev = ids[t];
            }
        }
        for (std::size_t t = 0; t < trace.size(); ++t) {
            json top = json::array();
            for (const auto& [id, p] : trace[t].top5) top.push_back({id, p});
            json step = {{"gamma", trace[t].gamma}, {"top5", top}};
            if (mode == oaag::FusionMode::Dynamic) step["beta_hat"] = beta_hats[t];
            steps.push_back(std::move(step));
        }

        const std::vector<double>& po = ctx.p_o.values();
        const int pred = static_cast<int>(std::max_element(po.begin(), po.end()) - po.begin());
        json rec = {
            {"sample_id", i},
            {"mode", oaag::fusion_mode_to_string(mode)},
            {"strategy", rc.strategy},
            {"tokens", tokens},
            {"ids", ids},
            {"steps", steps},
            {"beta", ctx.beta.values()},
            {"predicted_label", oaag::opinion_to_string(static_cast<oaag::Opinion>(pred))},
            {"p_o", po},
        };
        out << rec.dump() << "\n";
    }
    std::cout << "generated " << samples.size() << " answers (" << rc.strategy << ", "
              << oaag::fusion_mode_to_string(mode) << ") -> " << out_path << "\n";
    return 0;
}

// --------------------------------------------------------------- evaluate

struct GenerationFile {
    std::string mode;
    std::vector<std::vector<std::string>> hyps;   // by sample id
    std::vector<oaag::Opinion> predicted;         // by sample id
};

GenerationFile load_generations(const std::string& path, std::size_t sample_count) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open generations file " + path);
    GenerationFile gf;
    gf.hyps.resize(sample_count);
    gf.predicted.resize(sample_count, oaag::Opinion::neutral);
    std::vector<bool> seen(sample_count, false);
    std::string line;
    long lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        const std::size_t id = j.at("sample_id").get<std::size_t>();
        if (id >= sample_count)
            throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                     ": sample_id out of range");
        seen[id] = true;
        gf.hyps[id] = j.at("tokens").get<std::vector<std::string>>();
        gf.predicted[id] = oaag::opinion_from_string(j.at("predicted_label").get<std::string>());
        gf.mode = j.at("mode").get<std::string>();
    }
    std::vector<std::size_t> missing;
    for (std::size_t i = 0; i < sample_count; ++i)
        if (!seen[i]) missing.push_back(i);
    if (!missing.empty()) {
        std::ostringstream msg;
        msg << path << ": missing sample ids:";
        for (std::size_t id : missing) msg << " " << id;
        throw std::runtime_error(msg.str());
    }
    return gf;
}

int cmd_evaluate(const RunConfig& rc, const std::vector<std::string>& generation_paths) {
    require_set(rc.data_dir, "data_dir");
    require_file(rc.data_dir + "/samples.jsonl", "prepared samples");
    require_file(rc.data_dir + "/vocab.txt", "vocabulary");
    require_file(rc.checkpoint, "checkpoint");
    require_set(rc.report, "report");
    for (const std::string& p : generation_paths) require_file(p, "generations file");

    const oaag::Vocabulary vocab = oaag::Vocabulary::load(rc.data_dir + "/vocab.txt");
    const std::vector<oaag::QASample> samples =
        oaag::load_samples(rc.data_dir + "/samples.jsonl");
    const oaag::Checkpoint ckpt = oaag::load_checkpoint(rc.checkpoint);
    oaag::set_precision(oaag::precision_from_string(ckpt.config.precision));

    std::vector<std::vector<std::string>> refs;
    std::vector<oaag::Opinion> gold;
    for (const oaag::QASample& s : samples) {
        refs.push_back(answer_tokens(s, vocab));
        gold.push_back(s.label);
    }

    // answer-side opinion judge: the run's own classifier read the answer
    // as both question and review; a stand-in for an external model
    oaag::AnswerLabeler labeler = [&](const std::vector<std::string>& tokens) {
        if (tokens.empty()) return oaag::Opinion::neutral;
        oaag::QASample probe;
        for (const std::string& t : tokens) probe.question_ids.push_back(vocab.id_of(t));
        probe.reviews.push_back({probe.question_ids, 0, false});
        probe.answer_ids = {oaag::kEosId};
        const oaag::SampleContext ctx = oaag::build_sample_context(probe, ckpt.params);
        const std::vector<double>& po = ctx.p_o.values();
        return static_cast<oaag::Opinion>(std::max_element(po.begin(), po.end()) - po.begin());
    };

    json modes = json::object();
    json repetition = json::array();
    std::optional<oaag::ClsEvalReport> cls;
    for (const std::string& path : generation_paths) {
        const GenerationFile gf = load_generations(path, samples.size());
        const oaag::GenEvalReport rep =
            oaag::generation_report(gf.hyps, refs, vocab, ckpt.params.embedding);
        const double answer_opinion_acc = oaag::toa(gf.hyps, gold, labeler);
        modes[gf.mode] = {
            {"rouge1_f1", rep.r1_f1},
            {"rougeL_f1", rep.rl_f1},
            {"bleu1", rep.bleu1},
            {"embedding_similarity", rep.emb_sim},
            {"distinct1", rep.distinct1},
            {"distinct2", rep.distinct2},
            {"repetition1", rep.repetition1},
            {"repetition2", rep.repetition2},
            {"answer_opinion_accuracy", answer_opinion_acc},
        };
        repetition.push_back({{"mode", gf.mode},
                              {"repetition1", rep.repetition1},
                              {"repetition2", rep.repetition2}});
        if (!cls) cls = oaag::classification_metrics(gf.predicted, gold);
    }

    json report = {
        {"sample_count", samples.size()},
        {"generation", modes},
        {"repetition_by_mode", repetition},
        {"classification",
         {{"accuracy", cls->accuracy},
          {"macro_f1", cls->macro_f1},
          {"confusion", cls->confusion}}},
        {"answer_opinion_judge",
         "this run's own opinion head re-reading the generated answer; not an external model"},
    };
    if (auto parent = std::filesystem::path(rc.report).parent_path(); !parent.empty())
        std::filesystem::create_directories(parent);
    std::ofstream out(rc.report);
    if (!out) throw std::runtime_error("cannot write " + rc.report);
    out << report.dump(2) << "\n";
    std::cout << "evaluated " << generation_paths.size() << " generation file(s) over "
              << samples.size() << " samples -> " << rc.report << "\n";
    return 0;
}

// ----------------------------------------------------------------- verify

int cmd_verify(const RunConfig& rc) {
    const std::vector<oaag::CheckResult> results = oaag::run_verification(rc.train.seed);
    bool all_pass = true;
    for (const oaag::CheckResult& r : results) {
        std::printf("[%s] %-30s %s\n", r.pass ? "PASS" : "FAIL", r.name.c_str(),
                    r.detail.c_str());
        all_pass = all_pass && r.pass;
    }
    if (!all_pass) {
        std::cout << "verification FAILED\n";
        return 2;
    }
    std::cout << "all checks passed\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"opinion-aware answer generation over product reviews"};
    app.require_subcommand(1);

    std::string config_path;
    Overrides o;
    std::string generate_out;
    std::vector<std::string> generation_paths;

    CLI::App* prepare = app.add_subcommand("prepare", "tokenize, retrieve, and encode a corpus");
    CLI::App* train = app.add_subcommand("train", "fit the joint model on prepared data");
    CLI::App* generate = app.add_subcommand("generate", "decode answers from a checkpoint");
    CLI::App* evaluate = app.add_subcommand("evaluate", "score generations against references");
    CLI::App* verify = app.add_subcommand("verify", "run the release verification suite");
    for (CLI::App* cmd : {prepare, train, generate, evaluate, verify}) {
        cmd->add_option("--config", config_path, "JSON config file; flags override its keys");
        add_override_flags(*cmd, o);
    }
    generate->add_option("--out", generate_out, "output generations.jsonl");
    evaluate->add_option("--generations", generation_paths,
                         "one generations.jsonl per fusion mode");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        const RunConfig rc = resolve_config(config_path, o);
        if (prepare->parsed()) return cmd_prepare(rc);
        if (train->parsed()) return cmd_train(rc);
        if (generate->parsed()) return cmd_generate(rc, generate_out);
        if (evaluate->parsed()) return cmd_evaluate(rc, generation_paths);
        if (verify->parsed()) return cmd_verify(rc);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
