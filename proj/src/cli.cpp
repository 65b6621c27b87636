#include "mcan/cli.hpp"

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "mcan/checkpoint.hpp"
#include "mcan/errors.hpp"
#include "mcan/eval.hpp"

namespace mcan {

namespace {

struct Profile {
    std::size_t embed_dim = 0;  // 0: infer from the embedding file
    std::size_t hidden = 100;
    std::size_t head = 100;
    std::string dev_metric = "map";
    std::vector<RecallSpec> recall_specs;
};

Profile profile_defaults(const std::string& name) {
    if (name == "trecqa") return {300, 300, 200, "map", {}};
    if (name == "udc") return {0, 100, 100, "r10@1", {{2, 1}, {10, 1}, {10, 2}, {10, 5}}};
    if (name == "cqa") return {200, 200, 200, "map", {}};
    if (name == "tweets") return {0, 100, 100, "mrr", {}};
    if (name == "custom") return {};
    throw UsageError("unknown profile: " + name +
                     " (expected trecqa, udc, cqa, tweets or custom)");
}

void require_path(const std::string& value, const char* flag) {
    if (value.empty()) throw UsageError(std::string("missing required flag ") + flag);
}

std::ofstream open_output(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write output file: " + path.string());
    return out;
}

std::filesystem::path prepare_out_dir(const RunConfig& config) {
    std::filesystem::path dir(config.out_dir);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw DataError("cannot create output directory: " + dir.string());
    return dir;
}

std::vector<std::vector<std::string>> corpus_tokens(const std::vector<RankPair>& pairs) {
    std::vector<std::vector<std::string>> corpus;
    corpus.reserve(pairs.size() * 2);
    for (const auto& p : pairs) {
        corpus.push_back(tokenize(p.query_text));
        corpus.push_back(tokenize(p.doc_text));
    }
    return corpus;
}

struct TrainedRun {
    Vocabulary vocab;
    std::unique_ptr<Model> model;
    TrainResult result;
};

TrainedRun train_once(const RunConfig& config, const ResolvedRun& run,
                      const std::vector<RankPair>& train_pairs,
                      const std::vector<RankPair>& dev_pairs, const ModelConfig& model_config) {
    TrainedRun out;
    out.vocab = build_vocab(corpus_tokens(train_pairs));
    Rng rng(config.seed);
    auto embeddings =
        load_embeddings(config.embeddings_path, out.vocab, model_config.embed_dim, rng);
    out.model = std::make_unique<Model>(model_config, std::move(embeddings), rng);
    out.result = train_model(*out.model, train_pairs, dev_pairs, out.vocab, run.train);
    return out;
}

void write_train_log(const std::filesystem::path& path, const TrainResult& result) {
    auto out = open_output(path);
    for (const auto& rec : result.log) out << format_epoch(rec) << "\n";
}

std::vector<std::string> feature_headers(const CastSet& casts) {
    std::vector<std::string> headers;
    static const char* kComps[] = {"concat", "mul", "sub"};
    std::size_t index = 1;
    for (CastKind kind : CastSet::order()) {
        if (!casts.enabled(kind)) continue;
        for (const char* comp : kComps) {
            headers.push_back("f" + std::to_string(index++) + "_" + cast_name(kind) + "_" + comp);
        }
    }
    return headers;
}

}  // namespace

ResolvedRun resolve_run(const RunConfig& config) {
    const Profile profile = profile_defaults(config.profile);
    ResolvedRun run;

    ModelConfig& m = run.model;
    m.embed_dim = config.embed_dim.value_or(profile.embed_dim);
    m.encoder_width = config.encoder_width.value_or(0);
    m.use_highway = !config.no_highway;
    m.use_lstm = !config.no_lstm;
    m.lstm_hidden = config.hidden.value_or(profile.hidden);
    m.head_width = config.head.value_or(profile.head);
    m.compression = compression_from_string(config.compression.value_or("fm"));
    m.fm_factors = config.fm_k.value_or(10);
    m.affinity = affinity_from_string(config.affinity.value_or("factored"));
    m.dropout = config.dropout.value_or(0.2);
    m.l2 = config.l2.value_or(1e-6);
    m.max_len = config.max_len.value_or(50);
    for (const auto& name : config.disable_casts) {
        bool known = false;
        for (CastKind kind : CastSet::order()) {
            if (name == cast_name(kind)) {
                m.casts.set(kind, false);
                known = true;
            }
        }
        if (!known) throw UsageError("unknown cast in --disable-cast: " + name);
    }

    TrainConfig& t = run.train;
    t.batch_size = config.batch_size.value_or(32);
    t.max_epochs = config.epochs.value_or(50);
    t.seed = config.seed;
    t.patience = config.patience.value_or(5);
    t.adam.lr = config.lr.value_or(3e-4);
    t.recall_specs = profile.recall_specs;
    run.dev_metric = config.dev_metric.value_or(profile.dev_metric);
    t.dev_metric = run.dev_metric;
    return run;
}

int cmd_train(const RunConfig& config) {
    require_path(config.train_path, "--train");
    require_path(config.dev_path, "--dev");
    require_path(config.embeddings_path, "--embeddings");
    auto run = resolve_run(config);
    const auto out_dir = prepare_out_dir(config);

    auto train_pairs = load_pairs(config.train_path);
    auto dev_pairs = load_pairs(config.dev_path);
    auto trained = train_once(config, run, train_pairs, dev_pairs, run.model);

    save_checkpoint((out_dir / "checkpoint.mcan").string(), *trained.model, trained.vocab);
    write_train_log(out_dir / "train_log.tsv", trained.result);
    auto dev_report =
        mean_metrics(score_pairs(*trained.model, dev_pairs, trained.vocab), run.train.recall_specs);
    open_output(out_dir / "dev_metrics.tsv") << dev_report.to_text();

    std::cout << "trained " << trained.result.log.size() << " epochs, best " << run.dev_metric
              << " " << std::setprecision(6) << trained.result.best_metric << " at epoch "
              << trained.result.best_epoch << "\n";
    return 0;
}

namespace {

void check_checkpoint_overrides(const RunConfig& config, const ModelConfig& loaded) {
    std::vector<std::string> mismatches;
    auto check_size = [&](const std::optional<std::size_t>& given, std::size_t have,
                          const char* name) {
        if (given && *given != have) mismatches.push_back(name);
    };
    check_size(config.hidden, loaded.lstm_hidden, "--hidden");
    check_size(config.head, loaded.head_width, "--head");
    check_size(config.fm_k, loaded.fm_factors, "--fm-k");
    check_size(config.embed_dim, loaded.embed_dim, "--embed-dim");
    check_size(config.encoder_width, loaded.encoder_width, "--encoder-width");
    check_size(config.max_len, loaded.max_len, "--max-len");
    if (config.compression &&
        compression_from_string(*config.compression) != loaded.compression) {
        mismatches.push_back("--compression");
    }
    if (config.affinity && affinity_from_string(*config.affinity) != loaded.affinity) {
        mismatches.push_back("--affinity");
    }
    if (config.no_highway && loaded.use_highway) mismatches.push_back("--no-highway");
    if (config.no_lstm && loaded.use_lstm) mismatches.push_back("--no-lstm");
    for (const auto& name : config.disable_casts) {
        for (CastKind kind : CastSet::order()) {
            if (name == cast_name(kind) && loaded.casts.enabled(kind)) {
                mismatches.push_back("--disable-cast " + name);
            }
        }
    }
    if (!mismatches.empty()) {
        std::string joined;
        for (const auto& m : mismatches) joined += (joined.empty() ? "" : ", ") + m;
        throw UsageError("flags conflict with the checkpoint configuration: " + joined);
    }
}

}  // namespace

int cmd_eval(const RunConfig& config) {
    require_path(config.checkpoint_path, "--checkpoint");
    require_path(config.test_path, "--test");
    auto loaded = load_checkpoint(config.checkpoint_path);
    check_checkpoint_overrides(config, loaded.config);
    const auto out_dir = prepare_out_dir(config);
    const Profile profile = profile_defaults(config.profile);

    auto pairs = load_pairs(config.test_path);
    auto report =
        mean_metrics(score_pairs(*loaded.model, pairs, loaded.vocab), profile.recall_specs);
    open_output(out_dir / "metrics.tsv") << report.to_text();
    std::cout << report.to_text();
    return 0;
}

int cmd_inspect(const RunConfig& config) {
    require_path(config.checkpoint_path, "--checkpoint");
    const std::string pairs_path = config.pairs_path.empty() ? config.test_path : config.pairs_path;
    require_path(pairs_path, "--pairs");
    auto loaded = load_checkpoint(config.checkpoint_path);
    check_checkpoint_overrides(config, loaded.config);
    const auto out_dir = prepare_out_dir(config);

    auto pairs = load_pairs(pairs_path);
    auto out = open_output(out_dir / "features.csv");
    out << std::setprecision(10);
    out << "pair,query_id,side,position,token";
    for (const auto& h : feature_headers(loaded.config.casts)) out << "," << h;
    out << "\n";

    const std::size_t zw = loaded.config.z_width();
    for (std::size_t pi = 0; pi < pairs.size(); ++pi) {
        const auto& pair = pairs[pi];
        auto q = encode_batch({tokenize(pair.query_text)}, loaded.vocab, loaded.config.max_len)[0];
        auto d = encode_batch({tokenize(pair.doc_text)}, loaded.vocab, loaded.config.max_len)[0];
        CastTrace trace;
        loaded.model->forward(q, d, false, nullptr, &trace);
        auto emit = [&](const char* side, const TokenSequence& seq,
                        const std::vector<double>& features) {
            for (std::size_t pos = 0; pos < seq.true_length; ++pos) {
                out << pi << "," << pair.query_id << "," << side << "," << pos << ","
                    << loaded.vocab.token_of(seq.ids[pos]);
                for (std::size_t j = 0; j < zw; ++j) out << "," << features[pos * zw + j];
                out << "\n";
            }
        };
        emit("query", q, trace.q_features);
        emit("doc", d, trace.d_features);
    }
    std::cout << "wrote " << (out_dir / "features.csv").string() << "\n";
    return 0;
}

int cmd_ablate(const RunConfig& config) {
    require_path(config.train_path, "--train");
    require_path(config.dev_path, "--dev");
    require_path(config.embeddings_path, "--embeddings");
    auto run = resolve_run(config);
    const auto out_dir = prepare_out_dir(config);

    auto train_pairs = load_pairs(config.train_path);
    auto dev_pairs = load_pairs(config.dev_path);

    struct Setting {
        const char* name;
        void (*tweak)(ModelConfig&);
    };
    static const Setting kSettings[] = {
        {"original", [](ModelConfig&) {}},
        {"remove_highway", [](ModelConfig& m) { m.use_highway = false; }},
        {"remove_lstm", [](ModelConfig& m) { m.use_lstm = false; }},
        {"remove_mca", [](ModelConfig& m) { m.casts = CastSet{false, false, false, false}; }},
        {"remove_intra", [](ModelConfig& m) { m.casts.intra = false; }},
        {"remove_align", [](ModelConfig& m) { m.casts.align = false; }},
        {"remove_mean", [](ModelConfig& m) { m.casts.mean_pool = false; }},
        {"remove_max", [](ModelConfig& m) { m.casts.max_pool = false; }},
    };

    auto out = open_output(out_dir / "ablation.tsv");
    out << std::setprecision(17);
    out << "setting\tz_width\tparams\tbest_epoch\tmap\tmrr\tp@1";
    for (const auto& spec : run.train.recall_specs) out << "\tr" << spec.n << "@" << spec.k;
    out << "\n";
    for (const Setting& setting : kSettings) {
        ModelConfig model_config = run.model;
        setting.tweak(model_config);
        auto trained = train_once(config, run, train_pairs, dev_pairs, model_config);
        auto report = mean_metrics(score_pairs(*trained.model, dev_pairs, trained.vocab),
                                   run.train.recall_specs);
        out << setting.name << "\t" << model_config.z_width() << "\t"
            << trained.model->params().value_count() << "\t" << trained.result.best_epoch << "\t"
            << report.map << "\t" << report.mrr << "\t" << report.p_at_1;
        for (const auto& [spec, value] : report.recall) {
            (void)spec;
            out << "\t" << value;
        }
        out << "\n";
        std::cout << setting.name << " done, dev map " << std::setprecision(6) << report.map
                  << "\n";
    }
    return 0;
}

int run_command(const RunConfig& config) {
    if (config.command == "train") return cmd_train(config);
    if (config.command == "eval") return cmd_eval(config);
    if (config.command == "inspect") return cmd_inspect(config);
    if (config.command == "ablate") return cmd_ablate(config);
    throw UsageError("unknown command: '" + config.command +
                     "' (expected train, eval, inspect or ablate)");
}

int cli_main(int argc, char** argv) {
    CLI::App app{"mcan: multi-cast attention ranker for short text pairs"};
    RunConfig rc;

    app.add_option("--command", rc.command, "train | eval | inspect | ablate")->required();
    app.add_option("--train", rc.train_path, "training pairs TSV");
    app.add_option("--dev", rc.dev_path, "development pairs TSV");
    app.add_option("--test", rc.test_path, "test pairs TSV");
    app.add_option("--pairs", rc.pairs_path, "pairs TSV for inspect (defaults to --test)");
    app.add_option("--embeddings", rc.embeddings_path, "pretrained embedding text file");
    app.add_option("--checkpoint", rc.checkpoint_path, "checkpoint archive to load");
    app.add_option("--profile", rc.profile, "trecqa | udc | cqa | tweets | custom");
    app.add_option("--seed", rc.seed, "run seed");
    app.add_option("--out", rc.out_dir, "output directory");

    auto opt_size = [&](const char* flag, std::optional<std::size_t>& slot, const char* help) {
        app.add_option_function<std::size_t>(
            flag, [&slot](std::size_t v) { slot = v; }, help);
    };
    auto opt_double = [&](const char* flag, std::optional<double>& slot, const char* help) {
        app.add_option_function<double>(flag, [&slot](double v) { slot = v; }, help);
    };
    auto opt_string = [&](const char* flag, std::optional<std::string>& slot, const char* help) {
        app.add_option_function<std::string>(
            flag, [&slot](const std::string& v) { slot = v; }, help);
    };
    opt_size("--batch-size", rc.batch_size, "pairs per training batch");
    opt_size("--epochs", rc.epochs, "maximum training epochs");
    opt_size("--patience", rc.patience, "epochs without dev improvement before stopping");
    opt_size("--hidden", rc.hidden, "sequence encoder width");
    opt_size("--head", rc.head, "prediction head width");
    opt_size("--fm-k", rc.fm_k, "factorization machine factors");
    opt_size("--max-len", rc.max_len, "hard token cap per sequence");
    opt_size("--embed-dim", rc.embed_dim, "embedding width (0: infer from file)");
    opt_size("--encoder-width", rc.encoder_width, "highway encoder output width");
    opt_double("--lr", rc.lr, "adam learning rate");
    opt_double("--dropout", rc.dropout, "dropout rate");
    opt_double("--l2", rc.l2, "l2 regularization weight");
    opt_string("--compression", rc.compression, "sm | nn | fm");
    opt_string("--affinity", rc.affinity, "factored | bilinear | mlp");
    opt_string("--dev-metric", rc.dev_metric, "metric used for model selection");
    app.add_option("--disable-cast", rc.disable_casts, "disable a cast: align, max, mean, intra")
        ->allow_extra_args(false);
    app.add_flag("--no-highway", rc.no_highway, "drop the highway input encoder");
    app.add_flag("--no-lstm", rc.no_lstm, "drop the sequence encoder");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }
    try {
        return run_command(rc);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace mcan
