#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "genrefusion/checkpoint.hpp"
#include "genrefusion/config.hpp"
#include "genrefusion/dataset.hpp"
#include "genrefusion/errors.hpp"
#include "genrefusion/evaluation.hpp"
#include "genrefusion/genres.hpp"
#include "genrefusion/models.hpp"
#include "genrefusion/pipeline.hpp"
#include "genrefusion/training.hpp"

namespace genrefusion::cli {

namespace detail {

// The resolved config as a single `# config:` comment line for CSV-ish
// artifacts; the pairs are the same ones config.txt carries.
inline std::string config_comment(const RunConfig& cfg) {
    std::string line = "# config:";
    for (const auto& [k, v] : cfg.entries()) line += " " + k + "=" + v + ";";
    return line;
}

inline void require_out_dir(const RunConfig& cfg) {
    if (cfg.out_dir.empty()) throw UsageError("--out output directory is required");
    std::error_code ec;
    std::filesystem::create_directories(cfg.out_dir, ec);
    if (ec) throw IoError("cannot create output directory: " + cfg.out_dir);
}

inline std::string format_metric(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// One flag per RunConfig tunable; a flag given on the command line overrides
// the config file, which overrides the defaults.
struct FlagSet {
    RunConfig staged;
    std::string config_file;
    CLI::Option* config_opt = nullptr;
    std::vector<std::pair<CLI::Option*, std::function<void(RunConfig&)>>> appliers;

    void add(CLI::App* cmd, CLI::Option* opt, std::function<void(RunConfig&)> apply) {
        (void)cmd;
        appliers.emplace_back(opt, std::move(apply));
    }

    void add_config(CLI::App* cmd) {
        config_opt = cmd->add_option("--config", config_file,
                                     "key = value config file (flags override it)");
    }

    void add_common(CLI::App* cmd) {
        add_config(cmd);
        add(cmd, cmd->add_option("--seed", staged.seed, "rng seed"),
            [this](RunConfig& c) { c.seed = staged.seed; });
        add(cmd, cmd->add_option("--out", staged.out_dir, "output directory"),
            [this](RunConfig& c) { c.out_dir = staged.out_dir; });
    }

    void add_model(CLI::App* cmd) {
        add(cmd,
            cmd->add_option("--modality", staged.modality, "text | image | fused")
                ->check(CLI::IsMember({"text", "image", "fused"})),
            [this](RunConfig& c) { c.modality = staged.modality; });
        add(cmd, cmd->add_option("--image-size", staged.image_size, "square resize target"),
            [this](RunConfig& c) { c.image_size = staged.image_size; });
        add(cmd, cmd->add_option("--max-len", staged.max_len, "token sequence length"),
            [this](RunConfig& c) { c.max_len = staged.max_len; });
        add(cmd, cmd->add_option("--use-title", staged.use_title,
                                 "prepend the title to the description text"),
            [this](RunConfig& c) { c.use_title = staged.use_title; });
        add(cmd, cmd->add_option("--embed-dim", staged.embed_dim, "embedding width"),
            [this](RunConfig& c) { c.embed_dim = staged.embed_dim; });
        add(cmd, cmd->add_option("--lstm-hidden", staged.lstm_hidden, "LSTM memory units"),
            [this](RunConfig& c) { c.lstm_hidden = staged.lstm_hidden; });
        add(cmd,
            cmd->add_option("--conv-channels", staged.conv_channels,
                            "comma-separated conv block widths"),
            [this](RunConfig& c) { c.conv_channels = staged.conv_channels; });
        add(cmd,
            cmd->add_option("--image-feature-dim", staged.image_feature_dim,
                            "image feature width"),
            [this](RunConfig& c) { c.image_feature_dim = staged.image_feature_dim; });
    }

    void add_train(CLI::App* cmd) {
        add(cmd, cmd->add_option("--epochs", staged.epochs, "training epochs"),
            [this](RunConfig& c) { c.epochs = staged.epochs; });
        add(cmd, cmd->add_option("--batch-size", staged.batch_size, "mini-batch size"),
            [this](RunConfig& c) { c.batch_size = staged.batch_size; });
        add(cmd, cmd->add_option("--lr", staged.lr, "Adam learning rate"),
            [this](RunConfig& c) { c.lr = staged.lr; });
        add(cmd,
            cmd->add_flag("--freeze-encoders", staged.freeze_encoders,
                          "train only the fusion head"),
            [this](RunConfig& c) { c.freeze_encoders = staged.freeze_encoders; });
        add(cmd,
            cmd->add_option("--patience", staged.patience,
                            "early-stop patience on validation loss (0 disables)"),
            [this](RunConfig& c) { c.patience = staged.patience; });
    }

    RunConfig resolve() const {
        RunConfig cfg;
        if (config_opt && config_opt->count() > 0) cfg.apply_file(config_file);
        for (const auto& [opt, apply] : appliers) {
            if (opt->count() > 0) apply(cfg);
        }
        return cfg;
    }
};

}  // namespace detail

// ---------------------------------------------------------------------------
// prepare: manifest -> resolved genres, split listings, vocabulary, report
// ---------------------------------------------------------------------------
inline int cmd_prepare(const RunConfig& cfg, std::ostream& out) {
    detail::require_out_dir(cfg);
    PreparedDataset prep = prepare_dataset(cfg);
    write_prepared(prep, cfg.out_dir);
    out << "prepared " << prep.records.size() << " records: " << prep.split.train.size()
        << " train / " << prep.split.validation.size() << " validation / "
        << prep.split.test.size() << " test, vocabulary size " << prep.vocab.size() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train: prepared dataset -> best checkpoint + per-epoch history
// ---------------------------------------------------------------------------
inline int cmd_train(const RunConfig& cfg, std::ostream& out) {
    if (cfg.data_dir.empty()) throw UsageError("train: --data prepared dataset required");
    detail::require_out_dir(cfg);
    PreparedDataset prep = load_prepared(cfg.data_dir);

    const Modality modality = modality_from_string(cfg.modality);
    ExampleSet train_set = materialize(prep, prep.split.train, modality, cfg);
    ExampleSet val_set;
    if (!prep.split.validation.empty()) {
        val_set = materialize(prep, prep.split.validation, modality, cfg);
    }

    GenreClassifier model(classifier_config_from(cfg, prep.vocab.size()));
    model.init(cfg.seed);

    TrainOptions opt;
    opt.epochs = cfg.epochs;
    opt.batch_size = cfg.batch_size;
    opt.seed = cfg.seed;
    opt.adam.lr = cfg.lr;
    opt.adam.beta1 = cfg.beta1;
    opt.adam.beta2 = cfg.beta2;
    opt.adam.eps = cfg.adam_eps;
    opt.patience = cfg.patience;

    const TrainResult result = train(model, train_set, val_set, opt);

    const std::filesystem::path out_dir(cfg.out_dir);
    save_checkpoint(out_dir / "checkpoint.bin", cfg, prep.vocab, model);
    cfg.write(out_dir / "config.txt");
    {
        std::ofstream hist(out_dir / "history.csv", std::ios::binary);
        if (!hist) throw IoError("cannot write history: " + (out_dir / "history.csv").string());
        hist << detail::config_comment(cfg) << "\n";
        hist << "epoch,train_loss,train_accuracy,val_loss,val_accuracy\n";
        for (std::size_t e = 0; e < result.history.size(); ++e) {
            const EpochStats& s = result.history[e];
            hist << (e + 1) << "," << detail::format_metric(s.train_loss) << ","
                 << detail::format_metric(s.train_accuracy) << ",";
            if (s.val_loss) hist << detail::format_metric(*s.val_loss);
            hist << ",";
            if (s.val_accuracy) hist << detail::format_metric(*s.val_accuracy);
            hist << "\n";
        }
    }

    for (std::size_t e = 0; e < result.history.size(); ++e) {
        const EpochStats& s = result.history[e];
        out << "epoch " << (e + 1) << "/" << cfg.epochs << ": train loss " << s.train_loss
            << ", train top-1 " << s.train_accuracy * 100.0 << "%";
        if (s.val_loss) {
            out << ", val loss " << *s.val_loss << ", val top-1 " << *s.val_accuracy * 100.0
                << "%";
        }
        out << "\n";
    }
    out << "best epoch: " << (result.best_epoch + 1) << "; checkpoint written to "
        << (out_dir / "checkpoint.bin").string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// evaluate: checkpoint + prepared split -> report.json / report.txt /
// confusion.csv
// ---------------------------------------------------------------------------
inline int cmd_evaluate(const RunConfig& cli_cfg, std::ostream& out) {
    if (cli_cfg.checkpoint.empty()) throw UsageError("evaluate: --checkpoint required");
    if (cli_cfg.data_dir.empty()) throw UsageError("evaluate: --data prepared dataset required");
    detail::require_out_dir(cli_cfg);

    Checkpoint ckpt = load_checkpoint(cli_cfg.checkpoint);
    PreparedDataset prep = load_prepared(cli_cfg.data_dir);
    if (!(ckpt.vocab == prep.vocab)) {
        throw CompatibilityError("checkpoint vocabulary does not match prepared dataset: " +
                                 cli_cfg.checkpoint + " vs " + cli_cfg.data_dir);
    }

    const std::string split_name = cli_cfg.eval_split;
    const auto& ids = prep.split_ids(split_name);
    if (ids.empty()) throw ContractError("evaluate: split '" + split_name + "' is empty");

    // Preprocessing must mirror the checkpoint's training config.
    const Modality modality = modality_from_string(ckpt.config.modality);
    ExampleSet set = materialize(prep, ids, modality, ckpt.config);

    const Tensor probs = predict_probs(ckpt.model, set, ckpt.config.batch_size);
    const EvaluationReport report =
        EvaluationReport::compute(probs, set.labels, GenreMap::kNumGenres);

    const auto& genre_names = GenreMap::canonical_genres();
    const std::filesystem::path out_dir(cli_cfg.out_dir);

    nlohmann::json j = report.to_json(genre_names);
    j["config"] = ckpt.config.to_map();
    j["checkpoint"] = cli_cfg.checkpoint;
    j["split"] = split_name;
    {
        std::ofstream f(out_dir / "report.json", std::ios::binary);
        if (!f) throw IoError("cannot write report: " + (out_dir / "report.json").string());
        f << j.dump(2) << "\n";
    }
    {
        std::ofstream f(out_dir / "report.txt", std::ios::binary);
        if (!f) throw IoError("cannot write report: " + (out_dir / "report.txt").string());
        f << detail::config_comment(ckpt.config) << "\n";
        f << "split: " << split_name << "\n";
        report.write_text(f, genre_names);
    }
    {
        std::ofstream f(out_dir / "confusion.csv", std::ios::binary);
        if (!f) throw IoError("cannot write report: " + (out_dir / "confusion.csv").string());
        f << detail::config_comment(ckpt.config) << "\n";
        report.write_confusion_csv(f, genre_names);
    }

    out << "evaluated " << report.total << " " << split_name << " records: top-1 "
        << report.top_k.at(1) * 100.0 << "%";
    if (report.top_k.count(3)) out << ", top-3 " << report.top_k.at(3) * 100.0 << "%";
    out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// predict: checkpoint + one record's inputs -> top-3 genres with
// probabilities
// ---------------------------------------------------------------------------
inline int cmd_predict(const std::string& checkpoint_path, const std::optional<std::string>& text,
                       const std::optional<std::string>& image_path, std::ostream& out) {
    if (checkpoint_path.empty()) throw UsageError("predict: --checkpoint required");
    Checkpoint ckpt = load_checkpoint(checkpoint_path);
    const Modality modality = modality_from_string(ckpt.config.modality);

    if (modality != Modality::image && !text) {
        throw UsageError("predict: checkpoint uses the text modality; --text is required");
    }
    if (modality != Modality::text && !image_path) {
        throw UsageError("predict: checkpoint uses the image modality; --image is required");
    }
    if (modality == Modality::text && image_path) {
        throw UsageError("predict: checkpoint is text-only; --image does not apply");
    }
    if (modality == Modality::image && text) {
        throw UsageError("predict: checkpoint is image-only; --text does not apply");
    }

    Tape tape(false);
    std::vector<EncodedText> text_batch;
    Tensor images;
    if (modality != Modality::image) {
        text_batch.push_back(encode(*text, ckpt.vocab, ckpt.config.max_len));
    }
    if (modality != Modality::text) {
        Tensor one = load_image_tensor(*image_path, ckpt.config.image_size);
        images = stack_images({one}, {0});
    }
    const Tensor probs =
        ckpt.model.forward_probs(tape, modality != Modality::image ? &text_batch : nullptr,
                                 modality != Modality::text ? &images : nullptr);
    const std::size_t k = std::min<std::size_t>(3, probs.dim(1));
    const auto top = predict_topk(probs, k);
    for (int genre : top[0]) {
        out << GenreMap::canonical_genres()[static_cast<std::size_t>(genre)] << " "
            << detail::format_metric(probs.at(0, static_cast<std::size_t>(genre))) << "\n";
    }
    return 0;
}

// ---------------------------------------------------------------------------
// synth: deterministic synthetic corpus (manifest + cover images)
// ---------------------------------------------------------------------------
inline int cmd_synth(const RunConfig& cfg, std::ostream& out) {
    detail::require_out_dir(cfg);
    SyntheticOptions opt;
    opt.count = cfg.synth_count;
    opt.num_genres = cfg.synth_genres;
    opt.p_text = cfg.p_text;
    opt.p_img = cfg.p_img;
    opt.seed = cfg.seed;
    opt.image_size = cfg.image_size;
    if (cfg.synth_signal == "full") {
        opt.signal = SyntheticSignal::full;
    } else if (cfg.synth_signal == "complementary") {
        opt.signal = SyntheticSignal::complementary;
    } else {
        throw ConfigError("synth: unknown signal mode '" + cfg.synth_signal + "'");
    }

    const std::filesystem::path out_dir(cfg.out_dir);
    const auto records = generate_synthetic(opt, out_dir);
    write_manifest(out_dir / "manifest.jsonl", records);
    cfg.write(out_dir / "config.txt");
    out << "wrote " << records.size() << " synthetic records to " << out_dir.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// entry point
// ---------------------------------------------------------------------------
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"multi-modal video-game genre classifier"};
    app.require_subcommand(1);

    // prepare
    auto* prepare = app.add_subcommand("prepare", "resolve genres, split, build vocabulary");
    detail::FlagSet prepare_flags;
    prepare_flags.add_common(prepare);
    prepare_flags.add(prepare,
                      prepare->add_option("--manifest", prepare_flags.staged.manifest,
                                          "JSONL manifest of game records"),
                      [&prepare_flags](RunConfig& c) { c.manifest = prepare_flags.staged.manifest; });
    prepare_flags.add(prepare,
                      prepare->add_option("--alias-table", prepare_flags.staged.alias_table,
                                          "extra raw<TAB>canonical genre aliases"),
                      [&prepare_flags](RunConfig& c) {
                          c.alias_table = prepare_flags.staged.alias_table;
                      });
    prepare_flags.add(prepare,
                      prepare->add_option("--min-count", prepare_flags.staged.min_count,
                                          "vocabulary frequency threshold"),
                      [&prepare_flags](RunConfig& c) { c.min_count = prepare_flags.staged.min_count; });
    prepare_flags.add(prepare,
                      prepare->add_flag("--stratify", prepare_flags.staged.stratify,
                                        "split each genre separately"),
                      [&prepare_flags](RunConfig& c) { c.stratify = prepare_flags.staged.stratify; });
    prepare_flags.add(prepare,
                      prepare->add_option("--use-title", prepare_flags.staged.use_title,
                                          "include titles in the vocabulary corpus"),
                      [&prepare_flags](RunConfig& c) { c.use_title = prepare_flags.staged.use_title; });

    // train
    auto* train_cmd = app.add_subcommand("train", "train a classifier on a prepared dataset");
    detail::FlagSet train_flags;
    train_flags.add_common(train_cmd);
    train_flags.add_model(train_cmd);
    train_flags.add_train(train_cmd);
    train_flags.add(train_cmd,
                    train_cmd->add_option("--data", train_flags.staged.data_dir,
                                          "prepared dataset directory"),
                    [&train_flags](RunConfig& c) { c.data_dir = train_flags.staged.data_dir; });

    // evaluate
    auto* eval_cmd = app.add_subcommand("evaluate", "score a checkpoint on a split");
    detail::FlagSet eval_flags;
    eval_flags.add_common(eval_cmd);
    eval_flags.add(eval_cmd,
                   eval_cmd->add_option("--checkpoint", eval_flags.staged.checkpoint,
                                        "trained model checkpoint"),
                   [&eval_flags](RunConfig& c) { c.checkpoint = eval_flags.staged.checkpoint; });
    eval_flags.add(eval_cmd,
                   eval_cmd->add_option("--data", eval_flags.staged.data_dir,
                                        "prepared dataset directory"),
                   [&eval_flags](RunConfig& c) { c.data_dir = eval_flags.staged.data_dir; });
    eval_flags.add(eval_cmd,
                   eval_cmd->add_option("--split", eval_flags.staged.eval_split,
                                        "train | validation | test")
                       ->check(CLI::IsMember({"train", "validation", "test"})),
                   [&eval_flags](RunConfig& c) { c.eval_split = eval_flags.staged.eval_split; });

    // predict
    auto* predict_cmd = app.add_subcommand("predict", "top-3 genres for one record");
    std::string predict_checkpoint;
    std::string predict_text;
    std::string predict_image;
    predict_cmd->add_option("--checkpoint", predict_checkpoint, "trained model checkpoint");
    auto* text_opt = predict_cmd->add_option("--text", predict_text, "description text");
    auto* image_opt = predict_cmd->add_option("--image", predict_image, "cover image file");

    // synth
    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic corpus");
    detail::FlagSet synth_flags;
    synth_flags.add_common(synth_cmd);
    synth_flags.add(synth_cmd,
                    synth_cmd->add_option("--n", synth_flags.staged.synth_count, "record count"),
                    [&synth_flags](RunConfig& c) { c.synth_count = synth_flags.staged.synth_count; });
    synth_flags.add(synth_cmd,
                    synth_cmd->add_option("--num-genres", synth_flags.staged.synth_genres,
                                          "genres to draw from (first N canonical)"),
                    [&synth_flags](RunConfig& c) { c.synth_genres = synth_flags.staged.synth_genres; });
    synth_flags.add(synth_cmd,
                    synth_cmd->add_option("--p-text", synth_flags.staged.p_text,
                                          "probability the text signal matches the label"),
                    [&synth_flags](RunConfig& c) { c.p_text = synth_flags.staged.p_text; });
    synth_flags.add(synth_cmd,
                    synth_cmd->add_option("--p-img", synth_flags.staged.p_img,
                                          "probability the image signal matches the label"),
                    [&synth_flags](RunConfig& c) { c.p_img = synth_flags.staged.p_img; });
    synth_flags.add(synth_cmd,
                    synth_cmd->add_option("--image-size", synth_flags.staged.image_size,
                                          "cover image side length"),
                    [&synth_flags](RunConfig& c) { c.image_size = synth_flags.staged.image_size; });
    synth_flags.add(synth_cmd,
                    synth_cmd->add_option("--signal", synth_flags.staged.synth_signal,
                                          "full | complementary")
                        ->check(CLI::IsMember({"full", "complementary"})),
                    [&synth_flags](RunConfig& c) { c.synth_signal = synth_flags.staged.synth_signal; });

    std::vector<const char*> argv;
    argv.push_back("genrefusion");
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        std::ostringstream help_out, help_err;
        const int code = app.exit(e, help_out, help_err);
        out << help_out.str();
        err << help_err.str();
        return code;
    }

    try {
        if (prepare->parsed()) return cmd_prepare(prepare_flags.resolve(), out);
        if (train_cmd->parsed()) return cmd_train(train_flags.resolve(), out);
        if (eval_cmd->parsed()) return cmd_evaluate(eval_flags.resolve(), out);
        if (predict_cmd->parsed()) {
            std::optional<std::string> text, image;
            if (text_opt->count() > 0) text = predict_text;
            if (image_opt->count() > 0) image = predict_image;
            return cmd_predict(predict_checkpoint, text, image, out);
        }
        if (synth_cmd->parsed()) return cmd_synth(synth_flags.resolve(), out);
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    err << "error: no command given\n";
    return 1;
}

}  // namespace genrefusion::cli
