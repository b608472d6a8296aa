#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "genrefusion/config.hpp"
#include "genrefusion/dataset.hpp"
#include "genrefusion/errors.hpp"
#include "genrefusion/genres.hpp"
#include "genrefusion/image.hpp"
#include "genrefusion/models.hpp"
#include "genrefusion/text.hpp"

namespace genrefusion {

// ---------------------------------------------------------------------------
// PreparedDataset: the output of `prepare`: records with resolved genres,
// the split, and the vocabulary built from the train split only.
// ---------------------------------------------------------------------------
struct PreparedDataset {
    RunConfig config;
    std::vector<GameRecord> records;  // resolved_genre filled in
    DatasetSplit split;
    Vocabulary vocab = Vocabulary::build({}, 1);
    std::filesystem::path manifest_dir;  // cover paths resolve against this

    std::map<std::string, std::size_t> index_by_id() const {
        std::map<std::string, std::size_t> idx;
        for (std::size_t i = 0; i < records.size(); ++i) idx[records[i].id] = i;
        return idx;
    }

    const std::vector<std::string>& split_ids(const std::string& name) const {
        if (name == "train") return split.train;
        if (name == "validation") return split.validation;
        if (name == "test") return split.test;
        throw ConfigError("unknown split name: '" + name + "'");
    }
};

// Runs the whole preparation pipeline in memory: manifest ingest, genre
// resolution, split, vocabulary from the train split.
inline PreparedDataset prepare_dataset(const RunConfig& cfg) {
    if (cfg.manifest.empty()) throw UsageError("prepare: manifest path required");
    PreparedDataset prep;
    prep.config = cfg;
    prep.manifest_dir = std::filesystem::path(cfg.manifest).parent_path();
    prep.records = read_manifest(cfg.manifest);

    const GenreMap genre_map =
        cfg.alias_table.empty() ? GenreMap::with_defaults() : GenreMap::load(cfg.alias_table);

    // Resolve every record before failing so the error lists all offenders.
    std::vector<std::string> failures;
    for (auto& rec : prep.records) {
        try {
            rec.resolved_genre = resolve_single_genre(rec, genre_map, cfg.seed);
        } catch (const GenreError& e) {
            failures.push_back(e.what());
        }
    }
    if (!failures.empty()) {
        std::string msg = std::to_string(failures.size()) + " record(s) with unknown genres:";
        for (const auto& f : failures) msg += "\n  " + f;
        throw GenreError(msg);
    }

    std::vector<std::string> ids;
    std::vector<int> labels;
    for (const auto& rec : prep.records) {
        ids.push_back(rec.id);
        labels.push_back(*rec.resolved_genre);
    }
    prep.split = cfg.stratify ? split_records_stratified(ids, labels, cfg.seed)
                              : split_records(ids, cfg.seed);

    const auto index = prep.index_by_id();
    std::vector<std::string> train_texts;
    for (const auto& id : prep.split.train) {
        const auto& rec = prep.records[index.at(id)];
        train_texts.push_back(cfg.use_title ? rec.title + " " + rec.description
                                            : rec.description);
    }
    prep.vocab = Vocabulary::build(train_texts, cfg.min_count);
    return prep;
}

inline void write_id_list(const std::filesystem::path& path,
                          const std::vector<std::string>& ids) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write split file: " + path.string());
    for (const auto& id : ids) out << id << "\n";
}

inline std::vector<std::string> read_id_list(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read split file: " + path.string());
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) ids.push_back(line);
    }
    return ids;
}

// Writes split listings, label assignments, vocabulary, preparation report,
// and the resolved config into out_dir.
inline void write_prepared(const PreparedDataset& prep, const std::filesystem::path& out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create output directory: " + out_dir.string());

    write_id_list(out_dir / "split_train.txt", prep.split.train);
    write_id_list(out_dir / "split_validation.txt", prep.split.validation);
    write_id_list(out_dir / "split_test.txt", prep.split.test);
    prep.vocab.save(out_dir / "vocab.txt");

    {
        std::ofstream out(out_dir / "labels.tsv", std::ios::binary);
        if (!out) throw IoError("cannot write labels file: " + (out_dir / "labels.tsv").string());
        for (const auto& rec : prep.records) {
            out << rec.id << "\t" << *rec.resolved_genre << "\n";
        }
    }

    prep.config.write(out_dir / "config.txt");

    nlohmann::json report;
    report["config"] = prep.config.to_map();
    report["records"] = prep.records.size();
    // unknown genres abort the run before this point, so a written report
    // always carries an empty failure list
    report["unknown_genre_failures"] = nlohmann::json::array();
    report["split"] = {{"train", prep.split.train.size()},
                       {"validation", prep.split.validation.size()},
                       {"test", prep.split.test.size()}};
    report["vocabulary_size"] = prep.vocab.size();
    nlohmann::json histogram = nlohmann::json::object();
    {
        std::vector<std::int64_t> counts(GenreMap::kNumGenres, 0);
        for (const auto& rec : prep.records) ++counts[static_cast<std::size_t>(*rec.resolved_genre)];
        const auto& names = GenreMap::canonical_genres();
        for (std::size_t g = 0; g < names.size(); ++g) histogram[names[g]] = counts[g];
    }
    report["genre_histogram"] = histogram;
    std::ofstream out(out_dir / "prep_report.json", std::ios::binary);
    if (!out) throw IoError("cannot write report: " + (out_dir / "prep_report.json").string());
    out << report.dump(2) << "\n";
}

inline PreparedDataset load_prepared(const std::filesystem::path& dir) {
    PreparedDataset prep;
    prep.config.apply_file(dir / "config.txt");
    if (prep.config.manifest.empty()) {
        throw FormatError("prepared config has no manifest path: " + dir.string());
    }
    prep.manifest_dir = std::filesystem::path(prep.config.manifest).parent_path();
    prep.records = read_manifest(prep.config.manifest);
    auto index = prep.index_by_id();

    std::ifstream labels(dir / "labels.tsv", std::ios::binary);
    if (!labels) throw IoError("cannot read labels file: " + (dir / "labels.tsv").string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(labels, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw FormatError("labels.tsv line " + std::to_string(line_no) + ": expected id<TAB>genre");
        }
        const std::string id = line.substr(0, tab);
        auto it = index.find(id);
        if (it == index.end()) {
            throw CompatibilityError("labels.tsv references unknown record '" + id +
                                     "'; manifest and prepared data are out of sync");
        }
        prep.records[it->second].resolved_genre = std::stoi(line.substr(tab + 1));
    }
    for (const auto& rec : prep.records) {
        if (!rec.resolved_genre) {
            throw CompatibilityError("record '" + rec.id + "' has no label in prepared data");
        }
    }

    prep.split.seed = prep.config.seed;
    prep.split.train = read_id_list(dir / "split_train.txt");
    prep.split.validation = read_id_list(dir / "split_validation.txt");
    prep.split.test = read_id_list(dir / "split_test.txt");
    prep.vocab = Vocabulary::load(dir / "vocab.txt");
    return prep;
}

// ---------------------------------------------------------------------------
// ExampleSet: a split materialized for the model: encoded text, normalized
// image tensors, labels, all aligned by index.
// ---------------------------------------------------------------------------
struct ExampleSet {
    std::vector<std::string> ids;
    std::vector<EncodedText> text;
    std::vector<Tensor> images;  // each [3xSxS]; empty when images are unused
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
};

// Encodes and loads a split under the *caller's* config (max_len, image
// size, use_title may differ from the prepare run); the vocabulary always
// comes from the prepared dataset.
inline ExampleSet materialize(const PreparedDataset& prep, const std::vector<std::string>& ids,
                              Modality modality, const RunConfig& cfg) {
    const auto index = prep.index_by_id();
    ExampleSet set;
    set.ids = ids;
    for (const auto& id : ids) {
        auto it = index.find(id);
        if (it == index.end()) {
            throw CompatibilityError("split references unknown record '" + id + "'");
        }
        const GameRecord& rec = prep.records[it->second];
        set.labels.push_back(*rec.resolved_genre);
        if (modality != Modality::image) {
            const std::string text_input =
                cfg.use_title ? rec.title + " " + rec.description : rec.description;
            set.text.push_back(encode(text_input, prep.vocab, cfg.max_len));
        }
        if (modality != Modality::text) {
            std::filesystem::path cover(rec.cover_path);
            if (cover.is_relative()) cover = prep.manifest_dir / cover;
            set.images.push_back(load_image_tensor(cover, cfg.image_size));
        }
    }
    return set;
}

// Model geometry is derived from the run config plus the vocabulary size, so
// a checkpoint's embedded config fully determines its architecture.
inline ClassifierConfig classifier_config_from(const RunConfig& cfg, std::size_t vocab_size) {
    ClassifierConfig mc;
    mc.modality = modality_from_string(cfg.modality);
    mc.text.vocab_size = std::max<std::size_t>(vocab_size, 2);
    mc.text.embed_dim = cfg.embed_dim;
    mc.text.hidden = cfg.lstm_hidden;
    mc.image.image_size = cfg.image_size;
    mc.image.conv_channels = cfg.conv_channel_list();
    mc.image.feature_dim = cfg.image_feature_dim;
    mc.num_classes = GenreMap::kNumGenres;
    mc.freeze_encoders = cfg.freeze_encoders;
    return mc;
}

// Stack per-example [3xSxS] tensors into one [Bx3xSxS] constant.
inline Tensor stack_images(const std::vector<Tensor>& images, const std::vector<std::size_t>& idx) {
    if (idx.empty()) throw ContractError("stack_images: empty batch");
    const Shape& one = images[idx[0]].shape();
    Tensor out = Tensor::zeros({idx.size(), one[0], one[1], one[2]});
    const std::size_t stride = numel(one);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const Tensor& img = images[idx[i]];
        if (img.shape() != one) {
            throw DimensionError("stack_images: mixed shapes " + shape_str(one) + " vs " +
                                 shape_str(img.shape()));
        }
        std::copy(img.values().begin(), img.values().end(), out.data() + i * stride);
    }
    return out;
}

}  // namespace genrefusion
