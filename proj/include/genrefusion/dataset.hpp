#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "genrefusion/errors.hpp"
#include "genrefusion/genres.hpp"
#include "genrefusion/image.hpp"
#include "genrefusion/rng.hpp"

namespace genrefusion {

struct GameRecord {
    std::string id;
    std::string title;
    std::string description;
    std::string cover_path;  // as written in the manifest, relative to its directory
    std::vector<std::string> raw_genres;
    std::optional<int> resolved_genre;
};

// ---------------------------------------------------------------------------
// Manifest: one JSON record per line with fields id, title, description,
// genres (list), cover_path. Validation is eager and reports every bad row.
// ---------------------------------------------------------------------------
inline std::vector<GameRecord> read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read manifest: " + path.string());
    std::vector<GameRecord> records;
    std::vector<std::string> problems;
    std::set<std::string> seen_ids;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::string where = "line " + std::to_string(line_no);
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) {
            problems.push_back(where + ": not a JSON object");
            continue;
        }
        GameRecord rec;
        bool ok = true;
        for (const char* field : {"id", "title", "description", "cover_path"}) {
            if (!j.contains(field) || !j[field].is_string()) {
                problems.push_back(where + ": missing string field '" + field + "'");
                ok = false;
            }
        }
        if (!j.contains("genres") || !j["genres"].is_array() || j["genres"].empty()) {
            problems.push_back(where + ": 'genres' must be a nonempty list");
            ok = false;
        }
        if (!ok) continue;
        rec.id = j["id"].get<std::string>();
        rec.title = j["title"].get<std::string>();
        rec.description = j["description"].get<std::string>();
        rec.cover_path = j["cover_path"].get<std::string>();
        for (const auto& g : j["genres"]) {
            if (!g.is_string()) {
                problems.push_back(where + ": genre entries must be strings");
                ok = false;
                break;
            }
            rec.raw_genres.push_back(g.get<std::string>());
        }
        if (!ok) continue;
        if (!seen_ids.insert(rec.id).second) {
            problems.push_back(where + ": duplicate record id '" + rec.id + "'");
            continue;
        }
        records.push_back(std::move(rec));
    }
    if (!problems.empty()) {
        std::string msg = "manifest " + path.string() + " has " +
                          std::to_string(problems.size()) + " bad row(s):";
        for (const auto& p : problems) msg += "\n  " + p;
        throw FormatError(msg);
    }
    return records;
}

inline void write_manifest(const std::filesystem::path& path,
                           const std::vector<GameRecord>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write manifest: " + path.string());
    for (const auto& rec : records) {
        nlohmann::json j;
        j["id"] = rec.id;
        j["title"] = rec.title;
        j["description"] = rec.description;
        j["cover_path"] = rec.cover_path;
        j["genres"] = rec.raw_genres;
        out << j.dump() << "\n";
    }
}

// ---------------------------------------------------------------------------
// Single-label resolution: canonicalize, deduplicate, then pick uniformly
// with an rng salted by the record id, so the outcome is independent of
// processing order.
// ---------------------------------------------------------------------------
inline int resolve_single_genre(const GameRecord& record, const GenreMap& map,
                                std::uint64_t seed) {
    if (record.raw_genres.empty()) {
        throw ContractError("record '" + record.id + "' has no genres");
    }
    std::set<int> canonical;
    std::vector<std::string> unknown;
    for (const auto& raw : record.raw_genres) {
        if (map.known(raw)) {
            canonical.insert(map.canonicalize(raw));
        } else {
            unknown.push_back(raw);
        }
    }
    if (canonical.empty()) {
        std::string msg = "record '" + record.id + "': no known genres among {";
        for (std::size_t i = 0; i < unknown.size(); ++i) {
            msg += (i ? ", '" : "'") + unknown[i] + "'";
        }
        throw GenreError(msg + "}");
    }
    std::vector<int> choices(canonical.begin(), canonical.end());
    Rng rng(mix_seed(seed, fnv1a(record.id)));
    return choices[rng.below(choices.size())];
}

// ---------------------------------------------------------------------------
// 70/10/20 split by position after a seeded shuffle. Bucket sizes are the
// rounded proportions (train, validation), remainder to test, which keeps
// every bucket within one record of exact for all n >= 10.
// ---------------------------------------------------------------------------
struct DatasetSplit {
    std::vector<std::string> train;
    std::vector<std::string> validation;
    std::vector<std::string> test;
    std::uint64_t seed = 0;
};

inline DatasetSplit split_records(const std::vector<std::string>& ids, std::uint64_t seed) {
    const std::size_t n = ids.size();
    if (n < 10) {
        throw ContractError("split: need at least 10 records, got " + std::to_string(n));
    }
    std::vector<std::string> shuffled = ids;
    Rng rng(mix_seed(seed, fnv1a("split")));
    rng.shuffle(shuffled);
    const auto n_train = static_cast<std::size_t>(std::llround(0.70 * static_cast<double>(n)));
    const auto n_val = static_cast<std::size_t>(std::llround(0.10 * static_cast<double>(n)));
    DatasetSplit split;
    split.seed = seed;
    split.train.assign(shuffled.begin(), shuffled.begin() + n_train);
    split.validation.assign(shuffled.begin() + n_train, shuffled.begin() + n_train + n_val);
    split.test.assign(shuffled.begin() + n_train + n_val, shuffled.end());
    return split;
}

// Per-genre 70/10/20 split behind the stratify flag; each genre's records
// are shuffled and partitioned independently, then concatenated in genre
// order.
inline DatasetSplit split_records_stratified(const std::vector<std::string>& ids,
                                             const std::vector<int>& labels,
                                             std::uint64_t seed) {
    if (ids.size() != labels.size()) {
        throw ContractError("stratified split: ids and labels differ in length");
    }
    if (ids.size() < 10) {
        throw ContractError("split: need at least 10 records, got " + std::to_string(ids.size()));
    }
    std::map<int, std::vector<std::string>> groups;
    for (std::size_t i = 0; i < ids.size(); ++i) groups[labels[i]].push_back(ids[i]);
    DatasetSplit out;
    out.seed = seed;
    for (auto& [genre, members] : groups) {
        Rng rng(mix_seed(seed, fnv1a("stratified") ^ static_cast<std::uint64_t>(genre)));
        rng.shuffle(members);
        const std::size_t n = members.size();
        const auto n_train = static_cast<std::size_t>(std::llround(0.70 * static_cast<double>(n)));
        const auto n_val = static_cast<std::size_t>(std::llround(0.10 * static_cast<double>(n)));
        out.train.insert(out.train.end(), members.begin(), members.begin() + n_train);
        out.validation.insert(out.validation.end(), members.begin() + n_train,
                              members.begin() + n_train + n_val);
        out.test.insert(out.test.end(), members.begin() + n_train + n_val, members.end());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic verification corpus. Every genre gets a distinctive keyword set
// and a distinctive cover motif (palette color + shape). A signal matches the
// record's genre with probability p; otherwise a uniformly random *wrong*
// genre is used, so p = 1/num_genres makes the signal exactly uniform over
// all genres, i.e. carries zero information about the label.
//
// signal = full:          keywords and motif are both keyed by the genre.
// signal = complementary: keywords are keyed by g mod T, the motif by
//                         g div T (T ~ sqrt(num_genres)); either modality
//                         alone pins the genre only down to a group.
// ---------------------------------------------------------------------------
enum class SyntheticSignal { full, complementary };

struct SyntheticOptions {
    std::size_t count = 150;
    int num_genres = 15;  // uses the first num_genres canonical genres
    double p_text = 1.0;
    double p_img = 1.0;
    std::uint64_t seed = 0;
    std::size_t image_size = 32;
    SyntheticSignal signal = SyntheticSignal::full;
};

namespace detail {

inline const std::vector<std::vector<std::string>>& synthetic_keyword_sets() {
    static const std::vector<std::vector<std::string>> sets = {
        {"grapple", "cavern", "lantern"},  {"joystick", "cabinet", "token"},
        {"uppercut", "dojo", "combo"},     {"quirky", "handcrafted", "lofi"},
        {"melody", "rhythm", "chorus"},    {"plunger", "flipper", "bumper"},
        {"ledge", "springboard", "vault"}, {"riddle", "cipher", "tangram"},
        {"buzzer", "trivia", "quizmaster"},{"turbo", "drift", "lap"},
        {"quest", "mana", "guild"},        {"recoil", "ammo", "crosshair"},
        {"throttle", "cockpit", "hangar"}, {"penalty", "stadium", "referee"},
        {"garrison", "supply", "siege"},
    };
    return sets;
}

inline const std::vector<std::string>& synthetic_filler_words() {
    static const std::vector<std::string> words = {
        "the",  "a",    "of",   "in",    "you",  "game", "play", "world",
        "level", "new",  "with", "and",   "to",   "for",  "your", "this",
        "that", "can",  "will", "all",    "more", "one",  "time", "fun",
        "mode", "score", "win",  "best",  "top",  "every",
    };
    return words;
}

inline const std::vector<std::array<unsigned char, 3>>& synthetic_palette() {
    static const std::vector<std::array<unsigned char, 3>> colors = {
        {230, 25, 75},  {60, 180, 75},   {255, 225, 25}, {0, 130, 200},  {245, 130, 48},
        {145, 30, 180}, {70, 240, 240},  {240, 50, 230}, {210, 245, 60}, {250, 190, 212},
        {0, 128, 128},  {220, 190, 255}, {170, 110, 40}, {128, 128, 0},  {0, 0, 128},
    };
    return colors;
}

inline Image render_motif(int motif, std::size_t size, Rng& rng) {
    Image img = Image::blank(size, size);
    // noisy dark background so images are not trivially constant
    for (double& v : img.rgb) v = static_cast<double>(rng.below(48));
    const auto& palette = synthetic_palette();
    const auto color = palette[static_cast<std::size_t>(motif) % palette.size()];
    const int shape = motif % 3;
    const double cx = static_cast<double>(size - 1) / 2.0;
    const double cy = cx;
    const double r = 0.36 * static_cast<double>(size);
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            const double dx = static_cast<double>(x) - cx;
            const double dy = static_cast<double>(y) - cy;
            bool inside = false;
            if (shape == 0) {  // disc
                inside = dx * dx + dy * dy <= r * r;
            } else if (shape == 1) {  // square
                inside = std::abs(dx) <= r * 0.9 && std::abs(dy) <= r * 0.9;
            } else {  // upward triangle
                inside = dy >= -r && dy <= r && std::abs(dx) <= (dy + r) * 0.6;
            }
            if (inside) {
                for (std::size_t c = 0; c < 3; ++c) {
                    img.at(y, x, c) = static_cast<double>(color[c]);
                }
            }
        }
    }
    return img;
}

// g itself in full mode; (keyword group, motif group) in complementary mode.
inline std::pair<int, int> signal_indices(int genre, int num_genres, SyntheticSignal mode) {
    if (mode == SyntheticSignal::full) return {genre, genre};
    int t = static_cast<int>(std::lround(std::sqrt(static_cast<double>(num_genres))));
    t = std::max(2, t);
    return {genre % t, genre / t};
}

// Draw the signal index: correct with probability p, otherwise uniform over
// the wrong ones.
inline int noisy_signal(int correct, int domain, double p, Rng& rng) {
    if (domain <= 1 || rng.bernoulli(p)) return correct;
    int wrong = static_cast<int>(rng.below(static_cast<std::size_t>(domain - 1)));
    if (wrong >= correct) ++wrong;
    return wrong;
}

}  // namespace detail

// Generates `count` records balanced over the first `num_genres` canonical
// genres, writes one PPM cover per record under out_dir/images/, and returns
// the records with cover paths relative to out_dir.
inline std::vector<GameRecord> generate_synthetic(const SyntheticOptions& opt,
                                                  const std::filesystem::path& out_dir) {
    if (opt.num_genres < 1 || static_cast<std::size_t>(opt.num_genres) > GenreMap::kNumGenres) {
        throw ContractError("synthetic: num_genres must be in [1, 15]");
    }
    if (opt.count < static_cast<std::size_t>(opt.num_genres)) {
        throw ContractError("synthetic: need at least one record per genre");
    }
    std::error_code ec;
    std::filesystem::create_directories(out_dir / "images", ec);
    if (ec) throw IoError("cannot create output directory: " + (out_dir / "images").string());

    const auto& genre_names = GenreMap::canonical_genres();
    const auto& keyword_sets = detail::synthetic_keyword_sets();
    const auto& fillers = detail::synthetic_filler_words();

    // Signal group counts for the noisy draw.
    int text_domain = opt.num_genres, img_domain = opt.num_genres;
    if (opt.signal == SyntheticSignal::complementary) {
        int t = std::max(2, static_cast<int>(std::lround(
                                std::sqrt(static_cast<double>(opt.num_genres)))));
        text_domain = t;
        img_domain = (opt.num_genres + t - 1) / t;
    }

    std::vector<GameRecord> records;
    records.reserve(opt.count);
    for (std::size_t i = 0; i < opt.count; ++i) {
        const int genre = static_cast<int>(i % static_cast<std::size_t>(opt.num_genres));
        char idbuf[32];
        std::snprintf(idbuf, sizeof(idbuf), "synth-%06zu", i);
        GameRecord rec;
        rec.id = idbuf;
        rec.title = "synthetic game " + std::to_string(i);
        rec.raw_genres = {genre_names[static_cast<std::size_t>(genre)]};

        Rng rng(mix_seed(opt.seed, fnv1a(rec.id)));
        const auto [kw_correct, motif_correct] =
            detail::signal_indices(genre, opt.num_genres, opt.signal);
        const int kw = detail::noisy_signal(kw_correct, text_domain, opt.p_text, rng);
        const int motif = detail::noisy_signal(motif_correct, img_domain, opt.p_img, rng);

        // Filler text with the keyword triple of the drawn signal spliced in,
        // plus one once-only token so encode() exercises the UNK path.
        std::vector<std::string> words;
        const std::size_t n_fill = 8 + rng.below(5);
        for (std::size_t wi = 0; wi < n_fill; ++wi) {
            words.push_back(fillers[rng.below(fillers.size())]);
        }
        for (const auto& keyword : keyword_sets[static_cast<std::size_t>(kw)]) {
            words.insert(words.begin() + static_cast<long>(rng.below(words.size() + 1)), keyword);
        }
        words.push_back("oddity" + std::to_string(i));
        for (std::size_t wi = 0; wi < words.size(); ++wi) {
            if (wi) rec.description += " ";
            rec.description += words[wi];
        }

        const std::string image_rel = "images/" + rec.id + ".ppm";
        write_ppm(out_dir / image_rel, detail::render_motif(motif, opt.image_size, rng));
        rec.cover_path = image_rel;
        records.push_back(std::move(rec));
    }
    return records;
}

}  // namespace genrefusion
