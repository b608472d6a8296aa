#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "genrefusion/errors.hpp"

namespace genrefusion {

// Case- and punctuation-insensitive key: lowercase, non-alphanumeric runs
// collapse to a single space, trimmed. "Hack and slash/Beat'em up" and
// "hack And Slash beat em UP" map to the same key.
inline std::string normalize_genre_key(std::string_view raw) {
    std::string key;
    bool pending_space = false;
    for (unsigned char c : raw) {
        const bool alnum = (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') ||
                           (c >= 'A' && c <= 'Z');
        if (alnum) {
            if (pending_space && !key.empty()) key.push_back(' ');
            pending_space = false;
            key.push_back(static_cast<char>((c >= 'A' && c <= 'Z') ? c - 'A' + 'a' : c));
        } else {
            pending_space = true;
        }
    }
    return key;
}

// The fixed 15-genre label space. Canonical order is alphabetical and index
// i is stable across runs; it drives confusion-matrix axes and report rows.
class GenreMap {
public:
    static const std::vector<std::string>& canonical_genres() {
        static const std::vector<std::string> names = {
            "Adventure", "Arcade",      "Fighting", "Indie",     "Music",
            "Pinball",   "Platform",    "Puzzle",   "Quiz/Trivia", "Racing",
            "Role-Playing", "Shooter",  "Simulator", "Sport",    "Strategy",
        };
        return names;
    }

    static constexpr std::size_t kNumGenres = 15;

    // Identity aliases for the 15 canonical genres plus the two sub-genre
    // merges the source data is known to need.
    static GenreMap with_defaults() {
        GenreMap map;
        const auto& names = canonical_genres();
        for (std::size_t i = 0; i < names.size(); ++i) {
            map.aliases_[normalize_genre_key(names[i])] = static_cast<int>(i);
        }
        map.add_alias("Real Time Strategy", "Strategy");
        map.add_alias("Hack and slash/Beat'em up", "Fighting");
        return map;
    }

    // Defaults plus user-supplied aliases from a two-column tab-separated
    // file: raw<TAB>canonical, '#' comments allowed.
    static GenreMap load(const std::filesystem::path& alias_file) {
        GenreMap map = with_defaults();
        std::ifstream in(alias_file, std::ios::binary);
        if (!in) throw IoError("cannot read genre alias table: " + alias_file.string());
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty() || line[0] == '#') continue;
            const auto tab = line.find('\t');
            if (tab == std::string::npos) {
                throw FormatError("genre alias table line " + std::to_string(line_no) +
                                  ": expected raw<TAB>canonical");
            }
            map.add_alias(line.substr(0, tab), line.substr(tab + 1));
        }
        return map;
    }

    void add_alias(const std::string& raw, const std::string& canonical) {
        const std::string canon_key = normalize_genre_key(canonical);
        const auto& names = canonical_genres();
        int target = -1;
        for (std::size_t i = 0; i < names.size(); ++i) {
            if (normalize_genre_key(names[i]) == canon_key) {
                target = static_cast<int>(i);
                break;
            }
        }
        if (target < 0) {
            throw ConfigError("genre alias target is not a canonical genre: '" + canonical + "'");
        }
        aliases_[normalize_genre_key(raw)] = target;
    }

    // Unknown raw genres are an error, never silently dropped.
    int canonicalize(const std::string& raw) const {
        auto it = aliases_.find(normalize_genre_key(raw));
        if (it == aliases_.end()) {
            throw GenreError("unknown genre: '" + raw + "'");
        }
        return it->second;
    }

    bool known(const std::string& raw) const {
        return aliases_.count(normalize_genre_key(raw)) > 0;
    }

    const std::string& name(int index) const {
        if (index < 0 || static_cast<std::size_t>(index) >= kNumGenres) {
            throw LabelError("genre index out of range: " + std::to_string(index));
        }
        return canonical_genres()[static_cast<std::size_t>(index)];
    }

    std::size_t num_genres() const { return kNumGenres; }

private:
    GenreMap() = default;
    std::map<std::string, int> aliases_;
};

}  // namespace genrefusion
