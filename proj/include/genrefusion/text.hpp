#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "genrefusion/errors.hpp"

namespace genrefusion {

// Lowercase + split on maximal runs of non-token characters. ASCII
// alphanumerics are token characters; bytes >= 0x80 are kept so non-ASCII
// words survive as byte runs.
inline std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string cur;
    for (unsigned char c : text) {
        const bool token_char = (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') ||
                                (c >= 'A' && c <= 'Z') || c >= 0x80;
        if (token_char) {
            cur.push_back(static_cast<char>((c >= 'A' && c <= 'Z') ? c - 'A' + 'a' : c));
        } else if (!cur.empty()) {
            tokens.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) tokens.push_back(std::move(cur));
    return tokens;
}

class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;

    // Tokens with corpus frequency >= min_count get ids from 2 upward, in
    // descending frequency order with lexicographic tie-break, so rebuilding
    // on the same corpus always yields the same assignment.
    static Vocabulary build(const std::vector<std::string>& corpus, int min_count) {
        if (min_count < 1) throw ContractError("build_vocab: min_count must be >= 1");
        std::unordered_map<std::string, std::int64_t> freq;
        for (const auto& text : corpus) {
            for (auto& tok : tokenize(text)) ++freq[tok];
        }
        std::vector<std::pair<std::string, std::int64_t>> kept;
        for (auto& [tok, n] : freq) {
            if (n >= min_count) kept.emplace_back(tok, n);
        }
        std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
        Vocabulary v;
        v.min_count_ = min_count;
        for (auto& [tok, n] : kept) {
            v.ids_.emplace(tok, static_cast<int>(v.tokens_.size()));
            v.tokens_.push_back(tok);
        }
        return v;
    }

    int id_of(const std::string& token) const {
        auto it = ids_.find(token);
        return it == ids_.end() ? kUnk : it->second;
    }

    bool contains(const std::string& token) const { return ids_.count(token) > 0; }

    // Total id count including PAD and UNK.
    std::size_t size() const { return tokens_.size(); }
    int min_count() const { return min_count_; }

    // All tokens in id order; indices 0/1 are the reserved pad/unk markers.
    const std::vector<std::string>& tokens() const { return tokens_; }

    void save_stream(std::ostream& out) const {
        out << "genrefusion-vocab 1\n";
        out << "min_count " << min_count_ << "\n";
        out << "size " << size() << "\n";
        for (std::size_t id = 2; id < tokens_.size(); ++id) out << tokens_[id] << "\n";
    }

    void save(const std::filesystem::path& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("cannot write vocabulary file: " + path.string());
        save_stream(out);
    }

    static Vocabulary load_stream(std::istream& in, const std::string& origin) {
        std::string line;
        if (!std::getline(in, line) || line != "genrefusion-vocab 1") {
            throw FormatError("not a vocabulary file: " + origin);
        }
        Vocabulary v;
        if (!std::getline(in, line) || line.rfind("min_count ", 0) != 0) {
            throw FormatError("vocabulary file missing min_count: " + origin);
        }
        v.min_count_ = std::stoi(line.substr(10));
        if (!std::getline(in, line) || line.rfind("size ", 0) != 0) {
            throw FormatError("vocabulary file missing size: " + origin);
        }
        const auto declared = static_cast<std::size_t>(std::stoull(line.substr(5)));
        while (v.size() < declared && std::getline(in, line)) {
            if (line.empty()) continue;
            v.ids_.emplace(line, static_cast<int>(v.tokens_.size()));
            v.tokens_.push_back(line);
        }
        if (v.size() != declared) {
            throw FormatError("vocabulary file token count does not match header: " + origin);
        }
        return v;
    }

    static Vocabulary load(const std::filesystem::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot read vocabulary file: " + path.string());
        return load_stream(in, path.string());
    }

    bool operator==(const Vocabulary& other) const {
        return min_count_ == other.min_count_ && tokens_ == other.tokens_;
    }

private:
    Vocabulary() : tokens_{"<pad>", "<unk>"} {
        ids_.emplace("<pad>", kPad);
        ids_.emplace("<unk>", kUnk);
    }

    std::unordered_map<std::string, int> ids_;
    std::vector<std::string> tokens_;  // index == id; 0/1 are the reserved markers
    int min_count_ = 1;
};

struct EncodedText {
    std::vector<int> ids;         // exactly max_len entries, PAD beyond true_length
    std::size_t true_length = 0;  // count of non-pad positions
};

inline EncodedText encode(std::string_view text, const Vocabulary& vocab, std::size_t max_len) {
    if (max_len == 0) throw ContractError("encode: max_len must be positive");
    EncodedText enc;
    enc.ids.assign(max_len, Vocabulary::kPad);
    const auto tokens = tokenize(text);
    enc.true_length = std::min(tokens.size(), max_len);
    for (std::size_t i = 0; i < enc.true_length; ++i) {
        enc.ids[i] = vocab.id_of(tokens[i]);
    }
    return enc;
}

}  // namespace genrefusion
