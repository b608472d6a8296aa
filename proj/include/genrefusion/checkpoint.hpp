#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "genrefusion/config.hpp"
#include "genrefusion/errors.hpp"
#include "genrefusion/models.hpp"
#include "genrefusion/pipeline.hpp"
#include "genrefusion/text.hpp"

namespace genrefusion {

// Self-describing binary checkpoint: magic/version, the resolved config as
// loadable text, the vocabulary, then every parameter tensor as named raw
// float64 data. Raw doubles make reloaded predictions bitwise identical.
namespace detail {

constexpr char kCheckpointMagic[8] = {'G', 'F', 'C', 'K', 'P', 'T', '1', '\n'};

template <typename T>
void write_pod(std::ostream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::string& origin) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) throw FormatError("truncated checkpoint: " + origin);
    return value;
}

inline void write_blob(std::ostream& out, const std::string& blob) {
    write_pod<std::uint64_t>(out, blob.size());
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
}

inline std::string read_blob(std::istream& in, const std::string& origin) {
    const auto len = read_pod<std::uint64_t>(in, origin);
    std::string blob(len, '\0');
    in.read(blob.data(), static_cast<std::streamsize>(len));
    if (!in) throw FormatError("truncated checkpoint: " + origin);
    return blob;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const RunConfig& config,
                            const Vocabulary& vocab, const GenreClassifier& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint: " + path.string());
    out.write(detail::kCheckpointMagic, sizeof(detail::kCheckpointMagic));
    detail::write_pod<std::uint32_t>(out, 1);
    detail::write_blob(out, config.to_text());
    std::ostringstream vocab_blob;
    vocab.save_stream(vocab_blob);
    detail::write_blob(out, vocab_blob.str());

    const auto params = model.named_parameters();
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, tensor] : params) {
        detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.rank()));
        for (std::size_t d : tensor.shape()) detail::write_pod<std::uint64_t>(out, d);
        out.write(reinterpret_cast<const char*>(tensor.data()),
                  static_cast<std::streamsize>(tensor.size() * sizeof(double)));
    }
    if (!out) throw IoError("cannot write checkpoint: " + path.string());
}

struct Checkpoint {
    RunConfig config;
    Vocabulary vocab = Vocabulary::build({}, 1);
    GenreClassifier model;
};

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read checkpoint: " + path.string());
    const std::string origin = path.string();
    char magic[sizeof(detail::kCheckpointMagic)];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, detail::kCheckpointMagic, sizeof(magic)) != 0) {
        throw FormatError("not a checkpoint file: " + origin);
    }
    const auto version = detail::read_pod<std::uint32_t>(in, origin);
    if (version != 1) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version) + ": " +
                          origin);
    }
    Checkpoint ckpt;
    ckpt.config.apply_text(detail::read_blob(in, origin), origin + " (embedded config)");
    {
        std::istringstream vocab_in(detail::read_blob(in, origin));
        ckpt.vocab = Vocabulary::load_stream(vocab_in, origin + " (embedded vocabulary)");
    }
    ckpt.model = GenreClassifier(classifier_config_from(ckpt.config, ckpt.vocab.size()));

    const auto count = detail::read_pod<std::uint32_t>(in, origin);
    auto params = ckpt.model.named_parameters();
    if (count != params.size()) {
        throw CompatibilityError("checkpoint has " + std::to_string(count) + " tensors, model " +
                                 "expects " + std::to_string(params.size()) + ": " + origin);
    }
    for (auto& [name, tensor] : params) {
        const auto name_len = detail::read_pod<std::uint32_t>(in, origin);
        std::string stored_name(name_len, '\0');
        in.read(stored_name.data(), name_len);
        if (!in || stored_name != name) {
            throw CompatibilityError("checkpoint tensor '" + stored_name + "' does not match '" +
                                     name + "': " + origin);
        }
        const auto rank = detail::read_pod<std::uint32_t>(in, origin);
        Shape shape(rank);
        for (auto& d : shape) d = detail::read_pod<std::uint64_t>(in, origin);
        if (shape != tensor.shape()) {
            throw CompatibilityError("checkpoint tensor '" + name + "' has shape " +
                                     shape_str(shape) + ", model expects " +
                                     shape_str(tensor.shape()) + ": " + origin);
        }
        in.read(reinterpret_cast<char*>(tensor.data()),
                static_cast<std::streamsize>(tensor.size() * sizeof(double)));
        if (!in) throw FormatError("truncated checkpoint: " + origin);
    }
    return ckpt;
}

}  // namespace genrefusion
