#pragma once

// Model manifests (JSON) and the NTZO sidecar weight format:
//
//   "NTZO" | u32 version=1 | u32 tensor count |
//   per tensor: u16 path length, UTF-8 path, u8 rank, u32 dims[rank], f32 data (row-major)
//
// All integers and floats little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "interp/error.hpp"
#include "interp/model.hpp"

namespace interp {

inline constexpr char kWeightsMagic[4] = {'N', 'T', 'Z', 'O'};
inline constexpr std::uint32_t kWeightsVersion = 1;

namespace detail {

class ByteWriter {
public:
    explicit ByteWriter(std::ostream& out) : out_(out) {}

    template <class T>
    void put(T value) {
        static_assert(std::is_integral_v<T>);
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            out_.put(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFFu));
        }
    }
    void put_float(float f) { put(std::bit_cast<std::uint32_t>(f)); }
    void put_bytes(const void* data, std::size_t n) { out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n)); }

private:
    std::ostream& out_;
};

class ByteReader {
public:
    explicit ByteReader(std::istream& in) : in_(in) {}

    template <class T>
    T get() {
        static_assert(std::is_integral_v<T>);
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            const int c = in_.get();
            if (c == EOF) throw Error("bad-weights-file", "truncated");
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
        }
        return static_cast<T>(v);
    }
    float get_float() { return std::bit_cast<float>(get<std::uint32_t>()); }
    std::string get_string(std::size_t n) {
        std::string s(n, '\0');
        in_.read(s.data(), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n) throw Error("bad-weights-file", "truncated");
        return s;
    }
    bool at_end() { return in_.peek() == EOF; }

private:
    std::istream& in_;
};

}  // namespace detail

inline void write_weights(const std::filesystem::path& path, const Model& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("io-error", "cannot write " + path.string());
    detail::ByteWriter w(out);
    w.put_bytes(kWeightsMagic, 4);
    w.put<std::uint32_t>(kWeightsVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(model.weight_table().size()));
    for (const auto& info : model.weight_table()) {
        const Tensor& t = model.weight(info.path);
        w.put<std::uint16_t>(static_cast<std::uint16_t>(info.path.size()));
        w.put_bytes(info.path.data(), info.path.size());
        w.put<std::uint8_t>(static_cast<std::uint8_t>(t.rank()));
        for (std::size_t d : t.shape()) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
        for (float v : t.data()) w.put_float(v);
    }
    if (!out) throw Error("io-error", "short write to " + path.string());
}

inline std::map<std::string, Tensor> read_weights(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("io-error", "cannot open " + path.string());
    detail::ByteReader r(in);
    if (r.get_string(4) != std::string(kWeightsMagic, 4)) throw Error("bad-weights-file", "bad magic");
    if (const auto version = r.get<std::uint32_t>(); version != kWeightsVersion) {
        throw Error("bad-weights-file", "unsupported version " + std::to_string(version));
    }
    const auto count = r.get<std::uint32_t>();
    std::map<std::string, Tensor> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = r.get_string(r.get<std::uint16_t>());
        const auto rank = r.get<std::uint8_t>();
        Shape shape(rank);
        for (auto& d : shape) d = r.get<std::uint32_t>();
        std::vector<float> data(element_count(shape));
        for (auto& v : data) v = r.get_float();
        if (!out.emplace(name, Tensor(std::move(shape), std::move(data))).second) {
            throw Error("bad-weights-file", "duplicate tensor " + name);
        }
    }
    if (!r.at_end()) throw Error("bad-weights-file", "trailing bytes");
    return out;
}

struct ModelManifest {
    std::string dialect;
    ModelDims dims;
    std::uint64_t seed = 42;
    std::optional<std::string> weights_file;
};

inline nlohmann::json dims_to_json(const ModelDims& d) {
    return {{"vocab_size", d.vocab_size}, {"d_model", d.d_model}, {"n_heads", d.n_heads},
            {"n_layers", d.n_layers},     {"d_ff", d.d_ff},       {"max_seq_len", d.max_seq_len}};
}

inline ModelManifest parse_manifest(const nlohmann::json& j) {
    try {
        ModelManifest m;
        m.dialect = j.at("dialect").get<std::string>();
        const auto& d = j.at("dims");
        m.dims.vocab_size = d.at("vocab_size").get<std::size_t>();
        m.dims.d_model = d.value("d_model", m.dims.d_model);
        m.dims.n_heads = d.value("n_heads", m.dims.n_heads);
        m.dims.n_layers = d.value("n_layers", m.dims.n_layers);
        m.dims.d_ff = d.value("d_ff", m.dims.d_ff);
        m.dims.max_seq_len = d.value("max_seq_len", m.dims.max_seq_len);
        m.seed = j.value("seed", m.seed);
        if (j.contains("weights_file") && !j.at("weights_file").is_null()) {
            m.weights_file = j.at("weights_file").get<std::string>();
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw Error("bad-manifest", e.what());
    }
}

inline nlohmann::json manifest_to_json(const ModelManifest& m) {
    nlohmann::json j = {{"dialect", m.dialect}, {"dims", dims_to_json(m.dims)}, {"seed", m.seed}};
    if (m.weights_file) j["weights_file"] = *m.weights_file;
    return j;
}

/// Loads a manifest; a relative weights_file is resolved against the
/// manifest's directory. Without weights_file the weights come from the seed.
inline Model load_model(const std::filesystem::path& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw Error("bad-manifest", "cannot open " + manifest_path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error("bad-manifest", e.what());
    }
    const ModelManifest m = parse_manifest(j);
    const Dialect dialect = parse_dialect(m.dialect);
    if (!m.weights_file) return build_model(dialect, m.dims, m.seed);
    std::filesystem::path wpath = *m.weights_file;
    if (wpath.is_relative()) wpath = manifest_path.parent_path() / wpath;
    return Model::with_weights(dialect, m.dims, m.seed, read_weights(wpath));
}

}  // namespace interp
