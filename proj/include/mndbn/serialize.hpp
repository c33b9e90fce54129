#pragma once

// MNDBN1 model container:
//
//   bytes 0-5    "MNDBN1"
//   bytes 6-13   header length n, unsigned 64-bit little-endian
//   next n bytes UTF-8 JSON header
//   remainder    little-endian IEEE-754 doubles: for each layer w (row-major,
//                visible x hidden), b_vis, a_hid; then the head's w_out
//                (row-major, inputs x classes) and b_out when present.
//
// Header keys: "format", "layer_count", "layers" (visible, hidden, penalty per
// layer), "head" (inputs, classes, or null) and a free-form "meta" object
// (hyperparameters, seed, group configuration). Keys are emitted sorted, so
// load followed by save reproduces the file byte for byte.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mndbn/dbn.hpp"
#include "mndbn/error.hpp"

namespace mndbn {

inline constexpr char model_magic[] = "MNDBN1";
inline constexpr std::size_t model_magic_size = 6;

inline nlohmann::json to_json(const PenaltySpec& s) {
    return {{"lambda", s.lambda},
            {"group_size", s.group_size},
            {"overlap_fraction", s.overlap_fraction},
            {"epsilon", s.epsilon}};
}

inline PenaltySpec penalty_from_json(const nlohmann::json& j) {
    PenaltySpec s;
    s.lambda = j.at("lambda").get<double>();
    s.group_size = j.at("group_size").get<std::size_t>();
    s.overlap_fraction = j.at("overlap_fraction").get<double>();
    s.epsilon = j.at("epsilon").get<double>();
    return s;
}

struct ModelFile {
    Dbn dbn;
    nlohmann::json meta = nlohmann::json::object();
};

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_doubles(std::string& out, std::span<const double> v) {
    for (double d : v) {
        auto bits = std::bit_cast<std::uint64_t>(d);
        put_u64(out, bits);
    }
}

class ByteReader {
public:
    explicit ByteReader(const std::string& buf) : buf_(buf) {}
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t{static_cast<unsigned char>(buf_[pos_ + i])} << (8 * i);
        pos_ += 8;
        return v;
    }
    void doubles(std::span<double> out) {
        for (double& d : out) d = std::bit_cast<double>(u64());
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    [[nodiscard]] std::size_t offset() const { return pos_; }
    [[nodiscard]] bool done() const { return pos_ == buf_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > buf_.size())
            throw parse_error("model file truncated at offset " + std::to_string(pos_) + " (need " +
                              std::to_string(n) + " more bytes)");
    }
    const std::string& buf_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_model(const Dbn& d, const nlohmann::json& meta = nlohmann::json::object()) {
    d.validate();
    nlohmann::json header;
    header["format"] = "MNDBN1";
    header["layer_count"] = d.layers.size();
    header["layers"] = nlohmann::json::array();
    for (std::size_t l = 0; l < d.layers.size(); ++l) {
        nlohmann::json layer{{"visible", d.layers[l].num_visible()}, {"hidden", d.layers[l].num_hidden()}};
        layer["penalty"] = l < d.layer_penalties.size() ? to_json(d.layer_penalties[l]) : nlohmann::json(nullptr);
        header["layers"].push_back(layer);
    }
    header["head"] = d.head ? nlohmann::json{{"inputs", d.head->num_inputs()}, {"classes", d.head->num_classes()}}
                            : nlohmann::json(nullptr);
    header["meta"] = meta;
    const std::string text = header.dump();

    std::string out(model_magic, model_magic_size);
    detail::put_u64(out, text.size());
    out += text;
    for (const auto& layer : d.layers) {
        detail::put_doubles(out, layer.w.flat());
        detail::put_doubles(out, layer.b_vis);
        detail::put_doubles(out, layer.a_hid);
    }
    if (d.head) {
        detail::put_doubles(out, d.head->w_out.flat());
        detail::put_doubles(out, d.head->b_out);
    }
    return out;
}

inline ModelFile decode_model(const std::string& bytes) {
    detail::ByteReader in(bytes);
    if (in.bytes(model_magic_size) != std::string(model_magic, model_magic_size))
        throw parse_error("model file: bad magic at offset 0 (expected MNDBN1)");
    const std::uint64_t header_len = in.u64();
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(in.bytes(header_len));
    } catch (const nlohmann::json::exception& e) {
        throw parse_error(std::string("model file: header JSON invalid at offset 14: ") + e.what());
    }

    ModelFile mf;
    try {
        const auto count = header.at("layer_count").get<std::size_t>();
        const auto& layers = header.at("layers");
        if (layers.size() != count) throw parse_error("model file: layer_count does not match layers");
        bool any_penalty = false;
        for (const auto& lj : layers) {
            Rbm r(lj.at("visible").get<std::size_t>(), lj.at("hidden").get<std::size_t>());
            mf.dbn.layers.push_back(std::move(r));
            if (!lj.at("penalty").is_null()) {
                any_penalty = true;
                mf.dbn.layer_penalties.push_back(penalty_from_json(lj.at("penalty")));
            }
        }
        if (any_penalty && mf.dbn.layer_penalties.size() != count)
            throw parse_error("model file: penalty present for only some layers");
        if (!header.at("head").is_null())
            mf.dbn.head = SoftmaxLayer(header["head"].at("inputs").get<std::size_t>(),
                                       header["head"].at("classes").get<std::size_t>());
        mf.meta = header.value("meta", nlohmann::json::object());
    } catch (const nlohmann::json::exception& e) {
        throw parse_error(std::string("model file: malformed header: ") + e.what());
    }

    for (auto& layer : mf.dbn.layers) {
        in.doubles(layer.w.flat());
        in.doubles(layer.b_vis);
        in.doubles(layer.a_hid);
    }
    if (mf.dbn.head) {
        in.doubles(mf.dbn.head->w_out.flat());
        in.doubles(mf.dbn.head->b_out);
    }
    if (!in.done()) throw parse_error("model file: trailing bytes at offset " + std::to_string(in.offset()));
    try {
        mf.dbn.validate();
    } catch (const config_error& e) {
        throw parse_error(std::string("model file: ") + e.what());
    }
    return mf;
}

inline void save_model(const std::filesystem::path& path, const Dbn& d,
                       const nlohmann::json& meta = nlohmann::json::object()) {
    const std::string bytes = encode_model(d, meta);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw parse_error(path.string() + ": cannot open for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline ModelFile load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw parse_error(path.string() + ": cannot open");
    const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    return decode_model(bytes);
}

}  // namespace mndbn
