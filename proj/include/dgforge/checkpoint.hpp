#pragma once

// Model checkpoint file:
//   "DGFM" | u32 version | u8 activation (0 relu, 1 sigmoid) | u32 layer count
//   | per layer: u32 in, u32 out | per layer: in*out f64 weights, out f64 biases
// All integers and floats little-endian.

#include "dgforge/io.hpp"
#include "dgforge/models.hpp"

#include <filesystem>

namespace dgforge {

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::string encode_checkpoint(const Mlp& model) {
    io::Writer w;
    w.bytes("DGFM");
    w.u32(kCheckpointVersion);
    w.u8(model.activation() == Activation::relu ? 0 : 1);
    w.u32(static_cast<std::uint32_t>(model.layer_count()));
    for (const auto& l : model.layers()) {
        w.u32(static_cast<std::uint32_t>(l.in_dim()));
        w.u32(static_cast<std::uint32_t>(l.out_dim()));
    }
    for (const auto& l : model.layers()) {
        for (double v : l.weight.values()) {
            w.f64(v);
        }
        for (double v : l.bias.values()) {
            w.f64(v);
        }
    }
    return w.data();
}

inline Mlp decode_checkpoint(std::string bytes, const std::string& origin = "checkpoint") {
    io::Reader r(std::move(bytes), origin);
    if (r.bytes(4) != "DGFM") {
        throw LoadError(origin + ": bad magic, expected DGFM");
    }
    const auto version = r.u32();
    if (version != kCheckpointVersion) {
        throw LoadError(origin + ": unsupported checkpoint version " + std::to_string(version));
    }
    const auto act = r.u8();
    if (act > 1) {
        throw LoadError(origin + ": unknown activation code " + std::to_string(act));
    }
    const auto count = r.u32();
    std::vector<std::pair<std::size_t, std::size_t>> dims;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::size_t in = r.u32();
        const std::size_t out = r.u32();
        if (in == 0 || out == 0) {
            throw LoadError(origin + ": layer " + std::to_string(i) + " has a zero dimension");
        }
        dims.emplace_back(in, out);
    }
    std::vector<Linear> layers;
    for (const auto& [in, out] : dims) {
        if (r.remaining() / 8 < in * out + out) {
            throw LoadError(origin + ": truncated parameter payload");
        }
        std::vector<double> w(in * out);
        for (auto& v : w) {
            v = r.f64();
        }
        std::vector<double> b(out);
        for (auto& v : b) {
            v = r.f64();
        }
        layers.push_back({Tensor({in, out}, std::move(w), true), Tensor({1, out}, std::move(b), true)});
    }
    if (!r.at_end()) {
        throw LoadError(origin + ": trailing bytes after parameters");
    }
    try {
        return Mlp(std::move(layers), act == 0 ? Activation::relu : Activation::sigmoid);
    } catch (const ConfigError& e) {
        throw LoadError(origin + ": " + e.what());
    }
}

inline void save_checkpoint(const std::filesystem::path& path, const Mlp& model) {
    io::atomic_write(path, encode_checkpoint(model));
}

inline Mlp load_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint(io::read_file(path), path.string());
}

} // namespace dgforge
