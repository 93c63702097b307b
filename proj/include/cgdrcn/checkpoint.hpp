// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>
#include <openssl/evp.h>

#include "cgdrcn/density.hpp"
#include "cgdrcn/errors.hpp"
#include "cgdrcn/model.hpp"

namespace cgdrcn {

inline std::string sha256_hex(std::string_view bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("sha256 failed");
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(kHex[md[i] >> 4]);
        out.push_back(kHex[md[i] & 15]);
    }
    return out;
}

/// Raw little-endian float32 image of all parameters, in layout order.
inline std::string parameter_bytes(const ModelState<float>& s) {
    std::string out;
    out.reserve(4 * s.parameter_count());
    for (const auto& p : s.params)
        for (float v : p.values()) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
    return out;
}

inline std::string model_digest(const ModelState<float>& s) { return sha256_hex(parameter_bytes(s)); }

struct Checkpoint {
    ModelState<float> state;
    std::uint64_t step = 0;
    std::string train_config_digest;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout: "CGCK", u32 version, u64 manifest length, manifest JSON, payload.
inline std::string encode_checkpoint(const Checkpoint& ck) {
    const std::string payload = parameter_bytes(ck.state);
    nlohmann::json tensors = nlohmann::json::array();
    const auto names = ck.state.parameter_names();
    std::uint64_t offset = 0;
    for (std::size_t i = 0; i < ck.state.params.size(); ++i) {
        const auto& p = ck.state.params[i];
        tensors.push_back({{"name", names[i]}, {"shape", p.shape()}, {"offset", offset}, {"bytes", 4 * p.size()}});
        offset += 4 * p.size();
    }
    const nlohmann::json manifest{{"format_version", kCheckpointVersion},
                                  {"model", to_json(ck.state.config)},
                                  {"train_config_digest", ck.train_config_digest},
                                  {"step", ck.step},
                                  {"tensors", std::move(tensors)},
                                  {"payload_bytes", payload.size()},
                                  {"payload_sha256", sha256_hex(payload)}};
    const std::string m = manifest.dump();
    std::string out = "CGCK";
    detail::put_u32(out, kCheckpointVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(m.size()));
    detail::put_u32(out, static_cast<std::uint32_t>(static_cast<std::uint64_t>(m.size()) >> 32));
    out += m;
    out += payload;
    return out;
}

/// Names the first field where two configurations disagree, or returns empty.
inline std::string first_config_difference(const ModelConfig& a, const ModelConfig& b) {
    if (a.stage_channels != b.stage_channels) return "stage_channels";
    if (a.stage_convs != b.stage_convs) return "stage_convs";
    if (a.enable_residual != b.enable_residual) return "enable_residual";
    if (a.enable_uceb != b.enable_uceb) return "enable_uceb";
    if (a.cm_epsilon != b.cm_epsilon) return "cm_epsilon";
    if (a.preserve_integral_upsample != b.preserve_integral_upsample) return "preserve_integral_upsample";
    if (a.precision != b.precision) return "precision";
    return {};
}

inline Checkpoint decode_checkpoint(const std::string& bytes, const ModelConfig* expected = nullptr) {
    if (bytes.size() < 16 || bytes.compare(0, 4, "CGCK") != 0) throw CorruptionError("not a checkpoint (bad magic)");
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::uint32_t version = detail::get_u32(p + 4);
    if (version != kCheckpointVersion)
        throw IncompatibleError("format_version", "file has " + std::to_string(version) + ", reader supports " +
                                                      std::to_string(kCheckpointVersion));
    const std::uint64_t mlen = detail::get_u32(p + 8) | (static_cast<std::uint64_t>(detail::get_u32(p + 12)) << 32);
    if (mlen > bytes.size() - 16) throw CorruptionError("checkpoint manifest truncated");

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(bytes.substr(16, mlen));
    } catch (const nlohmann::json::exception& e) {
        throw CorruptionError(std::string("checkpoint manifest unreadable: ") + e.what());
    }
    const std::string payload = bytes.substr(16 + mlen);
    try {
        if (payload.size() != manifest.at("payload_bytes").get<std::uint64_t>())
            throw CorruptionError("checkpoint payload truncated: " + std::to_string(payload.size()) + " of " +
                                  std::to_string(manifest.at("payload_bytes").get<std::uint64_t>()) + " bytes");
        if (sha256_hex(payload) != manifest.at("payload_sha256").get<std::string>())
            throw CorruptionError("checkpoint payload digest mismatch");

        Checkpoint ck;
        const ModelConfig config = model_config_from_json(manifest.at("model"));
        if (expected) {
            if (auto field = first_config_difference(*expected, config); !field.empty())
                throw IncompatibleError(field, "checkpoint model differs from the requested configuration");
        }
        ck.state = init_model<float>(config, 0);
        ck.step = manifest.at("step").get<std::uint64_t>();
        ck.train_config_digest = manifest.at("train_config_digest").get<std::string>();

        const auto& tensors = manifest.at("tensors");
        const auto names = ck.state.parameter_names();
        if (tensors.size() != ck.state.params.size())
            throw CorruptionError("checkpoint tensor directory does not match the model layout");
        std::uint64_t expect_offset = 0;
        for (std::size_t i = 0; i < tensors.size(); ++i) {
            auto& dst = ck.state.params[i];
            const auto& t = tensors[i];
            if (t.at("name").get<std::string>() != names[i])
                throw CorruptionError("checkpoint tensor " + std::to_string(i) + " is '" +
                                      t.at("name").get<std::string>() + "', expected '" + names[i] + "'");
            if (t.at("shape").get<Shape>() != dst.shape())
                throw CorruptionError("checkpoint tensor '" + names[i] + "' has the wrong shape");
            const auto offset = t.at("offset").get<std::uint64_t>();
            if (offset != expect_offset || t.at("bytes").get<std::uint64_t>() != 4 * dst.size())
                throw CorruptionError("checkpoint tensor '" + names[i] + "' offsets are not contiguous");
            const auto* src = reinterpret_cast<const unsigned char*>(payload.data()) + offset;
            for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = std::bit_cast<float>(detail::get_u32(src + 4 * k));
            expect_offset += 4 * dst.size();
        }
        if (expect_offset != payload.size()) throw CorruptionError("checkpoint payload has trailing bytes");
        return ck;
    } catch (const nlohmann::json::exception& e) {
        throw CorruptionError(std::string("checkpoint manifest malformed: ") + e.what());
    }
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    detail::write_file(path, encode_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected = nullptr) {
    return decode_checkpoint(detail::read_file(path), expected);
}

} // namespace cgdrcn
