// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "yoloe/lrpc.hpp"
#include "yoloe/model.hpp"

namespace yoloe {

enum class ArchiveErrorCode {
    BadMagic,
    BadVersion,
    BadManifest,
    Truncated,
    OverlappingRanges,
    UnknownDtype,
    DtypeMismatch,
    BadShape,
    IoFailure,
    DuplicateName,
};

class ArchiveError : public Error {
public:
    ArchiveError(ArchiveErrorCode code, const std::string& msg) : Error(msg), code_(code) {}
    ArchiveErrorCode code() const { return code_; }

private:
    ArchiveErrorCode code_;
};

// Image / vocabulary file problems (PPM headers, name lists).
class FormatError : public Error {
public:
    using Error::Error;
};

namespace detail {

constexpr char kMagic[4] = {'Y', 'O', 'L', 'E'};
constexpr std::uint32_t kVersion = 1;

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline std::uint32_t get_u32(const unsigned char* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
}
inline std::uint64_t get_u64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

// scalars are stored little-endian
template <typename T>
void put_scalars(std::string& out, const T* p, std::size_t n) {
    static_assert(sizeof(T) == 4 || sizeof(T) == 8);
    if constexpr (std::endian::native == std::endian::little) {
        out.append(reinterpret_cast<const char*>(p), n * sizeof(T));
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            unsigned char b[sizeof(T)];
            std::memcpy(b, &p[i], sizeof(T));
            for (std::size_t j = sizeof(T); j-- > 0;) out.push_back(static_cast<char>(b[j]));
        }
    }
}

template <typename T>
void get_scalars(const unsigned char* src, T* dst, std::size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
        std::memcpy(dst, src, n * sizeof(T));
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            unsigned char b[sizeof(T)];
            for (std::size_t j = 0; j < sizeof(T); ++j) b[sizeof(T) - 1 - j] = src[i * sizeof(T) + j];
            std::memcpy(&dst[i], b, sizeof(T));
        }
    }
}

} // namespace detail

/// Serializes named tensors:
///   "YOLE" | u32 version | u64 manifestLength | manifest JSON | blob
/// The manifest maps name -> {dtype, shape, offset, byteLength}; offsets are
/// blob-relative and 8-byte aligned. Round trips are bit-exact.
template <typename T>
std::string serialize_archive(const std::map<std::string, Tensor<T>>& tensors) {
    nlohmann::json manifest = nlohmann::json::object();
    std::string blob;
    for (const auto& [name, t] : tensors) {
        if (name.empty()) throw ArchiveError(ArchiveErrorCode::BadManifest, "empty tensor name");
        while (blob.size() % 8 != 0) blob.push_back('\0');
        const std::uint64_t offset = blob.size();
        detail::put_scalars(blob, t.data(), t.numel());
        manifest[name] = {{"dtype", dtype_name(dtype_of<T>())},
                          {"shape", t.shape()},
                          {"offset", offset},
                          {"byteLength", static_cast<std::uint64_t>(t.numel() * sizeof(T))}};
    }
    const std::string mtext = manifest.dump();
    std::string out(detail::kMagic, 4);
    detail::put_u32(out, detail::kVersion);
    detail::put_u64(out, mtext.size());
    out += mtext;
    out += blob;
    return out;
}

template <typename T>
std::map<std::string, Tensor<T>> parse_archive(const std::string& bytes) {
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (bytes.size() < 16) throw ArchiveError(ArchiveErrorCode::Truncated, "archive header truncated");
    if (std::memcmp(p, detail::kMagic, 4) != 0)
        throw ArchiveError(ArchiveErrorCode::BadMagic, "bad archive magic");
    if (detail::get_u32(p + 4) != detail::kVersion)
        throw ArchiveError(ArchiveErrorCode::BadVersion, "unsupported archive version");
    const std::uint64_t mlen = detail::get_u64(p + 8);
    if (16 + mlen > bytes.size())
        throw ArchiveError(ArchiveErrorCode::Truncated, "manifest exceeds file size");
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + mlen);
    } catch (const nlohmann::json::exception&) {
        throw ArchiveError(ArchiveErrorCode::BadManifest, "manifest is not valid JSON");
    }
    if (!manifest.is_object())
        throw ArchiveError(ArchiveErrorCode::BadManifest, "manifest must be a JSON object");

    const std::size_t blob_off = 16 + mlen;
    const std::size_t blob_size = bytes.size() - blob_off;
    std::map<std::string, Tensor<T>> out;
    std::vector<std::pair<std::uint64_t, std::uint64_t>> ranges;
    for (const auto& [name, entry] : manifest.items()) {
        if (!entry.is_object() || !entry.contains("dtype") || !entry.contains("shape") ||
            !entry.contains("offset") || !entry.contains("byteLength"))
            throw ArchiveError(ArchiveErrorCode::BadManifest, "manifest entry missing fields");
        const std::string dt = entry["dtype"].template get<std::string>();
        std::size_t ssize;
        if (dt == "f32") ssize = 4;
        else if (dt == "f64") ssize = 8;
        else throw ArchiveError(ArchiveErrorCode::UnknownDtype, "unknown dtype " + dt);
        if (dt != dtype_name(dtype_of<T>()))
            throw ArchiveError(ArchiveErrorCode::DtypeMismatch,
                               "archive entry " + name + " has dtype " + dt);
        typename Tensor<T>::Shape shape;
        for (const auto& d : entry["shape"]) {
            if (!d.is_number_unsigned() || d.template get<std::uint64_t>() == 0)
                throw ArchiveError(ArchiveErrorCode::BadShape, "non-positive dimension");
            shape.push_back(d.template get<std::size_t>());
        }
        const std::uint64_t offset = entry["offset"].template get<std::uint64_t>();
        const std::uint64_t blen = entry["byteLength"].template get<std::uint64_t>();
        const std::uint64_t numel = Tensor<T>::numel_of(shape);
        if (blen != numel * ssize)
            throw ArchiveError(ArchiveErrorCode::BadShape, "byteLength does not match shape");
        if (offset + blen > blob_size)
            throw ArchiveError(ArchiveErrorCode::Truncated, "tensor data exceeds blob");
        ranges.emplace_back(offset, offset + blen);
        std::vector<T> data(numel);
        detail::get_scalars(reinterpret_cast<const unsigned char*>(bytes.data()) + blob_off + offset,
                            data.data(), numel);
        out.emplace(name, Tensor<T>(std::move(shape), std::move(data)));
    }
    std::sort(ranges.begin(), ranges.end());
    for (std::size_t i = 1; i < ranges.size(); ++i)
        if (ranges[i].first < ranges[i - 1].second)
            throw ArchiveError(ArchiveErrorCode::OverlappingRanges, "tensor ranges overlap");
    return out;
}

template <typename T>
void save_archive(const std::map<std::string, Tensor<T>>& tensors, const std::string& path) {
    const std::string bytes = serialize_archive(tensors);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw ArchiveError(ArchiveErrorCode::IoFailure, "cannot open " + path + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw ArchiveError(ArchiveErrorCode::IoFailure, "write failed for " + path);
}

inline std::string read_file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ArchiveError(ArchiveErrorCode::IoFailure, "cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return bytes;
}

template <typename T>
std::map<std::string, Tensor<T>> load_archive(const std::string& path) {
    return parse_archive<T>(read_file_bytes(path));
}

// ---------------------------------------------------------------------------
// string payloads inside archives (prompt names, configs): UTF-8 bytes stored
// as one scalar per byte, so the tensor-only format needs no extension

template <typename T>
Tensor<T> encode_text_tensor(const std::string& text) {
    Tensor<T> t({std::max<std::size_t>(1, text.size())});
    T* p = t.raw();
    for (std::size_t i = 0; i < text.size(); ++i)
        p[i] = static_cast<T>(static_cast<unsigned char>(text[i]));
    if (text.empty()) p[0] = T(0);
    return t;
}

template <typename T>
std::string decode_text_tensor(const Tensor<T>& t) {
    std::string s;
    for (std::size_t i = 0; i < t.numel(); ++i) {
        const long v = static_cast<long>(t(i));
        if (v == 0) continue;
        if (v < 1 || v > 255) throw FormatError("text tensor holds non-byte values");
        s.push_back(static_cast<char>(v));
    }
    return s;
}

inline std::string names_to_json(const std::vector<std::string>& names) {
    return nlohmann::json(names).dump();
}

inline std::vector<std::string> names_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception&) {
        throw FormatError("name list is not valid JSON");
    }
    if (!j.is_array()) throw FormatError("name list must be a JSON array");
    std::vector<std::string> names;
    for (const auto& e : j) {
        if (!e.is_string()) throw FormatError("name list entries must be strings");
        names.push_back(e.get<std::string>());
    }
    return names;
}

// ---------------------------------------------------------------------------
// model config <-> JSON

inline std::string config_to_json(const ModelConfig& cfg) {
    nlohmann::json j{{"imageSize", cfg.image_size},
                     {"embedDim", cfg.embed_dim},
                     {"headChannels", cfg.head_channels},
                     {"savpeGroups", cfg.savpe_groups},
                     {"protoCount", cfg.proto_count},
                     {"stemWidth", cfg.stem_width},
                     {"stageWidths", cfg.stage_widths}};
    return j.dump();
}

inline ModelConfig config_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception&) {
        throw FormatError("config is not valid JSON");
    }
    ModelConfig cfg;
    cfg.image_size = j.at("imageSize").get<int>();
    cfg.embed_dim = j.at("embedDim").get<int>();
    cfg.head_channels = j.at("headChannels").get<int>();
    cfg.savpe_groups = j.at("savpeGroups").get<int>();
    cfg.proto_count = j.at("protoCount").get<int>();
    cfg.stem_width = j.at("stemWidth").get<int>();
    const auto sw = j.at("stageWidths");
    for (int i = 0; i < 4; ++i) cfg.stage_widths[i] = sw.at(i).get<int>();
    cfg.validate();
    return cfg;
}

// ---------------------------------------------------------------------------
// vocabulary

template <typename T>
Vocabulary<T> make_vocab(const std::vector<std::string>& names, const Tensor<T>& embeds) {
    if (embeds.rank() != 2 || embeds.dim(0) != names.size())
        throw FormatError("vocabulary row count does not match name count");
    for (std::size_t i = 0; i < names.size(); ++i)
        for (std::size_t j = i + 1; j < names.size(); ++j)
            if (names[i] == names[j]) throw FormatError("duplicate vocabulary name " + names[i]);
    Vocabulary<T> v;
    v.names = names;
    v.embeddings = l2_normalize_rows(embeds);
    return v;
}

template <typename T>
Vocabulary<T> load_vocab(const std::string& names_path, const std::string& embeds_path) {
    const auto names = names_from_json(read_file_bytes(names_path));
    auto tensors = load_archive<T>(embeds_path);
    auto it = tensors.find("vocab_embeddings");
    if (it == tensors.end()) throw FormatError("archive has no vocab_embeddings entry");
    return make_vocab(names, it->second);
}

// ---------------------------------------------------------------------------
// images: binary PPM (P6, maxval 255) or an archive with an "image" entry

template <typename T>
Tensor<T> decode_ppm(const std::string& bytes) {
    std::size_t pos = 0;
    auto skip_ws = [&]() {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto read_int = [&]() -> long {
        skip_ws();
        if (pos >= bytes.size() || !std::isdigit(static_cast<unsigned char>(bytes[pos])))
            throw FormatError("corrupt PPM header");
        long v = 0;
        while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos])))
            v = v * 10 + (bytes[pos++] - '0');
        return v;
    };
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6')
        throw FormatError("unsupported image format (binary P6 PPM required)");
    pos = 2;
    const long w = read_int();
    const long h = read_int();
    const long maxval = read_int();
    if (w <= 0 || h <= 0) throw FormatError("corrupt PPM header");
    if (maxval != 255) throw FormatError("PPM maxval must be 255");
    if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
        throw FormatError("corrupt PPM header");
    ++pos;
    const std::size_t need = static_cast<std::size_t>(w) * h * 3;
    if (bytes.size() - pos < need) throw FormatError("PPM pixel data truncated");
    Tensor<T> img({3, static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
    T* p = img.raw();
    for (long y = 0; y < h; ++y)
        for (long x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                p[(c * h + y) * w + x] =
                    static_cast<T>(static_cast<unsigned char>(bytes[pos + (y * w + x) * 3 + c])) /
                    T(255);
    return img;
}

template <typename T>
std::string encode_ppm(const Tensor<T>& img) {
    if (img.rank() != 3 || img.dim(0) != 3) throw FormatError("encode_ppm: 3xHxW image required");
    const std::size_t h = img.dim(1), w = img.dim(2);
    std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                const double v = std::clamp(static_cast<double>(img(c, y, x)), 0.0, 1.0);
                out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255))));
            }
    return out;
}

template <typename T>
void save_ppm(const Tensor<T>& img, const std::string& path) {
    const std::string bytes = encode_ppm(img);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot open " + path + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

template <typename T>
Tensor<T> resize_nearest(const Tensor<T>& img, int size) {
    const std::size_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
    const std::size_t S = static_cast<std::size_t>(size);
    if (H == S && W == S) return img;
    Tensor<T> out({C, S, S});
    T* o = out.raw();
    const T* p = img.data();
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < S; ++y)
            for (std::size_t x = 0; x < S; ++x)
                o[(c * S + y) * S + x] = p[(c * H + y * H / S) * W + x * W / S];
    return out;
}

/// Loads a PPM or an archive holding an "image" tensor; pixel values come
/// back in [0,1], resized (nearest) to target_size when one is given.
template <typename T>
Tensor<T> load_image(const std::string& path, int target_size = -1) {
    const std::string bytes = read_file_bytes(path);
    Tensor<T> img;
    if (bytes.size() >= 4 && std::memcmp(bytes.data(), detail::kMagic, 4) == 0) {
        auto tensors = parse_archive<T>(bytes);
        auto it = tensors.find("image");
        if (it == tensors.end()) throw FormatError("archive has no image entry");
        img = it->second;
        if (img.rank() != 3 || img.dim(0) != 3) throw FormatError("image tensor must be 3xHxW");
    } else {
        img = decode_ppm<T>(bytes);
    }
    if (target_size > 0) img = resize_nearest(img, target_size);
    return img;
}

} // namespace yoloe
