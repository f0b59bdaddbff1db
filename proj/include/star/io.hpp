#pragma once

// Binary formats. All multi-byte values are little-endian.
//
//   TensorFile:  "VTR1" | u32 T | u32 C | u32 H | u32 W | f32 x (T*C*H*W)
//   Checkpoint:  "STCK" | u32 version | u64 architecture hash | u64 count | f32 x count
//   PPM:         binary P6, 8-bit, one file per frame

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "star/network.hpp"
#include "star/tensor.hpp"

namespace star {

/// Malformed or unreadable file; the message names the path and byte offset.
class FormatError : public std::runtime_error {
public:
    FormatError(const std::filesystem::path& path, std::size_t offset, const std::string& what)
        : std::runtime_error(path.string() + " @ byte " + std::to_string(offset) + ": " + what),
          path_(path), offset_(offset) {}
    const std::filesystem::path& path() const { return path_; }
    std::size_t offset() const { return offset_; }

private:
    std::filesystem::path path_;
    std::size_t offset_;
};

namespace detail {

inline void put_u32(std::vector<unsigned char>& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<unsigned char>(v >> (8 * i)));
}
inline void put_u64(std::vector<unsigned char>& b, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) b.push_back(static_cast<unsigned char>(v >> (8 * i)));
}
inline void put_f32(std::vector<unsigned char>& b, float f) { put_u32(b, std::bit_cast<std::uint32_t>(f)); }

inline std::vector<unsigned char> read_all(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(path, 0, "cannot open file");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_all(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + path.string());
}

class Reader {
public:
    Reader(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) : path_(path), bytes_(bytes) {}
    void need(std::size_t n, const char* what) const {
        if (pos_ + n > bytes_.size())
            throw FormatError(path_, pos_, std::string("truncated while reading ") + what);
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
        pos_ += 8;
        return v;
    }
    float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
    void magic(const char (&m)[5]) {
        need(4, "magic");
        if (std::memcmp(bytes_.data() + pos_, m, 4) != 0)
            throw FormatError(path_, pos_, std::string("bad magic, expected ") + m);
        pos_ += 4;
    }
    std::size_t pos() const { return pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }
    const std::filesystem::path& path() const { return path_; }

private:
    const std::filesystem::path& path_;
    const std::vector<unsigned char>& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<unsigned char> encode_tensor(const VideoTensor& t) {
    require_rank(t.shape(), 4, "TensorFile");
    std::vector<unsigned char> b{'V', 'T', 'R', '1'};
    b.reserve(20 + 4 * t.size());
    for (auto e : t.shape()) detail::put_u32(b, static_cast<std::uint32_t>(e));
    for (float v : t.vec()) detail::put_f32(b, v);
    return b;
}

inline VideoTensor decode_tensor(const std::vector<unsigned char>& bytes, const std::filesystem::path& origin = "<memory>") {
    detail::Reader r(origin, bytes);
    r.magic("VTR1");
    Shape s(4);
    for (auto& e : s) {
        const std::size_t at = r.pos();
        e = r.u32("extent");
        if (e == 0) throw FormatError(origin, at, "zero extent");
    }
    const std::size_t n = shape_numel(s);
    if (r.remaining() != 4 * n)
        throw FormatError(origin, r.pos(),
                          "payload holds " + std::to_string(r.remaining()) + " bytes, extents " + shape_str(s) +
                              " require " + std::to_string(4 * n));
    std::vector<float> data(n);
    for (auto& v : data) v = r.f32("payload");
    return VideoTensor(s, std::move(data));
}

inline void write_tensor(const std::filesystem::path& path, const VideoTensor& t) {
    detail::write_all(path, encode_tensor(t));
}

inline VideoTensor read_tensor(const std::filesystem::path& path) {
    return decode_tensor(detail::read_all(path), path);
}

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void write_checkpoint(const std::filesystem::path& path, const DenoiserSpec& spec, const Params<float>& p) {
    std::vector<unsigned char> b{'S', 'T', 'C', 'K'};
    detail::put_u32(b, kCheckpointVersion);
    detail::put_u64(b, spec_hash(spec));
    detail::put_u64(b, p.values.size());
    for (float v : p.values) detail::put_f32(b, v);
    detail::write_all(path, b);
}

/// Loads parameters for `spec`; rejects files written for a different spec.
inline Params<float> read_checkpoint(const std::filesystem::path& path, const DenoiserSpec& spec) {
    const auto bytes = detail::read_all(path);
    detail::Reader r(path, bytes);
    r.magic("STCK");
    const std::size_t vpos = r.pos();
    if (r.u32("version") != kCheckpointVersion) throw FormatError(path, vpos, "unsupported checkpoint version");
    const std::size_t hpos = r.pos();
    if (r.u64("spec hash") != spec_hash(spec)) throw FormatError(path, hpos, "checkpoint was written for a different denoiser spec");
    auto p = Params<float>::zeros(spec);
    const std::size_t cpos = r.pos();
    const auto count = r.u64("parameter count");
    if (count != p.values.size())
        throw FormatError(path, cpos, "parameter count " + std::to_string(count) + " != " + std::to_string(p.values.size()));
    if (r.remaining() != 4 * count) throw FormatError(path, r.pos(), "payload length mismatch");
    for (auto& v : p.values) v = r.f32("parameters");
    return p;
}

inline unsigned char to_byte(float v) {
    return static_cast<unsigned char>(std::lround(std::clamp(static_cast<double>(v), 0.0, 1.0) * 255.0));
}

/// One P6 file per frame named frame_0000.ppm, ...; requires C == 3.
inline std::vector<std::filesystem::path> export_frames(const VideoTensor& video, const std::filesystem::path& dir) {
    require_rank(video.shape(), 4, "export_frames");
    if (video.dim(1) != 3) throw ShapeError("export_frames: PPM export needs 3 channels, got " + shape_str(video.shape()));
    std::filesystem::create_directories(dir);
    const std::size_t T = video.dim(0), H = video.dim(2), W = video.dim(3);
    std::vector<std::filesystem::path> files;
    for (std::size_t t = 0; t < T; ++t) {
        std::ostringstream name;
        name << "frame_" << std::setw(4) << std::setfill('0') << t << ".ppm";
        const std::string header = "P6\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
        std::vector<unsigned char> b(header.begin(), header.end());
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x)
                for (std::size_t c = 0; c < 3; ++c) b.push_back(to_byte(video[((t * 3 + c) * H + y) * W + x]));
        files.push_back(dir / name.str());
        detail::write_all(files.back(), b);
    }
    return files;
}

/// Reads a P6 file into a [1,3,H,W] tensor with values in [0,1].
inline VideoTensor read_ppm(const std::filesystem::path& path) {
    const auto bytes = detail::read_all(path);
    std::size_t pos = 0;
    const auto token = [&]() {
        while (pos < bytes.size() && (std::isspace(bytes[pos]) || bytes[pos] == '#')) {
            if (bytes[pos] == '#')
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            else
                ++pos;
        }
        const std::size_t start = pos;
        while (pos < bytes.size() && !std::isspace(bytes[pos])) ++pos;
        if (start == pos) throw FormatError(path, start, "truncated PPM header");
        return std::string(bytes.begin() + static_cast<std::ptrdiff_t>(start), bytes.begin() + static_cast<std::ptrdiff_t>(pos));
    };
    if (token() != "P6") throw FormatError(path, 0, "not a binary P6 PPM");
    const std::size_t W = std::stoul(token()), H = std::stoul(token());
    if (token() != "255") throw FormatError(path, pos, "only 8-bit PPM is supported");
    ++pos;  // single whitespace after maxval
    if (bytes.size() - pos != 3 * W * H) throw FormatError(path, pos, "pixel payload length mismatch");
    VideoTensor out({1, 3, H, W});
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                out[(c * H + y) * W + x] = static_cast<float>(bytes[pos + (y * W + x) * 3 + c]) / 255.0f;
    return out;
}

}  // namespace star
