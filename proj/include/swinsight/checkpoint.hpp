#pragma once

// Binary checkpoint file (.swck), all integers little-endian:
//
//   "SWCK"                      magic, 4 bytes
//   u32 version                 = 1
//   u64 len, bytes              config blob: canonical key=value text
//   u64 len, bytes              class-map blob: "0=real\n1=cgi\n"
//   u32 count                   number of tensors
//   per tensor:
//     u32 len, bytes            name
//     u8 dtype                  0 = f32, 1 = f64
//     u8 rank
//     u64 dims[rank]
//     raw little-endian data
//   u32 crc32                   over everything after the magic
//
// Tensor names: model parameters by name, then optional "adam.m.<name>",
// "adam.v.<name>", "adam.step" [1] f64, and "trace" [epochs, 4] f64.

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "errors.hpp"
#include "swin.hpp"
#include "tensor.hpp"
#include "training.hpp"

namespace swinsight {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

inline constexpr char kCheckpointMagic[4] = {'S', 'W', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class Precision : std::uint8_t { F32 = 0, F64 = 1 };

template <typename T>
constexpr Precision precision_of() {
    return std::is_same_v<T, float> ? Precision::F32 : Precision::F64;
}

inline const char* precision_name(Precision p) { return p == Precision::F32 ? "f32" : "f64"; }

inline std::string default_class_map() {
    std::string s;
    for (int i = 0; i < kNumClasses; ++i) s += std::to_string(i) + "=" + kClassNames[i] + "\n";
    return s;
}

template <typename T>
struct Checkpoint {
    ModelConfig config;
    std::string class_map = default_class_map();
    std::map<std::string, Tensor<T>> parameters;
    std::optional<AdamState<T>> adam;
    TrainTrace trace;
    std::uint64_t seed = 0;
    std::string train_set;
};

namespace detail {

class ByteWriter {
public:
    template <typename I>
    void put(I v) {
        static_assert(std::is_trivially_copyable_v<I>);
        const auto* p = reinterpret_cast<const char*>(&v);
        buf_.insert(buf_.end(), p, p + sizeof(I));
    }
    void bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const char*>(data);
        buf_.insert(buf_.end(), p, p + n);
    }
    void blob64(const std::string& s) {
        put<std::uint64_t>(s.size());
        bytes(s.data(), s.size());
    }
    void blob32(const std::string& s) {
        put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    std::vector<char>& buffer() { return buf_; }

private:
    std::vector<char> buf_;
};

// Reads from [pos, end); any overrun sets `overrun` and returns zeros.
class ByteReader {
public:
    ByteReader(const char* data, std::size_t size) : data_(data), size_(size) {}

    template <typename I>
    I get() {
        I v{};
        if (!take(sizeof(I))) return v;
        std::memcpy(&v, data_ + pos_ - sizeof(I), sizeof(I));
        return v;
    }
    bool take(std::size_t n) {
        if (overrun_ || n > size_ - pos_) {
            overrun_ = true;
            return false;
        }
        pos_ += n;
        return true;
    }
    std::string blob(std::uint64_t n) {
        if (!take(n)) return {};
        return std::string(data_ + pos_ - n, n);
    }
    const char* cursor() const { return data_ + pos_; }
    bool overrun() const { return overrun_; }
    std::size_t remaining() const { return overrun_ ? 0 : size_ - pos_; }

private:
    const char* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
    bool overrun_ = false;
};

inline std::uint32_t crc32_of(const char* data, std::size_t n) {
    uLong crc = ::crc32(0L, Z_NULL, 0);
    while (n > 0) {
        const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
        crc = ::crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
        data += chunk;
        n -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

template <typename T>
void write_tensor(ByteWriter& w, const std::string& name, const Tensor<T>& t) {
    w.blob32(name);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(precision_of<T>()));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) w.put<std::uint64_t>(d);
    w.bytes(t.data().data(), t.size() * sizeof(T));
}

struct RawTensor {
    Precision precision;
    Shape shape;
    const char* data;
};

inline std::map<std::string, std::string> parse_kv_text(const std::string& text) {
    std::map<std::string, std::string> out;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw CheckpointError(CheckpointError::Kind::Integrity, "checkpoint: malformed config line '" + line + "'");
        out[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return out;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<T>& ck) {
    detail::ByteWriter w;
    w.bytes(kCheckpointMagic, 4);
    w.put<std::uint32_t>(kCheckpointVersion);
    std::string config = ck.config.to_text();
    config += "precision=" + std::string(precision_name(precision_of<T>())) + "\n";
    config += "seed=" + std::to_string(ck.seed) + "\n";
    config += "train_set=" + ck.train_set + "\n";
    w.blob64(config);
    w.blob64(ck.class_map);

    std::uint32_t count = static_cast<std::uint32_t>(ck.parameters.size());
    if (ck.adam) count += static_cast<std::uint32_t>(ck.adam->m.size() + ck.adam->v.size() + 1);
    if (!ck.trace.epochs.empty()) count += 1;
    w.put<std::uint32_t>(count);
    for (const auto& [name, t] : ck.parameters) detail::write_tensor(w, name, t);
    if (ck.adam) {
        for (const auto& [name, t] : ck.adam->m) detail::write_tensor(w, "adam.m." + name, t);
        for (const auto& [name, t] : ck.adam->v) detail::write_tensor(w, "adam.v." + name, t);
        detail::write_tensor(w, "adam.step", Tensor<double>::scalar(static_cast<double>(ck.adam->step)));
    }
    if (!ck.trace.epochs.empty()) {
        Tensor<double> trace({ck.trace.epochs.size(), 4});
        for (std::size_t e = 0; e < ck.trace.epochs.size(); ++e) {
            const auto& r = ck.trace.epochs[e];
            trace.at({e, 0}) = r.train_loss;
            trace.at({e, 1}) = r.train_accuracy;
            trace.at({e, 2}) = r.val_loss;
            trace.at({e, 3}) = r.val_accuracy;
        }
        detail::write_tensor(w, "trace", trace);
    }
    auto& buf = w.buffer();
    const std::uint32_t crc = detail::crc32_of(buf.data() + 4, buf.size() - 4);
    w.put<std::uint32_t>(crc);

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError(CheckpointError::Kind::Io, "cannot open '" + path.string() + "' for writing");
    os.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
    if (!os) throw CheckpointError(CheckpointError::Kind::Io, "failed writing '" + path.string() + "'");
}

namespace detail {

struct ParsedCheckpoint {
    std::string config;
    std::string class_map;
    std::vector<std::pair<std::string, RawTensor>> tensors;
};

enum class ParseStatus { Ok, Overrun, Malformed };

inline ParseStatus parse_body(const char* body, std::size_t size, ParsedCheckpoint& out, std::string& why) {
    ByteReader r(body, size);
    r.get<std::uint32_t>();  // version, already checked
    out.config = r.blob(r.get<std::uint64_t>());
    out.class_map = r.blob(r.get<std::uint64_t>());
    const auto count = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count && !r.overrun(); ++i) {
        std::string name = r.blob(r.get<std::uint32_t>());
        const auto dtype = r.get<std::uint8_t>();
        const auto rank = r.get<std::uint8_t>();
        if (r.overrun()) break;
        if (dtype > 1) {
            why = "tensor '" + name + "' has unknown dtype code " + std::to_string(dtype);
            return ParseStatus::Malformed;
        }
        Shape shape;
        for (std::uint8_t d = 0; d < rank; ++d) shape.push_back(r.get<std::uint64_t>());
        if (r.overrun()) break;
        std::size_t elems = 1;
        for (auto d : shape) {
            if (d == 0 || elems > (std::size_t{1} << 40) / d) {
                why = "tensor '" + name + "' declares shape " + to_string(shape);
                return ParseStatus::Malformed;
            }
            elems *= d;
        }
        const std::size_t bytes = elems * (dtype == 0 ? 4 : 8);
        const char* data = r.cursor();
        if (!r.take(bytes)) {
            why = "tensor '" + name + "' declares shape " + to_string(shape) + " (" + std::to_string(bytes) +
                  " bytes) but the payload is shorter";
            break;
        }
        out.tensors.push_back({std::move(name), RawTensor{static_cast<Precision>(dtype), std::move(shape), data}});
    }
    if (r.overrun()) {
        if (why.empty()) why = "record extends past end of file";
        return ParseStatus::Overrun;
    }
    if (r.remaining() != 0) {
        why = std::to_string(r.remaining()) + " unaccounted bytes after the tensor table";
        return ParseStatus::Malformed;
    }
    return ParseStatus::Ok;
}

inline std::vector<char> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError(CheckpointError::Kind::Io, "cannot open checkpoint '" + path.string() + "'");
    return std::vector<char>((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

/// Validates magic, version, structure, and CRC. Errors are classified:
/// CRC mismatch with a structure that runs off the end is reported as
/// truncation; a matching CRC with an inconsistent shape table is an
/// integrity error.
inline ParsedCheckpoint parse_checkpoint(const std::vector<char>& bytes, const std::string& label) {
    using K = CheckpointError::Kind;
    if (bytes.size() < 4) throw CheckpointError(K::Truncated, label + ": truncated (no magic)");
    if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) throw CheckpointError(K::BadMagic, label + ": bad magic");
    if (bytes.size() < 12) throw CheckpointError(K::Truncated, label + ": truncated header");
    std::uint32_t version;
    std::memcpy(&version, bytes.data() + 4, 4);
    if (version != kCheckpointVersion) {
        throw CheckpointError(K::VersionMismatch, label + ": version " + std::to_string(version) + ", expected " +
                                                      std::to_string(kCheckpointVersion));
    }
    const std::size_t body_size = bytes.size() - 8;  // minus magic and trailing crc
    std::uint32_t stored_crc;
    std::memcpy(&stored_crc, bytes.data() + bytes.size() - 4, 4);
    const bool crc_ok = crc32_of(bytes.data() + 4, body_size) == stored_crc;

    ParsedCheckpoint parsed;
    std::string why;
    const ParseStatus status = parse_body(bytes.data() + 4, body_size, parsed, why);
    if (!crc_ok) {
        if (status == ParseStatus::Overrun) throw CheckpointError(K::Truncated, label + ": truncated (" + why + ")");
        throw CheckpointError(K::CrcMismatch, label + ": CRC mismatch");
    }
    if (status != ParseStatus::Ok) throw CheckpointError(K::Integrity, label + ": shape table inconsistent with payload: " + why);
    return parsed;
}

template <typename T>
Tensor<T> materialize(const std::string& name, const RawTensor& raw) {
    const std::size_t n = numel(raw.shape);
    std::vector<T> out(n);
    if (raw.precision == Precision::F32) {
        std::vector<float> tmp(n);
        std::memcpy(tmp.data(), raw.data, n * sizeof(float));
        std::copy(tmp.begin(), tmp.end(), out.begin());
    } else {
        std::vector<double> tmp(n);
        std::memcpy(tmp.data(), raw.data, n * sizeof(double));
        std::copy(tmp.begin(), tmp.end(), out.begin());
    }
    Tensor<T> t(raw.shape, std::move(out));
    if (!t.all_finite()) throw CheckpointError(CheckpointError::Kind::Integrity, "tensor '" + name + "' holds non-finite values");
    return t;
}

}  // namespace detail

/// The precision the checkpoint's model tensors were stored in.
inline Precision checkpoint_precision(const std::filesystem::path& path) {
    const auto bytes = detail::read_file_bytes(path);
    const auto parsed = detail::parse_checkpoint(bytes, path.string());
    const auto kv = detail::parse_kv_text(parsed.config);
    auto it = kv.find("precision");
    if (it == kv.end()) throw CheckpointError(CheckpointError::Kind::Integrity, path.string() + ": config blob lacks precision");
    if (it->second == "f32") return Precision::F32;
    if (it->second == "f64") return Precision::F64;
    throw CheckpointError(CheckpointError::Kind::Integrity, path.string() + ": unknown precision '" + it->second + "'");
}

/// Loads a checkpoint, converting stored tensors to T.
template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
    using K = CheckpointError::Kind;
    const auto bytes = detail::read_file_bytes(path);
    const auto parsed = detail::parse_checkpoint(bytes, path.string());
    Checkpoint<T> ck;
    ck.class_map = parsed.class_map;
    ModelConfig cfg;
    for (const auto& [key, value] : detail::parse_kv_text(parsed.config)) {
        if (key == "seed") ck.seed = std::stoull(value);
        else if (key == "train_set") ck.train_set = value;
        else if (key == "precision") continue;
        else if (!cfg.set(key, value)) throw CheckpointError(K::Integrity, path.string() + ": unknown config key '" + key + "'");
    }
    ck.config = cfg;
    for (const auto& [name, raw] : parsed.tensors) {
        if (name == "trace") {
            if (raw.shape.size() != 2 || raw.shape[1] != 4) throw CheckpointError(K::Integrity, "trace tensor has shape " + to_string(raw.shape));
            const auto t = detail::materialize<double>(name, raw);
            for (std::size_t e = 0; e < raw.shape[0]; ++e) {
                ck.trace.epochs.push_back({t.at({e, 0}), t.at({e, 1}), t.at({e, 2}), t.at({e, 3})});
            }
        } else if (name == "adam.step") {
            if (!ck.adam) ck.adam.emplace();
            ck.adam->step = static_cast<std::uint64_t>(detail::materialize<double>(name, raw).item());
        } else if (name.rfind("adam.m.", 0) == 0) {
            if (!ck.adam) ck.adam.emplace();
            ck.adam->m.emplace(name.substr(7), detail::materialize<T>(name, raw));
        } else if (name.rfind("adam.v.", 0) == 0) {
            if (!ck.adam) ck.adam.emplace();
            ck.adam->v.emplace(name.substr(7), detail::materialize<T>(name, raw));
        } else {
            ck.parameters.emplace(name, detail::materialize<T>(name, raw));
        }
    }
    try {
        ck.config.validate();
        SwinModel<T>(ck.config, ck.parameters);  // shape audit
    } catch (const Error& e) {
        throw CheckpointError(K::Integrity, path.string() + ": " + e.what());
    }
    return ck;
}

}  // namespace swinsight
