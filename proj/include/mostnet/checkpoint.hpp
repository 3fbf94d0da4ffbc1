#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include <zlib.h>

#include "mostnet/png.hpp"
#include "mostnet/tensor.hpp"

namespace mostnet {

// Single-file container of named records, little-endian:
//
//   "MOSTNETC" | u32 version | u32 record count | records... | u32 crc32
//   record: u32 name length | name | u8 kind | u32 rank | u64 dims[rank]
//           | u64 payload bytes | payload
//
// kind 0 = float32 array, 1 = float64 array, 2 = UTF-8 text, 3 = u64 scalar.
// The trailing CRC covers every preceding byte.
inline constexpr char kCheckpointMagic[8] = {'M', 'O', 'S', 'T', 'N', 'E', 'T', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class RecordKind : std::uint8_t { f32 = 0, f64 = 1, text = 2, u64 = 3 };

struct Record {
    RecordKind kind{};
    Shape shape;
    std::vector<std::uint8_t> payload;
};

namespace ckpt_detail {

template <class U>
void put(std::vector<std::uint8_t>& out, U v) {
    static_assert(std::is_trivially_copyable_v<U>);
    std::uint8_t bytes[sizeof(U)];
    std::memcpy(bytes, &v, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
    out.insert(out.end(), bytes, bytes + sizeof(U));
}

class Reader {
public:
    explicit Reader(const std::vector<std::uint8_t>& bytes, std::size_t limit) : bytes_(bytes), limit_(limit) {}

    template <class U>
    U get(const char* what) {
        need(sizeof(U), what);
        std::uint8_t raw[sizeof(U)];
        std::memcpy(raw, bytes_.data() + pos_, sizeof(U));
        if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(U));
        pos_ += sizeof(U);
        U v;
        std::memcpy(&v, raw, sizeof(U));
        return v;
    }

    std::vector<std::uint8_t> take(std::size_t n, const char* what) {
        need(n, what);
        std::vector<std::uint8_t> out(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                      bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
        pos_ += n;
        return out;
    }

    std::size_t position() const { return pos_; }

private:
    void need(std::size_t n, const char* what) {
        if (n > limit_ - pos_) {
            throw CheckpointError("checkpoint truncated while reading " + std::string(what) + " at byte offset " +
                                  std::to_string(pos_));
        }
    }

    const std::vector<std::uint8_t>& bytes_;
    std::size_t limit_;
    std::size_t pos_ = 0;
};

template <class T>
constexpr RecordKind kind_of() {
    if constexpr (std::is_same_v<T, float>) return RecordKind::f32;
    else return RecordKind::f64;
}

}  // namespace ckpt_detail

class CheckpointWriter {
public:
    template <class T>
    void add_array(const std::string& name, const Shape& shape, std::span<const T> values) {
        static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
        Record r{ckpt_detail::kind_of<T>(), shape, {}};
        r.payload.reserve(values.size() * sizeof(T));
        for (T v : values) ckpt_detail::put(r.payload, v);
        add(name, std::move(r));
    }

    template <class T>
    void add_tensor(const std::string& name, const Tensor<T>& t) {
        add_array<T>(name, t.shape(), t.data());
    }

    void add_text(const std::string& name, const std::string& text) {
        add(name, Record{RecordKind::text, Shape{text.size()}, std::vector<std::uint8_t>(text.begin(), text.end())});
    }

    void add_u64(const std::string& name, std::uint64_t v) {
        Record r{RecordKind::u64, Shape{}, {}};
        ckpt_detail::put(r.payload, v);
        add(name, std::move(r));
    }

    std::vector<std::uint8_t> bytes() const {
        std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 8);
        ckpt_detail::put(out, kCheckpointVersion);
        ckpt_detail::put(out, static_cast<std::uint32_t>(records_.size()));
        for (const auto& [name, r] : records_) {
            ckpt_detail::put(out, static_cast<std::uint32_t>(name.size()));
            out.insert(out.end(), name.begin(), name.end());
            out.push_back(static_cast<std::uint8_t>(r.kind));
            ckpt_detail::put(out, static_cast<std::uint32_t>(r.shape.size()));
            for (auto d : r.shape) ckpt_detail::put(out, static_cast<std::uint64_t>(d));
            ckpt_detail::put(out, static_cast<std::uint64_t>(r.payload.size()));
            out.insert(out.end(), r.payload.begin(), r.payload.end());
        }
        ckpt_detail::put(out, static_cast<std::uint32_t>(crc32(0L, out.data(), static_cast<uInt>(out.size()))));
        return out;
    }

    // Written to a sibling temporary and renamed, so a crash never leaves a
    // half-written checkpoint under `path`.
    void save(const std::filesystem::path& path) const {
        auto tmp = path;
        tmp += ".tmp";
        write_file_bytes(tmp, bytes());
        std::filesystem::rename(tmp, path);
    }

private:
    void add(const std::string& name, Record r) {
        if (!records_.emplace(name, std::move(r)).second) throw CheckpointError("duplicate checkpoint record '" + name + "'");
    }

    std::map<std::string, Record> records_;
};

class CheckpointFile {
public:
    static CheckpointFile parse(const std::vector<std::uint8_t>& bytes) {
        if (bytes.size() < 8 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
            throw CheckpointError("not a checkpoint file (bad magic)");
        }
        if (bytes.size() < 20) throw CheckpointError("checkpoint truncated: " + std::to_string(bytes.size()) + " bytes");
        ckpt_detail::Reader r(bytes, bytes.size() - 4);
        r.take(8, "magic");
        CheckpointFile f;
        f.version_ = r.get<std::uint32_t>("version");
        if (f.version_ != kCheckpointVersion) {
            throw CheckpointError("checkpoint version " + std::to_string(f.version_) + " is not supported (this build reads version " +
                                  std::to_string(kCheckpointVersion) + ")");
        }
        const auto count = r.get<std::uint32_t>("record count");
        for (std::uint32_t i = 0; i < count; ++i) {
            const auto name_len = r.get<std::uint32_t>("record name length");
            const auto name_bytes = r.take(name_len, "record name");
            std::string name(name_bytes.begin(), name_bytes.end());
            Record rec;
            const auto kind = r.get<std::uint8_t>("record kind");
            if (kind > 3) throw CheckpointError("record '" + name + "' has unknown kind " + std::to_string(kind));
            rec.kind = static_cast<RecordKind>(kind);
            const auto rank = r.get<std::uint32_t>("record rank");
            if (rank > 8) throw CheckpointError("record '" + name + "' has implausible rank " + std::to_string(rank));
            for (std::uint32_t d = 0; d < rank; ++d) rec.shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>("record extent")));
            const auto size = r.get<std::uint64_t>("record size");
            rec.payload = r.take(static_cast<std::size_t>(size), "record payload");
            f.records_.emplace(std::move(name), std::move(rec));
        }
        if (r.position() != bytes.size() - 4) throw CheckpointError("checkpoint has trailing bytes before the checksum");
        std::uint32_t stored = 0;
        for (std::size_t i = 0; i < 4; ++i) stored |= std::uint32_t{bytes[bytes.size() - 4 + i]} << (8 * i);
        if (stored != static_cast<std::uint32_t>(crc32(0L, bytes.data(), static_cast<uInt>(bytes.size() - 4)))) {
            throw CheckpointError("checkpoint checksum mismatch");
        }
        return f;
    }

    static CheckpointFile load(const std::filesystem::path& path) {
        try {
            return parse(read_file_bytes(path));
        } catch (const CheckpointError& e) {
            throw CheckpointError(path.string() + ": " + e.what());
        }
    }

    std::uint32_t version() const { return version_; }
    bool contains(const std::string& name) const { return records_.contains(name); }
    const std::map<std::string, Record>& records() const { return records_; }

    const Record& record(const std::string& name) const {
        const auto it = records_.find(name);
        if (it == records_.end()) throw CheckpointError("checkpoint has no record '" + name + "'");
        return it->second;
    }

    template <class T>
    std::vector<T> array(const std::string& name, const Shape& expected) const {
        const auto& r = record(name);
        if (r.kind != ckpt_detail::kind_of<T>()) throw CheckpointError("record '" + name + "' has a different element type");
        if (r.shape != expected) {
            throw CheckpointError("record '" + name + "' has shape " + shape_str(r.shape) + ", expected " + shape_str(expected));
        }
        if (r.payload.size() != shape_numel(expected) * sizeof(T)) {
            throw CheckpointError("record '" + name + "' payload size does not match its shape");
        }
        std::vector<T> out(shape_numel(expected));
        ckpt_detail::Reader reader(r.payload, r.payload.size());
        for (auto& v : out) v = reader.template get<T>("array element");
        return out;
    }

    std::string text(const std::string& name) const {
        const auto& r = record(name);
        if (r.kind != RecordKind::text) throw CheckpointError("record '" + name + "' is not text");
        return {r.payload.begin(), r.payload.end()};
    }

    std::uint64_t u64(const std::string& name) const {
        const auto& r = record(name);
        if (r.kind != RecordKind::u64 || r.payload.size() != 8) throw CheckpointError("record '" + name + "' is not a u64");
        ckpt_detail::Reader reader(r.payload, 8);
        return reader.get<std::uint64_t>("u64");
    }

private:
    std::uint32_t version_ = 0;
    std::map<std::string, Record> records_;
};

}  // namespace mostnet
