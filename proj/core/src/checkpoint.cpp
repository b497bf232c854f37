#include "ddt/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <sstream>

namespace ddt {

namespace {

template <class T>
void put_le(std::ostream& os, T value) {
    unsigned char bytes[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        bytes[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xff);
    }
    os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
bool get_le(std::istream& is, T& value) {
    unsigned char bytes[sizeof(T)];
    if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
        return false;
    }
    value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        value |= static_cast<T>(bytes[i]) << (8 * i);
    }
    return true;
}

template <class T>
T require_le(std::istream& is, const char* what) {
    T value{};
    if (!get_le(is, value)) {
        throw FormatError(std::string("checkpoint truncated while reading ") + what);
    }
    return value;
}

std::string require_bytes(std::istream& is, std::uint64_t n, const char* what) {
    if (n > (1ULL << 32)) {
        throw FormatError(std::string("implausible length for ") + what);
    }
    std::string s(n, '\0');
    if (n > 0 && !is.read(s.data(), static_cast<std::streamsize>(n))) {
        throw FormatError(std::string("checkpoint truncated while reading ") + what);
    }
    return s;
}

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, t] : blocks) {
        if (n == name) return &t;
    }
    return nullptr;
}

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt) {
    os.write(kCheckpointMagic, 8);
    const std::string header = format_key_values(ckpt.header);
    put_le<std::uint64_t>(os, header.size());
    os.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& [name, tensor] : ckpt.blocks) {
        put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_le<std::uint32_t>(os, static_cast<std::uint32_t>(tensor.rank()));
        for (auto d : tensor.shape()) {
            put_le<std::uint64_t>(os, d);
        }
        for (double v : tensor.data()) {
            put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
        }
    }
    if (!os) {
        throw FormatError("failed to write checkpoint");
    }
}

Checkpoint read_checkpoint(std::istream& is) {
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
        throw FormatError("not a DDT checkpoint (bad magic)");
    }
    Checkpoint ckpt;
    const auto header_len = require_le<std::uint64_t>(is, "header length");
    try {
        ckpt.header = parse_key_values(require_bytes(is, header_len, "header"));
    } catch (const ConfigError& e) {
        throw FormatError(std::string("bad checkpoint header: ") + e.what());
    }
    while (is.peek() != std::char_traits<char>::eof()) {
        const auto name_len = require_le<std::uint32_t>(is, "name length");
        std::string name = require_bytes(is, name_len, "parameter name");
        const auto rank = require_le<std::uint32_t>(is, "rank");
        if (rank == 0 || rank > 8) {
            throw FormatError("parameter '" + name + "' has unsupported rank " + std::to_string(rank));
        }
        Shape shape(rank);
        std::uint64_t n = 1;
        for (auto& d : shape) {
            d = require_le<std::uint64_t>(is, "dimension");
            if (d == 0 || d > (1ULL << 32)) {
                throw FormatError("parameter '" + name + "' has invalid dimension");
            }
            n *= d;
            if (n > (1ULL << 34)) {
                throw FormatError("parameter '" + name + "' is implausibly large");
            }
        }
        std::vector<double> values(n);
        for (auto& v : values) {
            v = std::bit_cast<double>(require_le<std::uint64_t>(is, "values"));
        }
        ckpt.blocks.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(values)));
    }
    return ckpt;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
    std::ostringstream os(std::ios::binary);
    write_checkpoint(os, ckpt);
    return std::move(os).str();
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
    std::istringstream is(bytes, std::ios::binary);
    return read_checkpoint(is);
}

Checkpoint checkpoint_from_model(const DDTModel& model, const KeyValues& extra) {
    Checkpoint ckpt;
    ckpt.header = model.config().to_key_values();
    for (const auto& [k, v] : extra) {
        ckpt.header[k] = v;
    }
    for (const auto& [name, t] : model.parameters()) {
        ckpt.blocks.emplace_back(name, t.detach());
    }
    return ckpt;
}

DDTModel model_from_checkpoint(const Checkpoint& ckpt) {
    ModelConfig config;
    try {
        config = ModelConfig::from_key_values(ckpt.header);
    } catch (const ConfigError& e) {
        throw FormatError(std::string("checkpoint config invalid: ") + e.what());
    }
    DDTModel model(config, 0);
    for (const auto& [name, t] : model.parameters()) {
        const Tensor* stored = ckpt.find(name);
        if (stored == nullptr) {
            throw FormatError("checkpoint missing parameter '" + name + "'");
        }
        if (stored->shape() != t.shape()) {
            throw FormatError("checkpoint parameter '" + name + "' has shape " + shape_string(stored->shape()) +
                              ", model expects " + shape_string(t.shape()));
        }
        model.set_parameter(name, stored->data());
    }
    return model;
}

}  // namespace ddt
