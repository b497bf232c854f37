#include "ddt/config.hpp"

#include <charconv>
#include <sstream>

namespace ddt {

namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

}  // namespace

KeyValues parse_key_values(std::string_view text) {
    KeyValues kv;
    std::size_t line_no = 0;
    while (!text.empty()) {
        ++line_no;
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        line = trim(line);
        if (line.empty() || line.front() == '#') {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError("line " + std::to_string(line_no), "expected key=value, got '" + std::string(line) + "'");
        }
        std::string key(trim(line.substr(0, eq)));
        if (key.empty()) {
            throw ConfigError("line " + std::to_string(line_no), "empty key");
        }
        kv[key] = std::string(trim(line.substr(eq + 1)));
    }
    return kv;
}

std::string format_key_values(const KeyValues& kv) {
    std::string out;
    for (const auto& [k, v] : kv) {
        out += k;
        out += '=';
        out += v;
        out += '\n';
    }
    return out;
}

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

long long kv_int(const KeyValues& kv, const std::string& key) {
    const auto it = kv.find(key);
    if (it == kv.end()) {
        throw ConfigError(key, "missing");
    }
    long long value = 0;
    const auto& s = it->second;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw ConfigError(key, "expected an integer, got '" + s + "'");
    }
    return value;
}

double kv_double(const KeyValues& kv, const std::string& key) {
    const auto it = kv.find(key);
    if (it == kv.end()) {
        throw ConfigError(key, "missing");
    }
    try {
        std::size_t used = 0;
        const double value = std::stod(it->second, &used);
        if (used != it->second.size()) {
            throw std::invalid_argument("trailing characters");
        }
        return value;
    } catch (const std::exception&) {
        throw ConfigError(key, "expected a number, got '" + it->second + "'");
    }
}

std::string to_string(BlockStyle style) { return style == BlockStyle::baseline ? "baseline" : "improved"; }

BlockStyle parse_block_style(std::string_view name) {
    if (name == "baseline") return BlockStyle::baseline;
    if (name == "improved") return BlockStyle::improved;
    throw ConfigError("block_style", "expected baseline or improved, got '" + std::string(name) + "'");
}

std::size_t default_alignment_layer(std::size_t encoder_layers) { return (encoder_layers + 1) / 2; }

void ModelConfig::validate() const {
    auto positive = [](std::size_t v, const char* key) {
        if (v == 0) throw ConfigError(key, "must be positive");
    };
    positive(encoder_layers, "encoder_layers");
    positive(decoder_layers, "decoder_layers");
    positive(hidden_dim, "hidden_dim");
    positive(heads, "heads");
    positive(patch_size, "patch_size");
    positive(image_size, "image_size");
    positive(channels, "channels");
    positive(num_classes, "num_classes");
    positive(teacher_dim, "teacher_dim");
    positive(teacher_channels, "teacher_channels");
    positive(mlp_ratio, "mlp_ratio");
    positive(projector_dim, "projector_dim");
    if (hidden_dim % heads != 0) {
        throw ConfigError("heads", "hidden_dim " + std::to_string(hidden_dim) + " not divisible by heads " +
                                       std::to_string(heads));
    }
    if (image_size % patch_size != 0) {
        throw ConfigError("patch_size", "image_size " + std::to_string(image_size) + " not divisible by patch_size " +
                                            std::to_string(patch_size));
    }
    if (alignment_layer < 1 || alignment_layer > encoder_layers) {
        throw ConfigError("alignment_layer", "must lie in [1, encoder_layers]");
    }
    if (time_freq_dim < 2 || time_freq_dim % 2 != 0) {
        throw ConfigError("time_freq_dim", "must be even and at least 2");
    }
    if (block_style == BlockStyle::improved && head_dim() % 4 != 0) {
        throw ConfigError("heads", "improved blocks need head_dim divisible by 4 for 2-D rotary encoding");
    }
}

KeyValues ModelConfig::to_key_values() const {
    KeyValues kv;
    kv["encoder_layers"] = std::to_string(encoder_layers);
    kv["decoder_layers"] = std::to_string(decoder_layers);
    kv["hidden_dim"] = std::to_string(hidden_dim);
    kv["heads"] = std::to_string(heads);
    kv["patch_size"] = std::to_string(patch_size);
    kv["image_size"] = std::to_string(image_size);
    kv["channels"] = std::to_string(channels);
    kv["num_classes"] = std::to_string(num_classes);
    kv["alignment_layer"] = std::to_string(alignment_layer);
    kv["block_style"] = to_string(block_style);
    kv["teacher_dim"] = std::to_string(teacher_dim);
    kv["teacher_channels"] = std::to_string(teacher_channels);
    kv["mlp_ratio"] = std::to_string(mlp_ratio);
    kv["time_freq_dim"] = std::to_string(time_freq_dim);
    kv["projector_dim"] = std::to_string(projector_dim);
    return kv;
}

ModelConfig ModelConfig::from_key_values(const KeyValues& kv) {
    ModelConfig c;
    auto size = [&](const char* key) {
        const long long v = kv_int(kv, key);
        if (v < 0) throw ConfigError(key, "must be non-negative");
        return static_cast<std::size_t>(v);
    };
    c.encoder_layers = size("encoder_layers");
    c.decoder_layers = size("decoder_layers");
    c.hidden_dim = size("hidden_dim");
    c.heads = size("heads");
    c.patch_size = size("patch_size");
    c.image_size = size("image_size");
    c.channels = size("channels");
    c.num_classes = size("num_classes");
    c.alignment_layer = size("alignment_layer");
    const auto style = kv.find("block_style");
    if (style == kv.end()) throw ConfigError("block_style", "missing");
    c.block_style = parse_block_style(style->second);
    c.teacher_dim = size("teacher_dim");
    c.teacher_channels = size("teacher_channels");
    c.mlp_ratio = size("mlp_ratio");
    c.time_freq_dim = size("time_freq_dim");
    c.projector_dim = size("projector_dim");
    c.validate();
    return c;
}

ModelConfig model_preset(std::string_view name) {
    ModelConfig c;
    auto large = [&](std::size_t enc, std::size_t dec, std::size_t width, std::size_t heads) {
        c.encoder_layers = enc;
        c.decoder_layers = dec;
        c.hidden_dim = width;
        c.heads = heads;
        c.patch_size = 2;
        c.image_size = 32;
        c.channels = 4;
        c.num_classes = 1000;
        c.teacher_dim = 768;
        c.teacher_channels = 32;
        c.projector_dim = 2048;
        c.alignment_layer = default_alignment_layer(enc);
    };
    if (name == "desk") {
        c.alignment_layer = default_alignment_layer(c.encoder_layers);
    } else if (name == "B/2") {
        large(8, 4, 768, 12);
    } else if (name == "L/2") {
        large(20, 4, 1024, 16);
    } else if (name == "XL/2") {
        large(22, 6, 1152, 16);
    } else {
        throw ConfigError("preset", "unknown preset '" + std::string(name) + "' (desk, B/2, L/2, XL/2)");
    }
    c.validate();
    return c;
}

}  // namespace ddt
