#pragma once

#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ddt {

/// Malformed configuration; carries the offending key.
class ConfigError : public std::invalid_argument {
public:
    ConfigError(std::string key, const std::string& message)
        : std::invalid_argument(key + ": " + message), key_(std::move(key)) {}
    const std::string& key() const { return key_; }

private:
    std::string key_;
};

/// Ordered key=value pairs. Blank lines and '#' comments are ignored.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(std::string_view text);
std::string format_key_values(const KeyValues& kv);

/// Shortest text that parses back to the same double.
std::string format_double(double v);

long long kv_int(const KeyValues& kv, const std::string& key);
double kv_double(const KeyValues& kv, const std::string& key);

enum class BlockStyle { baseline, improved };

std::string to_string(BlockStyle style);
BlockStyle parse_block_style(std::string_view name);

struct ModelConfig {
    std::size_t encoder_layers = 4;
    std::size_t decoder_layers = 2;
    std::size_t hidden_dim = 64;
    std::size_t heads = 4;
    std::size_t patch_size = 2;
    std::size_t image_size = 8;
    std::size_t channels = 1;
    /// Class count; index num_classes is the null (unconditional) class.
    std::size_t num_classes = 2;
    /// 1-based encoder layer whose output is aligned with the teacher.
    std::size_t alignment_layer = 2;
    BlockStyle block_style = BlockStyle::improved;
    std::size_t teacher_dim = 32;
    std::size_t teacher_channels = 8;
    std::size_t mlp_ratio = 4;
    std::size_t time_freq_dim = 256;
    std::size_t projector_dim = 128;

    std::size_t grid() const { return image_size / patch_size; }
    std::size_t tokens() const { return grid() * grid(); }
    std::size_t patch_dim() const { return channels * patch_size * patch_size; }
    std::size_t head_dim() const { return hidden_dim / heads; }
    std::size_t null_class() const { return num_classes; }

    /// Throws ConfigError naming the first violated constraint.
    void validate() const;

    KeyValues to_key_values() const;
    static ModelConfig from_key_values(const KeyValues& kv);

    bool operator==(const ModelConfig&) const = default;
};

std::size_t default_alignment_layer(std::size_t encoder_layers);

/// Named presets: "desk" (4En2De, 64 wide), "B/2" (8En4De), "L/2" (20En4De),
/// "XL/2" (22En6De). Large presets use 32x32x4 latents and 1000 classes.
ModelConfig model_preset(std::string_view name);

}  // namespace ddt
