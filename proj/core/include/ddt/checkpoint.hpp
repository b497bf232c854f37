#pragma once

#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ddt/config.hpp"
#include "ddt/model.hpp"
#include "ddt/tensor.hpp"

namespace ddt {

/// Malformed or incompatible artifact file.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[] = "DDTCKPT1";

/// Binary checkpoint:
///   "DDTCKPT1"
///   u64 header length, header text (key=value lines)
///   repeated until EOF: u32 name length, name, u32 rank, u64 dims[rank],
///                       float64 values (little-endian, row-major)
struct Checkpoint {
    KeyValues header;
    std::vector<std::pair<std::string, Tensor>> blocks;

    const Tensor* find(const std::string& name) const;
};

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& is);

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);

/// Header holds the model config plus `extra`; blocks hold every parameter
/// (frozen teacher included) in name order.
Checkpoint checkpoint_from_model(const DDTModel& model, const KeyValues& extra = {});
/// Rebuilds a model from the header config and overwrites every parameter.
DDTModel model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace ddt
