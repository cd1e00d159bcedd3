#pragma once

#include <string>

#include "haht/data.hpp"
#include "haht/model.hpp"

namespace haht {

struct Checkpoint {
    ModelConfig config;
    Variant variant = Variant::Full;
    Vocabulary vocab;
    ParameterStore params;

    HahtModel to_model() const;
};

// Versioned container: a length-prefixed JSON header (format version, model
// config, variant, vocabulary) followed by each parameter in name-sorted
// order as name, shape, and row-major little-endian 8-byte floats.
void save_checkpoint(const std::string& path, const HahtModel& model, const Vocabulary& vocab);
Checkpoint load_checkpoint(const std::string& path);

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

}  // namespace haht
