#pragma once

#include <string>

#include "spikefuse/autodiff.hpp"
#include "spikefuse/config.hpp"

namespace spikefuse {

/// Binary container: magic, version, config echoed as text, then
/// name/shape/data triples in lexicographic order.
void save_checkpoint(const std::string& path, const ParameterStore& store,
                     const RunConfig& config);

struct Checkpoint {
    RunConfig config;
    ParameterStore store;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace spikefuse
