#pragma once

#include "moef/config.hpp"
#include "moef/params.hpp"

#include <map>
#include <string>

namespace moef {

// Resumable training state. The sample stream is counter-based, so the RNG
// state is the master seed; together with the step counter it pins the
// trajectory exactly.
struct TrainState {
    ExperimentConfig config;
    ParamSet params;
    std::map<std::string, Matrix> velocity;  // momentum state, when in use
    std::uint64_t step = 0;                  // completed steps
    std::uint64_t rng_seed = 0;
};

// Self-describing binary container: magic, version, little-endian headers,
// the serialized config, and named float64 arrays. Load validates magic,
// version and every array shape against a model rebuilt from the embedded
// config before anything is returned.
void save_checkpoint(const TrainState& state, const std::string& path);
TrainState load_checkpoint(const std::string& path);

}  // namespace moef
