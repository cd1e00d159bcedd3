#pragma once

#include <cstdint>

#include "haht/data.hpp"
#include "haht/model.hpp"
#include "haht/params.hpp"

namespace haht {

// Fixed 30-token vocabulary (6 reserved + 24 words) used by the verification
// harnesses.
Vocabulary tiny_vocabulary();

// d=8, d_ff=16, 1 encoder + 1 decoder layer, 2 heads, dropout 0.
ModelConfig tiny_config();

// Deterministic random example over the tiny vocabulary with `sessions`
// history sessions.
MscExample tiny_example(std::uint64_t seed, int sessions = 2);

// Central-difference check of the full teacher-forced loss against the
// analytic gradients, over every parameter coordinate.
GradCheckReport run_model_gradcheck(std::uint64_t seed, double h, double tolerance,
                                    Variant variant = Variant::Full);

}  // namespace haht
