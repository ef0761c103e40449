#pragma once

#include <cstdint>
#include <string>

#include "opera/derivations.hpp"
#include "opera/model.hpp"

namespace opera::synth {

struct SynthOptions {
  std::size_t instances = 200;
  std::uint64_t seed = 7;
};

// DROP-layout JSON covering all eleven operations and all five answer types.
// Instances come from fixed sentence families so a small model can fit them;
// every instance is pushed through the real labeling pipeline before it is
// emitted, and resampled until its derivation set has the intended shape
// (e.g. sum questions admit exactly one sign assignment).
std::string generate_drop_json(const SynthOptions& options);

// Fixed small instance for gradient checking: 24 joint tokens, three number
// mentions, a hand-built derivation set covering every label head, and two
// gold operations for the selector loss.
struct GradcheckFixture {
  corpus::Vocab vocab;
  derivations::LabeledInstance instance;
};

GradcheckFixture make_gradcheck_fixture();

model::ModelConfig gradcheck_config(const GradcheckFixture& fixture, std::size_t d_h,
                                    std::uint64_t seed = 13);

// Forward + joint loss + backward on the fixture; returns the loss value and
// leaves gradients accumulated in the model parameters.
double gradcheck_loss(model::Model& m, const GradcheckFixture& fixture);

}  // namespace opera::synth
