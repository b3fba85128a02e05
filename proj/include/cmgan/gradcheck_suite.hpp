#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cmgan/gradcheck.hpp"

namespace cmgan {

struct GradCheckCase {
  std::string name;
  std::function<ag::GradCheckResult(uint64_t seed)> run;
};

// One case per registered autograd primitive, on small random 64-bit inputs.
std::vector<GradCheckCase> primitive_grad_cases();

// Layer and network cases: conformer sub-block, two-stage block, encoder,
// decoders, full tiny generator, discriminator, losses, differentiable ISTFT.
std::vector<GradCheckCase> model_grad_cases();

}  // namespace cmgan
