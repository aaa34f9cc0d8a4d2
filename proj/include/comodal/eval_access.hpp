#pragma once

#include "comodal/scene_synth.hpp"

namespace comodal {

/// Issues ground-truth keys. Included by evaluation, dataset IO and tests;
/// training code does not include this header.
struct EvalAccess {
  static GroundTruthKey key() { return GroundTruthKey{}; }
};

}  // namespace comodal
