#pragma once

#include "seqdiou/detection.hpp"
#include "seqdiou/evaluation.hpp"
#include "seqdiou/frame_nms.hpp"
#include "seqdiou/geometry.hpp"
#include "seqdiou/matrix.hpp"
#include "seqdiou/ofa.hpp"
#include "seqdiou/ofa_gradcheck.hpp"
#include "seqdiou/random.hpp"
#include "seqdiou/synth.hpp"
#include "seqdiou/tubelet.hpp"

namespace seqdiou {
inline constexpr const char* kVersion = "0.1.0";
}
