#pragma once

#include "hgmm/anticipation.hpp"
#include "hgmm/benchmark.hpp"
#include "hgmm/core_types.hpp"
#include "hgmm/error.hpp"
#include "hgmm/evaluation.hpp"
#include "hgmm/io.hpp"
#include "hgmm/linearity.hpp"
#include "hgmm/log.hpp"
#include "hgmm/models/bicycle.hpp"
#include "hgmm/models/road_network.hpp"
#include "hgmm/models/scalar.hpp"
#include "hgmm/reduction.hpp"
#include "hgmm/sigma_transform.hpp"
#include "hgmm/splitting.hpp"

#include <string_view>

namespace hgmm {

inline constexpr std::string_view kVersion = "1.0.0";

} // namespace hgmm
