#pragma once

#include "core_data.hpp"
#include "draws.hpp"
#include "evaluation.hpp"
#include "model.hpp"
#include "pipeline.hpp"
#include "propensity.hpp"
#include "sampler.hpp"
#include "simulator.hpp"
#include "types.hpp"
