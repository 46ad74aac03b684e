#pragma once

#include "coad/core.hpp"
#include "coad/worldsim.hpp"
#include "coad/training.hpp"
#include "coad/fusion.hpp"
#include "coad/decoder.hpp"
#include "coad/metrics.hpp"
#include "coad/config.hpp"
#include "coad/harness.hpp"
