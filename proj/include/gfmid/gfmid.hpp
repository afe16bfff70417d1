#pragma once

#include "gfmid/admittance.hpp"
#include "gfmid/dq_admittance.hpp"
#include "gfmid/era.hpp"
#include "gfmid/era_realization.hpp"
#include "gfmid/error.hpp"
#include "gfmid/experiments.hpp"
#include "gfmid/plant.hpp"
#include "gfmid/ratfit.hpp"
#include "gfmid/signals.hpp"
