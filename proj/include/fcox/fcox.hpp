#pragma once

// Functional Cox regression: penalized partial likelihood over a Sobolev RKHS,
// GCV tuning, ACE information bounds, simulation and bootstrap tools.

#include "fcox/error.hpp"
#include "fcox/grid.hpp"
#include "fcox/sobolev.hpp"
#include "fcox/survival_data.hpp"
#include "fcox/pcox.hpp"
#include "fcox/gcv.hpp"
#include "fcox/ace.hpp"
#include "fcox/sim.hpp"
#include "fcox/serialize.hpp"
