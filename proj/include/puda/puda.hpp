#pragma once

// Umbrella header.
#include "puda/analysis.hpp"
#include "puda/costs.hpp"
#include "puda/engine.hpp"
#include "puda/experiment.hpp"
#include "puda/libsvm.hpp"
#include "puda/netgraph.hpp"
#include "puda/prox.hpp"
#include "puda/state.hpp"
#include "puda/types.hpp"
