#pragma once

// Umbrella header for the DeformerNet shape-servoing laboratory.

#include "dfn/dnet.hpp"
#include "dfn/error.hpp"
#include "dfn/feat.hpp"
#include "dfn/geom.hpp"
#include "dfn/mp.hpp"
#include "dfn/nn.hpp"
#include "dfn/pipeline.hpp"
#include "dfn/rng.hpp"
#include "dfn/servo.hpp"
#include "dfn/softsim.hpp"
