#pragma once

// Umbrella header for the in-process library (no file I/O).

#include "mvi/error.hpp"
#include "mvi/fusion.hpp"
#include "mvi/imaging.hpp"
#include "mvi/maskgen.hpp"
#include "mvi/metrics.hpp"
#include "mvi/morphology.hpp"
#include "mvi/mvindex.hpp"
#include "mvi/parallel.hpp"
#include "mvi/stain.hpp"
