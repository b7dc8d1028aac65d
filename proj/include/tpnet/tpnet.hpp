#pragma once

#include "tpnet/checkpoint.hpp"
#include "tpnet/corpus_io.hpp"
#include "tpnet/datagen.hpp"
#include "tpnet/evalsuite.hpp"
#include "tpnet/geometry.hpp"
#include "tpnet/learn.hpp"
#include "tpnet/manifest.hpp"
#include "tpnet/metrics.hpp"
#include "tpnet/model.hpp"
#include "tpnet/random.hpp"
#include "tpnet/runtime.hpp"
#include "tpnet/sim.hpp"
