#pragma once

#include "sotlab/core.hpp"
#include "sotlab/random.hpp"
#include "sotlab/parallel.hpp"
#include "sotlab/measures.hpp"
#include "sotlab/kernels.hpp"
#include "sotlab/transport.hpp"
#include "sotlab/schrodinger.hpp"
#include "sotlab/sde.hpp"
#include "sotlab/stats.hpp"
#include "sotlab/bounds.hpp"
#include "sotlab/io.hpp"
