#pragma once

// Umbrella header for the EGA distillation toolkit.

#include "ega/commands.hpp"
#include "ega/config.hpp"
#include "ega/data.hpp"
#include "ega/errors.hpp"
#include "ega/gradcheck.hpp"
#include "ega/graph_align.hpp"
#include "ega/network.hpp"
#include "ega/ops.hpp"
#include "ega/optim.hpp"
#include "ega/random.hpp"
#include "ega/tensor.hpp"
#include "ega/train.hpp"
#include "ega/version.hpp"
