#pragma once

#include "fivelab/errors.hpp"
#include "fivelab/linalg.hpp"
#include "fivelab/rng.hpp"
#include "fivelab/dual.hpp"
#include "fivelab/mlp.hpp"
#include "fivelab/tape.hpp"
#include "fivelab/spd_ops.hpp"
#include "fivelab/net_tape.hpp"
#include "fivelab/models.hpp"
#include "fivelab/losses.hpp"
#include "fivelab/geometry.hpp"
#include "fivelab/eval.hpp"
#include "fivelab/data.hpp"
#include "fivelab/train.hpp"
#include "fivelab/checkpoint.hpp"
#include "fivelab/config.hpp"
#include "fivelab/checks.hpp"
