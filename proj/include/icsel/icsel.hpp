#pragma once

#include "icsel/analysis.hpp"
#include "icsel/backend.hpp"
#include "icsel/common.hpp"
#include "icsel/condacc.hpp"
#include "icsel/corpus.hpp"
#include "icsel/datamodels.hpp"
#include "icsel/evaluation.hpp"
#include "icsel/harness.hpp"
#include "icsel/pool.hpp"
#include "icsel/remote.hpp"
#include "icsel/replay.hpp"
#include "icsel/selection.hpp"
#include "icsel/synthetic.hpp"
