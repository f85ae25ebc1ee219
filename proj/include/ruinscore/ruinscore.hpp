#pragma once

#include "ruinscore/dataset_io.hpp"
#include "ruinscore/detector_backend.hpp"
#include "ruinscore/error.hpp"
#include "ruinscore/evaluate.hpp"
#include "ruinscore/fusion.hpp"
#include "ruinscore/meta.hpp"
#include "ruinscore/pipeline.hpp"
#include "ruinscore/synth.hpp"
#include "ruinscore/types.hpp"
