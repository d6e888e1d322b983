#pragma once

#include "svct/certification.hpp"
#include "svct/cbm/backbone.hpp"
#include "svct/cbm/concepts.hpp"
#include "svct/cbm/final_layer.hpp"
#include "svct/cbm/model.hpp"
#include "svct/cbm/projection.hpp"
#include "svct/concept_math.hpp"
#include "svct/errors.hpp"
#include "svct/harness/config.hpp"
#include "svct/harness/io.hpp"
#include "svct/harness/metrics.hpp"
#include "svct/harness/pipeline.hpp"
#include "svct/harness/report.hpp"
#include "svct/harness/sweep.hpp"
#include "svct/harness/synthetic.hpp"
#include "svct/linalg.hpp"
#include "svct/perturb.hpp"
#include "svct/smoothing.hpp"
