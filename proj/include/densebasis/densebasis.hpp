#pragma once

// Umbrella header. The JSON-backed parts (config, reports, dataset_io) need
// nlohmann/json on the include path; everything else needs only Eigen.

#include "densebasis/cohort.hpp"
#include "densebasis/config.hpp"
#include "densebasis/dataset_io.hpp"
#include "densebasis/encoder.hpp"
#include "densebasis/errors.hpp"
#include "densebasis/evaluation.hpp"
#include "densebasis/geometry.hpp"
#include "densebasis/losses.hpp"
#include "densebasis/matrix.hpp"
#include "densebasis/matrix_io.hpp"
#include "densebasis/optimizer.hpp"
#include "densebasis/probes.hpp"
#include "densebasis/reports.hpp"
#include "densebasis/running_covariance.hpp"
#include "densebasis/trainer.hpp"
