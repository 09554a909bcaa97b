#pragma once

// Umbrella header for the implicit Fourier neural operator library.

#include "ifno/checkpoint.hpp"
#include "ifno/config.hpp"
#include "ifno/dataset.hpp"
#include "ifno/errors.hpp"
#include "ifno/fem.hpp"
#include "ifno/fung.hpp"
#include "ifno/grid.hpp"
#include "ifno/mls.hpp"
#include "ifno/model.hpp"
#include "ifno/platform.hpp"
#include "ifno/protocols.hpp"
#include "ifno/rng.hpp"
#include "ifno/spectral.hpp"
#include "ifno/spline.hpp"
#include "ifno/stress_record.hpp"
#include "ifno/study.hpp"
#include "ifno/synthetic.hpp"
#include "ifno/tracking.hpp"
#include "ifno/training.hpp"
