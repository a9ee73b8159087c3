#pragma once

#include "eds/bias.hpp"
#include "eds/collective_variable.hpp"
#include "eds/dgdiff.hpp"
#include "eds/ensemble.hpp"
#include "eds/estimators.hpp"
#include "eds/gaussian_mixture.hpp"
#include "eds/io.hpp"
#include "eds/langevin.hpp"
#include "eds/mbar.hpp"
#include "eds/metadiff.hpp"
#include "eds/noise_schedule.hpp"
#include "eds/pmf.hpp"
#include "eds/quadrature.hpp"
#include "eds/rng.hpp"
#include "eds/steering.hpp"
#include "eds/study.hpp"
#include "eds/surfaces.hpp"
#include "eds/types.hpp"
#include "eds/umbrella.hpp"
