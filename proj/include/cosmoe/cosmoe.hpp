#pragma once

#include "cosmoe/errors.hpp"
#include "cosmoe/random.hpp"
#include "cosmoe/model.hpp"
#include "cosmoe/calculus.hpp"
#include "cosmoe/estimation.hpp"
#include "cosmoe/metrics.hpp"
#include "cosmoe/experiments.hpp"
#include "cosmoe/report.hpp"
#include "cosmoe/verification.hpp"
#include "cosmoe/cli.hpp"
