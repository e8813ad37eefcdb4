#pragma once

#include "ppcf/error.hpp"
#include "ppcf/random.hpp"
#include "ppcf/fields.hpp"
#include "ppcf/process.hpp"
#include "ppcf/kernel.hpp"
#include "ppcf/model.hpp"
#include "ppcf/nuisance.hpp"
#include "ppcf/crossfit.hpp"
#include "ppcf/inference.hpp"
#include "ppcf/harness.hpp"
