#pragma once

#include "namnc/checkpoint.hpp"
#include "namnc/data.hpp"
#include "namnc/error.hpp"
#include "namnc/explain.hpp"
#include "namnc/model.hpp"
#include "namnc/numeric.hpp"
#include "namnc/parallel.hpp"
#include "namnc/report.hpp"
#include "namnc/training.hpp"
