#pragma once

#include "uccd/common.hpp"
#include "uccd/parallel.hpp"
#include "uccd/rng.hpp"
#include "uccd/usets.hpp"
#include "uccd/risk.hpp"
#include "uccd/model.hpp"
#include "uccd/nlp.hpp"
#include "uccd/solve.hpp"
#include "uccd/formulations.hpp"
#include "uccd/document.hpp"
#include "uccd/dynamics.hpp"
#include "uccd/report.hpp"
#include "uccd/commands.hpp"
