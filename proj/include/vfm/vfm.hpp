#pragma once

#include "vfm/errors.hpp"
#include "vfm/text.hpp"
#include "vfm/random.hpp"
#include "vfm/stats.hpp"
#include "vfm/fluid.hpp"
#include "vfm/choke.hpp"
#include "vfm/autodiff.hpp"
#include "vfm/network.hpp"
#include "vfm/hybrid.hpp"
#include "vfm/estimation.hpp"
#include "vfm/pipeline.hpp"
#include "vfm/synthetic.hpp"
#include "vfm/evaluation.hpp"
