#pragma once

#include "wbt/augment.hpp"
#include "wbt/autodiff.hpp"
#include "wbt/checkpoint.hpp"
#include "wbt/config.hpp"
#include "wbt/error.hpp"
#include "wbt/experiment.hpp"
#include "wbt/graph.hpp"
#include "wbt/metrics.hpp"
#include "wbt/model.hpp"
#include "wbt/optim.hpp"
#include "wbt/random.hpp"
#include "wbt/ssl_loss.hpp"
#include "wbt/synthetic.hpp"
#include "wbt/trainer.hpp"
#include "wbt/types.hpp"
