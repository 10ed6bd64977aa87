#pragma once
// Umbrella header.

#include "mtnav/errors.hpp"
#include "mtnav/tensor.hpp"
#include "mtnav/rng.hpp"
#include "mtnav/nn.hpp"
#include "mtnav/env.hpp"
#include "mtnav/memory.hpp"
#include "mtnav/agent.hpp"
#include "mtnav/training.hpp"
#include "mtnav/metrics.hpp"
#include "mtnav/config.hpp"
