#pragma once

#include "controller.hpp"
#include "feedback.hpp"
#include "harness.hpp"
#include "library.hpp"
#include "metering.hpp"
#include "mpc.hpp"
#include "network.hpp"
#include "plant.hpp"
#include "sysid.hpp"
