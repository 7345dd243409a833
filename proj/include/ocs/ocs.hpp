#pragma once

#include "ocs/error.hpp"
#include "ocs/random.hpp"
#include "ocs/sampling.hpp"
#include "ocs/sampling_matrix.hpp"
#include "ocs/oracle.hpp"
#include "ocs/protocol.hpp"
#include "ocs/tasks.hpp"
#include "ocs/federation_io.hpp"
#include "ocs/optim.hpp"
#include "ocs/harness.hpp"
