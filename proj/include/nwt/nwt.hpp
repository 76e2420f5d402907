#pragma once

#include "nwt/catalog.hpp"
#include "nwt/error.hpp"
#include "nwt/estimator.hpp"
#include "nwt/hamiltonian.hpp"
#include "nwt/kernel.hpp"
#include "nwt/oracle.hpp"
#include "nwt/parallel.hpp"
#include "nwt/protocol.hpp"
#include "nwt/random.hpp"
#include "nwt/stats.hpp"
#include "nwt/stochastic_matrix.hpp"
#include "nwt/types.hpp"
#include "nwt/work.hpp"
