#pragma once

// Numerical core. The configuration and pipeline layer (config.hpp,
// pipeline.hpp) additionally needs yaml-cpp and OpenSSL.

#include "fockscat/core.hpp"
#include "fockscat/fock.hpp"
#include "fockscat/hamiltonian.hpp"
#include "fockscat/quadrature.hpp"
#include "fockscat/evolution.hpp"
#include "fockscat/scattering.hpp"
#include "fockscat/dyson.hpp"
#include "fockscat/convergence.hpp"
