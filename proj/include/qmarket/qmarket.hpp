#ifndef QMARKET_QMARKET_HPP
#define QMARKET_QMARKET_HPP

#include "exp_poly.hpp"
#include "io.hpp"
#include "market.hpp"
#include "operators.hpp"
#include "perturbation.hpp"
#include "propagator.hpp"
#include "semiclassical.hpp"

#endif
