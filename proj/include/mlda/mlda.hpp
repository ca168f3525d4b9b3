#pragma once

#include "mlda/bounds.hpp"
#include "mlda/discriminant.hpp"
#include "mlda/error.hpp"
#include "mlda/io.hpp"
#include "mlda/population.hpp"
#include "mlda/scatter.hpp"
#include "mlda/spectral.hpp"
#include "mlda/synth.hpp"
