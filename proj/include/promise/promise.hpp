#pragma once

#include "promise/core.hpp"
#include "promise/diag.hpp"
#include "promise/glm.hpp"
#include "promise/optim.hpp"
#include "promise/precond.hpp"
#include "promise/sketchlin.hpp"
