#pragma once

#include "stackheat/errors.hpp"
#include "stackheat/box.hpp"
#include "stackheat/scenario.hpp"
#include "stackheat/grid.hpp"
#include "stackheat/weighted_space.hpp"
#include "stackheat/krylov.hpp"
#include "stackheat/control_system.hpp"
#include "stackheat/state_solver.hpp"
#include "stackheat/adjoint_solver.hpp"
#include "stackheat/nash_solver.hpp"
#include "stackheat/leader_solver.hpp"
#include "stackheat/verification.hpp"
#include "stackheat/io.hpp"
