#pragma once

#include "pbsens/linalg.hpp"
#include "pbsens/ode.hpp"
#include "pbsens/sensitivity.hpp"
#include "pbsens/reference.hpp"
#include "pbsens/models.hpp"
#include "pbsens/study.hpp"
#include "pbsens/io.hpp"
