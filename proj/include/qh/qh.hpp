#ifndef QH_QH_HPP
#define QH_QH_HPP

#include "qh/errors.hpp"
#include "qh/model.hpp"
#include "qh/integrate.hpp"
#include "qh/central_config.hpp"
#include "qh/mcgehee.hpp"
#include "qh/collision_flow.hpp"
#include "qh/homothetic.hpp"

#endif  // QH_QH_HPP
