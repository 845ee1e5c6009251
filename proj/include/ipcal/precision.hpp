#pragma once

// 113-bit binary floating point for finite-difference references. Requires
// GNU extensions and libquadmath.

#include <boost/multiprecision/float128.hpp>

namespace ipcal {

using Quad = boost::multiprecision::float128;

} // namespace ipcal
