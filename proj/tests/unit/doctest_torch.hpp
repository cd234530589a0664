#pragma once

// The precompiled torch header defines a glog-style CHECK; the tests want doctest's.
#ifdef CHECK
#undef CHECK
#endif
#include <doctest.h>
