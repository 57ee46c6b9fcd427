#include <doctest.h>

TEST_SUITE("ssl") {}
