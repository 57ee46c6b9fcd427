#include <doctest.h>

TEST_SUITE("nn") {}
