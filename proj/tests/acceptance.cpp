#include <catch_amalgamated.hpp>

#include "helpers.hpp"

TEST_CASE("placeholder") { CHECK(true); }
