#include <catch2/catch_amalgamated.hpp>
#include "cmkn/interpret.hpp"
TEST_CASE("placeholder interpret") { CHECK(true); }
