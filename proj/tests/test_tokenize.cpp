#include <random>
#include <string>
#include <vector>

#include "doctest.h"

#include "ctxforge/tokenize.hpp"

using namespace ctxforge;

TEST_CASE("tokenize: empty input yields no tokens") {
    CHECK(tokenize("").empty());
    CHECK(count_tokens("") == 0);
}

TEST_CASE("tokenize: punctuation splits, case folds") {
    CHECK(tokenize("The cache, the cache!") ==
          std::vector<std::string>{"the", "cache", "the", "cache"});
}

TEST_CASE("tokenize: alphanumeric runs survive intact") {
    CHECK(tokenize("GPT-4 uses 32k tokens") ==
          std::vector<std::string>{"gpt", "4", "uses", "32k", "tokens"});
}

TEST_CASE("tokenize: whitespace-only and symbol-only input") {
    CHECK(tokenize("   \t\n  ").empty());
    CHECK(tokenize("!!! --- ***").empty());
}

TEST_CASE("count_tokens equals tokenize().size()") {
    const char* samples[] = {"", "a", "a b c", "x1y2z3", "a-b-c d.e.f", "  gap   ped  "};
    for (const char* s : samples) CHECK(count_tokens(s) == tokenize(s).size());
}

TEST_CASE("join_tokens round-trips through tokenize") {
    std::vector<std::string> toks = {"alpha", "beta", "42"};
    CHECK(tokenize(join_tokens(toks)) == toks);
    CHECK(join_tokens({}) == "");
}

// Random byte strings: tokenizing the space-joined token list must be a
// fixed point.
TEST_CASE("tokenize: idempotent on its own joined output") {
    std::mt19937_64 gen(11);
    for (int iter = 0; iter < 200; ++iter) {
        std::string text;
        size_t len = gen() % 64;
        for (size_t i = 0; i < len; ++i)
            text.push_back(static_cast<char>(32 + gen() % 95));
        auto once = tokenize(text);
        auto twice = tokenize(join_tokens(once));
        CHECK(twice == once);
    }
}

TEST_CASE("tokenize: deterministic and order-preserving") {
    std::string text = "Zebra apple Zebra 9 lives";
    CHECK(tokenize(text) == tokenize(text));
    CHECK(tokenize(text) == std::vector<std::string>{"zebra", "apple", "zebra", "9", "lives"});
}
