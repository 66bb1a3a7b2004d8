#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace ctxforge {

// Token = maximal run of ASCII alphanumerics, lowercased. This is the
// budget unit for the whole engine; every token_count field is defined
// as tokenize(text).size().
std::vector<std::string> tokenize(std::string_view text);

size_t count_tokens(std::string_view text);

std::string join_tokens(const std::vector<std::string>& tokens);

}  // namespace ctxforge
