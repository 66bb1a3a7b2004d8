#include "ctxforge/tokenize.hpp"

#include <cctype>

namespace ctxforge {

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string current;
    for (unsigned char c : text) {
        if (std::isalnum(c)) {
            current.push_back(static_cast<char>(std::tolower(c)));
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

size_t count_tokens(std::string_view text) {
    size_t n = 0;
    bool in_token = false;
    for (unsigned char c : text) {
        if (std::isalnum(c)) {
            if (!in_token) {
                ++n;
                in_token = true;
            }
        } else {
            in_token = false;
        }
    }
    return n;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
    std::string out;
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (i > 0) out.push_back(' ');
        out += tokens[i];
    }
    return out;
}

}  // namespace ctxforge
