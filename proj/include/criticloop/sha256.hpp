#pragma once

#include <string>
#include <string_view>

namespace criticloop {

// SHA-256 of `data`, as a lowercase hex string. Used for the prompt-template
// fidelity check; self-contained so the core library does not need OpenSSL.
std::string sha256_hex(std::string_view data);

}  // namespace criticloop
