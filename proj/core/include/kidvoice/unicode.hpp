// Copyright 2026 The kidvoice Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// UTF-8 helpers backed by ICU.

#pragma once

#include <string>
#include <string_view>

namespace kidvoice::unicode {

/// Strict UTF-8 validation (rejects overlongs, surrogates, truncation).
bool is_valid_utf8(std::string_view s);

/// Decodes strict UTF-8 into scalars; throws DataError on invalid input.
std::u32string to_u32(std::string_view utf8);

std::string to_utf8(std::u32string_view s);
std::string to_utf8(char32_t c);

/// NFC normalization; throws DataError on invalid UTF-8.
std::string nfc(std::string_view utf8);

}  // namespace kidvoice::unicode
