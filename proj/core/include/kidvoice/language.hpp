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

#pragma once

#include <array>
#include <string>
#include <string_view>

namespace kidvoice {

/// Target languages: Singaporean-accented Mandarin, Malay, Tamil.
enum class Language { zh = 0, ma = 1, ta = 2 };

inline constexpr std::array<Language, 3> kAllLanguages = {Language::zh, Language::ma, Language::ta};

std::string_view to_string(Language lang);

/// Throws DataError("unknown language code: ...") for anything but zh/ma/ta.
Language parse_language(std::string_view code);

}  // namespace kidvoice
