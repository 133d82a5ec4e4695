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

#include "kidvoice/language.hpp"

#include <string>
#include <utility>
#include <vector>

namespace kidvoice::textfront {

// Input vocabulary: 0-255 UTF-8 bytes, then one identifier per language and
// the marker that opens the speech-token segment.
inline constexpr int kLangZh = 256;
inline constexpr int kLangMa = 257;
inline constexpr int kLangTa = 258;
inline constexpr int kBosSpeech = 259;
inline constexpr int kInputVocab = 260;
inline constexpr std::size_t kMaxTextBytes = 512;

int language_token(Language lang);
bool is_language_token(int id);
Language language_of_token(int id);

struct TextTokenSeq {
    std::vector<int> tokens;  // tokens[0] is the language identifier
    Language language = Language::zh;

    bool operator==(const TextTokenSeq&) const = default;
};

/// [language id] ++ UTF-8 bytes of the NFC-normalized text.
/// Errors: empty text, invalid UTF-8, more than 512 bytes after NFC.
TextTokenSeq encode_text(const std::string& text, Language lang);

/// Exact inverse of encode_text. Errors: identifier not leading, duplicated
/// identifier, ids outside the text vocabulary, invalid UTF-8 byte run.
std::pair<std::string, Language> decode_text(const TextTokenSeq& seq);

}  // namespace kidvoice::textfront
